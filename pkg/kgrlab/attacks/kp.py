"""
Knowledge poisoning: optimize the embeddings of the entities around the
trigger anchor in latent space, then approximate them in input space with the
highest-fitness schema-plausible facts.
"""

import numpy as np
import tensorflow as tf
from dataclasses import dataclass, asdict
from typing import NamedTuple, Optional, Sequence, Tuple, Union
from joblib import Parallel, delayed
from absl import logging

from ..kg import Fact
from ..query import AnsweredQuery, TriggerPattern
from ..losses import kp_loss
from ..models import fact_fitness_batch
from ..training import init_adam_state, adam_step
from ..utils import (checkarg_mode, checkarg_nonnegative_int, learning_rate_schedule,
                     Timing)
from ..exceptions import (UnknownAnchor, UnknownEntity, EmptyQStar,
                          MissingTargetAnswer, InvalidConfig, MissingGoal)
from .base import Attack

__all__ = ['KpConfig', 'ScoredFact', 'PoisonPlan', 'select_perturbable',
           'optimize_kp_embeddings', 'generate_poison_facts', 'run_kp',
           'KnowledgePoisoning']


@dataclass
class KpConfig:
    """
    Parameters
    ----------
    n_g : int
        Budget of poisoning facts.
    lam : float
        Weight of the second objective term.
    mode : str
        One of ``ATTACK_MODES``.
    steps : int
        Optimizer steps in latent space.
    learning_rate : float or sequence of float
    lr_boundaries : sequence of int or None
    seed : int
    n_jobs : int
        Workers for candidate scoring.
    """
    n_g: int = 100
    lam: float = 1.0
    mode: str = 'forcing'
    steps: int = 500
    learning_rate: Union[float, Sequence[float]] = 0.01
    lr_boundaries: Optional[Sequence[int]] = None
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        checkarg_nonnegative_int(self.n_g, 'n_g')
        checkarg_nonnegative_int(self.steps, 'steps')
        checkarg_mode(self.mode)
        if self.lam < 0:
            raise InvalidConfig(f'`lam` must be >= 0, got {self.lam}')

    def to_dict(self):
        d = asdict(self)
        for key in ('learning_rate', 'lr_boundaries'):
            if isinstance(d[key], tuple):
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class ScoredFact(NamedTuple):
    fact: Fact
    fitness: float


@dataclass
class PoisonPlan:
    """
    Poisoning facts released by the adversary, best first, together with the
    latent-space solution they approximate.
    """
    trigger: TriggerPattern
    mode: str
    n_g: int
    perturbable: Tuple[int, ...]
    optimized_embeddings: np.ndarray
    facts: Tuple[ScoredFact, ...] = ()
    target_answer: Optional[int] = None
    loss_trace: Tuple[float, ...] = ()
    final_loss: Optional[float] = None

    @property
    def fact_list(self):
        return [sf.fact for sf in self.facts]

    def to_dict(self, kg=None):
        def _fact(f):
            return list(kg.describe_fact(f)) if kg is not None else list(f)

        def _entity(e):
            return kg.entities[e].name if kg is not None else e

        trace = list(self.loss_trace)
        return {
            'trigger': {'anchor': _entity(self.trigger.anchor),
                        'chain': [kg.relations[r].name if kg is not None else r
                                  for r in self.trigger.chain]},
            'mode': self.mode,
            'budget': self.n_g,
            'target_answer': _entity(self.target_answer) if self.target_answer is not None else None,
            'perturbable': [_entity(e) for e in self.perturbable],
            'facts': [{'fact': _fact(sf.fact), 'fitness': sf.fitness} for sf in self.facts],
            'optimizer': {'steps': len(trace),
                          'initial_loss': trace[0] if trace else self.final_loss,
                          'final_loss': self.final_loss}}

    @classmethod
    def from_dict(cls, d, kg=None):
        """Rebuild a plan from its JSON form (embeddings are not stored)."""
        def _entity(e):
            return kg.entity_id(e) if isinstance(e, str) else e

        def _fact(f):
            h, r, t = f
            if isinstance(h, str):
                return Fact(kg.entity_id(h), kg.relation_id(r), kg.entity_id(t))
            return Fact(h, r, t)

        trigger = TriggerPattern(_entity(d['trigger']['anchor']),
                                 tuple(kg.relation_id(r) if isinstance(r, str) else r
                                       for r in d['trigger']['chain']))
        target = d.get('target_answer')
        return cls(trigger, d['mode'], d['budget'], tuple(_entity(e) for e in d['perturbable']),
                   np.zeros((0, 0)),
                   tuple(ScoredFact(_fact(x['fact']), x['fitness']) for x in d['facts']),
                   _entity(target) if target is not None else None,
                   (), d.get('optimizer', {}).get('final_loss'))


def select_perturbable(kg, trigger):
    """Trigger anchor plus its 1-hop neighbors (either direction), sorted."""
    anchor = trigger.anchor if isinstance(trigger, TriggerPattern) else trigger
    try:
        kg.check_entity(anchor)
    except UnknownEntity:
        raise UnknownAnchor(anchor) from None
    out = {int(anchor)}
    out.update(f.tail for f in kg.neighbors(anchor, 'out'))
    out.update(f.head for f in kg.neighbors(anchor, 'in'))
    return tuple(sorted(out))


def _as_answered(queries):
    return [q if isinstance(q, AnsweredQuery) else AnsweredQuery(q, ()) for q in queries]


def optimize_kp_embeddings(model, perturbable, Q_star, Q_non, a_star, cfg, verbose=False):
    """Latent-space step of knowledge poisoning.

    Only the rows of ``perturbable`` move; every other embedding and every
    operator weight is read as a constant.

    Parameters
    ----------
    model : KGRModel
        Surrogate model (not modified).
    perturbable : sequence of int
        N*, the entities whose embeddings are optimized.
    Q_star : list of Query or AnsweredQuery
        Target queries. Truths are required in degradation mode.
    Q_non : list of AnsweredQuery
        Non-target queries.
    a_star : int or None
        Target answer, required in forcing mode.
    cfg : KpConfig

    Returns
    -------
    rows : np.ndarray
        Optimized embeddings, one row per entity of ``perturbable``.
    final_loss : float
        Objective at the returned rows.
    trace : list of float
        Objective before each optimizer step.
    """
    if not Q_star:
        raise EmptyQStar('the target query set Q* is empty')
    if cfg.mode == 'forcing' and a_star is None:
        raise MissingTargetAnswer('forcing mode needs a target answer a*')
    target = _as_answered(Q_star)
    if cfg.mode == 'degradation' and any(not aq.truth for aq in target):
        raise MissingGoal('degradation mode needs the ground truth of every target query')
    ids = np.asarray(sorted(perturbable), dtype=np.int64)
    base = tf.constant(model.entity_rows())
    rows = tf.Variable(tf.gather(base, ids))
    indices = tf.constant(ids[:, None])
    schedule = learning_rate_schedule(cfg.learning_rate, cfg.lr_boundaries)
    state = init_adam_state([rows])

    def _loss():
        table = tf.tensor_scatter_nd_update(base, indices, rows)
        return kp_loss(model, table, target, Q_non, a_star, cfg.mode, cfg.lam)

    if verbose and cfg.steps:
        progbar = tf.keras.utils.Progbar(cfg.steps, stateful_metrics=['loss'])
    trace = []
    for step in range(cfg.steps):
        with tf.GradientTape() as tape:
            loss = _loss()
        grads = tape.gradient(loss, [rows])
        values, state = adam_step([rows], grads, state, schedule(step))
        rows.assign(values[0])
        trace.append(float(loss))
        if verbose:
            progbar.update(step + 1, values=[('loss', float(loss))])
    return rows.numpy(), float(_loss()), trace


def _score_head(model, kg, v, row, excluded):
    """Fitness of every admissible fact with head ``v``."""
    cat = kg.category_of(v)
    heads, rels, tails = [], [], []
    for r in kg.relations_between(head_category=cat):
        pool = kg.entities_of_category(kg.relations[r].tail_category)
        pool = pool[~np.isin(pool, excluded)]
        existing = kg.tails(v, r)
        if existing:
            pool = pool[~np.isin(pool, existing)]
        heads.append(np.full(len(pool), v, dtype=np.int64))
        rels.append(np.full(len(pool), r, dtype=np.int64))
        tails.append(pool.astype(np.int64))
    if not heads:
        return np.zeros((0, 3), dtype=np.int64), np.zeros(0)
    heads, rels, tails = np.concatenate(heads), np.concatenate(rels), np.concatenate(tails)
    if len(heads) == 0:
        return np.zeros((0, 3), dtype=np.int64), np.zeros(0)
    head_rows = np.repeat(row[None, :], len(heads), axis=0)
    fitness = fact_fitness_batch(model, heads, rels, tails, head_rows=head_rows)
    return np.stack([heads, rels, tails], axis=1), fitness


def generate_poison_facts(model, kg, perturbable, n_g, rows=None, n_jobs=1):
    """Input-space step of knowledge poisoning.

    Enumerates every plausible fact ``v -r-> v'`` with ``v`` in ``perturbable``,
    ``v'`` outside it and the fact absent from ``kg``, scores it by fitness
    (head embedding taken from ``rows`` when given) and keeps the ``n_g`` best.
    Ties are broken by (relation, head, tail).

    Returns
    -------
    list of ScoredFact
    """
    n_g = checkarg_nonnegative_int(n_g, 'n_g')
    perturbable = np.asarray(sorted(perturbable), dtype=np.int64)
    if n_g == 0 or len(perturbable) == 0:
        return []
    if rows is None:
        rows = model.entity_rows(perturbable)
    rows = np.asarray(rows, dtype=np.float64)
    parts = Parallel(n_jobs=n_jobs, prefer='threads')(
        delayed(_score_head)(model, kg, int(v), rows[i], perturbable)
        for i, v in enumerate(perturbable))
    facts = np.concatenate([p[0] for p in parts])
    fitness = np.concatenate([p[1] for p in parts])
    if len(facts) == 0:
        logging.warning('No admissible poisoning fact around %s', perturbable.tolist())
        return []
    order = np.lexsort((facts[:, 2], facts[:, 0], facts[:, 1], -fitness))[:n_g]
    return [ScoredFact(Fact(*(int(x) for x in facts[i])), float(fitness[i])) for i in order]


def run_kp(kg_surrogate, model, trigger, a_star, Q_star, Q_non, cfg, verbose=False):
    """select_perturbable -> optimize_kp_embeddings -> generate_poison_facts."""
    perturbable = select_perturbable(kg_surrogate, trigger)
    rows, final_loss, trace = optimize_kp_embeddings(model, perturbable, Q_star, Q_non,
                                                     a_star, cfg, verbose)
    facts = generate_poison_facts(model, kg_surrogate, perturbable, cfg.n_g, rows, cfg.n_jobs)
    if verbose:
        print(f'Knowledge poisoning: {len(facts)} facts around {len(perturbable)} entities, '
              f'loss {trace[0] if trace else final_loss:.4f} -> {final_loss:.4f}')
    return PoisonPlan(trigger, cfg.mode, cfg.n_g, perturbable, rows, tuple(facts),
                      a_star, tuple(trace), final_loss)


class KnowledgePoisoning(Attack):
    """
    """
    artifact_name = 'poison_plan.json'

    def __init__(self, kg_surrogate, model, trigger, target_queries, non_target,
                 a_star=None, cfg=None, verbose=True, save=False, save_path=None,
                 show_plot=False):
        """Knowledge poisoning against the surrogate system.

        Parameters
        ----------
        trigger : TriggerPattern
        target_queries : list of AnsweredQuery
            Q*, sampled from the surrogate KG.
        non_target : list of AnsweredQuery
            Q_non, sampled from the surrogate KG.
        a_star : int or None
            Target answer (forcing mode).
        cfg : KpConfig or None
        """
        super().__init__(kg_surrogate, model, verbose, save, save_path, show_plot)
        self.trigger = trigger
        self.target_queries = target_queries
        self.non_target = non_target
        self.a_star = a_star
        self.cfg = cfg if cfg is not None else KpConfig()

    def run(self):
        self.timing = Timing(self.verbose)
        self.result = run_kp(self.kg, self.model, self.trigger, self.a_star,
                             self.target_queries, self.non_target, self.cfg, self.verbose)
        self.timing.runtime()
        self.save_results()
        return self.result

    def to_dict(self):
        return self.result.to_dict(self.kg)

    def loss_traces(self):
        return {'kp': list(self.result.loss_trace)} if self.result is not None else {}
