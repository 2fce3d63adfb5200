"""
Countermeasures: fitness-based filtering of KG facts and adversarial training
on misguided queries.
"""

import numpy as np
from dataclasses import dataclass, field
from joblib import Parallel, delayed
from absl import logging

from .kg import Fact, remove_facts
from .query import AnsweredQuery, contains_trigger, query_to_dict
from .models import fact_fitness_batch
from .training import train
from .attacks import CoConfig, ScoredFact, run_qm, co_optimize
from .exceptions import InvalidConfig, EmptyTrainSet
from .utils import canonical_json

__all__ = ['DefenseConfig', 'filter_low_fitness', 'augment_with_adversarial',
           'adversarial_source', 'adversarial_train', 'defense_report']


@dataclass
class DefenseConfig:
    """
    Parameters
    ----------
    m_percent : float
        Share of facts (in percent) removed by fitness filtering.
    adv_attack : CoConfig
        Attack used to synthesize adversarial queries. Its modes are forced to
        ``'forcing'`` against a decoy answer drawn per query.
    seed : int
        Seed of the decoy draws.
    n_jobs : int
        Workers for fact scoring and per-query synthesis.
    """
    m_percent: float = 0.0
    adv_attack: CoConfig = field(default_factory=lambda: CoConfig(rounds=1))
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if not 0.0 <= float(self.m_percent) <= 100.0:
            raise InvalidConfig(f'`m_percent` must be in [0, 100], got {self.m_percent}')

    def to_dict(self):
        return {'m_percent': self.m_percent, 'adv_attack': self.adv_attack.to_dict(),
                'seed': self.seed, 'n_jobs': self.n_jobs}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        adv = CoConfig.from_dict(d.pop('adv_attack')) if 'adv_attack' in d else CoConfig(rounds=1)
        return cls(adv_attack=adv, **d)


def _score_chunk(model, facts):
    return fact_fitness_batch(model, facts[:, 0], facts[:, 1], facts[:, 2])


def filter_low_fitness(kg, model, m_percent, n_jobs=1, chunk_size=4096):
    """Remove the ``floor(|E| * m / 100)`` facts of lowest fitness under the
    defender's model (ties by ascending fact key).

    Returns
    -------
    kg : KnowledgeGraph
        Filtered graph.
    removed : list of ScoredFact
        Removed facts, lowest fitness first.
    """
    if not 0.0 <= float(m_percent) <= 100.0:
        raise InvalidConfig(f'`m_percent` must be in [0, 100], got {m_percent}')
    facts = kg.fact_array()
    n_remove = int(np.floor(len(facts) * float(m_percent) / 100.0))
    if n_remove == 0:
        return kg, []
    chunks = [facts[i:i + chunk_size] for i in range(0, len(facts), chunk_size)]
    scores = Parallel(n_jobs=n_jobs, prefer='threads')(
        delayed(_score_chunk)(model, c) for c in chunks)
    fitness = np.concatenate(scores)
    order = np.lexsort((facts[:, 2], facts[:, 1], facts[:, 0], fitness))[:n_remove]
    removed = [ScoredFact(Fact(*(int(x) for x in facts[i])), float(fitness[i])) for i in order]
    logging.info('Fitness filtering removed %d of %d facts', n_remove, len(facts))
    return remove_facts(kg, [sf.fact for sf in removed]), removed


def _draw_decoys(kg, train_set, rng):
    decoys = []
    for aq in train_set:
        cat = aq.query.target_category
        pool = kg.entities_of_category(cat) if cat is not None else np.arange(kg.n_entities)
        pool = pool[~np.isin(pool, aq.truth)]
        decoys.append(int(pool[rng.integers(len(pool))]) if len(pool) else None)
    return decoys


def augment_with_adversarial(kg, model, train_set, cfg=None, trigger=None):
    """Training set followed by one adversarial twin per query.

    Every twin keeps the source query's truth. Twins are infected versions of
    the source queries, misguided in forcing mode towards a decoy answer drawn
    uniformly among the non-answers of the query's target category. With a
    trigger pattern and a positive poisoning budget, queries containing the
    trigger are infected by a co-optimization run against the defender's own
    KG and model instead.
    """
    cfg = cfg if cfg is not None else DefenseConfig()
    train_set = list(train_set)
    if not train_set:
        raise EmptyTrainSet('`train_set` must hold at least one answered query')
    rng = np.random.default_rng(cfg.seed)
    decoys = _draw_decoys(kg, train_set, rng)
    qm_cfg = cfg.adv_attack.qm
    if qm_cfg.mode != 'forcing':
        qm_cfg = type(qm_cfg).from_dict(dict(qm_cfg.to_dict(), mode='forcing'))

    infected = {}
    idx = _co_indices(train_set, decoys, cfg, trigger)
    if idx:
        decoy = decoys[idx[0]]
        same = [i for i in idx if train_set[i].query.target_category
                == train_set[idx[0]].query.target_category and decoy not in train_set[i].truth]
        others = [aq for i, aq in enumerate(train_set) if i not in set(idx)]
        co_cfg = CoConfig.from_dict(dict(cfg.adv_attack.to_dict(),
                                         kp=dict(cfg.adv_attack.kp.to_dict(), mode='forcing'),
                                         qm=qm_cfg.to_dict()))
        result = co_optimize(kg, model, trigger, decoy, [train_set[i] for i in same],
                             others[:64], co_cfg)
        for j, i in enumerate(same):
            infected[i] = result.infected[j]

    todo = [i for i in range(len(train_set)) if i not in infected]
    out = Parallel(n_jobs=cfg.n_jobs, prefer='threads')(
        delayed(_twin)(model, kg, train_set[i], decoys[i], qm_cfg, i) for i in todo)
    for i, q_star in zip(todo, out):
        infected[i] = q_star
    twins = [AnsweredQuery(infected[i], train_set[i].truth) for i in range(len(train_set))]
    return train_set + twins


def _co_indices(train_set, decoys, cfg, trigger):
    """Queries infected by co-optimization: those containing the trigger that
    have a decoy, when the poisoning budget is positive."""
    if trigger is None or cfg.adv_attack.kp.n_g == 0:
        return []
    return [i for i, aq in enumerate(train_set)
            if contains_trigger(aq.query, trigger) and decoys[i] is not None]


def adversarial_source(kg, train_set, cfg=None, trigger=None):
    """Attack that produces the trigger-bearing twins of
    ``augment_with_adversarial``: 'co', or 'qm' when no trigger is known to the
    defender or the poisoning budget is zero."""
    cfg = cfg if cfg is not None else DefenseConfig()
    train_set = list(train_set)
    decoys = _draw_decoys(kg, train_set, np.random.default_rng(cfg.seed))
    return 'co' if _co_indices(train_set, decoys, cfg, trigger) else 'qm'


def _twin(model, kg, aq, decoy, qm_cfg, query_id):
    if decoy is None or qm_cfg.n_q == 0:
        return aq.query
    q_star, _ = run_qm(model, kg, aq, decoy, qm_cfg, query_id=query_id)
    return q_star


def adversarial_train(kg, model, train_set, def_cfg=None, train_cfg=None, trigger=None,
                      verbose=False):
    """Continue training ``model`` on the adversarially augmented set.

    Returns
    -------
    model : KGRModel
        Hardened copy.
    """
    augmented = augment_with_adversarial(kg, model, train_set, def_cfg, trigger)
    hardened, _ = train(model, kg, augmented, train_cfg, verbose=verbose)
    return hardened


def defense_report(kg, removed=None, augmented=None, n_original=None, source=None):
    """JSON text of a defense run: removed facts with their scores, or the
    manifest of the augmented training set. ``source`` names the attack behind
    the adversarial twins (see ``adversarial_source``)."""
    report = {}
    if removed is not None:
        report['removed'] = [{'fact': list(kg.describe_fact(sf.fact)), 'fitness': sf.fitness}
                             for sf in removed]
    if augmented is not None:
        n_original = n_original if n_original is not None else len(augmented) // 2
        report['augmented'] = {
            'n_original': n_original,
            'n_adversarial': len(augmented) - n_original,
            'source': source,
            'adversarial': [{'query': query_to_dict(aq.query, kg),
                             'truth': [kg.entities[t].name for t in aq.truth]}
                            for aq in augmented[n_original:]]}
    return canonical_json(report)
