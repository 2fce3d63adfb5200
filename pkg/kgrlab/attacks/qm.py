"""
Query misguiding: optimize a bait embedding in latent space, then grow bait
evidence as a tree of surrogate-KG paths rooted at the desired answer and
attach it to the query.
"""

import numpy as np
import tensorflow as tf
from dataclasses import dataclass, asdict, field
from typing import List, Optional, Sequence, Tuple, Union
from joblib import Parallel, delayed
from absl import logging

from ..kg import Fact
from ..query import (QueryNode, AnsweredQuery, build_query, chain_query, conjoin,
                     query_to_dict)
from ..losses import qm_loss, answer_embedding
from ..models import embed_query, embed_queries
from ..training import init_adam_state, adam_step
from ..utils import (checkarg_mode, checkarg_nonnegative_int, checkarg_positive_int,
                     learning_rate_schedule, Timing)
from ..exceptions import MissingGoal, NoExpansion
from .base import Attack

__all__ = ['QmConfig', 'BaitEvidence', 'optimize_qm_embedding', 'generate_bait',
           'degradation_root', 'run_qm', 'QueryMisguiding']


@dataclass
class QmConfig:
    """
    Parameters
    ----------
    n_q : int
        Budget of bait paths.
    mode : str
        One of ``ATTACK_MODES``.
    steps : int
        Optimizer steps for the bait embedding.
    learning_rate : float or sequence of float
    lr_boundaries : sequence of int or None
    seed : int
        Seed of the initialization noise.
    noise : float
        Standard deviation of the initialization noise.
    max_depth : int
        Cap on the tree depth.
    n_jobs : int
        Workers for per-query attacks.
    """
    n_q: int = 2
    mode: str = 'forcing'
    steps: int = 1000
    learning_rate: Union[float, Sequence[float]] = 0.01
    lr_boundaries: Optional[Sequence[int]] = None
    seed: int = 0
    noise: float = 0.01
    max_depth: int = 4
    n_jobs: int = 1

    def __post_init__(self):
        checkarg_nonnegative_int(self.n_q, 'n_q')
        checkarg_nonnegative_int(self.steps, 'steps')
        checkarg_positive_int(self.max_depth, 'max_depth')
        checkarg_mode(self.mode)

    def to_dict(self):
        d = asdict(self)
        for key in ('learning_rate', 'lr_boundaries'):
            if isinstance(d[key], tuple):
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _path_key(path):
    return tuple(tuple(f) for f in path)


@dataclass
class BaitEvidence:
    """
    Kept leaf-to-root paths (facts ordered from leaf to root) and their
    fitness, best first. ``levels`` records, per expansion, every scored
    candidate path and the kept ones.
    """
    root: Optional[int]
    paths: Tuple[Tuple[Fact, ...], ...] = ()
    fitness: Tuple[float, ...] = ()
    levels: List[dict] = field(default_factory=list)
    no_expansion: bool = False
    depth_capped: bool = False
    query_id: Optional[int] = None
    embedding: Optional[np.ndarray] = None
    loss_trace: Tuple[float, ...] = ()

    @property
    def n_paths(self):
        return len(self.paths)

    def is_empty(self):
        return not self.paths

    def require_expansion(self):
        if self.no_expansion:
            raise NoExpansion(f'entity {self.root} has no in-edge from the query categories')
        return self

    def edges(self):
        """Distinct facts of the tree before variable replacement."""
        return sorted({f for p in self.paths for f in p})

    def to_query(self, kg=None):
        """The bait as a query: leaves become anchors, every other non-root
        entity a variable, the root the Target. None if there is no path."""
        if not self.paths:
            return None
        index = {(): None}
        nodes, edges = [], []
        for path in self.paths:
            for i in range(len(path)):
                key = _path_key(path[i:])
                if key in index:
                    continue
                index[key] = len(nodes)
                nodes.append(QueryNode('anchor', path[i].head) if i == 0 else QueryNode('variable'))
        # a node reached as a leaf on one path and as an inner node on another
        # cannot occur: an expanded path never stays a leaf-to-root path
        target = len(nodes)
        nodes.append(QueryNode('target'))
        for path in self.paths:
            for i in range(len(path)):
                src = index[_path_key(path[i:])]
                dst_key = _path_key(path[i + 1:])
                dst = target if dst_key == () else index[dst_key]
                edges.append((src, path[i].relation, dst))
        hint = kg.category_of(self.root) if kg is not None else None
        return build_query(nodes, edges, hint, kg=kg)

    def to_dict(self, kg=None):
        def _fact(f):
            return list(kg.describe_fact(f)) if kg is not None else list(f)

        tree = self.to_query(kg)
        root = self.root
        if kg is not None and root is not None:
            root = kg.entities[root].name
        return {'query_id': self.query_id,
                'root': root,
                'paths': [{'facts': [_fact(f) for f in p], 'fitness': fit}
                          for p, fit in zip(self.paths, self.fitness)],
                'tree': query_to_dict(tree, kg) if tree is not None else None,
                'no_expansion': self.no_expansion,
                'depth_capped': self.depth_capped}


def optimize_qm_embedding(model, q, goal, mode='forcing', cfg=None, init=None, query_id=0):
    """Latent-space step of query misguiding (model frozen).

    Parameters
    ----------
    model : KGRModel
    q : Query
    goal : int or iterable of int
        a* in forcing mode, the ground-truth set in degradation mode.
    mode : str
    cfg : QmConfig or None
    init : array-like or None
        Starting point. Defaults to phi_{a*} (forcing) or phi_q (degradation)
        plus seeded Gaussian noise of scale ``cfg.noise``.

    Returns
    -------
    bait_vec : np.ndarray
    trace : list of float
        Loss before each optimizer step.
    """
    checkarg_mode(mode)
    cfg = cfg if cfg is not None else QmConfig(mode=mode)
    table = model.entity_embeddings
    if mode == 'forcing':
        if goal is None or not isinstance(goal, (int, np.integer)):
            raise MissingGoal('forcing mode needs the target answer a*')
        goal_vec = tf.gather(table, int(goal))
    else:
        if goal is None or isinstance(goal, (int, np.integer)) or len(list(goal)) == 0:
            raise MissingGoal('degradation mode needs a nonempty ground-truth set')
        goal_vec = answer_embedding(table, goal)
    goal_vec = tf.constant(goal_vec)
    query_vec = tf.constant(embed_query(model, q))
    if init is None:
        rng = np.random.default_rng([cfg.seed, query_id])
        start = goal_vec.numpy() if mode == 'forcing' else query_vec.numpy()
        init = start + cfg.noise * rng.standard_normal(model.dim)
    bait = tf.Variable(np.asarray(init, dtype=np.float64))
    schedule = learning_rate_schedule(cfg.learning_rate, cfg.lr_boundaries)
    state = init_adam_state([bait])
    trace = []
    for step in range(cfg.steps):
        with tf.GradientTape() as tape:
            loss = qm_loss(model, query_vec, bait, goal_vec, mode)
        grads = tape.gradient(loss, [bait])
        values, state = adam_step([bait], grads, state, schedule(step))
        bait.assign(values[0])
        trace.append(float(loss))
    return bait.numpy(), trace


def _score_paths(model, kg, paths, bait_vec):
    queries = [chain_query(kg, p[0].head, [f.relation for f in p]) for p in paths]
    vecs = embed_queries(model, queries).numpy()
    return -np.linalg.norm(vecs - bait_vec[None, :], axis=1)


def generate_bait(model, bait_vec, kg, q, root, n_q, max_depth=4, query_id=None):
    """Grow bait evidence rooted at ``root`` by level-wise tree expansion.

    Each level expands the leaf of every kept path by the in-edges of the
    surrogate KG whose head belongs to one of ``q``'s node categories (and is
    not already on the path). Every leaf-to-root path of the grown tree is
    scored by ``-dist(phi_p, bait_vec)`` and the ``n_q`` best are kept, ties
    broken by path. Expansion stops when no kept leaf can grow, or at
    ``max_depth``.
    """
    n_q = checkarg_nonnegative_int(n_q, 'n_q')
    root = kg.check_entity(root)
    bait_vec = np.asarray(bait_vec, dtype=np.float64)
    if n_q == 0:
        return BaitEvidence(root, query_id=query_id, embedding=bait_vec)
    categories = set(q.node_categories)
    if q.category_hint is not None:
        categories.add(q.category_hint)

    kept = [()]
    levels = []
    capped = False
    while True:
        expansions, stay = [], []
        for path in kept:
            leaf = path[0].head if path else root
            on_path = {root} | {f.head for f in path}
            grown = [(Fact(f.head, f.relation, leaf),) + path
                     for f in kg.neighbors(leaf, 'in')
                     if kg.category_of(f.head) in categories and f.head not in on_path]
            if grown:
                expansions.extend(grown)
            elif path:
                stay.append(path)
        if not expansions:
            break
        if len(levels) == max_depth:
            capped = True
            logging.warning('Bait expansion from entity %d stopped at the depth cap (%d)',
                            root, max_depth)
            break
        candidates = sorted(set(stay + expansions), key=_path_key)
        fitness = _score_paths(model, kg, candidates, bait_vec)
        order = sorted(range(len(candidates)), key=lambda i: (-fitness[i], _path_key(candidates[i])))
        kept = [candidates[i] for i in order[:n_q]]
        kept_fitness = [float(fitness[i]) for i in order[:n_q]]
        levels.append({'candidates': [(candidates[i], float(fitness[i])) for i in range(len(candidates))],
                       'kept': list(kept)})

    if not levels:
        logging.warning('No bait evidence: entity %d has no in-edge from the query categories', root)
        return BaitEvidence(root, no_expansion=True, query_id=query_id, embedding=bait_vec)
    return BaitEvidence(root, tuple(kept), tuple(kept_fitness), levels, False, capped,
                        query_id, bait_vec)


def degradation_root(model, q, truth, bait_vec):
    """Non-answer entity of the Target's category nearest to the optimized
    infected-query embedding (ties by id); None if there is none."""
    infected = model.intersection([tf.constant(embed_query(model, q)),
                                   tf.constant(np.asarray(bait_vec, dtype=np.float64))]).numpy()
    cat = q.target_category
    pool = np.nonzero(model.entity_categories == cat)[0] if cat is not None else np.arange(model.n_entities)
    pool = pool[~np.isin(pool, list(truth))]
    if len(pool) == 0:
        return None
    dists = np.linalg.norm(model.entity_rows(pool) - infected, axis=1)
    return int(pool[np.lexsort((pool, dists))[0]])


def run_qm(model, kg_surrogate, q, goal, cfg=None, query_id=0):
    """optimize_qm_embedding -> generate_bait -> conjoin.

    Parameters
    ----------
    q : Query or AnsweredQuery
    goal : int or iterable of int or None
        a* (forcing) or the ground truth (degradation). In degradation mode
        the truth of an AnsweredQuery is used when ``goal`` is None.

    Returns
    -------
    q_star : Query
        Infected query (``q`` itself when no bait is attached).
    bait : BaitEvidence
    """
    cfg = cfg if cfg is not None else QmConfig()
    query = q.query if isinstance(q, AnsweredQuery) else q
    if goal is None and cfg.mode == 'degradation' and isinstance(q, AnsweredQuery):
        goal = q.truth
    if cfg.n_q == 0:
        return query, BaitEvidence(None, query_id=query_id)
    bait_vec, trace = optimize_qm_embedding(model, query, goal, cfg.mode, cfg, query_id=query_id)
    root = int(goal) if cfg.mode == 'forcing' else degradation_root(model, query, goal, bait_vec)
    if root is None:
        logging.warning('Query %s: no non-answer entity to misguide towards', query_id)
        return query, BaitEvidence(None, query_id=query_id, embedding=bait_vec, loss_trace=tuple(trace))
    bait = generate_bait(model, bait_vec, kg_surrogate, query, root, cfg.n_q, cfg.max_depth, query_id)
    bait.loss_trace = tuple(trace)
    return conjoin(query, bait.to_query(kg_surrogate)), bait


class QueryMisguiding(Attack):
    """
    """
    artifact_name = 'baits.json'

    def __init__(self, kg_surrogate, model, queries, a_star=None, cfg=None,
                 verbose=True, save=False, save_path=None, show_plot=False):
        """Query misguiding of a list of target queries.

        Parameters
        ----------
        queries : list of AnsweredQuery
            Queries to infect.
        a_star : int or None
            Target answer (forcing mode).
        cfg : QmConfig or None
        """
        super().__init__(kg_surrogate, model, verbose, save, save_path, show_plot)
        self.queries = list(queries)
        self.a_star = a_star
        self.cfg = cfg if cfg is not None else QmConfig()

    def run(self):
        self.timing = Timing(self.verbose)
        goal = self.a_star if self.cfg.mode == 'forcing' else None
        out = Parallel(n_jobs=self.cfg.n_jobs, prefer='threads')(
            delayed(run_qm)(self.model, self.kg, aq, goal, self.cfg, i)
            for i, aq in enumerate(self.queries))
        self.infected = [o[0] for o in out]
        self.baits = [o[1] for o in out]
        self.result = (self.infected, self.baits)
        self.timing.runtime()
        self.save_results()
        return self.result

    def to_dict(self):
        items = []
        for aq, q_star, bait in zip(self.queries, self.infected, self.baits):
            d = bait.to_dict(self.kg)
            d['source_query'] = query_to_dict(aq.query, self.kg)
            d['infected_query'] = query_to_dict(q_star, self.kg)
            items.append(d)
        return {'mode': self.cfg.mode, 'budget': self.cfg.n_q, 'baits': items}

    def loss_traces(self):
        return {f'query {b.query_id}': list(b.loss_trace) for b in getattr(self, 'baits', [])[:8]}
