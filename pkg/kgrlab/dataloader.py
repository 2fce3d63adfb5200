"""
Query templates, template-driven query sampling and batching of queries that
share a topology.
"""

import json
import itertools
import numpy as np
from absl import logging
from dataclasses import dataclass
from typing import Optional, Tuple

from .query import (QueryNode, Edge, Query, AnsweredQuery, build_query,
                    exact_answers, supporting_facts, answered_to_dict, answered_from_dict)
from .exceptions import Unsatisfiable, InvalidSpec
from .utils import checkarg_nonnegative_int, canonical_json

__all__ = ['QueryTemplate', 'template_shape', 'TEMPLATES', 'CASE_STUDY_GRID',
           'sample_queries', 'fact_queries', 'QueryBatch', 'batch_queries',
           'training_queries', 'truth_matrix', 'read_queries', 'write_queries']

# (n_path, m_path) of the default evaluation templates
TEMPLATES = [(1, 1), (1, 2), (2, 1), (2, 2), (3, 2)]

# (n_path, m_path) grid of the threat-hunting case study
CASE_STUDY_GRID = [(n, m) for n in range(1, 8) for m in range(1, 4)]


@dataclass(frozen=True)
class QueryTemplate:
    """
    Query skeleton with unbound anchors. ``categories`` gives an optional
    category per node and ``relations`` an optional relation per edge (None
    means any schema-compatible value).
    """
    n_path: int
    m_path: int
    nodes: Tuple[QueryNode, ...]
    edges: Tuple[Tuple[int, int], ...]
    categories: Tuple[Optional[int], ...]
    relations: Tuple[Optional[int], ...]

    @property
    def name(self):
        return f'{self.n_path}p{self.m_path}h'

    def to_dict(self):
        return {'n_path': self.n_path, 'm_path': self.m_path,
                'categories': list(self.categories), 'relations': list(self.relations)}

    @classmethod
    def from_dict(cls, d):
        return template_shape(d['n_path'], d['m_path'], d.get('categories'), d.get('relations'))


def template_shape(n_path, m_path, categories=None, relations=None):
    """In-tree of ``n_path`` branches of ``m_path`` hops meeting at the Target.

    Parameters
    ----------
    n_path : int
        Number of anchor-to-target paths.
    m_path : int
        Hops per path.
    categories : sequence or None
        Category per node, in the node order of the template: for each branch
        the anchor followed by its ``m_path - 1`` variables, then the Target.
    relations : sequence or None
        Relation per edge, branch after branch in path order.
    """
    if n_path < 1 or m_path < 1:
        raise InvalidSpec(f'`n_path` and `m_path` must be >= 1, got ({n_path}, {m_path})')
    nodes, edges = [], []
    target = n_path * m_path
    for b in range(n_path):
        start = b * m_path
        nodes.append(QueryNode('anchor'))
        nodes.extend(QueryNode('variable') for _ in range(m_path - 1))
        for h in range(m_path):
            src = start + h
            dst = start + h + 1 if h < m_path - 1 else target
            edges.append((src, dst))
    nodes.append(QueryNode('target'))
    categories = tuple(categories) if categories is not None else (None,) * len(nodes)
    relations = tuple(relations) if relations is not None else (None,) * len(edges)
    if len(categories) != len(nodes) or len(relations) != len(edges):
        raise InvalidSpec('`categories`/`relations` do not match the template size')
    return QueryTemplate(n_path, m_path, tuple(nodes), tuple(edges), categories, relations)


def _check_schema(kg, template):
    """Every template edge must admit at least one relation of the schema."""
    for (src, dst), r in zip(template.edges, template.relations):
        hc, tc = template.categories[src], template.categories[dst]
        if r is not None:
            rel = kg.relations[kg.check_relation(r)]
            ok = (hc is None or rel.head_category == hc) and (tc is None or rel.tail_category == tc)
        else:
            ok = bool(kg.relations_between(hc, tc))
        if not ok:
            raise Unsatisfiable(f'template {template.name}: no relation fits edge {src}->{dst}')


class _Instantiator():
    """Binds the anchors of a template against a knowledge graph.

    ``live[i]`` masks the entities that can be bound at template node ``i``
    such that every hop back to an anchor is realized by a fact. The masks
    are propagated forward through the sparse relation matrices, so a
    backward walk restricted to them never reaches a dead end.
    """
    def __init__(self, kg, template):
        self.kg = kg
        self.template = template
        self.allowed = [self._edge_relations(k) for k in range(len(template.edges))]
        self.live = self._live_sets()
        self.targets = np.flatnonzero(self.live[-1])

    def _category_mask(self, c):
        if c is None:
            return np.ones(self.kg.n_entities, dtype=bool)
        mask = np.zeros(self.kg.n_entities, dtype=bool)
        mask[self.kg.entities_of_category(c)] = True
        return mask

    def _edge_relations(self, k):
        src, dst = self.template.edges[k]
        hc, tc = self.template.categories[src], self.template.categories[dst]
        r = self.template.relations[k]
        if r is None:
            return self.kg.relations_between(hc, tc)
        rel = self.kg.relations[self.kg.check_relation(r)]
        fits = (hc is None or rel.head_category == hc) and (tc is None or rel.tail_category == tc)
        return [rel.id] if fits else []

    def _live_sets(self):
        template = self.template
        target = len(template.nodes) - 1
        live = [self._category_mask(template.categories[i]) if node.kind == 'anchor' else None
                for i, node in enumerate(template.nodes)]
        # edges are grouped per branch in path order, so each source is ready
        for k, (src, dst) in enumerate(template.edges):
            x = live[src].astype(np.int64)
            reached = np.zeros(self.kg.n_entities, dtype=bool)
            for r in self.allowed[k]:
                reached |= np.asarray(self.kg.relation_matrix(r).T.dot(x)).ravel() > 0
            reached &= self._category_mask(template.categories[dst])
            if dst == target and live[target] is not None:
                reached &= live[target]
            live[dst] = reached
        return live

    def _live_in(self, k, v):
        src, _ = self.template.edges[k]
        return [f for r in self.allowed[k] for f in self.kg.neighbors(v, 'in', r)
                if self.live[src][f.head]]

    def _branch(self, b):
        m = self.template.m_path
        return list(range(b * m, (b + 1) * m))

    def walk(self, rng):
        """One backward random walk from a live target; None on a repeated branch."""
        t = int(self.targets[rng.integers(len(self.targets))])
        paths = []
        for b in range(self.template.n_path):
            v, rels = t, []
            for k in reversed(self._branch(b)):
                options = self._live_in(k, v)
                f = options[rng.integers(len(options))]
                v = f.head
                rels.append(f.relation)
            path = (v, tuple(reversed(rels)))
            if path in paths:
                return None
            paths.append(path)
        return self.assemble(paths)

    def branch_paths(self, b, t):
        """Distinct (anchor, relations) of branch ``b`` ending at target ``t``."""
        ks = self._branch(b)
        out = set()

        def _back(v, j, rels):
            if j < 0:
                out.add((v, tuple(reversed(rels))))
                return
            for f in self._live_in(ks[j], v):
                _back(f.head, j - 1, rels + [f.relation])

        _back(t, len(ks) - 1, [])
        return sorted(out)

    def enumerate_all(self, limit=None):
        """Every distinct instantiation of the template, or the first ``limit``
        found in target order."""
        found = set()
        for t in self.targets:
            per_branch = [self.branch_paths(b, int(t)) for b in range(self.template.n_path)]
            for paths in itertools.product(*per_branch):
                if len(set(paths)) == len(paths):
                    found.add(self.assemble(paths))
                if limit is not None and len(found) >= limit:
                    logging.warning('template %s: enumeration stopped after %d instantiations',
                                    self.template.name, limit)
                    return found
        return found

    def assemble(self, paths):
        template = self.template
        target = len(template.nodes) - 1
        nodes = list(template.nodes)
        edges = []
        for b, (anchor, rels) in enumerate(paths):
            ks = self._branch(b)
            nodes[ks[0]] = QueryNode('anchor', anchor)
            edges.extend(Edge(template.edges[k][0], r, template.edges[k][1])
                         for k, r in zip(ks, rels))
        return build_query(nodes, edges, template.categories[target], kg=self.kg)


def sample_queries(kg, template, count, seed=0, mode='train', max_attempts=None):
    """Sample up to ``count`` distinct answered queries of a template.

    Targets are drawn among the entities that some instantiation reaches and
    each backward hop among the facts that still lead back to an anchor, so
    every walk yields a query with a nonempty answer. When the walks stop
    producing new queries before ``count`` are found, the instantiations are
    enumerated exhaustively instead. The distinct candidates are sorted and
    ``count`` of them are drawn uniformly with the same seeded generator.

    Parameters
    ----------
    kg : KnowledgeGraph
    template : QueryTemplate or (int, int)
        Template, or ``(n_path, m_path)`` of an unconstrained one.
    count : int
        Number of queries requested.
    seed : int
    mode : {'train', 'test'}
        In test mode the supporting facts of each query are recorded.
    max_attempts : int or None
        Consecutive walks without a new query before falling back to the
        exhaustive enumeration. Defaults to ``max(100, 4 * count)``.

    Returns
    -------
    list of AnsweredQuery
        ``min(count, number of instantiations)`` queries.
    """
    count = checkarg_nonnegative_int(count, 'count')
    if mode not in ('train', 'test'):
        raise ValueError(f"`mode` must be 'train' or 'test', got {mode}")
    if not isinstance(template, QueryTemplate):
        template = template_shape(*template)
    if count == 0:
        return []
    _check_schema(kg, template)
    inst = _Instantiator(kg, template)
    if len(inst.targets) == 0:
        raise Unsatisfiable(f'template {template.name} has no instantiation in {kg}')
    rng = np.random.default_rng(seed)
    patience = max_attempts if max_attempts is not None else max(100, 4 * count)
    found = set()
    misses = 0
    while len(found) < count and misses < patience:
        q = inst.walk(rng)
        if q is None or q in found:
            misses += 1
        else:
            found.add(q)
            misses = 0
    if len(found) < count:
        found = inst.enumerate_all(limit=max(10000, 50 * count))
    if not found:
        raise Unsatisfiable(f'template {template.name} has no instantiation with distinct branches in {kg}')
    candidates = sorted(found, key=_query_key)
    picked = rng.choice(len(candidates), size=min(count, len(candidates)), replace=False)
    out = []
    for i in sorted(picked):
        q = candidates[i]
        truth = sorted(exact_answers(kg, q))
        supporting = supporting_facts(kg, q) if mode == 'test' else None
        out.append(AnsweredQuery(q, truth, supporting))
    return out


def _query_key(q):
    return (q.structure, q.anchor_entities, q.relations)


def fact_queries(kg):
    """Every (head, relation) pair as a 1-hop query whose truth is all tails."""
    groups = {}
    for f in kg.sorted_facts():
        groups.setdefault((f.head, f.relation), []).append(f.tail)
    out = []
    for (h, r), tails in groups.items():
        q = build_query([QueryNode('anchor', h), QueryNode('target')], [(0, r, 1)], kg=kg)
        out.append(AnsweredQuery(q, tails))
    return out


def training_queries(kg, templates=TEMPLATES, per_template=64, seed=0):
    """Link-prediction queries of every fact plus template-sampled queries.

    Templates without any instantiation on ``kg`` are skipped.
    """
    out = fact_queries(kg)
    for i, t in enumerate(templates):
        shape = (t.n_path, t.m_path) if isinstance(t, QueryTemplate) else tuple(t)
        if shape == (1, 1):
            continue  # covered by fact_queries
        try:
            out.extend(sample_queries(kg, t, per_template, seed=seed + 1000 * (i + 1)))
        except Unsatisfiable:
            continue
    return out


class QueryBatch():
    """
    Queries sharing one structure, as index arrays.

    Attributes
    ----------
    structure : tuple
        Common ``Query.structure``.
    anchors : np.ndarray
        Entity ids, shape [B, n_anchors] in node order.
    relations : np.ndarray
        Relation ids, shape [B, n_edges] in edge order.
    index : np.ndarray
        Positions of the queries in the list they were batched from.
    """
    def __init__(self, queries, index):
        self.structure = queries[0].structure
        self.template = queries[0]
        self.anchors = np.array([q.anchor_entities for q in queries], dtype=np.int64)
        self.relations = np.array([q.relations for q in queries], dtype=np.int64)
        self.index = np.asarray(index, dtype=np.int64)

    def __len__(self):
        return len(self.index)


def batch_queries(queries):
    """Group queries by structure, in first-appearance order."""
    groups = {}
    for i, q in enumerate(queries):
        groups.setdefault(q.structure, []).append(i)
    return [QueryBatch([queries[i] for i in idx], idx) for idx in groups.values()]


def truth_matrix(answered):
    """Padded truth ids [B, T] and boolean mask [B, T] of a list of answered queries."""
    width = max(len(aq.truth) for aq in answered)
    ids = np.zeros((len(answered), width), dtype=np.int64)
    mask = np.zeros((len(answered), width), dtype=bool)
    for i, aq in enumerate(answered):
        ids[i, :len(aq.truth)] = aq.truth
        mask[i, :len(aq.truth)] = True
    return ids, mask


def write_queries(answered, path, kg=None):
    """Answered queries as a JSON list (names when ``kg`` is given)."""
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(canonical_json([answered_to_dict(aq, kg) for aq in answered]))


def read_queries(path, kg=None):
    with open(path, encoding='utf-8') as f:
        return [answered_from_dict(d, kg) for d in json.load(f)]
