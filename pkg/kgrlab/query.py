"""
First-order conjunctive queries over a KnowledgeGraph: validated DAG
representation, exact answers by exhaustive binding search, trigger-pattern
matching, conjunction with bait evidence and a JSON codec.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

from . import NODE_KINDS
from .kg import Fact
from .exceptions import (InvalidQuery, Cyclic, Disconnected, MultipleTargets,
                         SchemaInconsistent, UnknownAnchor, UnknownEntity,
                         IncompatibleTarget)

__all__ = ['QueryNode', 'Edge', 'Query', 'TriggerPattern', 'AnsweredQuery',
           'build_query', 'exact_answers', 'supporting_facts',
           'contains_trigger', 'conjoin', 'make_trigger', 'chain_query',
           'query_to_dict', 'query_from_dict', 'answered_to_dict',
           'answered_from_dict']


class QueryNode(NamedTuple):
    kind: str
    entity: Optional[int] = None
    category: Optional[int] = None

    @classmethod
    def anchor(cls, entity, category=None):
        return cls('anchor', int(entity), category)

    @classmethod
    def variable(cls, category=None):
        return cls('variable', None, category)

    @classmethod
    def target(cls, category=None):
        return cls('target', None, category)


class Edge(NamedTuple):
    src: int
    relation: int
    dst: int


@dataclass(frozen=True)
class Query:
    """
    Validated conjunctive query. Nodes are in topological order with the
    Target last; edges are sorted by (src, relation, dst). Build instances with
    ``build_query``.
    """
    nodes: Tuple[QueryNode, ...]
    edges: Tuple[Edge, ...]
    category_hint: Optional[int] = None

    @property
    def target(self):
        return len(self.nodes) - 1

    @property
    def target_category(self):
        cat = self.nodes[-1].category
        return cat if cat is not None else self.category_hint

    @property
    def anchors(self):
        return [i for i, n in enumerate(self.nodes) if n.kind == 'anchor']

    @property
    def anchor_entities(self):
        return tuple(self.nodes[i].entity for i in self.anchors)

    @property
    def relations(self):
        return tuple(e.relation for e in self.edges)

    @property
    def structure(self):
        """Hashable topology signature: node kinds and (src, dst) edge pairs."""
        return (tuple(n.kind for n in self.nodes),
                tuple((e.src, e.dst) for e in self.edges))

    @property
    def node_categories(self):
        return {n.category for n in self.nodes if n.category is not None}

    def in_edges(self, node):
        return [e for e in self.edges if e.dst == node]

    def out_edges(self, node):
        return [e for e in self.edges if e.src == node]

    @property
    def n_path(self):
        """Number of anchor-to-target paths."""
        paths = [0] * len(self.nodes)
        for i, n in enumerate(self.nodes):
            if n.kind == 'anchor':
                paths[i] = 1
            for e in self.in_edges(i):
                paths[i] += paths[e.src]
        return paths[-1]

    @property
    def m_path(self):
        """Length of the longest anchor-to-target path."""
        depth = [0] * len(self.nodes)
        for i in range(len(self.nodes)):
            for e in self.in_edges(i):
                depth[i] = max(depth[i], depth[e.src] + 1)
        return depth[-1]

    def is_in_tree(self):
        """True iff every non-target node has exactly one outgoing edge."""
        out_deg = [0] * len(self.nodes)
        for e in self.edges:
            out_deg[e.src] += 1
        return all(d == 1 for d in out_deg[:-1])

    def __repr__(self):
        edges = ', '.join(f'{e.src}-r{e.relation}->{e.dst}' for e in self.edges)
        anchors = ', '.join(f'{i}:{self.nodes[i].entity}' for i in self.anchors)
        return f'Query(anchors=[{anchors}], edges=[{edges}])'


class TriggerPattern(NamedTuple):
    """Anchor entity plus relation chain; queries containing it form Q*."""
    anchor: int
    chain: Tuple[int, ...]


@dataclass(frozen=True)
class AnsweredQuery:
    """Query with its exact answer set (sorted ids) and, for test queries, the
    final-hop facts supporting those answers."""
    query: Query
    truth: Tuple[int, ...]
    supporting: Optional[Tuple[Fact, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, 'truth', tuple(sorted(int(t) for t in self.truth)))
        if self.supporting is not None:
            object.__setattr__(self, 'supporting',
                               tuple(sorted(Fact(*f) for f in self.supporting)))


def _as_node(n):
    if isinstance(n, QueryNode):
        node = n
    elif isinstance(n, dict):
        node = QueryNode(n['kind'], n.get('entity'), n.get('category'))
    else:
        node = QueryNode(*n)
    if node.kind not in NODE_KINDS:
        msg = f'`kind` not recognized. Must be one of the following: {NODE_KINDS}. Got {node.kind}'
        raise ValueError(msg)
    if node.kind == 'anchor' and node.entity is None:
        raise InvalidQuery('anchor nodes must be bound to an entity')
    if node.kind != 'anchor' and node.entity is not None:
        raise InvalidQuery(f'{node.kind} nodes cannot be bound to an entity')
    return node


def build_query(nodes, edges, category_hint=None, kg=None):
    """Validate and normalize a query.

    Parameters
    ----------
    nodes : sequence of QueryNode, dict or tuple
        Node records ``(kind, entity, category)``.
    edges : sequence of Edge or (src, relation, dst)
        Relation-labeled edges between node indices.
    category_hint : int or None
        Expected category of the Target.
    kg : KnowledgeGraph or None
        When given, anchors are checked against the catalog and every node
        category is inferred from the relation schema.

    Returns
    -------
    query : Query
        Nodes in topological order (Target last), edges sorted.
    """
    nodes = [_as_node(n) for n in nodes]
    edges = sorted({Edge(*(int(x) for x in e)) for e in edges})
    n = len(nodes)
    if n == 0:
        raise InvalidQuery('a query needs at least one node')
    targets = [i for i, node in enumerate(nodes) if node.kind == 'target']
    if len(targets) > 1:
        raise MultipleTargets(f'{len(targets)} target nodes')
    if not targets:
        raise InvalidQuery('a query needs exactly one target node')
    for e in edges:
        if not (0 <= e.src < n and 0 <= e.dst < n) or e.src == e.dst:
            if e.src == e.dst and 0 <= e.src < n:
                raise Cyclic(f'self loop on node {e.src}')
            raise InvalidQuery(f'edge {e} references an unknown node')

    # connectivity on the undirected skeleton
    adjacency = [set() for _ in range(n)]
    for e in edges:
        adjacency[e.src].add(e.dst)
        adjacency[e.dst].add(e.src)
    seen, stack = {0}, [0]
    while stack:
        for j in adjacency[stack.pop()]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    if len(seen) != n:
        raise Disconnected(f'{n - len(seen)} nodes unreachable')

    # Kahn's algorithm, lowest original index first
    in_deg = [0] * n
    out_deg = [0] * n
    for e in edges:
        in_deg[e.dst] += 1
        out_deg[e.src] += 1
    remaining = list(in_deg)
    ready = sorted(i for i in range(n) if remaining[i] == 0)
    order = []
    while ready:
        i = ready.pop(0)
        order.append(i)
        for e in edges:
            if e.src == i:
                remaining[e.dst] -= 1
                if remaining[e.dst] == 0:
                    ready.append(e.dst)
                    ready.sort()
    if len(order) != n:
        raise Cyclic('edge graph contains a cycle')

    target = targets[0]
    for i, node in enumerate(nodes):
        if node.kind == 'anchor' and in_deg[i] > 0:
            raise InvalidQuery(f'anchor node {i} has incoming edges')
        if node.kind != 'anchor' and in_deg[i] == 0:
            raise InvalidQuery(f'{node.kind} node {i} has no incoming edge')
        if i != target and out_deg[i] == 0:
            raise InvalidQuery(f'node {i} does not lead to the target')

    remap = {old: new for new, old in enumerate(order)}
    nodes = [nodes[i] for i in order]
    edges = sorted(Edge(remap[e.src], e.relation, remap[e.dst]) for e in edges)

    if kg is not None:
        nodes = _infer_categories(kg, nodes, edges)
    if category_hint is not None and nodes[-1].category is not None \
            and nodes[-1].category != category_hint:
        raise SchemaInconsistent(f'target category {nodes[-1].category} '
                                 f'differs from hint {category_hint}')
    return Query(tuple(nodes), tuple(edges), category_hint)


def _infer_categories(kg, nodes, edges):
    cats = [node.category for node in nodes]
    for i, node in enumerate(nodes):
        if node.kind == 'anchor':
            try:
                c = kg.category_of(node.entity)
            except UnknownEntity:
                raise UnknownAnchor(node.entity) from None
            if cats[i] is not None and cats[i] != c:
                raise SchemaInconsistent(f'anchor {node.entity} is not of category {cats[i]}')
            cats[i] = c
    for e in edges:
        rel = kg.relations[kg.check_relation(e.relation)]
        for idx, expected in ((e.src, rel.head_category), (e.dst, rel.tail_category)):
            if cats[idx] is None:
                cats[idx] = expected
            elif cats[idx] != expected:
                raise SchemaInconsistent(f'relation {rel.name} does not fit node {idx}')
    return [QueryNode(node.kind, node.entity, c) for node, c in zip(nodes, cats)]


def _check_anchors(kg, q):
    for e in q.anchor_entities:
        if not 0 <= e < kg.n_entities:
            raise UnknownAnchor(e)


def _reach(kg, q):
    """Per-node sets of entities satisfying the sub-query rooted at each node.
    Exact for in-trees, where branches bind independently.
    """
    reach = []
    for i, node in enumerate(q.nodes):
        if node.kind == 'anchor':
            reach.append({node.entity})
            continue
        current = None
        for e in q.in_edges(i):
            step = set()
            for x in reach[e.src]:
                step.update(kg.tails(x, e.relation))
            current = step if current is None else current & step
        reach.append(current)
    return reach


def _bindings(kg, q):
    """Yield every complete binding (tuple indexed by node) by backtracking."""
    n = len(q.nodes)
    incoming = [q.in_edges(i) for i in range(n)]
    binding = [None] * n

    def _candidates(i):
        node = q.nodes[i]
        if node.kind == 'anchor':
            return [node.entity]
        current = None
        for e in incoming[i]:
            tails = set(kg.tails(binding[e.src], e.relation))
            current = tails if current is None else current & tails
            if not current:
                return []
        return sorted(current)

    def _search(i):
        if i == n:
            yield tuple(binding)
            return
        for v in _candidates(i):
            binding[i] = v
            yield from _search(i + 1)
        binding[i] = None

    yield from _search(0)


def exact_answers(kg, q):
    """Entities e such that some variable assignment with Target = e turns
    every edge of ``q`` into a fact of ``kg``.

    In-tree queries are answered by per-branch set propagation; any other DAG
    falls back to exhaustive backtracking over bindings.
    """
    _check_anchors(kg, q)
    if q.is_in_tree():
        return set(_reach(kg, q)[-1])
    return {b[-1] for b in _bindings(kg, q)}


def supporting_facts(kg, q):
    """Final-hop facts (into the Target) of every satisfying binding."""
    _check_anchors(kg, q)
    target = q.target
    if q.is_in_tree():
        reach = _reach(kg, q)
        answers = reach[-1]
        out = set()
        for e in q.in_edges(target):
            for x in reach[e.src]:
                out.update(Fact(x, e.relation, t) for t in kg.tails(x, e.relation) if t in answers)
        return sorted(out)
    out = set()
    for b in _bindings(kg, q):
        out.update(Fact(b[e.src], e.relation, b[target]) for e in q.in_edges(target))
    return sorted(out)


def contains_trigger(q, p):
    """True iff a directed path from an anchor bound to ``p.anchor`` follows
    ``p.chain`` relation by relation. The path may end at the Target or at a
    variable en route to it; extra edges elsewhere are ignored.
    """
    chain = tuple(p.chain)
    if not chain:
        return False

    def _follow(node, depth):
        if depth == len(chain):
            return True
        return any(_follow(e.dst, depth + 1) for e in q.out_edges(node)
                   if e.relation == chain[depth])

    return any(_follow(i, 0) for i in q.anchors if q.nodes[i].entity == p.anchor)


def conjoin(q, bait):
    """Attach ``bait`` to ``q`` by unifying the two Targets.

    Variables of the bait are renamed apart. A missing bait, or one made of a
    lone target node, leaves ``q`` unchanged.
    """
    if bait is None or len(bait.nodes) <= 1:
        return q
    qcat, bcat = q.target_category, bait.target_category
    if qcat is not None and bcat is not None and qcat != bcat:
        raise IncompatibleTarget(f'target categories {qcat} and {bcat} differ')
    offset = len(q.nodes) - 1
    nodes = list(q.nodes[:-1]) + list(bait.nodes[:-1])
    target = QueryNode('target', None, qcat if qcat is not None else bcat)
    nodes.append(target)
    new_target = len(nodes) - 1

    def _remap(i):
        return new_target if i == bait.target else offset + i

    edges = [Edge(e.src, e.relation, new_target if e.dst == q.target else e.dst) for e in q.edges]
    edges += [Edge(_remap(e.src), e.relation, _remap(e.dst)) for e in bait.edges]
    hint = q.category_hint if q.category_hint is not None else bait.category_hint
    return build_query(nodes, edges, hint)


def make_trigger(kg, anchor, chain):
    """Validated TriggerPattern; the chain must be schema-consistent from the
    anchor's category."""
    try:
        cat = kg.category_of(anchor)
    except UnknownEntity:
        raise UnknownAnchor(anchor) from None
    chain = tuple(int(kg.check_relation(r)) for r in chain)
    if not chain:
        raise InvalidQuery('trigger chain must be nonempty')
    for r in chain:
        rel = kg.relations[r]
        if rel.head_category != cat:
            raise SchemaInconsistent(f'relation {rel.name} does not start at category {cat}')
        cat = rel.tail_category
    return TriggerPattern(int(anchor), chain)


def chain_query(kg, anchor, chain):
    """Path query ``anchor -r1-> v1 -r2-> ... -> target``."""
    nodes = [QueryNode.anchor(anchor)] + [QueryNode.variable() for _ in chain[:-1]] + [QueryNode.target()]
    edges = [Edge(i, r, i + 1) for i, r in enumerate(chain)]
    return build_query(nodes, edges, kg=kg)


# ------------------------------------------------------------------------------
# JSON codec

def query_to_dict(q, kg=None):
    """Query as a JSON-ready dict. Entities, relations and categories are
    written by name when ``kg`` is given, by id otherwise."""
    def _entity(e):
        return kg.entities[e].name if kg is not None else e

    def _category(c):
        return kg.categories[c] if (kg is not None and c is not None) else c

    nodes = []
    for node in q.nodes:
        d = {'kind': node.kind}
        if node.entity is not None:
            d['entity'] = _entity(node.entity)
        if node.category is not None:
            d['category'] = _category(node.category)
        nodes.append(d)
    edges = [{'from': e.src, 'to': e.dst,
              'relation': kg.relations[e.relation].name if kg is not None else e.relation}
             for e in q.edges]
    out = {'nodes': nodes, 'edges': edges, 'target_index': q.target}
    if q.category_hint is not None:
        out['category_hint'] = _category(q.category_hint)
    return out


def query_from_dict(d, kg=None):
    def _resolve(value, lookup):
        if isinstance(value, str):
            if kg is None:
                raise InvalidQuery(f'name {value!r} needs a knowledge graph to resolve')
            return lookup(value)
        return value

    nodes = []
    for nd in d['nodes']:
        entity = nd.get('entity')
        if entity is not None:
            try:
                entity = _resolve(entity, kg.entity_id if kg is not None else None)
            except UnknownEntity:
                raise UnknownAnchor(entity) from None
        category = nd.get('category')
        if category is not None:
            category = _resolve(category, kg.category_id if kg is not None else None)
        nodes.append(QueryNode(nd['kind'], entity, category))
    edges = [(e['from'], _resolve(e['relation'], kg.relation_id if kg is not None else None), e['to'])
             for e in d['edges']]
    hint = d.get('category_hint')
    if hint is not None:
        hint = _resolve(hint, kg.category_id if kg is not None else None)
    if 'target_index' in d and nodes[d['target_index']].kind != 'target':
        raise InvalidQuery('`target_index` does not point at the target node')
    return build_query(nodes, edges, hint, kg=kg)


def answered_to_dict(aq, kg=None):
    d = query_to_dict(aq.query, kg)
    d['truth'] = [kg.entities[t].name if kg is not None else t for t in aq.truth]
    if aq.supporting is not None:
        d['supporting'] = [list(kg.describe_fact(f)) if kg is not None else list(f)
                           for f in aq.supporting]
    return d


def answered_from_dict(d, kg=None):
    q = query_from_dict(d, kg)
    truth = [kg.entity_id(t) if isinstance(t, str) else t for t in d['truth']]
    supporting = None
    if 'supporting' in d:
        supporting = []
        for h, r, t in d['supporting']:
            if isinstance(h, str):
                h, r, t = kg.entity_id(h), kg.relation_id(r), kg.entity_id(t)
            supporting.append(Fact(h, r, t))
    return AnsweredQuery(q, truth, supporting)
