"""
Typed multi-relational knowledge graph: entity/category catalog, relation
schema, fact set with adjacency indexes, TSV codec, surrogate derivation and
synthetic generation.
"""

import os
import numpy as np
from dataclasses import dataclass, field, asdict
from typing import NamedTuple, Optional, Tuple, List
from scipy import sparse

from .exceptions import (MalformedLine, UnknownCategory, UnknownEntity,
                         UnknownRelation, SchemaViolation,
                         DuplicateRelationDecl, InvalidSpec)
from .utils import checkarg_direction

__all__ = ['Entity', 'Relation', 'Fact', 'KnowledgeGraph', 'SurrogateSpec',
           'SyntheticSpec', 'parse_kg', 'serialize_kg', 'read_kg', 'write_kg',
           'add_facts', 'remove_facts', 'neighbors', 'plausible',
           'derive_surrogate', 'generate_synthetic_kg', 'drop_entity_facts',
           'KG_FILENAMES']

KG_FILENAMES = ('triples.tsv', 'categories.tsv', 'schema.tsv')


class Entity(NamedTuple):
    id: int
    name: str
    category: int


class Relation(NamedTuple):
    id: int
    name: str
    head_category: int
    tail_category: int


class Fact(NamedTuple):
    """A directed typed edge. Tuple order (head, relation, tail) is the fact key.
    """
    head: int
    relation: int
    tail: int


@dataclass(frozen=True)
class SurrogateSpec:
    """Fact-removal surrogate. ``remove_fraction`` is the share of facts dropped.
    """
    remove_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= float(self.remove_fraction) <= 1.0:
            raise InvalidSpec(f'`remove_fraction` must be in [0, 1], got {self.remove_fraction}')


@dataclass
class SyntheticSpec:
    """Parameters of a random schema-valid KG.

    Parameters
    ----------
    n_categories : int
        Number of entity categories.
    entities_per_category : int
        Entities created in each category.
    relation_arcs : list of (int, int)
        One relation per arc, from head category index to tail category index.
    fact_density : float
        Probability of each schema-plausible (head, tail) pair becoming a fact.
    seed : int
        Seed of the generator.
    """
    n_categories: int = 3
    entities_per_category: int = 10
    relation_arcs: List[Tuple[int, int]] = field(default_factory=lambda: [(0, 1), (1, 2)])
    fact_density: float = 0.3
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d['relation_arcs'] = [list(a) for a in self.relation_arcs]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if 'relation_arcs' in d:
            d['relation_arcs'] = [tuple(a) for a in d['relation_arcs']]
        return cls(**d)


class KnowledgeGraph():
    """
    Immutable knowledge graph G = (N, E) over a relation schema R. Entities and
    relations carry dense integer ids; every fact is schema-plausible; the out/in
    indexes mirror the fact set exactly.
    """
    def __init__(self, categories, entities, relations, facts=()):
        """
        Parameters
        ----------
        categories : sequence of str
            Category names, indexed by category id.
        entities : sequence of Entity
            Entity records with ids ``0..len-1`` in order.
        relations : sequence of Relation
            Relation records with ids ``0..len-1`` in order.
        facts : iterable of Fact or (int, int, int)
            Fact set. Duplicates collapse.
        """
        self.categories = tuple(categories)
        self.entities = tuple(Entity(*e) for e in entities)
        self.relations = tuple(Relation(*r) for r in relations)
        for i, e in enumerate(self.entities):
            if e.id != i:
                raise InvalidSpec('entity ids must be dense and ordered')
            if not 0 <= e.category < len(self.categories):
                raise UnknownCategory(e.name)
        names = set()
        for i, r in enumerate(self.relations):
            if r.id != i:
                raise InvalidSpec('relation ids must be dense and ordered')
            if r.name in names:
                raise DuplicateRelationDecl(r.name)
            names.add(r.name)
            for c in (r.head_category, r.tail_category):
                if not 0 <= c < len(self.categories):
                    raise UnknownCategory(r.name)
        self._entity_index = {e.name: e.id for e in self.entities}
        self._relation_index = {r.name: r.id for r in self.relations}
        self._category_index = {c: i for i, c in enumerate(self.categories)}

        checked = set()
        for f in facts:
            f = Fact(*(int(x) for x in f))
            self._check_fact(f)
            checked.add(f)
        self.facts = frozenset(checked)
        self._build_indexes()

    # --------------------------------------------------------------------------
    def _check_fact(self, f):
        self.check_entity(f.head)
        self.check_entity(f.tail)
        self.check_relation(f.relation)
        if not self.plausible(f.head, f.relation, f.tail):
            raise SchemaViolation(self.describe_fact(f))

    def _build_indexes(self):
        self._sorted_facts = sorted(self.facts)
        self._out = [dict() for _ in self.entities]
        self._in = [dict() for _ in self.entities]
        for f in self._sorted_facts:
            self._out[f.head].setdefault(f.relation, []).append(f.tail)
            self._in[f.tail].setdefault(f.relation, []).append(f.head)
        for index in (self._out, self._in):
            for per_entity in index:
                for r in per_entity:
                    per_entity[r] = tuple(sorted(per_entity[r]))
        self._by_category = [np.array([e.id for e in self.entities if e.category == c], dtype=np.int64)
                             for c in range(len(self.categories))]
        self._relation_matrices = {}

    # --------------------------------------------------------------------------
    @property
    def n_entities(self):
        return len(self.entities)

    @property
    def n_relations(self):
        return len(self.relations)

    @property
    def n_facts(self):
        return len(self.facts)

    @property
    def n_categories(self):
        return len(self.categories)

    def entity_id(self, name):
        try:
            return self._entity_index[name]
        except KeyError:
            raise UnknownEntity(name) from None

    def relation_id(self, name):
        try:
            return self._relation_index[name]
        except KeyError:
            raise UnknownRelation(name) from None

    def category_id(self, name):
        try:
            return self._category_index[name]
        except KeyError:
            raise UnknownCategory(name) from None

    def check_entity(self, e):
        if isinstance(e, bool) or not isinstance(e, (int, np.integer)) or not 0 <= e < self.n_entities:
            raise UnknownEntity(e)
        return int(e)

    def check_relation(self, r):
        if isinstance(r, bool) or not isinstance(r, (int, np.integer)) or not 0 <= r < self.n_relations:
            raise UnknownRelation(r)
        return int(r)

    def check_category(self, c):
        if isinstance(c, bool) or not isinstance(c, (int, np.integer)) or not 0 <= c < self.n_categories:
            raise UnknownCategory(c)
        return int(c)

    def category_of(self, e):
        return self.entities[self.check_entity(e)].category

    def entities_of_category(self, c):
        """Sorted entity ids of category ``c`` (a read-only view)."""
        return self._by_category[self.check_category(c)]

    def relations_between(self, head_category=None, tail_category=None):
        """Relation ids whose schema matches the given categories (None = any)."""
        return [r.id for r in self.relations
                if (head_category is None or r.head_category == head_category)
                and (tail_category is None or r.tail_category == tail_category)]

    def plausible(self, head, r, tail):
        rel = self.relations[self.check_relation(r)]
        return (self.category_of(head) == rel.head_category
                and self.category_of(tail) == rel.tail_category)

    def has_fact(self, f):
        return Fact(*f) in self.facts

    def tails(self, head, r):
        return self._out[head].get(r, ())

    def heads(self, tail, r):
        return self._in[tail].get(r, ())

    def neighbors(self, v, direction='out', r=None):
        """Facts incident to ``v`` in ascending fact-key order.
        """
        v = self.check_entity(v)
        checkarg_direction(direction)
        if r is not None:
            r = self.check_relation(r)
        index = self._out[v] if direction == 'out' else self._in[v]
        rels = [r] if r is not None else sorted(index)
        out = []
        for rel in rels:
            for other in index.get(rel, ()):
                out.append(Fact(v, rel, other) if direction == 'out' else Fact(other, rel, v))
        return sorted(out)

    def sorted_facts(self):
        return list(self._sorted_facts)

    def fact_array(self):
        """Facts as an int64 array of shape [E, 3] with columns (head, relation, tail)."""
        if not self._sorted_facts:
            return np.zeros((0, 3), dtype=np.int64)
        return np.array(self._sorted_facts, dtype=np.int64)

    def relation_matrix(self, r):
        """Boolean-valued CSR adjacency of relation ``r`` (rows heads, cols tails)."""
        r = self.check_relation(r)
        if r not in self._relation_matrices:
            arr = self.fact_array()
            arr = arr[arr[:, 1] == r]
            data = np.ones(len(arr), dtype=np.int64)
            self._relation_matrices[r] = sparse.csr_matrix((data, (arr[:, 0], arr[:, 2])),
                                                           shape=(self.n_entities, self.n_entities))
        return self._relation_matrices[r]

    def adjacency_consistent(self):
        """True iff indexes rebuilt from the fact set equal the stored ones."""
        rebuilt = KnowledgeGraph(self.categories, self.entities, self.relations, self.facts)
        return rebuilt._out == self._out and rebuilt._in == self._in

    def with_facts(self, facts):
        return KnowledgeGraph(self.categories, self.entities, self.relations, facts)

    def describe_fact(self, f):
        f = Fact(*f)
        def _name(e):
            return self.entities[e].name if 0 <= e < self.n_entities else str(e)
        rel = self.relations[f.relation].name if 0 <= f.relation < self.n_relations else str(f.relation)
        return (_name(f.head), rel, _name(f.tail))

    def same_catalog(self, other):
        return (self.categories == other.categories and self.entities == other.entities
                and self.relations == other.relations)

    def __eq__(self, other):
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self.same_catalog(other) and self.facts == other.facts

    def __hash__(self):
        return hash((self.categories, self.entities, self.relations, self.facts))

    def __repr__(self):
        return (f'KnowledgeGraph(|N|={self.n_entities}, |R|={self.n_relations}, '
                f'|E|={self.n_facts}, categories={self.n_categories})')


def _iter_lines(text, source):
    for line_no, raw in enumerate(text.split('\n'), start=1):
        line = raw.rstrip('\r')
        if not line.strip() or line.lstrip().startswith('#'):
            continue
        yield line_no, [part.strip() for part in line.split('\t')]


def parse_kg(triples_text, categories_text, schema_text):
    """Parse the three TSV documents into a KnowledgeGraph.

    Parameters
    ----------
    triples_text : str
        ``head<TAB>relation<TAB>tail`` per line.
    categories_text : str
        ``entity<TAB>category`` per line. Entity ids follow first appearance.
    schema_text : str
        ``relation<TAB>head_category<TAB>tail_category`` per line.

    Returns
    -------
    kg : KnowledgeGraph
        Duplicate triples collapse into a single fact.
    """
    categories = []
    category_index = {}

    def _category(name):
        if name not in category_index:
            category_index[name] = len(categories)
            categories.append(name)
        return category_index[name]

    relations = []
    relation_index = {}
    for line_no, parts in _iter_lines(schema_text, 'schema'):
        if len(parts) != 3 or not all(parts):
            raise MalformedLine(line_no, '\t'.join(parts), 'schema')
        name, head_cat, tail_cat = parts
        if name in relation_index:
            raise DuplicateRelationDecl(name)
        relation_index[name] = len(relations)
        relations.append(Relation(len(relations), name, _category(head_cat), _category(tail_cat)))

    entities = []
    entity_index = {}
    for line_no, parts in _iter_lines(categories_text, 'categories'):
        if len(parts) != 2 or not all(parts):
            raise MalformedLine(line_no, '\t'.join(parts), 'categories')
        name, cat = parts
        cat_id = _category(cat)
        if name in entity_index:
            if entities[entity_index[name]].category != cat_id:
                raise MalformedLine(line_no, '\t'.join(parts), 'categories (conflicting category)')
            continue
        entity_index[name] = len(entities)
        entities.append(Entity(len(entities), name, cat_id))

    facts = set()
    for line_no, parts in _iter_lines(triples_text, 'triples'):
        if len(parts) != 3 or not all(parts):
            raise MalformedLine(line_no, '\t'.join(parts), 'triples')
        head, rel, tail = parts
        for name in (head, tail):
            if name not in entity_index:
                raise UnknownCategory(name)
        if rel not in relation_index:
            raise UnknownRelation(rel)
        r = relations[relation_index[rel]]
        h, t = entity_index[head], entity_index[tail]
        if entities[h].category != r.head_category or entities[t].category != r.tail_category:
            raise SchemaViolation((head, rel, tail))
        facts.add(Fact(h, r.id, t))
    return KnowledgeGraph(categories, entities, relations, facts)


def serialize_kg(kg):
    """Inverse of ``parse_kg``: returns (triples_text, categories_text, schema_text).
    """
    schema = ''.join(f'{r.name}\t{kg.categories[r.head_category]}\t{kg.categories[r.tail_category]}\n'
                     for r in kg.relations)
    cats = ''.join(f'{e.name}\t{kg.categories[e.category]}\n' for e in kg.entities)
    triples = ''.join('\t'.join(kg.describe_fact(f)) + '\n' for f in kg.sorted_facts())
    return triples, cats, schema


def read_kg(path):
    """Read ``triples.tsv``, ``categories.tsv`` and ``schema.tsv`` from ``path``."""
    texts = []
    for fname in KG_FILENAMES:
        with open(os.path.join(path, fname), encoding='utf-8') as f:
            texts.append(f.read())
    return parse_kg(*texts)


def write_kg(kg, path):
    os.makedirs(path, exist_ok=True)
    for fname, text in zip(KG_FILENAMES, serialize_kg(kg)):
        with open(os.path.join(path, fname), 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)


def add_facts(kg, facts):
    """Union of the fact sets. Entities are never created.
    """
    facts = [Fact(*f) for f in facts]
    for f in facts:
        kg._check_fact(f)
    if all(f in kg.facts for f in facts):
        return kg
    return kg.with_facts(kg.facts | set(facts))


def remove_facts(kg, facts):
    """Set difference of the fact sets."""
    facts = {Fact(*f) for f in facts}
    if not facts & kg.facts:
        return kg
    return kg.with_facts(kg.facts - facts)


def neighbors(kg, v, direction='out', r=None):
    return kg.neighbors(v, direction, r)


def plausible(kg, head, r, tail):
    return kg.plausible(head, r, tail)


def derive_surrogate(kg, spec):
    """Adversary-side KG: same catalogs, a uniform random subset of the facts.

    The subset has ``round(|E| * (1 - remove_fraction))`` facts (half rounds up)
    and depends only on ``spec``.
    """
    if not isinstance(spec, SurrogateSpec):
        spec = SurrogateSpec(**spec)
    facts = kg.sorted_facts()
    keep = int(np.floor(len(facts) * (1.0 - spec.remove_fraction) + 0.5))
    rng = np.random.default_rng(spec.seed)
    chosen = np.sort(rng.choice(len(facts), size=keep, replace=False)) if keep else []
    return kg.with_facts([facts[i] for i in chosen])


def generate_synthetic_kg(spec):
    """Random schema-valid KG; each plausible pair of an arc is a fact with
    probability ``fact_density``.
    """
    if isinstance(spec, dict):
        spec = SyntheticSpec.from_dict(spec)
    if spec.n_categories < 1 or spec.entities_per_category < 1:
        raise InvalidSpec('`n_categories` and `entities_per_category` must be positive')
    if not 0.0 <= spec.fact_density <= 1.0:
        raise InvalidSpec(f'`fact_density` must be in [0, 1], got {spec.fact_density}')
    for arc in spec.relation_arcs:
        if len(arc) != 2 or not all(0 <= c < spec.n_categories for c in arc):
            raise InvalidSpec(f'relation arc {arc} references an undeclared category')

    categories = [f'C{c}' for c in range(spec.n_categories)]
    entities = []
    for c in range(spec.n_categories):
        for i in range(spec.entities_per_category):
            entities.append(Entity(len(entities), f'C{c}_e{i}', c))
    relations = [Relation(j, f'r{j}', int(h), int(t)) for j, (h, t) in enumerate(spec.relation_arcs)]

    rng = np.random.default_rng(spec.seed)
    n = spec.entities_per_category
    facts = []
    for rel in relations:
        mask = rng.random((n, n)) < spec.fact_density
        hh, tt = np.nonzero(mask)
        facts.extend(Fact(int(rel.head_category * n + h), rel.id, int(rel.tail_category * n + t))
                     for h, t in zip(hh, tt))
    return KnowledgeGraph(categories, entities, relations, facts)


def drop_entity_facts(kg, entities):
    """Remove every fact incident to one of ``entities`` (entities are kept)."""
    entities = {kg.check_entity(e) for e in entities}
    return kg.with_facts([f for f in kg.facts if f.head not in entities and f.tail not in entities])
