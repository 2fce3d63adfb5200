"""
Embedding-based KGR model: entity table, per-relation projection networks and
one intersection network, plus query embedding, distances, fact fitness and
the checkpoint codec.
"""

import os
import numpy as np
import tensorflow as tf

from .blocks import ProjectionBlock, IntersectionBlock, uniform_init
from ..dataloader import batch_queries
from ..exceptions import (InvalidDim, EmptyInput, DimMismatch, UnknownAnchor,
                          UnknownRelation, UnknownEntity, InvalidConfig)

__all__ = ['KGRModel', 'init_model', 'project', 'intersect', 'embed_query',
           'embed_queries', 'distance', 'fact_fitness', 'fact_fitness_batch',
           'save_model', 'load_model', 'CHECKPOINT_VERSION']

CHECKPOINT_VERSION = 1


class KGRModel(tf.Module):
    """
    Model bound to the entity catalog of a KnowledgeGraph.

    Attributes
    ----------
    entity_embeddings : tf.Variable
        Table phi_G of shape [|N|, d].
    projection : ProjectionBlock
        Relation-r projection networks psi_r.
    intersection : IntersectionBlock
        Intersection network psi_and.
    entity_categories : np.ndarray
        Category id of every entity, used for candidate filtering.
    """
    def __init__(self, embeddings, projection, intersection, entity_categories,
                 n_categories=None, name=None):
        super().__init__(name=name)
        embeddings = np.asarray(embeddings, dtype=np.float64)
        self.entity_embeddings = tf.Variable(embeddings, name='entity_embeddings')
        self.projection = projection
        self.intersection = intersection
        self.entity_categories = np.asarray(entity_categories, dtype=np.int64)
        if n_categories is None:
            n_categories = int(self.entity_categories.max()) + 1 if len(self.entity_categories) else 0
        self.n_categories = int(n_categories)

    @property
    def dim(self):
        return int(self.entity_embeddings.shape[1])

    @property
    def n_entities(self):
        return int(self.entity_embeddings.shape[0])

    @property
    def n_relations(self):
        return int(self.projection.kernels[0].shape[0])

    @property
    def layers(self):
        return self.projection.n_layers

    @property
    def parameters(self):
        """All trainable variables, in a fixed order."""
        return [self.entity_embeddings] + self.projection.parameters + self.intersection.parameters

    def entity_rows(self, ids=None):
        table = self.entity_embeddings.numpy()
        return table if ids is None else table[np.asarray(ids, dtype=np.int64)]

    def copy(self):
        return KGRModel(self.entity_embeddings.numpy(),
                        ProjectionBlock([k.numpy() for k in self.projection.kernels],
                                        [b.numpy() for b in self.projection.biases]),
                        IntersectionBlock([k.numpy() for k in self.intersection.kernels],
                                          [b.numpy() for b in self.intersection.biases]),
                        self.entity_categories, self.n_categories)

    def with_entity_rows(self, ids, rows):
        """Copy whose embedding rows ``ids`` are replaced by ``rows``."""
        new = self.copy()
        table = new.entity_embeddings.numpy()
        table[np.asarray(ids, dtype=np.int64)] = np.asarray(rows, dtype=np.float64)
        new.entity_embeddings.assign(table)
        return new

    def to_arrays(self):
        arrays = {'entity_embeddings': self.entity_embeddings.numpy(),
                  'entity_categories': self.entity_categories,
                  'n_categories': np.int64(self.n_categories)}
        for i, (k, b) in enumerate(zip(self.projection.kernels, self.projection.biases)):
            arrays[f'projection_kernel_{i}'] = k.numpy()
            arrays[f'projection_bias_{i}'] = b.numpy()
        for i, (k, b) in enumerate(zip(self.intersection.kernels, self.intersection.biases)):
            arrays[f'intersection_kernel_{i}'] = k.numpy()
            arrays[f'intersection_bias_{i}'] = b.numpy()
        return arrays

    def equals(self, other):
        """Bitwise equality of every parameter."""
        a, b = self.to_arrays(), other.to_arrays()
        return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)

    def __repr__(self):
        return (f'KGRModel(|N|={self.n_entities}, |R|={self.n_relations}, '
                f'dim={self.dim}, layers={self.layers})')


def init_model(kg, dim, layers, seed=0):
    """Randomly initialized model bound to ``kg``.

    Parameters
    ----------
    kg : KnowledgeGraph
    dim : int
        Embedding dimension d.
    layers : int
        Number of layers L of every operator network.
    seed : int
        Every value is drawn i.i.d. uniform in [-1/sqrt(d), 1/sqrt(d)] from a
        generator seeded with ``seed``.
    """
    if isinstance(dim, bool) or not isinstance(dim, (int, np.integer)) or dim < 1:
        raise InvalidDim(f'`dim` must be a positive integer, got {dim}')
    if isinstance(layers, bool) or not isinstance(layers, (int, np.integer)) or layers < 1:
        raise InvalidDim(f'`layers` must be a positive integer, got {layers}')
    if kg.n_relations == 0:
        raise InvalidConfig('the knowledge graph declares no relation')
    rng = np.random.default_rng(seed)
    embeddings = uniform_init(rng, (kg.n_entities, dim), dim)
    projection = ProjectionBlock.random(kg.n_relations, dim, layers, rng)
    intersection = IntersectionBlock.random(dim, layers, rng)
    categories = [e.category for e in kg.entities]
    return KGRModel(embeddings, projection, intersection, categories, kg.n_categories)


def project(model, r, x):
    """psi_r(x) for a single d-vector."""
    if isinstance(r, bool) or not isinstance(r, (int, np.integer)) or not 0 <= r < model.n_relations:
        raise UnknownRelation(r)
    x = tf.reshape(tf.convert_to_tensor(x, dtype=tf.float64), (1, -1))
    return model.projection(x, [r])[0]


def intersect(model, inputs):
    """psi_and over a nonempty list of d-vectors."""
    if len(inputs) == 0:
        raise EmptyInput('`inputs` must hold at least one vector')
    inputs = [tf.convert_to_tensor(v, dtype=tf.float64) for v in inputs]
    return model.intersection(inputs)


def _check_query(model, q):
    for e in q.anchor_entities:
        if not 0 <= e < model.n_entities:
            raise UnknownAnchor(e)
    for r in q.relations:
        if not 0 <= r < model.n_relations:
            raise UnknownRelation(r)


def _embed_batch(model, batch, table):
    """Bottom-up evaluation of one structure for every query of the batch."""
    kinds, pairs = batch.structure
    vectors = [None] * len(kinds)
    anchor_col = 0
    for i, kind in enumerate(kinds):
        if kind == 'anchor':
            vectors[i] = tf.gather(table, batch.anchors[:, anchor_col])
            anchor_col += 1
            continue
        incoming = [model.projection(vectors[src], batch.relations[:, j])
                    for j, (src, dst) in enumerate(pairs) if dst == i]
        vectors[i] = model.intersection(incoming)
    return vectors[-1]


def embed_queries(model, queries, table=None):
    """Embeddings phi_q of a list of queries, shape [len(queries), d].

    Parameters
    ----------
    model : KGRModel
    queries : list of Query
    table : tf.Tensor or None
        Entity table to read anchors from. Defaults to the model's own; attacks
        pass a partially optimized one.
    """
    if len(queries) == 0:
        return tf.zeros((0, model.dim), dtype=tf.float64)
    for q in queries:
        _check_query(model, q)
    table = model.entity_embeddings if table is None else table
    parts, order = [], []
    for batch in batch_queries(queries):
        parts.append(_embed_batch(model, batch, table))
        order.append(batch.index)
    out = tf.concat(parts, axis=0)
    inverse = np.argsort(np.concatenate(order), kind='stable')
    return tf.gather(out, inverse)


def embed_query(model, q, table=None):
    """phi_q = psi(q; phi_G) as a d-vector."""
    return embed_queries(model, [q], table)[0]


def distance(a, b):
    """Euclidean distance between two d-vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatch(f'vectors of shape {a.shape} and {b.shape}')
    return float(np.linalg.norm(a - b))


def fact_fitness_batch(model, heads, relations, tails, head_rows=None, table=None):
    """-||psi_r(phi_h) - phi_t|| for arrays of facts.

    Parameters
    ----------
    heads, relations, tails : array-like of int
        Fact components, equal lengths.
    head_rows : array-like or None
        Head embeddings to use instead of the table rows, shape [n, d].
    table : array-like or None
        Entity table for tails (and heads when ``head_rows`` is None).
    """
    heads = np.asarray(heads, dtype=np.int64)
    relations = np.asarray(relations, dtype=np.int64)
    tails = np.asarray(tails, dtype=np.int64)
    if len(heads) == 0:
        return np.zeros(0)
    for ids, n, err in ((heads, model.n_entities, UnknownEntity), (tails, model.n_entities, UnknownEntity),
                        (relations, model.n_relations, UnknownRelation)):
        bad = ids[(ids < 0) | (ids >= n)]
        if len(bad):
            raise err(int(bad[0]))
    table = model.entity_embeddings if table is None else tf.convert_to_tensor(table, dtype=tf.float64)
    h = tf.gather(table, heads) if head_rows is None else tf.convert_to_tensor(head_rows, dtype=tf.float64)
    projected = model.projection(h, relations)
    diff = projected - tf.gather(table, tails)
    return -np.linalg.norm(diff.numpy(), axis=1)


def fact_fitness(model, fact, table=None):
    """Fitness of a single fact, at most 0."""
    h, r, t = fact
    return float(fact_fitness_batch(model, [h], [r], [t], table=table)[0])


def save_model(model, path):
    """Write a ``numpy.savez`` checkpoint (exact for float64)."""
    np.savez(path, format_version=np.int64(CHECKPOINT_VERSION), **model.to_arrays())


def load_model(path):
    if not os.path.exists(path) and os.path.exists(path + '.npz'):
        path = path + '.npz'
    with np.load(path) as data:
        version = int(data['format_version'])
        if version != CHECKPOINT_VERSION:
            raise InvalidConfig(f'unsupported checkpoint version {version}')
        n_proj = len([k for k in data.files if k.startswith('projection_kernel_')])
        n_inter = len([k for k in data.files if k.startswith('intersection_kernel_')])
        projection = ProjectionBlock([data[f'projection_kernel_{i}'] for i in range(n_proj)],
                                     [data[f'projection_bias_{i}'] for i in range(n_proj)])
        intersection = IntersectionBlock([data[f'intersection_kernel_{i}'] for i in range(n_inter)],
                                         [data[f'intersection_bias_{i}'] for i in range(n_inter)])
        return KGRModel(data['entity_embeddings'], projection, intersection,
                        data['entity_categories'], int(data['n_categories']))
