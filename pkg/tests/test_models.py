import numpy as np
import pytest
import tensorflow as tf
from hypothesis import given, settings, strategies as st

from kgrlab.query import QueryNode, build_query, chain_query
from kgrlab.models import (KGRModel, init_model, project, intersect, embed_query,
                           embed_queries, distance, fact_fitness, fact_fitness_batch,
                           save_model, load_model)
from kgrlab.models.blocks import ProjectionBlock, IntersectionBlock
from kgrlab.inference import rank_entities
from kgrlab.exceptions import (InvalidDim, EmptyInput, DimMismatch, UnknownRelation,
                               UnknownAnchor, UnknownCategory)


def _identity_model(kg, dim=3, seed=0):
    """One linear layer per operator with identity kernels and zero biases."""
    rng = np.random.default_rng(seed)
    eye = np.stack([np.eye(dim)] * kg.n_relations)
    projection = ProjectionBlock([eye], [np.zeros((kg.n_relations, dim))])
    intersection = IntersectionBlock([np.eye(dim)], [np.zeros(dim)])
    return KGRModel(rng.normal(size=(kg.n_entities, dim)), projection, intersection,
                    [e.category for e in kg.entities], kg.n_categories)


def test_init_deterministic(kg):
    a = init_model(kg, 8, 2, seed=5)
    b = init_model(kg, 8, 2, seed=5)
    assert a.equals(b)
    assert not a.equals(init_model(kg, 8, 2, seed=6))


def test_init_shapes_and_bounds(kg):
    m = init_model(kg, 8, 3, seed=0)
    assert m.entity_rows().shape == (6, 8)
    assert m.layers == 3
    bound = 1 / np.sqrt(8)
    for p in m.parameters:
        assert np.all(np.abs(p.numpy()) <= bound)


def test_init_invalid_dim(kg):
    with pytest.raises(InvalidDim):
        init_model(kg, 0, 2)
    with pytest.raises(InvalidDim):
        init_model(kg, 4, 0)


def test_project_zero_weights(kg):
    dim = 3
    projection = ProjectionBlock([np.zeros((2, dim, dim))], [np.zeros((2, dim))])
    intersection = IntersectionBlock([np.eye(dim)], [np.zeros(dim)])
    m = KGRModel(np.ones((6, dim)), projection, intersection, [0, 0, 1, 1, 2, 2])
    out = project(m, 0, np.array([1.0, -2.0, 3.0]))
    assert np.array_equal(out.numpy(), np.zeros(dim))


def test_project_identity(kg):
    m = _identity_model(kg)
    x = np.array([0.5, -1.5, 2.0])
    np.testing.assert_array_equal(project(m, 1, x).numpy(), x)
    with pytest.raises(UnknownRelation):
        project(m, 2, x)


def test_intersect(model):
    rng = np.random.default_rng(0)
    a, b, c = (rng.normal(size=model.dim) for _ in range(3))
    np.testing.assert_array_equal(intersect(model, [a]).numpy(), a)
    np.testing.assert_array_equal(intersect(model, [a, b]).numpy(), intersect(model, [b, a]).numpy())
    np.testing.assert_array_equal(intersect(model, [a, b, c]).numpy(),
                                  intersect(model, [c, a, b]).numpy())
    np.testing.assert_allclose(intersect(model, [a, a]).numpy(), intersect(model, [a, a, a]).numpy(),
                               rtol=0, atol=1e-12)
    with pytest.raises(EmptyInput):
        intersect(model, [])


def test_embed_one_hop(kg, ids, model):
    q = chain_query(kg, ids['P1'], [ids['target-by']])
    phi = model.entity_rows([ids['P1']])[0]
    np.testing.assert_allclose(embed_query(model, q).numpy(),
                               project(model, ids['target-by'], phi).numpy(), rtol=0, atol=1e-12)


def test_embed_chain(kg, ids, model):
    tb, mb = ids['target-by'], ids['mitigate-by']
    q = chain_query(kg, ids['P1'], [tb, mb])
    phi = model.entity_rows([ids['P1']])[0]
    expected = project(model, mb, project(model, tb, phi))
    np.testing.assert_allclose(embed_query(model, q).numpy(), expected.numpy(), rtol=0, atol=1e-12)


def test_embed_intersection(kg, ids, model):
    tb, mb = ids['target-by'], ids['mitigate-by']
    nodes = [QueryNode.anchor(ids['P1']), QueryNode.anchor(ids['P2']), QueryNode.variable(),
             QueryNode.target()]
    q = build_query(nodes, [(0, tb, 2), (1, tb, 2), (2, mb, 3)], kg=kg)
    p1, p2 = model.entity_rows([ids['P1'], ids['P2']])
    expected = project(model, mb, intersect(model, [project(model, tb, p1), project(model, tb, p2)]))
    np.testing.assert_allclose(embed_query(model, q).numpy(), expected.numpy(), rtol=0, atol=1e-12)


def test_embed_queries_keeps_order(kg, ids, model):
    tb, mb = ids['target-by'], ids['mitigate-by']
    queries = [chain_query(kg, ids['P1'], [tb, mb]), chain_query(kg, ids['M2'], [mb]),
               chain_query(kg, ids['P2'], [tb, mb])]
    batched = embed_queries(model, queries).numpy()
    for i, q in enumerate(queries):
        np.testing.assert_allclose(batched[i], embed_query(model, q).numpy(), rtol=0, atol=1e-12)


def test_embed_unknown_anchor(model, ids):
    q = build_query([QueryNode.anchor(40), QueryNode.target()], [(0, ids['target-by'], 1)])
    with pytest.raises(UnknownAnchor):
        embed_query(model, q)


def test_distance():
    assert distance([0, 0], [3, 4]) == 5.0
    x = np.array([1.0, 2.0])
    assert distance(x, x) == 0.0
    with pytest.raises(DimMismatch):
        distance([0, 0], [0, 0, 0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4),
       st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4))
def test_distance_symmetric(a, b):
    assert distance(a, b) == distance(b, a)
    assert distance(a, b) >= 0


def test_rank_entities(kg, ids, model):
    x1 = model.entity_rows([ids['X1']])[0]
    ranking = rank_entities(model, x1)
    assert ranking.entities[0] == ids['X1']
    assert np.all(np.diff(ranking.distances) >= 0)
    assert len(rank_entities(model, x1, ids['Mitigation'])) == 2
    with pytest.raises(UnknownCategory):
        rank_entities(model, x1, 7)


def test_rank_entities_ties(ids, model):
    twin = model.with_entity_rows([ids['X2']], model.entity_rows([ids['X1']]))
    ranking = rank_entities(twin, np.zeros(model.dim), ids['Mitigation'])
    assert list(ranking.entities) == [ids['X1'], ids['X2']]


def test_rank_entities_equivariant(model):
    rng = np.random.default_rng(1)
    perm = rng.permutation(model.n_entities)
    permuted = model.with_entity_rows(np.arange(model.n_entities), model.entity_rows(perm))
    qvec = rng.normal(size=model.dim)
    before = rank_entities(model, qvec)
    after = rank_entities(permuted, qvec)
    np.testing.assert_array_equal(perm[after.entities], before.entities)


def test_fact_fitness(kg, ids, model):
    fit = fact_fitness_batch(model, *kg.fact_array().T)
    assert np.all(fit <= 0)
    f = (ids['P1'], ids['target-by'], ids['M1'])
    assert fact_fitness(model, f) == pytest.approx(fit[0])

    ident = _identity_model(kg)
    ident = ident.with_entity_rows([ids['M1']], ident.entity_rows([ids['P1']]))
    assert fact_fitness(ident, f) == 0.0


def test_checkpoint_round_trip(model, tmp_path):
    path = str(tmp_path / 'model')
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.equals(model)
    assert loaded.layers == model.layers
