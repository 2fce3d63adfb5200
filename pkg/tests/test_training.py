import os
import numpy as np
import pytest
import tensorflow as tf

from kgrlab.query import AnsweredQuery, chain_query, exact_answers
from kgrlab.dataloader import fact_queries
from kgrlab.models import init_model, embed_queries
from kgrlab.training import (TrainConfig, KGRTrainer, train, init_adam_state, adam_step,
                             sample_negatives)
from kgrlab.exceptions import EmptyTrainSet, ShapeMismatch, InvalidConfig


def _train_set(kg, ids):
    tb, mb = ids['target-by'], ids['mitigate-by']
    chains = [chain_query(kg, p, [tb, mb]) for p in (ids['P1'], ids['P2'])]
    return fact_queries(kg) + [AnsweredQuery(q, exact_answers(kg, q)) for q in chains]


def _mean_positive_distance(model, answered):
    vecs = embed_queries(model, [aq.query for aq in answered]).numpy()
    table = model.entity_rows()
    return np.mean([np.linalg.norm(table[t] - v) for aq, v in zip(answered, vecs) for t in aq.truth])


def test_train_zero_steps(kg, ids, model):
    trained, trace = train(model, kg, _train_set(kg, ids), TrainConfig(steps=0))
    assert trace == []
    assert trained.equals(model)
    assert trained is not model


def test_train_empty_set(kg, model):
    with pytest.raises(EmptyTrainSet):
        train(model, kg, [], TrainConfig(steps=1))


def test_train_config_validation():
    with pytest.raises(InvalidConfig):
        TrainConfig(learning_rate=0)
    with pytest.raises(InvalidConfig):
        TrainConfig(margin=-1)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    cfg = TrainConfig(learning_rate=[0.01, 0.001], lr_boundaries=[100], steps=10)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_train_decreases_positive_distance(kg, ids):
    answered = _train_set(kg, ids)
    model = init_model(kg, 8, 2, seed=1)
    cfg = TrainConfig(learning_rate=0.01, batch_size=8, steps=200, seed=1)
    trained, trace = train(model, kg, answered, cfg)
    assert len(trace) == 200
    assert _mean_positive_distance(trained, answered) < _mean_positive_distance(model, answered)
    assert model.equals(init_model(kg, 8, 2, seed=1))


def test_train_pure_attraction(kg, ids):
    answered = _train_set(kg, ids)
    model = init_model(kg, 8, 2, seed=2)
    cfg = TrainConfig(learning_rate=0.01, batch_size=8, steps=100, seed=0,
                      negatives_per_positive=0, margin=0.0)
    _, trace = train(model, kg, answered, cfg)
    assert np.mean(trace[-10:]) < np.mean(trace[:10])


def test_train_deterministic(kg, ids, model):
    cfg = TrainConfig(learning_rate=0.01, batch_size=4, steps=5, seed=3)
    a, trace_a = train(model, kg, _train_set(kg, ids), cfg)
    b, trace_b = train(model, kg, _train_set(kg, ids), cfg)
    assert trace_a == trace_b
    assert a.equals(b)


def test_trainer_saves(kg, ids, tmp_path):
    cfg = TrainConfig(learning_rate=0.01, batch_size=4, steps=3)
    trainer = KGRTrainer(kg, _train_set(kg, ids), cfg, dim=4, layers=1, verbose=False,
                         save=True, save_path=str(tmp_path))
    trained = trainer.run()
    assert trained.dim == 4
    for fname in ('model.npz', 'loss_trace.txt', 'learning_curve.png'):
        assert os.path.exists(os.path.join(str(tmp_path), fname))


def test_sample_negatives(kg, ids):
    answered = fact_queries(kg)
    negatives = sample_negatives(kg, answered, 3, np.random.default_rng(0))
    assert negatives.shape == (len(answered), 3)
    for aq, row in zip(answered, negatives):
        cat = aq.query.target_category
        pool = set(kg.entities_of_category(cat).tolist()) - set(aq.truth)
        if pool:
            assert set(row.tolist()) <= pool
        else:
            assert np.all(row == -1)


def test_adam_zero_gradient():
    p = [tf.constant([1.0, -2.0], dtype=tf.float64)]
    state = init_adam_state(p)
    state = state._replace(m=(tf.constant([0.5, 0.5], dtype=tf.float64),),
                           v=(tf.constant([0.1, 0.1], dtype=tf.float64),), step=3)
    _, new_state = adam_step(p, [tf.zeros(2, dtype=tf.float64)], state, 0.1)
    np.testing.assert_allclose(new_state.m[0].numpy(), [0.45, 0.45])
    np.testing.assert_allclose(new_state.v[0].numpy(), [0.0999, 0.0999])
    assert new_state.step == 4

    fresh, _ = adam_step(p, [None], init_adam_state(p), 0.1)
    np.testing.assert_array_equal(fresh[0].numpy(), p[0].numpy())


def test_adam_first_step_bound():
    rng = np.random.default_rng(0)
    p = [tf.constant(rng.normal(size=(3, 4)))]
    g = [tf.constant(rng.normal(size=(3, 4)))]
    lr = 0.01
    new, _ = adam_step(p, g, init_adam_state(p), lr)
    delta = np.abs(new[0].numpy() - p[0].numpy())
    assert np.all(delta <= lr * (1 + 1e-6))
    np.testing.assert_allclose(delta, lr, rtol=1e-4)


def test_adam_deterministic_and_shapes():
    p = [tf.constant([1.0, 2.0], dtype=tf.float64)]
    g = [tf.constant([0.3, -0.7], dtype=tf.float64)]
    a, sa = adam_step(p, g, init_adam_state(p), 0.05)
    b, sb = adam_step(p, g, init_adam_state(p), 0.05)
    np.testing.assert_array_equal(a[0].numpy(), b[0].numpy())
    np.testing.assert_array_equal(sa.v[0].numpy(), sb.v[0].numpy())
    with pytest.raises(ShapeMismatch):
        adam_step(p, [tf.zeros(3, dtype=tf.float64)], init_adam_state(p), 0.05)
