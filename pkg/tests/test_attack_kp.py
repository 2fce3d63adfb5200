import json
import os
import numpy as np
import pytest

from kgrlab.kg import Fact, SyntheticSpec, generate_synthetic_kg
from kgrlab.query import AnsweredQuery, TriggerPattern, chain_query, exact_answers
from kgrlab.dataloader import fact_queries
from kgrlab.models import init_model, embed_queries, fact_fitness_batch
from kgrlab.attacks import (KpConfig, PoisonPlan, select_perturbable, optimize_kp_embeddings,
                            generate_poison_facts, run_kp, KnowledgePoisoning)
from kgrlab.exceptions import UnknownAnchor, EmptyQStar, MissingTargetAnswer, MissingGoal


@pytest.fixture
def setup(kg, ids):
    tb, mb = ids['target-by'], ids['mitigate-by']
    trigger = TriggerPattern(ids['P1'], (tb, mb))
    q_a = chain_query(kg, ids['P1'], [tb, mb])
    q_b = chain_query(kg, ids['P2'], [tb, mb])
    Q_star = [AnsweredQuery(q_a, exact_answers(kg, q_a))]
    Q_non = [AnsweredQuery(q_b, exact_answers(kg, q_b))] + fact_queries(kg)[2:]
    return trigger, Q_star, Q_non


def test_select_perturbable(kg, ids):
    assert select_perturbable(kg, TriggerPattern(ids['P1'], ())) == (ids['P1'], ids['M1'], ids['M2'])
    assert select_perturbable(kg.with_facts([]), ids['P1']) == (ids['P1'],)
    with pytest.raises(UnknownAnchor):
        select_perturbable(kg, 99)


def test_optimize_zero_steps(model, ids, setup):
    trigger, Q_star, Q_non = setup
    perturbable = (ids['P1'], ids['M1'], ids['M2'])
    rows, _, trace = optimize_kp_embeddings(model, perturbable, Q_star, Q_non, ids['X2'],
                                            KpConfig(steps=0))
    np.testing.assert_array_equal(rows, model.entity_rows(perturbable))
    assert trace == []


def test_optimize_freezes_model(model, ids, setup):
    trigger, Q_star, Q_non = setup
    before = model.copy()
    optimize_kp_embeddings(model, (ids['P1'], ids['M1'], ids['M2']), Q_star, Q_non, ids['X2'],
                           KpConfig(steps=5))
    assert model.equals(before)


def test_optimize_lambda_zero_isolates_first_term(model, ids, setup):
    trigger, Q_star, Q_non = setup
    perturbable = (ids['P1'], ids['M1'], ids['M2'])
    rows, final_loss, _ = optimize_kp_embeddings(model, perturbable, Q_star, Q_non, ids['X2'],
                                                 KpConfig(steps=20, lam=0.0))
    poisoned = model.with_entity_rows(perturbable, rows)
    vecs = embed_queries(poisoned, [aq.query for aq in Q_star]).numpy()
    expected = np.mean(np.linalg.norm(vecs - poisoned.entity_rows([ids['X2']]), axis=1))
    assert final_loss == pytest.approx(expected, rel=1e-10)


def test_optimize_forcing_decreases(model, ids, setup):
    trigger, Q_star, Q_non = setup
    _, final_loss, trace = optimize_kp_embeddings(model, (ids['P1'], ids['M1'], ids['M2']),
                                                  Q_star, Q_non, ids['X2'],
                                                  KpConfig(steps=200, learning_rate=0.01))
    assert final_loss < trace[0]


def test_optimize_errors(model, ids, setup):
    trigger, Q_star, Q_non = setup
    perturbable = (ids['P1'],)
    with pytest.raises(EmptyQStar):
        optimize_kp_embeddings(model, perturbable, [], Q_non, ids['X2'], KpConfig(steps=1))
    with pytest.raises(MissingTargetAnswer):
        optimize_kp_embeddings(model, perturbable, Q_star, Q_non, None, KpConfig(steps=1))
    with pytest.raises(MissingGoal):
        optimize_kp_embeddings(model, perturbable, [Q_star[0].query], Q_non, None,
                               KpConfig(steps=1, mode='degradation'))


def _brute_force(model, kg, perturbable, rows, n_g):
    table = model.entity_rows().copy()
    table[list(perturbable)] = rows
    candidates = []
    for v in perturbable:
        for r in range(kg.n_relations):
            for t in range(kg.n_entities):
                if t in perturbable or not kg.plausible(v, r, t) or kg.has_fact((v, r, t)):
                    continue
                candidates.append((v, r, t))
    if not candidates:
        return []
    arr = np.array(candidates)
    fit = fact_fitness_batch(model, arr[:, 0], arr[:, 1], arr[:, 2], table=table)
    ranked = sorted(range(len(candidates)),
                    key=lambda i: (-fit[i], candidates[i][1], candidates[i][0], candidates[i][2]))
    return [Fact(*candidates[i]) for i in ranked[:n_g]]


@pytest.mark.parametrize('seed', range(20))
def test_generate_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    kg = generate_synthetic_kg(SyntheticSpec(3, 6, [(0, 1), (1, 2), (0, 2), (2, 1)], 0.3, seed))
    model = init_model(kg, 4, 2, seed=seed)
    anchor = int(rng.integers(kg.n_entities))
    perturbable = select_perturbable(kg, anchor)
    rows = rng.normal(size=(len(perturbable), 4))
    n_g = int(rng.integers(1, 12))
    scored = generate_poison_facts(model, kg, perturbable, n_g, rows)
    assert [sf.fact for sf in scored] == _brute_force(model, kg, perturbable, rows, n_g)
    assert len(scored) <= n_g
    assert all(a.fitness >= b.fitness for a, b in zip(scored, scored[1:]))


def test_generate_fixture_candidates(kg, model, ids):
    perturbable = (ids['P1'], ids['M1'], ids['M2'])
    scored = generate_poison_facts(model, kg, perturbable, 100)
    facts = [sf.fact for sf in scored]
    assert Fact(ids['P1'], ids['mitigate-by'], ids['X1']) not in facts
    for f in facts:
        assert kg.plausible(*f)
        assert f.head in perturbable and f.tail not in perturbable
        assert f not in kg.facts
    # P1 links to no product; M1, M2 reach the unlinked mitigation
    assert sorted(facts) == [Fact(ids['M1'], ids['mitigate-by'], ids['X2']),
                             Fact(ids['M2'], ids['mitigate-by'], ids['X1'])]
    assert generate_poison_facts(model, kg, perturbable, 0) == []


def test_run_kp_zero_budget(kg, model, ids, setup):
    trigger, Q_star, Q_non = setup
    plan = run_kp(kg, model, trigger, ids['X2'], Q_star, Q_non, KpConfig(n_g=0, steps=3))
    assert plan.facts == ()
    assert plan.optimized_embeddings.shape == (3, model.dim)
    assert len(plan.loss_trace) == 3


def test_run_kp_degradation_without_non_target(kg, model, ids, setup):
    trigger, Q_star, _ = setup
    plan = run_kp(kg, model, trigger, None, Q_star, [],
                  KpConfig(n_g=1, steps=3, mode='degradation'))
    assert len(plan.facts) == 1
    assert np.isfinite(plan.final_loss)


def test_plan_codec(kg, model, ids, setup):
    trigger, Q_star, Q_non = setup
    plan = run_kp(kg, model, trigger, ids['X2'], Q_star, Q_non, KpConfig(n_g=2, steps=2))
    d = plan.to_dict(kg)
    assert d['trigger'] == {'anchor': 'P1', 'chain': ['target-by', 'mitigate-by']}
    assert d['budget'] == 2
    back = PoisonPlan.from_dict(json.loads(json.dumps(d)), kg)
    assert back.fact_list == plan.fact_list
    assert back.target_answer == ids['X2']


def test_knowledge_poisoning_saves(kg, model, ids, setup, tmp_path):
    trigger, Q_star, Q_non = setup
    attack = KnowledgePoisoning(kg, model, trigger, Q_star, Q_non, ids['X2'],
                                KpConfig(n_g=2, steps=3), verbose=False, save=True,
                                save_path=str(tmp_path))
    plan = attack.run()
    assert len(plan.facts) == 2
    with open(os.path.join(str(tmp_path), 'poison_plan.json')) as f:
        assert json.load(f)['budget'] == 2
