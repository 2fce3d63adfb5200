import json
import os
import pytest

from kgrlab.query import AnsweredQuery, TriggerPattern, chain_query, exact_answers
from kgrlab.dataloader import fact_queries
from kgrlab.training import TrainConfig
from kgrlab.attacks import (KpConfig, QmConfig, CoConfig, co_optimize, refresh_surrogate,
                            run_kp, run_qm, CoOptimization)
from kgrlab.exceptions import InvalidConfig


@pytest.fixture
def setup(kg, ids):
    tb, mb = ids['target-by'], ids['mitigate-by']
    trigger = TriggerPattern(ids['P1'], (tb, mb))
    q_a = chain_query(kg, ids['P1'], [tb, mb])
    q_b = chain_query(kg, ids['P2'], [tb, mb])
    Q_star = [AnsweredQuery(q_a, exact_answers(kg, q_a))]
    Q_non = [AnsweredQuery(q_b, exact_answers(kg, q_b))] + fact_queries(kg)[2:]
    return trigger, Q_star, Q_non


def _cfg(rounds=1, n_g=2, n_q=1, finetune_steps=5, tol=1e-4):
    return CoConfig(rounds=rounds, tol=tol, kp=KpConfig(n_g=n_g, steps=5), qm=QmConfig(n_q=n_q, steps=5),
                    finetune=TrainConfig(learning_rate=0.01, batch_size=4, steps=finetune_steps))


def test_single_round_is_sequential(kg, model, ids, setup):
    trigger, Q_star, Q_non = setup
    cfg = _cfg()
    result = co_optimize(kg, model, trigger, ids['X2'], Q_star, Q_non, cfg)

    plan = run_kp(kg, model, trigger, ids['X2'], Q_star, Q_non, cfg.kp)
    refreshed, poisoned = refresh_surrogate(kg, model, plan, cfg, Q_non)
    q_star, bait = run_qm(refreshed, kg, Q_star[0], ids['X2'], cfg.qm)

    assert result.plan.fact_list == plan.fact_list
    assert result.infected[0] == q_star
    assert result.baits[0].paths == bait.paths
    assert result.model.equals(refreshed)
    assert len(result.trace) == 1
    assert result.best_round == 1
    assert all(poisoned.has_fact(f) for f in plan.fact_list)


def test_zero_budgets_are_a_noop(kg, model, ids, setup):
    trigger, Q_star, Q_non = setup
    result = co_optimize(kg, model, trigger, ids['X2'], Q_star, Q_non,
                         _cfg(rounds=3, n_g=0, n_q=0, finetune_steps=0))
    assert result.plan.facts == ()
    assert result.infected[0] == Q_star[0].query
    objectives = [t['objective'] for t in result.trace]
    assert len(set(objectives)) == 1
    assert 1 <= len(result.trace) <= 3
    assert result.best_round == 1
    assert model.equals(result.model)


def test_plan_respects_budget(kg, model, ids, setup):
    trigger, Q_star, Q_non = setup
    result = co_optimize(kg, model, trigger, ids['X2'], Q_star, Q_non, _cfg(rounds=2, n_g=1))
    assert len(result.plan.facts) <= 1
    assert len(result.trace) <= 2
    assert all(t['n_facts'] <= 1 for t in result.trace)


def test_rounds_stop_once_objective_stalls(kg, model, ids, setup):
    trigger, Q_star, Q_non = setup
    tol = 1e-6
    result = co_optimize(kg, model, trigger, ids['X2'], Q_star, Q_non, _cfg(rounds=3, tol=tol))
    objectives = [t['objective'] for t in result.trace]
    assert 1 <= len(objectives) <= 3
    # every round that was followed by another improved on its predecessor
    for i in range(1, len(objectives) - 1):
        assert objectives[i - 1] - objectives[i] >= tol
    if 1 < len(objectives) < 3:
        assert objectives[-2] - objectives[-1] < tol
    best = min(range(len(objectives)), key=lambda i: (objectives[i], i))
    assert result.best_round == best + 1
    assert [t['best_objective'] for t in result.trace] == [min(objectives[:i + 1]) for i in range(len(objectives))]


def test_mode_mismatch():
    with pytest.raises(InvalidConfig):
        CoConfig(kp=KpConfig(mode='degradation'), qm=QmConfig(mode='forcing'))
    cfg = _cfg(rounds=2)
    assert CoConfig.from_dict(cfg.to_dict()) == cfg


def test_refresh_without_finetune(kg, model, ids, setup):
    trigger, Q_star, Q_non = setup
    plan = run_kp(kg, model, trigger, ids['X2'], Q_star, Q_non, KpConfig(n_g=2, steps=2))
    refreshed, poisoned = refresh_surrogate(kg, model, plan, _cfg(finetune_steps=0))
    assert refreshed.equals(model)
    assert refreshed is not model
    assert poisoned.n_facts == kg.n_facts + 2


def test_co_optimization_saves(kg, model, ids, setup, tmp_path):
    trigger, Q_star, Q_non = setup
    attack = CoOptimization(kg, model, trigger, Q_star, Q_non, ids['X2'], _cfg(),
                            verbose=False, save=True, save_path=str(tmp_path))
    result = attack.run()
    with open(os.path.join(str(tmp_path), 'co_attack.json')) as f:
        d = json.load(f)
    assert d['best_round'] == result.best_round
    assert len(d['baits']) == 1
    assert d['plan']['budget'] == 2
