import os
import json
import dataclasses
import pytest

import kgrlab.experiment as experiment_module
from kgrlab.config import ExperimentConfig
from kgrlab.query import contains_trigger
from kgrlab.inference import evaluate_queries
from kgrlab.metrics import hit_at_k
from kgrlab.experiment import (REPORT_COLUMNS, build_systems, select_trigger, split_targets,
                               select_target_answer, run_experiment, emit_report, load_report,
                               render_report, run_attack, _attack_setup)

TINY = {
    'synthetic': {'n_categories': 3, 'entities_per_category': 30,
                  'relation_arcs': [[0, 1], [1, 2], [0, 2]], 'fact_density': 0.1, 'seed': 0},
    'surrogate': {'remove_fraction': 0.3, 'seed': 0},
    'dim': 4, 'layers': 1,
    'train': {'steps': 5, 'batch_size': 16, 'learning_rate': 0.01, 'lr_boundaries': None},
    'templates': [[1, 1], [2, 1]],
    'train_per_template': 16, 'test_per_template': 16,
    'n_target': 8, 'n_non_target': 8,
    'kp': {'n_g': 3, 'steps': 2}, 'qm': {'n_q': 1, 'steps': 2},
    'co_rounds': 1, 'finetune_steps': 0,
    'ks': [1, 5],
    'variant': 'none',
}


def _cfg(**overrides):
    return ExperimentConfig.from_dict(dict(TINY, **overrides), profile='desk')


@pytest.fixture(scope='module')
def clean_report():
    return run_experiment(_cfg())


def test_no_attack_has_zero_deltas(clean_report):
    assert clean_report.rows
    assert {r['phase'] for r in clean_report.rows} == {'attack'}
    assert all(r['delta'] == 0.0 for r in clean_report.rows)
    assert all(r['before'] == r['after'] for r in clean_report.rows)
    assert clean_report.counts['n_poison_facts'] == 0
    assert clean_report.counts['n_target'] > 0


def test_report_json_round_trip(clean_report, tmp_path):
    path = os.path.join(str(tmp_path), 'report.json')
    text = emit_report(clean_report, 'json', path)
    assert text.endswith('\n')
    assert load_report(path) == clean_report


def test_report_csv_and_markdown(clean_report, tmp_path):
    lines = emit_report(clean_report, 'csv').strip().split('\n')
    assert lines[0] == ','.join(REPORT_COLUMNS)
    assert len(lines) == len(clean_report.rows) + 1
    path = os.path.join(str(tmp_path), 'report.json')
    emit_report(clean_report, 'json', path)
    text = render_report(path, 'markdown')
    assert '## attack' in text
    assert '| metric |' in text
    assert '(.00)' in text
    with pytest.raises(ValueError):
        emit_report(clean_report, 'xml')


def test_deterministic(clean_report):
    again = run_experiment(_cfg())
    assert again.rows == clean_report.rows
    assert again.config_hash == clean_report.config_hash
    assert again.artifacts == clean_report.artifacts


def test_strict_runs_emit_identical_json(monkeypatch):
    calls = []
    monkeypatch.setattr(experiment_module, 'set_threads', lambda *args: calls.append(args))
    cfg = _cfg(variant='co', threads=1, strict_deterministic=True)
    first = emit_report(run_experiment(cfg), 'json')
    second = emit_report(run_experiment(cfg), 'json')
    assert first == second
    assert json.loads(first)['runtime'] is None
    assert calls == [(1, True), (1, True)]


class _Sealed():
    def __getattr__(self, name):
        raise AssertionError(f'victim attribute `{name}` read during the attack')


@pytest.mark.parametrize('variant', ['kp', 'qm', 'co'])
def test_attack_never_reads_victim(variant):
    cfg = _cfg(variant=variant)
    systems = dataclasses.replace(build_systems(cfg), victim=_Sealed())
    trigger, q_star, _, a_star = _attack_setup(systems, cfg, cfg.trigger)
    victim, kg_poisoned, infected, _ = run_attack(systems, cfg, variant, cfg.mode, trigger,
                                                  a_star, q_star)
    assert len(infected) == len(q_star)
    if kg_poisoned.n_facts > systems.kg_train.n_facts:
        assert not isinstance(victim, _Sealed)


def test_attack_setup_selection():
    systems = build_systems(_cfg())
    trigger = select_trigger(systems.test_set)
    q_star, q_non = split_targets(systems.test_set, trigger)
    assert all(contains_trigger(aq.query, trigger) for aq in q_star)
    assert len({aq.query.target_category for aq in q_star}) == 1
    assert len(q_star) + len(q_non) <= len(systems.test_set)
    a_star = select_target_answer(systems.kg_train, q_star)
    assert all(a_star not in aq.truth for aq in q_star)
    for aq in systems.test_set:
        assert all(not systems.kg_train.has_fact(f) for f in (aq.supporting or ()))
    assert systems.kg_surrogate.n_facts <= systems.kg_train.n_facts


@pytest.mark.parametrize('variant', ['kp', 'qm', 'co'])
def test_attack_variants_report(variant):
    report = run_experiment(_cfg(variant=variant))
    table = report.table('attack')
    assert set(table['group']) <= {'target', 'non_target'}
    assert set(table['metric']) == {'mrr', 'hit', 'ndcg'}
    assert report.counts['n_poison_facts'] <= 3
    if variant == 'qm':
        assert report.counts['n_poison_facts'] == 0
    assert any(note.startswith('trigger ') for note in report.notes)


@pytest.mark.parametrize('defense', ['filter', 'advtrain'])
def test_defense_rows(defense):
    report = run_experiment(_cfg(variant='kp', defense=defense, m_percent=10.0))
    assert {r['phase'] for r in report.rows} == {'attack', 'defense'}
    attack = report.table('attack')
    defense_rows = report.table('defense')
    assert len(attack) == len(defense_rows)
    assert list(attack['before']) == list(defense_rows['before'])
    if defense == 'filter':
        assert report.counts['n_filtered_poison_facts'] <= report.counts['n_filtered_facts']
    else:
        assert 'adversarial twins by qm' in report.notes


def test_degradation_mode_without_target_answer():
    report = run_experiment(_cfg(variant='qm', mode='degradation'))
    assert not any(note.startswith('target answer') for note in report.notes)


def test_budget_sweep(tmp_path):
    report = run_experiment(_cfg(budget_sweep=True, budget_grid_n_g=[0, 2], budget_grid_n_q=[0, 1]),
                            out=str(tmp_path))
    grid = report.sweep('budget')
    assert grid.dims == ('n_g', 'n_q')
    assert grid.shape == (2, 2)
    assert os.path.exists(os.path.join(str(tmp_path), 'report.json'))
    assert os.path.exists(os.path.join(str(tmp_path), 'budget_sweep.png'))


SEEDS = range(5)


def _desk(**overrides):
    return ExperimentConfig.from_dict(overrides, profile='desk')


@pytest.mark.slow
def test_desk_kp_forcing_direction():
    passed = 0
    for seed in SEEDS:
        report = run_experiment(_desk(variant='kp', seed=seed))
        target_before = report.value('attack', 'hit', 5, 'target', 'before')
        target_after = report.value('attack', 'hit', 5, 'target', 'after')
        non_target_drop = -report.value('attack', 'hit', 5, 'non_target', 'delta')
        passed += target_before <= 0.05 and target_after >= 0.25 and non_target_drop <= 0.1
    assert passed >= 4


@pytest.mark.slow
def test_desk_co_reinforces():
    passed = 0
    for seed in SEEDS:
        hit = {variant: run_experiment(_desk(variant=variant, seed=seed)).value(
                   'attack', 'hit', 5, 'target', 'after')
               for variant in ('kp', 'qm', 'co')}
        passed += hit['co'] >= max(hit['kp'], hit['qm'])
    assert passed >= 3


@pytest.mark.slow
def test_desk_filter_trades_accuracy_for_resilience():
    passed = 0
    for seed in SEEDS:
        report = run_experiment(_desk(variant='kp', defense='filter', m_percent=30.0, seed=seed))
        attacked = report.value('attack', 'hit', 5, 'target', 'after')
        defended = report.value('defense', 'hit', 5, 'target', 'after')
        benign_cost = (report.value('defense', 'hit', 5, 'non_target', 'before')
                       - report.value('defense', 'hit', 5, 'non_target', 'after'))
        passed += attacked - defended >= 0.05 and benign_cost > 0
    assert passed >= 3


@pytest.mark.slow
def test_desk_victim_learns_one_hop():
    systems = build_systems(_desk())
    one_hop = [aq for aq in systems.test_set if (aq.query.n_path, aq.query.m_path) == (1, 1)]
    assert hit_at_k(evaluate_queries(systems.victim, one_hop), 5) >= 0.6


@pytest.mark.slow
def test_desk_strict_runs_are_byte_identical():
    cfg = _desk(variant='co', threads=1, strict_deterministic=True)
    assert emit_report(run_experiment(cfg), 'json') == emit_report(run_experiment(cfg), 'json')
