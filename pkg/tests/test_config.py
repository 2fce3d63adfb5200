import json
import pytest

from kgrlab.config import ExperimentConfig, profile_defaults, default_profile, load_config
from kgrlab.exceptions import InvalidConfig


def test_profiles():
    desk = profile_defaults('desk')
    full = profile_defaults('full')
    assert (desk['dim'], desk['layers']) == (64, 2)
    assert (full['dim'], full['layers']) == (300, 4)
    assert full['train']['steps'] == 50000
    with pytest.raises(InvalidConfig):
        profile_defaults('huge')
    desk['dim'] = 1
    assert profile_defaults('desk')['dim'] == 64


def test_profile_from_environment(monkeypatch):
    monkeypatch.delenv('KGRLAB_PROFILE', raising=False)
    assert default_profile() == 'desk'
    monkeypatch.setenv('KGRLAB_PROFILE', 'full')
    cfg = ExperimentConfig.from_dict({})
    assert cfg.profile == 'full'
    assert cfg.dim == 300
    assert cfg.surrogate_dim == 200
    monkeypatch.setenv('KGRLAB_PROFILE', 'laptop')
    with pytest.raises(InvalidConfig):
        default_profile()


def test_explicit_profile_wins(monkeypatch):
    monkeypatch.setenv('KGRLAB_PROFILE', 'full')
    assert ExperimentConfig.from_dict({'profile': 'desk'}).dim == 64
    assert ExperimentConfig.from_dict({}, profile='desk').dim == 64


def test_overrides_merge_nested():
    cfg = ExperimentConfig.from_dict({'train': {'steps': 5}, 'dim': 8}, profile='desk')
    assert cfg.train.steps == 5
    assert cfg.train.batch_size == 256
    assert cfg.dim == 8


def test_unknown_and_invalid_keys():
    with pytest.raises(InvalidConfig):
        ExperimentConfig.from_dict({'dimension': 8}, profile='desk')
    with pytest.raises(InvalidConfig):
        ExperimentConfig.from_dict({'kp': {'budget': 3}}, profile='desk')
    with pytest.raises(InvalidConfig):
        ExperimentConfig.from_dict({'missing_entity_fraction': 2.0}, profile='desk')
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({'variant': 'xx'}, profile='desk')


def test_attack_configs_follow_mode():
    cfg = ExperimentConfig.from_dict({'mode': 'degradation', 'n_jobs': 2, 'co_rounds': 4},
                                     profile='desk')
    assert cfg.kp.mode == cfg.qm.mode == 'degradation'
    assert cfg.kp.n_jobs == 2
    co = cfg.co
    assert co.rounds == 4
    assert co.mode == 'degradation'
    assert co.finetune.steps == cfg.finetune_steps
    assert co.finetune.learning_rate == 0.001
    assert cfg.defense_cfg.adv_attack.rounds == cfg.adv_rounds


def test_dict_round_trip():
    cfg = ExperimentConfig.from_dict({'variant': 'co', 'trigger': {'anchor': 'e0', 'chain': ['r0']},
                                      'ks': [1, 3]}, profile='desk')
    d = json.loads(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.from_dict(d) == cfg


def test_load_config(tmp_path):
    path = tmp_path / 'cfg.json'
    path.write_text(json.dumps({'variant': 'qm', 'dim': 16}))
    cfg = load_config(str(path), profile='desk', dim=32, seed=None)
    assert cfg.variant == 'qm'
    assert cfg.dim == 32
    assert cfg.seed == 0
    path.write_text('[1, 2]')
    with pytest.raises(InvalidConfig):
        load_config(str(path), profile='desk')
