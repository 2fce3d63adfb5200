"""
Experiment configuration: typed records, the desk/full profiles and JSON
loading. ``KGRLAB_PROFILE`` selects the default profile.
"""

import os
import json
import copy
from dataclasses import dataclass, field, fields, asdict
from typing import List, Optional

from . import PROFILES
from .kg import SyntheticSpec, SurrogateSpec
from .dataloader import TEMPLATES
from .training import TrainConfig
from .attacks import KpConfig, QmConfig, CoConfig
from .defense import DefenseConfig
from .utils import checkarg_mode, checkarg_variant, checkarg_defense
from .exceptions import InvalidConfig

__all__ = ['ExperimentConfig', 'PROFILE_DEFAULTS', 'profile_defaults',
           'default_profile', 'load_config', 'DESK_ARCS']

DESK_ARCS = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 2), (1, 3), (2, 4), (4, 1)]

PROFILE_DEFAULTS = {
    'desk': {
        'synthetic': {'n_categories': 5, 'entities_per_category': 100,
                      'relation_arcs': [list(a) for a in DESK_ARCS],
                      'fact_density': 0.0375, 'seed': 0},
        'surrogate': {'remove_fraction': 0.5, 'seed': 0},
        'dim': 64, 'layers': 2,
        'surrogate_dim': None, 'surrogate_layers': None,
        'train': {'learning_rate': [0.01, 0.001], 'lr_boundaries': [6000],
                  'batch_size': 256, 'steps': 10000, 'negatives_per_positive': 4,
                  'margin': 1.0, 'seed': 0},
        'kp': {'n_g': 50, 'lam': 1.0, 'steps': 500, 'learning_rate': 0.01},
        'qm': {'n_q': 2, 'steps': 1000, 'learning_rate': 0.01, 'max_depth': 4},
        'co_rounds': 3, 'finetune_steps': 1000, 'co_tol': 1e-4,
        'train_per_template': 64, 'test_per_template': 32,
        'n_target': 64, 'n_non_target': 64,
    },
    'full': {
        'synthetic': {'n_categories': 5, 'entities_per_category': 2000,
                      'relation_arcs': [list(a) for a in DESK_ARCS],
                      'fact_density': 0.002, 'seed': 0},
        'surrogate': {'remove_fraction': 0.5, 'seed': 0},
        'dim': 300, 'layers': 4,
        'surrogate_dim': 200, 'surrogate_layers': 2,
        'train': {'learning_rate': 0.001, 'lr_boundaries': None, 'batch_size': 512,
                  'steps': 50000, 'negatives_per_positive': 4, 'margin': 1.0, 'seed': 0},
        'kp': {'n_g': 100, 'lam': 1.0, 'steps': 10000, 'learning_rate': 0.001},
        'qm': {'n_q': 2, 'steps': 10000, 'learning_rate': 0.001, 'max_depth': 4},
        'co_rounds': 3, 'finetune_steps': 1000, 'co_tol': 1e-4,
        'train_per_template': 512, 'test_per_template': 128,
        'n_target': 64, 'n_non_target': 64,
    },
}


def default_profile():
    profile = os.environ.get('KGRLAB_PROFILE', 'desk')
    if profile not in PROFILES:
        msg = f'`KGRLAB_PROFILE` not recognized. Must be one of the following: {PROFILES}. Got {profile}'
        raise InvalidConfig(msg)
    return profile


def profile_defaults(profile=None):
    profile = profile if profile is not None else default_profile()
    if profile not in PROFILES:
        raise InvalidConfig(f'`profile` must be one of {PROFILES}, got {profile}')
    return copy.deepcopy(PROFILE_DEFAULTS[profile])


@dataclass
class ExperimentConfig:
    """
    End-to-end experiment settings. See ``docs/config.md`` for the JSON form.
    """
    profile: str = 'desk'
    seed: int = 0
    kg_path: Optional[str] = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    surrogate: SurrogateSpec = field(default_factory=SurrogateSpec)
    dim: int = 64
    layers: int = 2
    surrogate_dim: Optional[int] = None
    surrogate_layers: Optional[int] = None
    train: TrainConfig = field(default_factory=TrainConfig)
    templates: List[List[int]] = field(default_factory=lambda: [list(t) for t in TEMPLATES])
    train_per_template: int = 64
    test_per_template: int = 32
    n_target: int = 64
    n_non_target: int = 64
    trigger: Optional[dict] = None
    target_answer: Optional[str] = None
    variant: str = 'kp'
    mode: str = 'forcing'
    kp: KpConfig = field(default_factory=KpConfig)
    qm: QmConfig = field(default_factory=QmConfig)
    co_rounds: int = 3
    finetune_steps: int = 1000
    co_tol: float = 1e-4
    defense: str = 'none'
    m_percent: float = 30.0
    adv_rounds: int = 1
    ks: List[int] = field(default_factory=lambda: [1, 5, 10])
    filter_by_category: bool = True
    best_rank: bool = False
    budget_sweep: bool = False
    budget_grid_n_g: List[int] = field(default_factory=lambda: [0, 50, 100, 200])
    budget_grid_n_q: List[int] = field(default_factory=lambda: [0, 1, 2, 3])
    overlap_sweep: List[float] = field(default_factory=list)
    alt_trigger_list: List[dict] = field(default_factory=list)
    missing_entity_fraction: float = 0.0
    threads: Optional[int] = None
    strict_deterministic: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        checkarg_variant(self.variant)
        checkarg_mode(self.mode)
        checkarg_defense(self.defense)
        if not 0.0 <= self.missing_entity_fraction <= 1.0:
            raise InvalidConfig('`missing_entity_fraction` must be in [0, 1]')
        if not 0.0 <= self.m_percent <= 100.0:
            raise InvalidConfig('`m_percent` must be in [0, 100]')
        for f in self.overlap_sweep:
            if not 0.0 <= f <= 1.0:
                raise InvalidConfig('`overlap_sweep` fractions must be in [0, 1]')
        # attack configs follow the experiment-level mode and seed
        self.kp = KpConfig.from_dict(dict(self.kp.to_dict(), mode=self.mode, n_jobs=self.n_jobs))
        self.qm = QmConfig.from_dict(dict(self.qm.to_dict(), mode=self.mode, n_jobs=self.n_jobs))

    @property
    def co(self):
        finetune = TrainConfig.from_dict(dict(self.train.to_dict(), steps=self.finetune_steps,
                                              lr_boundaries=None,
                                              learning_rate=_final_rate(self.train.learning_rate)))
        return CoConfig(rounds=self.co_rounds, kp=self.kp, qm=self.qm,
                        finetune=finetune, tol=self.co_tol)

    @property
    def defense_cfg(self):
        co = CoConfig.from_dict(dict(self.co.to_dict(), rounds=self.adv_rounds))
        return DefenseConfig(m_percent=self.m_percent, adv_attack=co, seed=self.seed,
                             n_jobs=self.n_jobs)

    def to_dict(self):
        d = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if hasattr(value, 'to_dict'):
                value = value.to_dict()
            elif f.name == 'surrogate':
                value = asdict(value)
            d[f.name] = copy.deepcopy(value)
        return d

    @classmethod
    def from_dict(cls, d, profile=None):
        """Profile defaults overridden key by key by ``d``."""
        d = dict(d)
        profile = d.pop('profile', profile) or default_profile()
        base = profile_defaults(profile)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f'unknown configuration keys: {sorted(unknown)}')
        for key, value in d.items():
            if isinstance(value, dict) and isinstance(base.get(key), dict):
                base[key] = dict(base[key], **value)
            else:
                base[key] = value
        kwargs = dict(base, profile=profile)
        try:
            kwargs['synthetic'] = SyntheticSpec.from_dict(kwargs['synthetic'])
            kwargs['surrogate'] = SurrogateSpec(**kwargs['surrogate'])
            kwargs['train'] = TrainConfig.from_dict(kwargs['train'])
            kwargs['kp'] = KpConfig.from_dict(kwargs['kp'])
            kwargs['qm'] = QmConfig.from_dict(kwargs['qm'])
            return cls(**kwargs)
        except TypeError as err:
            raise InvalidConfig(str(err)) from None


def _final_rate(learning_rate):
    if isinstance(learning_rate, (list, tuple)):
        return float(learning_rate[-1])
    return float(learning_rate)


def load_config(path=None, profile=None, **overrides):
    """Read a JSON configuration document (optional) on top of a profile.

    Parameters
    ----------
    path : str or None
        JSON file. Missing keys take the profile defaults.
    profile : str or None
        ``'desk'`` or ``'full'``; defaults to ``KGRLAB_PROFILE`` or desk.
    **overrides
        Keys applied after the file.
    """
    d = {}
    if path is not None:
        with open(path, encoding='utf-8') as f:
            d = json.load(f)
        if not isinstance(d, dict):
            raise InvalidConfig('the configuration document must be a JSON object')
    d.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(d, profile)
