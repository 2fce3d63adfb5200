"""
Co-optimization: knowledge poisoning and query misguiding interleaved, with
the surrogate model refreshed on the poisoned surrogate KG between the two.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional
from absl import logging

from ..kg import add_facts
from ..query import AnsweredQuery, query_to_dict
from ..dataloader import fact_queries
from ..losses import attack_objective
from ..training import TrainConfig, train
from ..utils import Timing, checkarg_positive_int
from ..exceptions import InvalidConfig
from .base import Attack
from .kp import KpConfig, PoisonPlan, run_kp
from .qm import QmConfig, BaitEvidence, run_qm

__all__ = ['CoConfig', 'CoResult', 'co_optimize', 'refresh_surrogate', 'CoOptimization']


@dataclass
class CoConfig:
    """
    Parameters
    ----------
    rounds : int
        Maximum number of interleaving rounds.
    kp : KpConfig
    qm : QmConfig
        Their modes must agree.
    finetune : TrainConfig
        Surrogate refresh after poisoning; ``finetune.steps`` may be 0.
    tol : float
        Stop when the objective improves by less than ``tol`` between rounds.
    """
    rounds: int = 3
    kp: KpConfig = field(default_factory=KpConfig)
    qm: QmConfig = field(default_factory=QmConfig)
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(steps=1000))
    tol: float = 1e-4

    def __post_init__(self):
        checkarg_positive_int(self.rounds, 'rounds')
        if self.kp.mode != self.qm.mode:
            raise InvalidConfig(f'kp mode {self.kp.mode} and qm mode {self.qm.mode} differ')

    @property
    def mode(self):
        return self.kp.mode

    def to_dict(self):
        return {'rounds': self.rounds, 'kp': self.kp.to_dict(), 'qm': self.qm.to_dict(),
                'finetune': self.finetune.to_dict(), 'tol': self.tol}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kp = KpConfig.from_dict(d.pop('kp', {}))
        qm = QmConfig.from_dict(d.pop('qm', {}))
        finetune = TrainConfig.from_dict(d.pop('finetune', {'steps': 1000}))
        return cls(kp=kp, qm=qm, finetune=finetune, **d)


@dataclass
class CoResult:
    """Artifacts of the best round and the per-round trace."""
    plan: PoisonPlan
    baits: Dict[int, BaitEvidence]
    infected: Dict[int, object]
    trace: List[dict]
    best_round: int
    model: Optional[object] = None

    def to_dict(self, kg=None):
        return {'best_round': self.best_round,
                'rounds': self.trace,
                'plan': self.plan.to_dict(kg),
                'baits': [dict(self.baits[i].to_dict(kg),
                               infected_query=query_to_dict(self.infected[i], kg))
                          for i in sorted(self.baits)]}


def refresh_surrogate(kg_surrogate, model, plan, cfg, extra_queries=()):
    """Fine-tune the surrogate model on the surrogate KG with the plan's facts
    added. Returns the refreshed copy and the poisoned surrogate KG."""
    poisoned = add_facts(kg_surrogate, plan.fact_list)
    if cfg.finetune.steps == 0:
        return model.copy(), poisoned
    train_set = fact_queries(poisoned) + list(extra_queries)
    logging.info('Refreshing the surrogate on %d queries (%d poisoning facts)',
                 len(train_set), len(plan.facts))
    refreshed, _ = train(model, poisoned, train_set, cfg.finetune)
    return refreshed, poisoned


def co_optimize(kg_surrogate, model, trigger, a_star, Q_star, Q_non, cfg=None,
                verbose=False):
    """Interleaved knowledge poisoning and query misguiding.

    Each round (1) runs knowledge poisoning against the current surrogate
    model, (2) fine-tunes the original surrogate model on the poisoned
    surrogate KG, (3) misguides every target query against the refreshed
    model. From the second round on, the poisoning target set also holds the
    infected queries of the previous round. The plan is regenerated from
    scratch every round, so it never exceeds ``n_g`` facts.

    Parameters
    ----------
    kg_surrogate : KnowledgeGraph
    model : KGRModel
        Surrogate model (not modified).
    trigger : TriggerPattern
    a_star : int or None
    Q_star : list of AnsweredQuery
    Q_non : list of AnsweredQuery
    cfg : CoConfig or None

    Returns
    -------
    CoResult
        Artifacts of the round with the lowest objective, which need not be
        the last round; every round fine-tunes the original surrogate model, so
        ``model`` is the refreshed surrogate of that round. ``trace`` has one
        entry per round executed, with the round objective and the best
        objective so far.
    """
    cfg = cfg if cfg is not None else CoConfig()
    mode = cfg.mode
    Q_star = [aq if isinstance(aq, AnsweredQuery) else AnsweredQuery(aq, ()) for aq in Q_star]
    goals = [a_star] * len(Q_star) if mode == 'forcing' else [aq.truth for aq in Q_star]
    current = model
    previous_infected = []
    best = None
    trace = []
    for rnd in range(1, cfg.rounds + 1):
        targets = Q_star + [AnsweredQuery(q, aq.truth) for q, aq in previous_infected]
        plan = run_kp(kg_surrogate, current, trigger, a_star, targets, Q_non, cfg.kp, verbose)
        refreshed, _ = refresh_surrogate(kg_surrogate, model, plan, cfg, Q_non)
        infected, baits = {}, {}
        for i, aq in enumerate(Q_star):
            q_star, bait = run_qm(refreshed, kg_surrogate, aq, a_star if mode == 'forcing' else aq.truth,
                                  cfg.qm, query_id=i)
            infected[i] = q_star
            baits[i] = bait
        objective = attack_objective(refreshed, [infected[i] for i in range(len(Q_star))], goals, mode)
        improved = best is None or objective < best['objective']
        if improved:
            best = {'objective': objective, 'round': rnd, 'plan': plan, 'baits': baits,
                    'infected': infected, 'model': refreshed}
        trace.append({'round': rnd, 'objective': objective, 'best_objective': best['objective'],
                      'n_facts': len(plan.facts),
                      'n_bait_paths': int(sum(b.n_paths for b in baits.values()))})
        if verbose:
            print(f'Co-optimization round {rnd}: objective {objective:.6f}')
        if rnd > 1 and trace[-2]['best_objective'] - objective < cfg.tol:
            break
        current = refreshed
        previous_infected = [(infected[i], Q_star[i]) for i in range(len(Q_star))
                             if infected[i] != Q_star[i].query]
    return CoResult(best['plan'], best['baits'], best['infected'], trace, best['round'], best['model'])


class CoOptimization(Attack):
    """
    """
    artifact_name = 'co_attack.json'

    def __init__(self, kg_surrogate, model, trigger, target_queries, non_target,
                 a_star=None, cfg=None, verbose=True, save=False, save_path=None,
                 show_plot=False):
        super().__init__(kg_surrogate, model, verbose, save, save_path, show_plot)
        self.trigger = trigger
        self.target_queries = target_queries
        self.non_target = non_target
        self.a_star = a_star
        self.cfg = cfg if cfg is not None else CoConfig()

    def run(self):
        self.timing = Timing(self.verbose)
        self.result = co_optimize(self.kg, self.model, self.trigger, self.a_star,
                                  self.target_queries, self.non_target, self.cfg, self.verbose)
        self.timing.runtime()
        self.save_results()
        return self.result

    def to_dict(self):
        return self.result.to_dict(self.kg)

    def loss_traces(self):
        if self.result is None:
            return {}
        return {'objective': [t['objective'] for t in self.result.trace]}
