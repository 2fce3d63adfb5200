"""
End-to-end experiments: victim and surrogate systems, an attack, an optional
defense, and before/after metric tables.
"""

import os
import json
import numpy as np
import pandas as pd
import xarray as xr
from collections import Counter
from dataclasses import dataclass, field
from typing import List, Optional
from absl import logging

from .kg import (read_kg, generate_synthetic_kg, derive_surrogate, remove_facts,
                 add_facts, drop_entity_facts, SurrogateSpec)
from .query import (AnsweredQuery, TriggerPattern, contains_trigger, exact_answers,
                    make_trigger, chain_query)
from .dataloader import sample_queries, training_queries
from .models import init_model
from .training import TrainConfig, train
from .inference import evaluate_queries
from .metrics import summarize, delta_report, format_cell, DELTA_COLUMNS
from .attacks import KpConfig, QmConfig, CoConfig, run_kp, run_qm, co_optimize
from .defense import filter_low_fitness, adversarial_train, adversarial_source
from .config import ExperimentConfig
from .utils import (Timing, canonical_json, digest, checkarg_format, set_threads,
                    plot_budget_sweep)
from .exceptions import EmptyQStar, Unsatisfiable

__all__ = ['Report', 'Systems', 'REPORT_COLUMNS', 'build_systems', 'select_trigger',
           'select_target_answer', 'split_targets', 'attacker_queries', 'run_attack',
           'evaluate_groups', 'sample_test_queries', 'train_surrogate',
           'run_experiment', 'emit_report', 'load_report', 'render_report']

REPORT_COLUMNS = ['phase'] + DELTA_COLUMNS

GROUP_TARGET = 'target'
GROUP_NON_TARGET = 'non_target'


@dataclass
class Report:
    """
    Outcome of ``run_experiment``. Rows hold one metric of one group in one
    phase (``'attack'`` or ``'defense'``); ``before`` is always the clean
    baseline.
    """
    config: dict
    config_hash: str
    seed: int
    rows: List[dict] = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    sweeps: dict = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)
    runtime: Optional[dict] = None

    def to_dict(self):
        return {'config': self.config, 'config_hash': self.config_hash, 'seed': self.seed,
                'rows': self.rows, 'counts': self.counts, 'artifacts': self.artifacts,
                'sweeps': self.sweeps, 'notes': self.notes, 'runtime': self.runtime}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def table(self, phase=None):
        """Rows as a DataFrame, optionally restricted to one phase."""
        rows = [r for r in self.rows if phase is None or r['phase'] == phase]
        df = pd.DataFrame(rows, columns=REPORT_COLUMNS)
        df['k'] = pd.array([r['k'] for r in rows], dtype='Int64')
        return df

    def sweep(self, name):
        return xr.DataArray.from_dict(self.sweeps[name])

    def value(self, phase, metric, k, group, column='after'):
        for row in self.rows:
            if (row['phase'], row['metric'], row['k'], row['group']) == (phase, metric, k, group):
                return row[column]
        raise KeyError((phase, metric, k, group))


@dataclass
class Systems:
    """Victim and surrogate sides of one experiment plus the held-out queries."""
    kg_full: object
    kg_train: object
    kg_surrogate: object
    victim: object
    surrogate: object
    victim_train_set: list
    test_set: list
    missing_entities: tuple = ()


def _surrogate_train_cfg(cfg):
    return TrainConfig.from_dict(dict(cfg.train.to_dict(), seed=cfg.train.seed + 1))


def _train_system(kg, cfg, dim, layers, seed, train_cfg, verbose=False):
    train_set = training_queries(kg, cfg.templates, cfg.train_per_template, seed=seed)
    model = init_model(kg, dim, layers, seed=seed)
    trained, _ = train(model, kg, train_set, train_cfg, verbose=verbose)
    return trained, train_set


def sample_test_queries(kg, cfg):
    """Held-out answered queries of every template, supporting facts recorded."""
    out = []
    for i, t in enumerate(cfg.templates):
        try:
            out.extend(sample_queries(kg, tuple(t), cfg.test_per_template,
                                      seed=cfg.seed + 7919 * (i + 1), mode='test'))
        except Unsatisfiable:
            logging.warning('Template %s has no instantiation, skipped', tuple(t))
    return out


def _intermediate_entities(test_set):
    ents = set()
    for aq in test_set:
        if aq.query.m_path > 1 and aq.supporting:
            ents.update(f.head for f in aq.supporting)
    return sorted(ents)


def train_surrogate(kg_train, cfg, remove_fraction=None, verbose=False):
    spec = cfg.surrogate if remove_fraction is None else \
        SurrogateSpec(remove_fraction=remove_fraction, seed=cfg.surrogate.seed)
    kg_s = derive_surrogate(kg_train, spec)
    model, _ = _train_system(kg_s, cfg, cfg.surrogate_dim or cfg.dim,
                             cfg.surrogate_layers or cfg.layers, cfg.seed + 1,
                             _surrogate_train_cfg(cfg), verbose)
    return kg_s, model


def build_systems(cfg, verbose=False):
    """Victim KG, held-out queries, training KG, both trained models.

    The facts supporting the held-out queries are removed from the training
    KG. The surrogate KG is a random subset of the training KG.
    """
    kg = read_kg(cfg.kg_path) if cfg.kg_path is not None else generate_synthetic_kg(cfg.synthetic)
    test_set = sample_test_queries(kg, cfg)
    supporting = {f for aq in test_set for f in (aq.supporting or ())}
    kg_train = remove_facts(kg, supporting)
    missing = ()
    if cfg.missing_entity_fraction > 0:
        pool = _intermediate_entities(test_set)
        n = int(np.floor(len(pool) * cfg.missing_entity_fraction + 0.5))
        rng = np.random.default_rng(cfg.seed)
        missing = tuple(sorted(int(e) for e in rng.choice(pool, size=n, replace=False))) if n else ()
        kg_train = drop_entity_facts(kg_train, missing)
        logging.info('Dropped the facts of %d intermediate entities', len(missing))
    victim, train_set = _train_system(kg_train, cfg, cfg.dim, cfg.layers, cfg.seed,
                                      cfg.train, verbose)
    kg_s, surrogate = train_surrogate(kg_train, cfg, verbose=verbose)
    return Systems(kg, kg_train, kg_s, victim, surrogate, train_set, test_set, missing)


def select_trigger(test_set, kg=None):
    """Most frequent (anchor, first relation) pair among the held-out queries;
    ties by smallest pair."""
    counts = Counter()
    for aq in test_set:
        q = aq.query
        for i in q.anchors:
            for e in q.out_edges(i):
                counts[(q.nodes[i].entity, e.relation)] += 1
    if not counts:
        raise EmptyQStar('no held-out query has an anchored edge')
    best = min(counts, key=lambda pair: (-counts[pair], pair))
    return TriggerPattern(int(best[0]), (int(best[1]),))


def split_targets(test_set, trigger):
    """Q* (queries containing the trigger, restricted to their most frequent
    target category) and Q without Q*."""
    hit = [aq for aq in test_set if contains_trigger(aq.query, trigger)]
    rest = [aq for aq in test_set if not contains_trigger(aq.query, trigger)]
    if not hit:
        raise EmptyQStar(f'no held-out query contains the trigger {trigger}')
    cats = Counter(aq.query.target_category for aq in hit)
    cat = min(cats, key=lambda c: (-cats[c], c))
    return [aq for aq in hit if aq.query.target_category == cat], rest


def select_target_answer(kg, q_star):
    """Entity of the Q* target category with the fewest incoming facts that is
    no answer of any Q* query; ties by smallest id."""
    cat = q_star[0].query.target_category
    truths = {t for aq in q_star for t in aq.truth}
    pool = [int(e) for e in kg.entities_of_category(cat) if int(e) not in truths]
    if not pool:
        raise EmptyQStar('every entity of the target category answers a target query')
    return min(pool, key=lambda e: (len(kg.neighbors(e, 'in')), e))


def attacker_queries(kg_s, trigger, q_star, cfg, mode):
    """Target and non-target query sets on the surrogate side.

    Targets are the trigger's chain query plus the anticipated target queries,
    all answered on the surrogate KG. Non-targets are sampled from the
    surrogate KG among queries without the trigger.
    """
    cat = q_star[0].query.target_category
    candidates = [chain_query(kg_s, trigger.anchor, trigger.chain)] + [aq.query for aq in q_star]
    targets, seen = [], set()
    for q in candidates:
        if q in seen or q.target_category != cat:
            continue
        seen.add(q)
        aq = AnsweredQuery(q, sorted(exact_answers(kg_s, q)))
        if mode == 'degradation' and not aq.truth:
            continue
        targets.append(aq)
    targets = targets[:cfg.n_target]
    non_target = []
    for i, t in enumerate(cfg.templates):
        try:
            pool = sample_queries(kg_s, tuple(t), cfg.n_non_target, seed=cfg.seed + 104729 * (i + 1))
        except Unsatisfiable:
            continue
        non_target.extend(aq for aq in pool if not contains_trigger(aq.query, trigger))
    return targets, non_target[:cfg.n_non_target]


def _infect(model_s, kg_s, q_star, goal, mode, qm_cfg):
    infected, n_paths = [], 0
    for i, aq in enumerate(q_star):
        if mode == 'forcing':
            q_inf, bait = run_qm(model_s, kg_s, aq.query, goal, qm_cfg, query_id=i)
        else:
            truth = sorted(exact_answers(kg_s, aq.query))
            if not truth:
                infected.append(aq.query)
                continue
            q_inf, bait = run_qm(model_s, kg_s, aq.query, truth, qm_cfg, query_id=i)
        infected.append(q_inf)
        n_paths += bait.n_paths
    return infected, n_paths


def run_attack(systems, cfg, variant, mode, trigger, a_star, q_star, kp_cfg=None,
               qm_cfg=None, co_cfg=None, verbose=False):
    """Run one attack on the surrogate side and apply it to the victim.

    Returns
    -------
    victim : KGRModel
        Victim model after the attack (retrained from scratch on the poisoned
        KG when knowledge poisoning is involved).
    kg_poisoned : KnowledgeGraph
        Victim training KG after poisoning.
    infected : list of Query
        Queries submitted at inference (Q* itself without query misguiding).
    artifacts : dict
        JSON-ready attack artifacts.
    """
    kp_cfg = kp_cfg if kp_cfg is not None else cfg.kp
    qm_cfg = qm_cfg if qm_cfg is not None else cfg.qm
    co_cfg = co_cfg if co_cfg is not None else cfg.co
    kg_s, model_s = systems.kg_surrogate, systems.surrogate
    infected = [aq.query for aq in q_star]
    artifacts = {}
    plan = None
    if variant == 'none':
        return systems.victim, systems.kg_train, infected, artifacts

    if variant in ('kp', 'co'):
        targets, non_target = attacker_queries(kg_s, trigger, q_star, cfg, mode)
        if not targets:
            raise EmptyQStar('no surrogate-side target query')
    if variant == 'kp':
        plan = run_kp(kg_s, model_s, trigger, a_star, targets, non_target, kp_cfg, verbose)
        artifacts['poison_plan'] = plan.to_dict(kg_s)
    elif variant == 'qm':
        infected, n_paths = _infect(model_s, kg_s, q_star, a_star, mode, qm_cfg)
        artifacts['n_bait_paths'] = n_paths
    elif variant == 'co':
        result = co_optimize(kg_s, model_s, trigger, a_star, targets, non_target, co_cfg, verbose)
        plan = result.plan
        artifacts['co_attack'] = result.to_dict(kg_s)
        infected, n_paths = _infect(result.model, kg_s, q_star, a_star, mode, co_cfg.qm)
        artifacts['n_bait_paths'] = n_paths

    if plan is None or not plan.facts:
        return systems.victim, systems.kg_train, infected, artifacts
    kg_poisoned = add_facts(systems.kg_train, plan.fact_list)
    logging.info('Retraining the victim on %d facts (%d injected)', kg_poisoned.n_facts,
                 len(plan.facts))
    victim, _ = _train_system(kg_poisoned, cfg, cfg.dim, cfg.layers, cfg.seed,
                              cfg.train, verbose)
    return victim, kg_poisoned, infected, artifacts


def evaluate_groups(model, q_star, q_non, cfg, mode, a_star=None, infected=None):
    """Metric summary of both groups. In forcing mode Q* is scored against
    ``{a*}``."""
    answered = list(q_star) + list(q_non)
    groups = [GROUP_TARGET] * len(q_star) + [GROUP_NON_TARGET] * len(q_non)
    submitted = list(infected) if infected is not None else [aq.query for aq in q_star]
    submitted += [aq.query for aq in q_non]
    if mode == 'forcing':
        truths = [(a_star,)] * len(q_star)
    else:
        truths = [aq.truth for aq in q_star]
    truths += [aq.truth for aq in q_non]
    res = evaluate_queries(model, answered, groups, cfg.filter_by_category, submitted, truths)
    return summarize(res, cfg.ks, best_rank=cfg.best_rank)


def _rows(phase, before, after):
    df = delta_report(before, after)
    rows = []
    for rec in df.to_dict('records'):
        k = None if pd.isna(rec['k']) else int(rec['k'])
        rows.append({'phase': phase, 'metric': rec['metric'], 'k': k, 'group': rec['group'],
                     'before': float(rec['before']), 'after': float(rec['after']),
                     'delta': float(rec['delta'])})
    return rows


def _jsonable(obj):
    """Plain JSON types only (tuples become lists), so a report equals its
    JSON round trip."""
    return json.loads(canonical_json(obj))


def _sweep_k(cfg):
    return 5 if 5 in cfg.ks else cfg.ks[0]


def _target_hit(summary, cfg):
    return float(summary.get(('hit', _sweep_k(cfg), GROUP_TARGET), np.nan))


def _resolve_trigger(kg, spec, test_set):
    if spec is None:
        return select_trigger(test_set)
    anchor = kg.entity_id(spec['anchor'])
    chain = [kg.relation_id(r) for r in spec['chain']]
    return make_trigger(kg, anchor, chain)


def _trigger_label(kg, trigger):
    return kg.entities[trigger.anchor].name + ':' + '/'.join(kg.relations[r].name for r in trigger.chain)


def _attack_setup(systems, cfg, trigger_spec):
    trigger = _resolve_trigger(systems.kg_full, trigger_spec, systems.test_set)
    q_star, q_non = split_targets(systems.test_set, trigger)
    a_star = None
    if cfg.mode == 'forcing':
        if cfg.target_answer is not None:
            a_star = systems.kg_full.entity_id(cfg.target_answer)
        else:
            a_star = select_target_answer(systems.kg_train, q_star)
    return trigger, q_star, q_non, a_star


def _budget_sweep(systems, cfg, trigger, a_star, q_star, q_non, verbose):
    grid = np.full((len(cfg.budget_grid_n_g), len(cfg.budget_grid_n_q)), np.nan)
    for i, n_g in enumerate(cfg.budget_grid_n_g):
        for j, n_q in enumerate(cfg.budget_grid_n_q):
            kp_cfg = KpConfig.from_dict(dict(cfg.kp.to_dict(), n_g=n_g))
            qm_cfg = QmConfig.from_dict(dict(cfg.qm.to_dict(), n_q=n_q))
            co_cfg = CoConfig.from_dict(dict(cfg.co.to_dict(), kp=kp_cfg.to_dict(),
                                             qm=qm_cfg.to_dict()))
            variant = {(False, False): 'none', (True, False): 'kp',
                       (False, True): 'qm', (True, True): 'co'}[(n_g > 0, n_q > 0)]
            victim, _, infected, _ = run_attack(systems, cfg, variant, cfg.mode, trigger, a_star,
                                                q_star, kp_cfg, qm_cfg, co_cfg, verbose)
            grid[i, j] = _target_hit(evaluate_groups(
                victim, q_star, q_non, cfg, cfg.mode, a_star, infected), cfg)
    return xr.DataArray(grid, dims=('n_g', 'n_q'),
                        coords={'n_g': list(cfg.budget_grid_n_g), 'n_q': list(cfg.budget_grid_n_q)},
                        name=f'hit@{_sweep_k(cfg)}')


def _overlap_sweep(systems, cfg, trigger, a_star, q_star, q_non, verbose):
    values = []
    for fraction in cfg.overlap_sweep:
        kg_s, model_s = train_surrogate(systems.kg_train, cfg, fraction, verbose)
        alt = Systems(systems.kg_full, systems.kg_train, kg_s, systems.victim, model_s,
                      systems.victim_train_set, systems.test_set, systems.missing_entities)
        victim, _, infected, _ = run_attack(alt, cfg, cfg.variant, cfg.mode, trigger, a_star,
                                            q_star, verbose=verbose)
        values.append(_target_hit(evaluate_groups(
                victim, q_star, q_non, cfg, cfg.mode, a_star, infected), cfg))
    return xr.DataArray(np.asarray(values, dtype=np.float64), dims=('remove_fraction',),
                        coords={'remove_fraction': [float(f) for f in cfg.overlap_sweep]},
                        name=f'hit@{_sweep_k(cfg)}')


def _alt_trigger_sweep(systems, cfg, verbose):
    values, labels = [], []
    for spec in cfg.alt_trigger_list:
        trigger = _resolve_trigger(systems.kg_full, spec, systems.test_set)
        labels.append(_trigger_label(systems.kg_full, trigger))
        try:
            trigger, q_star, q_non, a_star = _attack_setup(systems, cfg, spec)
        except EmptyQStar as err:
            logging.warning('Alternative trigger %s skipped: %s', labels[-1], err)
            values.append(np.nan)
            continue
        victim, _, infected, _ = run_attack(systems, cfg, cfg.variant, cfg.mode, trigger, a_star,
                                            q_star, verbose=verbose)
        values.append(_target_hit(evaluate_groups(
                victim, q_star, q_non, cfg, cfg.mode, a_star, infected), cfg))
    return xr.DataArray(np.asarray(values, dtype=np.float64), dims=('trigger',),
                        coords={'trigger': labels}, name=f'hit@{_sweep_k(cfg)}')


def run_experiment(cfg=None, out=None, verbose=False):
    """Full pipeline: build the systems, evaluate the clean victim, attack,
    re-evaluate, optionally defend, and run the requested scenarios.

    Parameters
    ----------
    cfg : ExperimentConfig or dict or None
    out : str or None
        Folder for the report and plots. Nothing is written when None.
    verbose : bool

    Returns
    -------
    Report
    """
    if cfg is None:
        cfg = ExperimentConfig.from_dict({})
    elif isinstance(cfg, dict):
        cfg = ExperimentConfig.from_dict(cfg)
    set_threads(cfg.threads, cfg.strict_deterministic)
    timing = Timing(verbose)
    config = _jsonable(cfg.to_dict())
    report = Report(config=config, config_hash=digest(config), seed=cfg.seed)

    systems = build_systems(cfg, verbose)
    timing.checktime('systems')
    trigger, q_star, q_non, a_star = _attack_setup(systems, cfg, cfg.trigger)
    kg = systems.kg_full
    missing = set(systems.missing_entities)
    report.counts = {'n_entities': kg.n_entities, 'n_facts': kg.n_facts,
                     'n_train_facts': systems.kg_train.n_facts,
                     'n_surrogate_facts': systems.kg_surrogate.n_facts,
                     'n_test': len(systems.test_set), 'n_target': len(q_star),
                     'n_non_target': len(q_non),
                     'n_missing_entities': len(systems.missing_entities),
                     'n_missing_entity_queries': sum(
                         1 for aq in systems.test_set
                         if aq.query.m_path > 1 and any(f.head in missing for f in (aq.supporting or ())))}
    report.artifacts['trigger'] = digest({'anchor': trigger.anchor, 'chain': list(trigger.chain)})
    report.notes.append(f'trigger {_trigger_label(kg, trigger)}')
    if cfg.mode == 'forcing':
        report.notes.append(f'target answer {kg.entities[a_star].name}')

    before = evaluate_groups(systems.victim, q_star, q_non, cfg, cfg.mode, a_star)
    victim, kg_poisoned, infected, artifacts = run_attack(
        systems, cfg, cfg.variant, cfg.mode, trigger, a_star, q_star, verbose=verbose)
    timing.checktime('attack')
    after = evaluate_groups(victim, q_star, q_non, cfg, cfg.mode, a_star, infected)
    report.rows.extend(_rows('attack', before, after))
    for name, value in sorted(artifacts.items()):
        report.artifacts[name] = digest(value)
    report.counts['n_poison_facts'] = kg_poisoned.n_facts - systems.kg_train.n_facts

    if cfg.defense == 'filter':
        kg_filtered, removed = filter_low_fitness(kg_poisoned, victim, cfg.m_percent, cfg.n_jobs)
        defended, _ = _train_system(kg_filtered, cfg, cfg.dim, cfg.layers, cfg.seed,
                                    cfg.train, verbose)
        report.counts['n_filtered_facts'] = len(removed)
        report.counts['n_filtered_poison_facts'] = sum(
            1 for sf in removed if not systems.kg_train.has_fact(sf.fact))
    elif cfg.defense == 'advtrain':
        train_set = training_queries(kg_poisoned, cfg.templates, cfg.train_per_template, seed=cfg.seed)
        defended = adversarial_train(kg_poisoned, victim, train_set, cfg.defense_cfg, cfg.train)
        report.notes.append('adversarial twins by '
                            + adversarial_source(kg_poisoned, train_set, cfg.defense_cfg))
    if cfg.defense != 'none':
        defended_summary = evaluate_groups(defended, q_star, q_non, cfg, cfg.mode, a_star, infected)
        report.rows.extend(_rows('defense', before, defended_summary))
        timing.checktime('defense')

    if cfg.budget_sweep:
        grid = _budget_sweep(systems, cfg, trigger, a_star, q_star, q_non, verbose)
        report.sweeps['budget'] = _jsonable(grid.to_dict())
    if cfg.overlap_sweep:
        grid = _overlap_sweep(systems, cfg, trigger, a_star, q_star, q_non, verbose)
        report.sweeps['overlap'] = _jsonable(grid.to_dict())
    if cfg.alt_trigger_list:
        grid = _alt_trigger_sweep(systems, cfg, verbose)
        report.sweeps['alt_trigger'] = _jsonable(grid.to_dict())

    timing.runtime()
    if not cfg.strict_deterministic:
        report.runtime = {'total': timing.running_time,
                          'stages': [[label, t] for label, t in timing.checktimes]}
    if out is not None:
        os.makedirs(out, exist_ok=True)
        emit_report(report, 'json', os.path.join(out, 'report.json'))
        if 'budget' in report.sweeps:
            plot_budget_sweep(report.sweep('budget'), os.path.join(out, 'budget_sweep.png'))
    return report


def _markdown(report):
    lines = ['# Experiment report', '',
             f'config hash `{report.config_hash}`, seed {report.seed}', '']
    for phase in ('attack', 'defense'):
        rows = [r for r in report.rows if r['phase'] == phase]
        if not rows:
            continue
        groups = sorted({r['group'] for r in rows})
        cells = {}
        for r in rows:
            label = r['metric'] if r['k'] is None else f"{r['metric']}@{r['k']}"
            cells.setdefault(label, {})[r['group']] = format_cell(r['after'], r['delta'])
        lines += [f'## {phase}', '', '| metric | ' + ' | '.join(groups) + ' |',
                  '|---|' + '---|' * len(groups)]
        for label, by_group in cells.items():
            lines.append(f'| {label} | ' + ' | '.join(by_group.get(g, '') for g in groups) + ' |')
        lines.append('')
    for note in report.notes:
        lines.append(f'- {note}')
    return '\n'.join(lines) + '\n'


def emit_report(report, fmt='json', path=None):
    """Serialize a report as JSON, CSV (``phase,metric,k,group,before,after,delta``)
    or markdown. Returns the text; it is also written to ``path`` if given.
    """
    checkarg_format(fmt)
    if fmt == 'json':
        text = canonical_json(report.to_dict())
    elif fmt == 'csv':
        text = report.table().to_csv(index=False)
    else:
        text = _markdown(report)
    if path is not None:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
    return text


def load_report(path):
    with open(path, encoding='utf-8') as f:
        return Report.from_dict(json.load(f))


def render_report(path, fmt, out=None):
    """Re-render a JSON report in another format."""
    return emit_report(load_report(path), fmt, out)
