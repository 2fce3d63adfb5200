#!/usr/bin/env python

"""
absl.FLAGS-based command line app. Sub-commands are positional, e.g.:

python -m kgrlab.app kg synth --out=./kg
python -m kgrlab.app experiment run --config=exp.json --out=./results
python -m kgrlab.app report render --report=./results/report.json --format=markdown
"""

import os
import sys
from absl import app, flags, logging

# Agg backend, plots are only written to files
import matplotlib
matplotlib.use('Agg')

import kgrlab as kgr
from kgrlab import ATTACK_MODES, REPORT_FORMATS, PROFILES


FLAGS = flags.FLAGS

### COMMON
flags.DEFINE_string('config', None, 'JSON configuration document (overrides the profile)')
flags.DEFINE_enum('profile', None, PROFILES, 'Default profile, else KGRLAB_PROFILE or desk')
flags.DEFINE_integer('seed', None, 'Master seed (overrides the configuration)')
flags.DEFINE_string('out', None, 'Output file or folder')
flags.DEFINE_integer('threads', None, 'TensorFlow intra/inter-op threads')
flags.DEFINE_bool('strict_deterministic', False, 'Single thread, deterministic ops, no runtime stats')
flags.DEFINE_bool('verbose', True, 'Verbosity')

### INPUTS
flags.DEFINE_string('kg', None, 'KG folder (triples.tsv, categories.tsv, schema.tsv)')
flags.DEFINE_string('triples', None, 'kg build - triples TSV file')
flags.DEFINE_string('categories', None, 'kg build - categories TSV file')
flags.DEFINE_string('schema', None, 'kg build - schema TSV file')
flags.DEFINE_string('model', None, 'Model checkpoint (.npz)')
flags.DEFINE_string('queries', None, 'Answered queries JSON (training set, evaluation set or Q*)')
flags.DEFINE_string('non_target', None, 'attack - non-target answered queries JSON')
flags.DEFINE_string('report', None, 'report render - JSON report')

### QUERIES
flags.DEFINE_multi_integer('template', [1, 1], 'query sample - n_path and m_path')
flags.DEFINE_integer('count', 32, 'query sample - number of queries')
flags.DEFINE_enum('split', 'train', ['train', 'test'], 'query sample - test records supporting facts')

### ATTACKS
flags.DEFINE_enum('attack_mode', None, ATTACK_MODES, 'Attack objective (overrides the configuration)')
flags.DEFINE_string('trigger_anchor', None, 'Trigger anchor entity name')
flags.DEFINE_multi_string('trigger_chain', None, 'Trigger relation names, in order')
flags.DEFINE_string('target_answer', None, 'Target answer entity name (forcing)')

### REPORTS
flags.DEFINE_multi_enum('format', ['json'], REPORT_FORMATS, 'Report formats')

COMMANDS = {
    'kg': ['build', 'synth', 'surrogate'],
    'query': ['sample'],
    'train': [None],
    'eval': [None],
    'attack': ['kp', 'qm', 'co'],
    'defend': ['filter', 'advtrain'],
    'experiment': ['run'],
    'report': ['render'],
}


def _require(*names):
    missing = [n for n in names if getattr(FLAGS, n) is None]
    if missing:
        raise app.UsageError('missing flags: ' + ', '.join('--' + n for n in missing))


def _config():
    overrides = {'seed': FLAGS.seed, 'threads': FLAGS.threads,
                 'mode': FLAGS.attack_mode, 'target_answer': FLAGS.target_answer}
    if FLAGS.strict_deterministic:
        overrides['strict_deterministic'] = True
    if FLAGS.trigger_anchor is not None:
        _require('trigger_chain')
        overrides['trigger'] = {'anchor': FLAGS.trigger_anchor, 'chain': list(FLAGS.trigger_chain)}
    return kgr.load_config(FLAGS.config, FLAGS.profile, **overrides)


def _out(default):
    return FLAGS.out if FLAGS.out is not None else default


def _trigger(kg, cfg):
    if cfg.trigger is None:
        raise app.UsageError('--trigger_anchor and --trigger_chain are required')
    anchor = kg.entity_id(cfg.trigger['anchor'])
    return kgr.make_trigger(kg, anchor, [kg.relation_id(r) for r in cfg.trigger['chain']])


def _target_answer(kg, cfg):
    if cfg.mode != 'forcing':
        return None
    if cfg.target_answer is None:
        raise app.UsageError('--target_answer is required in forcing mode')
    return kg.entity_id(cfg.target_answer)


def cmd_kg(action, cfg):
    if action == 'build':
        _require('triples', 'categories', 'schema')
        texts = []
        for path in (FLAGS.triples, FLAGS.categories, FLAGS.schema):
            with open(path, encoding='utf-8') as f:
                texts.append(f.read())
        kg = kgr.parse_kg(*texts)
    elif action == 'synth':
        kg = kgr.generate_synthetic_kg(cfg.synthetic)
    else:
        _require('kg')
        kg = kgr.derive_surrogate(kgr.read_kg(FLAGS.kg), cfg.surrogate)
    out = _out('./kg')
    kgr.write_kg(kg, out)
    print(f'{kg} written to {out}')


def cmd_query(action, cfg):
    _require('kg')
    kg = kgr.read_kg(FLAGS.kg)
    if len(FLAGS.template) != 2:
        raise app.UsageError('--template takes two values: n_path and m_path')
    answered = kgr.sample_queries(kg, tuple(FLAGS.template), FLAGS.count, seed=cfg.seed,
                                  mode=FLAGS.split)
    out = _out('./queries.json')
    kgr.write_queries(answered, out, kg)
    print(f'{len(answered)} queries written to {out}')


def cmd_train(action, cfg):
    _require('kg')
    kg = kgr.read_kg(FLAGS.kg)
    if FLAGS.queries is not None:
        train_set = kgr.read_queries(FLAGS.queries, kg)
    else:
        train_set = kgr.training_queries(kg, cfg.templates, cfg.train_per_template, seed=cfg.seed)
    model = kgr.load_model(FLAGS.model) if FLAGS.model is not None else None
    trainer = kgr.KGRTrainer(kg, train_set, cfg.train, model=model, dim=cfg.dim,
                             layers=cfg.layers, model_seed=cfg.seed, verbose=FLAGS.verbose,
                             save=True, save_path=_out('./kgrlab_model/'))
    trainer.run()


def cmd_eval(action, cfg):
    _require('kg', 'model', 'queries')
    kg = kgr.read_kg(FLAGS.kg)
    answered = kgr.read_queries(FLAGS.queries, kg)
    results = kgr.evaluate_queries(kgr.load_model(FLAGS.model), answered,
                                   filter_by_category=cfg.filter_by_category)
    summary = kgr.summarize(results, cfg.ks, best_rank=cfg.best_rank)
    rows = [{'metric': m, 'k': k, 'group': g, 'value': v} for (m, k, g), v in summary.items()]
    text = kgr.canonical_json(rows)
    if FLAGS.out is not None:
        with open(FLAGS.out, 'w', encoding='utf-8') as f:
            f.write(text)
    print(text, end='')


def cmd_attack(action, cfg):
    _require('kg', 'model', 'queries')
    kg = kgr.read_kg(FLAGS.kg)
    model = kgr.load_model(FLAGS.model)
    targets = kgr.read_queries(FLAGS.queries, kg)
    non_target = kgr.read_queries(FLAGS.non_target, kg) if FLAGS.non_target is not None else []
    a_star = _target_answer(kg, cfg)
    kwargs = dict(verbose=FLAGS.verbose, save=True, save_path=_out('./kgrlab_attack/'))
    if action == 'kp':
        attack = kgr.KnowledgePoisoning(kg, model, _trigger(kg, cfg), targets, non_target,
                                        a_star, cfg.kp, **kwargs)
    elif action == 'qm':
        attack = kgr.QueryMisguiding(kg, model, targets, a_star, cfg.qm, **kwargs)
    else:
        attack = kgr.CoOptimization(kg, model, _trigger(kg, cfg), targets, non_target,
                                    a_star, cfg.co, **kwargs)
    attack.run()


def cmd_defend(action, cfg):
    _require('kg', 'model')
    kg = kgr.read_kg(FLAGS.kg)
    model = kgr.load_model(FLAGS.model)
    out = _out('./kgrlab_defense/')
    os.makedirs(out, exist_ok=True)
    if action == 'filter':
        filtered, removed = kgr.filter_low_fitness(kg, model, cfg.m_percent, cfg.n_jobs)
        kgr.write_kg(filtered, os.path.join(out, 'kg'))
        text = kgr.defense_report(kg, removed=removed)
    else:
        if FLAGS.queries is not None:
            train_set = kgr.read_queries(FLAGS.queries, kg)
        else:
            train_set = kgr.training_queries(kg, cfg.templates, cfg.train_per_template, seed=cfg.seed)
        augmented = kgr.augment_with_adversarial(kg, model, train_set, cfg.defense_cfg)
        hardened, _ = kgr.train(model, kg, augmented, cfg.train, verbose=FLAGS.verbose)
        kgr.save_model(hardened, os.path.join(out, 'model.npz'))
        text = kgr.defense_report(kg, augmented=augmented, n_original=len(train_set),
                                  source=kgr.adversarial_source(kg, train_set, cfg.defense_cfg))
    with open(os.path.join(out, 'defense_report.json'), 'w', encoding='utf-8') as f:
        f.write(text)


def cmd_experiment(action, cfg):
    out = _out('./kgrlab_results/')
    report = kgr.run_experiment(cfg, out=out, verbose=FLAGS.verbose)
    for fmt in FLAGS.format:
        if fmt != 'json':
            ext = {'csv': 'csv', 'markdown': 'md'}[fmt]
            kgr.emit_report(report, fmt, os.path.join(out, f'report.{ext}'))
    print(kgr.emit_report(report, 'markdown'), end='')


def cmd_report(action, cfg):
    _require('report')
    for fmt in FLAGS.format:
        text = kgr.render_report(FLAGS.report, fmt, FLAGS.out if len(FLAGS.format) == 1 else None)
        if FLAGS.out is None or len(FLAGS.format) > 1:
            print(text, end='')


HANDLERS = {'kg': cmd_kg, 'query': cmd_query, 'train': cmd_train, 'eval': cmd_eval,
            'attack': cmd_attack, 'defend': cmd_defend, 'experiment': cmd_experiment,
            'report': cmd_report}


def kgrlab(argv):
    """kgrlab absl.FLAGS-based command line app.
    """
    args = argv[1:]
    if not args or args[0] not in COMMANDS:
        raise app.UsageError(f'command must be one of {sorted(COMMANDS)}')
    command = args[0]
    action = args[1] if len(args) > 1 else None
    if action not in COMMANDS[command]:
        raise app.UsageError(f'`{command}` takes one of {COMMANDS[command]}, got {action}')

    try:
        cfg = _config()
        kgr.set_threads(cfg.threads, cfg.strict_deterministic)
        HANDLERS[command](action, cfg)
    except kgr.KGRError as err:
        logging.error('%s: %s', type(err).__name__, err)
        sys.exit(1)


def run():
    app.run(kgrlab)


if __name__ == '__main__':
    run()
