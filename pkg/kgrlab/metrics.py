"""
Ranking-quality metrics (MRR, HIT@K, NDCG@K) and before/after delta tables.
"""

import numpy as np
import pandas as pd
from dataclasses import dataclass, field
from typing import List

from .exceptions import EmptyResults, InvalidK, MismatchedSets

__all__ = ['EvalResult', 'mrr', 'hit_at_k', 'ndcg_at_k', 'summarize',
           'delta_report', 'format_delta', 'format_cell', 'DELTA_COLUMNS',
           'METRICS']

METRICS = ['mrr', 'hit', 'ndcg']

DELTA_COLUMNS = ['metric', 'k', 'group', 'before', 'after', 'delta']


@dataclass
class EvalResult:
    """Per-query rankings with a group label each."""
    rankings: List = field(default_factory=list)
    groups: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.groups:
            self.groups = ['all'] * len(self.rankings)
        if len(self.groups) != len(self.rankings):
            raise ValueError('one group label per ranking is required')

    def __len__(self):
        return len(self.rankings)

    @property
    def group_names(self):
        return sorted(set(self.groups))

    def select(self, group):
        keep = [i for i, g in enumerate(self.groups) if g == group]
        return EvalResult([self.rankings[i] for i in keep], [group] * len(keep))


def _check(results, k=None):
    if len(results) == 0:
        raise EmptyResults('no rankings to score')
    if k is not None and (isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < 1):
        raise InvalidK(f'`k` must be a positive integer, got {k}')


def mrr(results, best_rank=False):
    """Mean reciprocal rank.

    Per query the reciprocal ranks of all ground-truth answers are averaged
    (answers missing from the ranking contribute 0), then the per-query values
    are averaged. With ``best_rank`` only the best-ranked answer counts.
    """
    _check(results)
    values = []
    for r in results.rankings:
        ranks = r.truth_ranks()
        if best_rank:
            values.append(1.0 / ranks[0] if len(ranks) else 0.0)
        else:
            values.append(float(np.sum(1.0 / ranks)) / len(r.truth) if r.truth else 0.0)
    return float(np.mean(values))


def hit_at_k(results, k):
    """Fraction of queries with at least one ground-truth answer in the top k."""
    _check(results, k)
    return float(np.mean([float(np.any(r.truth_ranks() <= k)) for r in results.rankings]))


def ndcg_at_k(results, k):
    """Binary-relevance NDCG@k averaged over queries.
    """
    _check(results, k)
    values = []
    for r in results.rankings:
        ranks = r.truth_ranks()
        ranks = ranks[ranks <= k]
        dcg = float(np.sum(1.0 / np.log2(ranks + 1)))
        ideal = min(k, len(r.truth))
        idcg = float(np.sum(1.0 / np.log2(np.arange(1, ideal + 1) + 1)))
        values.append(dcg / idcg if idcg > 0 else 0.0)
    return float(np.mean(values))


def summarize(results, ks=(1, 5, 10), metrics=METRICS, best_rank=False):
    """All metrics per group, keyed by ``(metric, k, group)``; k is None for MRR.
    Empty groups are skipped.
    """
    out = {}
    for group in results.group_names:
        sub = results.select(group)
        if not len(sub):
            continue
        if 'mrr' in metrics:
            out[('mrr', None, group)] = mrr(sub, best_rank)
        for k in ks:
            if 'hit' in metrics:
                out[('hit', k, group)] = hit_at_k(sub, k)
            if 'ndcg' in metrics:
                out[('ndcg', k, group)] = ndcg_at_k(sub, k)
    return out


def delta_report(before, after):
    """Signed deltas ``after - before`` of two summaries.

    Parameters
    ----------
    before, after : dict
        Outputs of ``summarize`` over the same query sets.

    Returns
    -------
    pd.DataFrame
        Columns ``metric, k, group, before, after, delta`` sorted by group,
        metric and k.
    """
    if set(before) != set(after):
        raise MismatchedSets('`before` and `after` cover different metrics or groups')
    rows = []
    for key in sorted(before, key=lambda t: (t[2], t[0], -1 if t[1] is None else t[1])):
        metric, k, group = key
        rows.append({'metric': metric, 'k': k, 'group': group, 'before': before[key],
                     'after': after[key], 'delta': after[key] - before[key]})
    df = pd.DataFrame(rows, columns=DELTA_COLUMNS)
    df['k'] = df['k'].astype('Int64')
    return df


def _short(value):
    text = f'{abs(value):.2f}'
    return text[1:] if text.startswith('0') else text


def format_delta(delta):
    """``+0.35 -> '.35↑'``, ``-0.26 -> '.26↓'``; a zero delta has no arrow."""
    text = _short(delta)
    if text == '.00':
        return text
    return text + ('↑' if delta > 0 else '↓')


def format_cell(after, delta):
    """``(0.39, 0.35) -> '.39(.35↑)'``"""
    return f'{_short(after)}({format_delta(delta)})'
