import math
import numpy as np
import pandas as pd
import pytest
from sklearn.metrics import ndcg_score

from kgrlab.inference import Ranking, evaluate_queries
from kgrlab.dataloader import fact_queries
from kgrlab.metrics import (EvalResult, mrr, hit_at_k, ndcg_at_k, summarize,
                            delta_report, format_delta, format_cell)
from kgrlab.exceptions import EmptyResults, InvalidK, MismatchedSets


def _ranking(truth_ranks, n=10, truth_extra=()):
    """Ranking of entities 0..n-1 where the truth sits at the given 1-based ranks."""
    order = np.arange(100, 100 + n)
    truth = [int(order[r - 1]) for r in truth_ranks] + list(truth_extra)
    return Ranking(order, np.arange(n, dtype=np.float64), tuple(truth))


def _result(*rankings):
    return EvalResult(list(rankings))


def test_mrr_hand_cases():
    assert mrr(_result(_ranking([1]))) == 1.0
    assert mrr(_result(_ranking([1, 4]))) == 0.625
    assert mrr(_result(_ranking([1]), _ranking([2]))) == 0.75
    assert mrr(_result(_ranking([1, 4])), best_rank=True) == 1.0


def test_mrr_absent_truth_contributes_zero():
    assert mrr(_result(_ranking([2], truth_extra=(999,)))) == 0.25


def test_hit_at_k():
    assert hit_at_k(_result(_ranking([3])), 5) == 1.0
    assert hit_at_k(_result(_ranking([6])), 5) == 0.0
    assert hit_at_k(_result(_ranking([1]), _ranking([7]), _ranking([5])), 5) == pytest.approx(2 / 3)


def test_ndcg_hand_cases():
    assert ndcg_at_k(_result(_ranking([1])), 5) == 1.0
    assert ndcg_at_k(_result(_ranking([2])), 5) == pytest.approx(1 / math.log2(3), abs=1e-12)
    assert ndcg_at_k(_result(_ranking([2])), 5) == pytest.approx(0.6309, abs=1e-4)
    assert ndcg_at_k(_result(_ranking([8])), 5) == 0.0


def test_metric_errors():
    with pytest.raises(EmptyResults):
        mrr(EvalResult())
    with pytest.raises(InvalidK):
        hit_at_k(_result(_ranking([1])), 0)
    with pytest.raises(InvalidK):
        ndcg_at_k(_result(_ranking([1])), 2.5)


def _reference(rankings, k):
    """Position-by-position scan of every ranking."""
    rr, hits, ndcgs = [], [], []
    for r in rankings:
        truth = set(r.truth)
        ranks = []
        for pos in range(len(r.entities)):
            for t in truth:
                if r.entities[pos] == t:
                    ranks.append(pos + 1)
        rr.append(sum(1.0 / x for x in ranks) / len(truth))
        hits.append(1.0 if any(x <= k for x in ranks) else 0.0)
        dcg = sum(1.0 / math.log2(x + 1) for x in ranks if x <= k)
        idcg = sum(1.0 / math.log2(i + 1) for i in range(1, min(k, len(truth)) + 1))
        ndcgs.append(dcg / idcg)
    return sum(rr) / len(rr), sum(hits) / len(hits), sum(ndcgs) / len(ndcgs)


@pytest.mark.parametrize('seed', range(100))
def test_metrics_against_reference(seed):
    rng = np.random.default_rng(seed)
    rankings = []
    for _ in range(rng.integers(1, 6)):
        n = int(rng.integers(2, 15))
        entities = rng.permutation(n)
        truth = rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)
        rankings.append(Ranking(entities, np.arange(n, dtype=np.float64), tuple(int(t) for t in truth)))
    k = int(rng.integers(1, 12))
    result = EvalResult(rankings)
    ref_mrr, ref_hit, ref_ndcg = _reference(rankings, k)
    assert abs(mrr(result) - ref_mrr) <= 1e-12
    assert abs(hit_at_k(result, k) - ref_hit) <= 1e-12
    assert abs(ndcg_at_k(result, k) - ref_ndcg) <= 1e-12
    for value in (mrr(result), hit_at_k(result, k), ndcg_at_k(result, k)):
        assert 0.0 <= value <= 1.0


@pytest.mark.parametrize('seed', range(10))
def test_ndcg_matches_sklearn(seed):
    rng = np.random.default_rng(seed)
    n, k = 12, 5
    entities = rng.permutation(n)
    truth = rng.choice(n, size=3, replace=False)
    ranking = Ranking(entities, np.arange(n, dtype=np.float64), tuple(int(t) for t in truth))
    relevance = np.isin(np.arange(n), truth).astype(float)[None, :]
    score = np.empty(n)
    score[entities] = -np.arange(n, dtype=float)
    assert ndcg_at_k(EvalResult([ranking]), k) == pytest.approx(
        ndcg_score(relevance, score[None, :], k=k), abs=1e-10)


def test_metrics_monotone():
    worse = _result(_ranking([3, 6]))
    better = _result(_ranking([2, 6]))
    assert mrr(better) >= mrr(worse)
    assert hit_at_k(better, 2) >= hit_at_k(worse, 2)
    assert ndcg_at_k(better, 5) >= ndcg_at_k(worse, 5)


def test_summarize_groups():
    result = EvalResult([_ranking([1]), _ranking([4])], ['target', 'non_target'])
    summary = summarize(result, ks=(1, 5))
    assert summary[('mrr', None, 'target')] == 1.0
    assert summary[('hit', 1, 'non_target')] == 0.0
    assert summary[('hit', 5, 'non_target')] == 1.0
    assert len(summary) == 2 * (1 + 2 * 2)


def test_delta_report_identical():
    result = EvalResult([_ranking([1]), _ranking([4])], ['target', 'non_target'])
    summary = summarize(result, ks=(5,))
    df = delta_report(summary, summary)
    assert list(df.columns) == ['metric', 'k', 'group', 'before', 'after', 'delta']
    assert (df['delta'] == 0).all()
    assert pd.isna(df.loc[df['metric'] == 'mrr', 'k']).all()


def test_delta_report_signed():
    before = {('mrr', None, 'target'): 0.04, ('hit', 5, 'target'): 0.98}
    after = {('mrr', None, 'target'): 0.39, ('hit', 5, 'target'): 0.72}
    df = delta_report(before, after).set_index('metric')
    assert df.loc['mrr', 'delta'] == pytest.approx(0.35)
    assert df.loc['hit', 'delta'] == pytest.approx(-0.26)
    with pytest.raises(MismatchedSets):
        delta_report(before, {('mrr', None, 'target'): 0.1})


def test_format():
    assert format_delta(0.35) == '.35↑'
    assert format_delta(-0.26) == '.26↓'
    assert format_delta(0.0) == '.00'
    assert format_cell(0.39, 0.35) == '.39(.35↑)'
    assert format_cell(1.0, 0.5) == '1.00(.50↑)'


def test_evaluate_queries(kg, ids, model):
    answered = fact_queries(kg)
    result = evaluate_queries(model, answered, ['a', 'b', 'a', 'b'])
    assert len(result) == 4
    assert result.group_names == ['a', 'b']
    first = result.rankings[0]
    assert len(first) == 2
    assert set(first.entities.tolist()) == {ids['M1'], ids['M2']}
    assert mrr(result.select('a')) > 0
    unfiltered = evaluate_queries(model, answered, filter_by_category=False)
    assert len(unfiltered.rankings[0]) == kg.n_entities
    forced = evaluate_queries(model, answered, truths=[(ids['M2'],)] * 4)
    assert forced.rankings[0].truth == (ids['M2'],)
