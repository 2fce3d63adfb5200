import numpy as np
from dataclasses import dataclass
from typing import Optional, Tuple

from .models import embed_queries
from .metrics import EvalResult
from .exceptions import UnknownCategory, DimMismatch

__all__ = ['Ranking', 'rank_entities', 'evaluate_queries']


@dataclass(frozen=True)
class Ranking:
    """
    Candidate entities sorted by ascending distance to a query embedding, ties
    by ascending entity id.
    """
    entities: np.ndarray
    distances: np.ndarray
    truth: Tuple[int, ...] = ()
    query_id: Optional[int] = None

    def __len__(self):
        return len(self.entities)

    def truth_ranks(self):
        """Sorted 1-based ranks of the truth entities present in the ranking."""
        mask = np.isin(self.entities, np.asarray(self.truth, dtype=np.int64))
        return np.nonzero(mask)[0] + 1

    def top(self, k):
        return self.entities[:k]


def rank_entities(model, qvec, candidates=None, truth=(), query_id=None):
    """Rank entities by Euclidean distance to ``qvec``.

    Parameters
    ----------
    model : KGRModel
    qvec : array-like
        Query embedding, shape [d].
    candidates : int or None
        Category id restricting the candidates. None ranks every entity.
    truth : iterable of int
        Ground truth carried along for the metrics.
    """
    table = model.entity_rows()
    qvec = np.asarray(qvec, dtype=np.float64)
    if qvec.shape != (table.shape[1],):
        raise DimMismatch(f'query embedding of shape {qvec.shape}, model dim {table.shape[1]}')
    if candidates is None:
        ids = np.arange(len(table), dtype=np.int64)
    else:
        if isinstance(candidates, bool) or not isinstance(candidates, (int, np.integer)) \
                or not 0 <= candidates < model.n_categories:
            raise UnknownCategory(candidates)
        ids = np.nonzero(model.entity_categories == candidates)[0].astype(np.int64)
    dists = np.linalg.norm(table[ids] - qvec, axis=1)
    order = np.lexsort((ids, dists))
    return Ranking(ids[order], dists[order], tuple(sorted(int(t) for t in truth)), query_id)


def evaluate_queries(model, answered, groups=None, filter_by_category=True,
                     queries=None, truths=None):
    """Rank the answers of a list of answered queries.

    Parameters
    ----------
    model : KGRModel
    answered : list of AnsweredQuery
    groups : list of str or None
        Group label per query (e.g. ``'target'`` / ``'non_target'``).
    filter_by_category : bool
        Whether candidates are restricted to the Target's category.
    queries : list of Query or None
        Queries actually submitted (e.g. infected versions); defaults to the
        answered queries themselves.
    truths : list of iterable of int or None
        Truth sets to score against; defaults to each query's truth. In
        forcing evaluation this holds ``{a*}``.

    Returns
    -------
    EvalResult
    """
    answered = list(answered)
    submitted = [aq.query for aq in answered] if queries is None else list(queries)
    truths = [aq.truth for aq in answered] if truths is None else list(truths)
    groups = ['all'] * len(answered) if groups is None else list(groups)
    if not (len(submitted) == len(truths) == len(groups) == len(answered)):
        raise ValueError('`answered`, `queries`, `truths` and `groups` differ in length')
    rankings = []
    if answered:
        qvecs = embed_queries(model, submitted).numpy()
        for i, aq in enumerate(answered):
            cat = aq.query.target_category if filter_by_category else None
            rankings.append(rank_entities(model, qvecs[i], cat, truths[i], query_id=i))
    return EvalResult(rankings, groups)
