import numpy as np
import tensorflow as tf

from .dataloader import truth_matrix
from .models import embed_queries
from .utils import checkarg_mode

__all__ = ['l2_distance', 'squared_distance', 'answer_embedding',
           'training_loss', 'kp_loss', 'qm_loss', 'attack_objective']


def squared_distance(a, b):
    """Squared Euclidean distance over the last axis."""
    return tf.reduce_sum(tf.square(a - b), axis=-1)


def l2_distance(a, b):
    """
    Euclidean distance over the last axis. The gradient is defined as 0 where
    the two inputs coincide.
    """
    sq = squared_distance(a, b)
    positive = sq > 0
    safe = tf.where(positive, sq, tf.ones_like(sq))
    return tf.where(positive, tf.sqrt(safe), tf.zeros_like(sq))


def answer_embedding(table, truth):
    """phi of an answer set: arithmetic mean of the truth rows."""
    ids = np.asarray(sorted(truth), dtype=np.int64)
    return tf.reduce_mean(tf.gather(table, ids), axis=0)


def _answer_embeddings(table, answered):
    ids, mask = truth_matrix(answered)
    rows = tf.gather(table, ids)
    weights = tf.constant(mask / mask.sum(axis=1, keepdims=True), dtype=tf.float64)
    return tf.reduce_sum(rows * weights[:, :, None], axis=1)


def training_loss(model, answered, negatives=None, margin=1.0):
    """
    Mean over the batch of the per-example loss: squared distances from the
    query embedding to every truth row plus a squared hinge
    ``max(0, margin - distance)^2`` for each negative.

    Parameters
    ----------
    model : KGRModel
    answered : list of AnsweredQuery
    negatives : np.ndarray or None
        Negative entity ids of shape [B, n_neg]; entries < 0 are padding.
    margin : float
    """
    table = model.entity_embeddings
    qvec = embed_queries(model, [aq.query for aq in answered])
    ids, mask = truth_matrix(answered)
    truth_rows = tf.gather(table, ids)
    pos = squared_distance(qvec[:, None, :], truth_rows)
    loss = tf.reduce_sum(pos * tf.constant(mask, dtype=tf.float64), axis=1)
    if negatives is not None and negatives.size:
        negatives = np.asarray(negatives, dtype=np.int64)
        valid = negatives >= 0
        neg_rows = tf.gather(table, np.where(valid, negatives, 0))
        dist = l2_distance(qvec[:, None, :], neg_rows)
        hinge = tf.square(tf.nn.relu(margin - dist))
        loss += tf.reduce_sum(hinge * tf.constant(valid, dtype=tf.float64), axis=1)
    return tf.reduce_mean(loss)


def _mean_or_zero(x):
    if x.shape[0] == 0:
        return tf.constant(0.0, dtype=tf.float64)
    return tf.reduce_mean(x)


def kp_loss(model, table, target_queries, non_target, a_star=None, mode='forcing', lam=1.0):
    """Knowledge-poisoning objective evaluated on an entity table.

    Forcing:
        E_{Q*} dist(psi(q), phi_{a*}) + lam * E_{Q_non} dist(psi(q), phi_[[q]])
    Degradation:
        E_{Q_non} dist(psi(q), phi_[[q]]) - lam * E_{Q*} dist(psi(q), phi_[[q]])

    Parameters
    ----------
    table : tf.Tensor
        Entity table [|N|, d] holding the perturbed rows.
    target_queries : list of AnsweredQuery
        Q*. Truths are only read in degradation mode.
    non_target : list of AnsweredQuery
        Q_non.
    """
    checkarg_mode(mode)

    def _to_truth(answered):
        if not answered:
            return tf.zeros((0,), dtype=tf.float64)
        qvec = embed_queries(model, [aq.query for aq in answered], table)
        return l2_distance(qvec, _answer_embeddings(table, answered))

    benign = _mean_or_zero(_to_truth(non_target))
    if mode == 'forcing':
        if target_queries:
            qvec = embed_queries(model, [aq.query for aq in target_queries], table)
            forced = _mean_or_zero(l2_distance(qvec, tf.gather(table, [a_star])))
        else:
            forced = tf.constant(0.0, dtype=tf.float64)
        return forced + lam * benign
    return benign - lam * _mean_or_zero(_to_truth(target_queries))


def qm_loss(model, query_vec, bait_vec, goal_vec, mode='forcing'):
    """Query-misguiding objective on the intersection of the query and bait
    embeddings: distance to phi_{a*} (forcing) or negated distance to the
    answer-set embedding (degradation)."""
    checkarg_mode(mode)
    infected = model.intersection([query_vec, bait_vec])
    dist = l2_distance(infected, goal_vec)
    return dist if mode == 'forcing' else -dist


def attack_objective(model, infected, goals, mode='forcing'):
    """Mean forcing loss (distance to a*) or mean degradation objective
    (negated distance to the truth embedding) of a list of infected queries.

    Parameters
    ----------
    infected : list of Query
    goals : list of int (forcing, the a* of each query) or list of sets of int
    """
    checkarg_mode(mode)
    if not infected:
        return 0.0
    table = model.entity_embeddings
    qvec = embed_queries(model, infected)
    if mode == 'forcing':
        target = tf.gather(table, np.asarray(goals, dtype=np.int64))
        return float(tf.reduce_mean(l2_distance(qvec, target)))
    target = tf.stack([answer_embedding(table, g) for g in goals])
    return float(-tf.reduce_mean(l2_distance(qvec, target)))
