"""
Functional Adam shared by model training and the attacks.
"""

import tensorflow as tf
from typing import NamedTuple, Tuple

from ..exceptions import ShapeMismatch

__all__ = ['AdamState', 'init_adam_state', 'adam_step', 'BETA1', 'BETA2', 'EPSILON']

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


class AdamState(NamedTuple):
    step: int
    m: Tuple[tf.Tensor, ...]
    v: Tuple[tf.Tensor, ...]


def init_adam_state(params):
    zeros = tuple(tf.zeros_like(tf.convert_to_tensor(p)) for p in params)
    return AdamState(0, zeros, zeros)


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update.

    Parameters
    ----------
    params : list of tensors or variables
    grads : list of tensors, IndexedSlices or None
        None is read as a zero gradient.
    state : AdamState
    lr : float

    Returns
    -------
    params : list of tf.Tensor
        Updated values (inputs are not modified).
    state : AdamState
    """
    if not (len(params) == len(grads) == len(state.m)):
        raise ShapeMismatch('`params`, `grads` and the optimizer state differ in length')
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        p = tf.convert_to_tensor(p)
        g = tf.zeros_like(p) if g is None else tf.convert_to_tensor(g, dtype=p.dtype)
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeMismatch(f'parameter of shape {p.shape} got gradient of shape {g.shape}')
        m = BETA1 * m + (1.0 - BETA1) * g
        v = BETA2 * v + (1.0 - BETA2) * tf.square(g)
        m_hat = m / (1.0 - BETA1 ** t)
        v_hat = v / (1.0 - BETA2 ** t)
        new_params.append(p - lr * m_hat / (tf.sqrt(v_hat) + EPSILON))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(t, tuple(new_m), tuple(new_v))
