import os
import json
import hashlib
import numpy as np
import tensorflow as tf
from datetime import datetime
from absl import logging

import matplotlib.pyplot as plt
import seaborn as sns
from tensorflow.keras.optimizers.schedules import PiecewiseConstantDecay

from . import ATTACK_MODES, ATTACK_VARIANTS, DEFENSES, DIRECTIONS, REPORT_FORMATS

__all__ = ['Timing', 'checkarg_mode', 'checkarg_variant', 'checkarg_defense',
           'checkarg_format', 'checkarg_direction', 'checkarg_positive_int',
           'checkarg_nonnegative_int', 'learning_rate_schedule', 'set_threads',
           'canonical_json', 'digest', 'plot_history',
           'plot_budget_sweep']


def checkarg_mode(mode):
    """Check the argument ``mode``.

    Parameters
    ----------
    mode : str
        Attack objective, one of ``ATTACK_MODES``.
    """
    if not isinstance(mode, str):
        raise TypeError('`mode` must be a string')
    if mode not in ATTACK_MODES:
        msg = f'`mode` not recognized. Must be one of the '
        msg += f'following: {ATTACK_MODES}. Got {mode}'
        raise ValueError(msg)
    return mode


def checkarg_variant(variant):
    """Check the argument ``variant`` (attack variant).
    """
    if not isinstance(variant, str):
        raise TypeError('`variant` must be a string')
    if variant not in ATTACK_VARIANTS:
        msg = f'`variant` not recognized. Must be one of the '
        msg += f'following: {ATTACK_VARIANTS}. Got {variant}'
        raise ValueError(msg)
    return variant


def checkarg_defense(defense):
    """Check the argument ``defense``.
    """
    if not isinstance(defense, str):
        raise TypeError('`defense` must be a string')
    if defense not in DEFENSES:
        msg = f'`defense` must be one of {DEFENSES}, got {defense}'
        raise ValueError(msg)
    return defense


def checkarg_format(fmt):
    """Check the argument ``fmt`` (report format).
    """
    if fmt not in REPORT_FORMATS:
        raise ValueError(f'`fmt` must be one of {REPORT_FORMATS}, got {fmt}')
    return fmt


def checkarg_direction(direction):
    if direction not in DIRECTIONS:
        raise ValueError(f'`direction` must be one of {DIRECTIONS}, got {direction}')
    return direction


def checkarg_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise TypeError(f'`{name}` must be an integer')
    if value < 1:
        raise ValueError(f'`{name}` must be a positive integer, got {value}')
    return int(value)


def checkarg_nonnegative_int(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise TypeError(f'`{name}` must be an integer')
    if value < 0:
        raise ValueError(f'`{name}` must be >= 0, got {value}')
    return int(value)


def learning_rate_schedule(learning_rate, boundaries=None):
    """Turn ``learning_rate`` into a callable of the optimizer step.

    Parameters
    ----------
    learning_rate : float or tuple of floats or list of floats
        Learning rate. If a tuple/list with more than one value is given, the
        values are used piecewise with a PiecewiseConstantDecay scheduler.
    boundaries : list of int or None
        Step boundaries of the scheduler, ``len(learning_rate) - 1`` values.
        Required when several learning rates are given.
    """
    if isinstance(learning_rate, (tuple, list)) and len(learning_rate) == 1:
        learning_rate = learning_rate[0]
    if isinstance(learning_rate, (tuple, list)):
        if boundaries is None or len(boundaries) != len(learning_rate) - 1:
            msg = '`lr_boundaries` must hold len(learning_rate) - 1 step values '
            msg += 'when several learning rates are given'
            raise ValueError(msg)
        values = [float(v) for v in learning_rate]
        if min(values) <= 0:
            raise ValueError('`learning_rate` values must be > 0')
        schedule = PiecewiseConstantDecay(boundaries=[int(b) for b in boundaries],
                                          values=values)
        return lambda step: float(schedule(step))
    learning_rate = float(learning_rate)
    if learning_rate <= 0:
        raise ValueError(f'`learning_rate` must be > 0, got {learning_rate}')
    return lambda step: learning_rate


def set_threads(n_threads=None, strict_deterministic=False):
    """Configure the TensorFlow thread pools. Must be called before any op runs.

    Parameters
    ----------
    n_threads : int or None
        Threads for intra- and inter-op parallelism. None keeps TF defaults.
    strict_deterministic : bool
        If True, a single thread is used and TF op determinism is enabled.
    """
    if strict_deterministic:
        n_threads = 1
        tf.config.experimental.enable_op_determinism()
    if n_threads is not None:
        try:
            tf.config.threading.set_intra_op_parallelism_threads(n_threads)
            tf.config.threading.set_inter_op_parallelism_threads(n_threads)
        except RuntimeError:
            logging.warning('TensorFlow already initialized, thread pools unchanged')


def canonical_json(obj):
    """Deterministic JSON text (sorted keys, two-space indent, trailing newline).
    """
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + '\n'


def digest(obj):
    """SHA-256 hex digest of the canonical JSON form of ``obj``.
    """
    return hashlib.sha256(canonical_json(obj).encode('utf-8')).hexdigest()


class Timing():
    """ 
    """
    sep = '-' * 80

    def __init__(self, verbose=True):
        """ 
        Timing utility class.

        Parameters
        ----------
        verbose : bool
            Verbosity.

        """
        self.verbose = verbose
        self.running_time = None
        self.checktimes = list()
        self.starting_time = datetime.now()
        self.starting_time_fmt = self.starting_time.strftime("%Y-%m-%d %H:%M:%S")
        if self.verbose:
            print(self.sep)
            print(f"Starting time: {self.starting_time_fmt}")
            print(self.sep)

    def runtime(self):
        """ 
        """
        self.running_time = str(datetime.now() - self.starting_time)
        if self.verbose:
            print(self.sep)
            print(f"Final running time: {self.running_time}")
            print(self.sep)
        return self.running_time

    def checktime(self, label=None):
        """
        """
        checktime = str(datetime.now() - self.starting_time)
        self.checktimes.append((label, checktime))
        if self.verbose:
            print(self.sep)
            if label is not None:
                print(f"Timing [{label}]: {checktime}")
            else:
                print(f"Timing: {checktime}")
            print(self.sep)
        return checktime


def plot_history(traces, path=None, side=5, log_scale=False, title=None):
    """Plot one or several loss traces.

    Parameters
    ----------
    traces : dict of str to sequence of float, or sequence of float
        Loss values per optimizer step, keyed by label.
    path : str or None
        Where to save the figure. The directory is created if needed.
    side : float
        Height of the figure in inches.
    log_scale : bool
        Wether to use log scale for the losses.
    """
    if not isinstance(traces, dict):
        traces = {'loss': traces}
    if path is not None:
        directory_name = os.path.dirname(path)
        # The directory name may be an empty string.
        if directory_name:
            os.makedirs(directory_name, exist_ok=True)

    fig, ax = plt.subplots(1, 1, figsize=(side * 1.6, side))
    for label, trace in traces.items():
        ax.plot(np.arange(1, len(trace) + 1), np.asarray(trace), '-', label=label)
    ax.set_xlabel('step')
    ax.set_ylabel('loss')
    if log_scale:
        ax.set_yscale('log')
    if title is not None:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    if path is not None:
        fig.savefig(path)
    return fig, ax


def plot_budget_sweep(grid, path=None, dpi=150, title=None):
    """Heat map of an attack metric over a (n_g, n_q) budget grid.

    Parameters
    ----------
    grid : xr.DataArray
        2D array with dims ``('n_g', 'n_q')``.
    """
    sns.set_style("white")
    fig, ax = plt.subplots(1, 1, figsize=(5, 4), dpi=dpi)
    sns.heatmap(grid.values, annot=True, fmt='.2f', cmap='viridis', ax=ax,
                xticklabels=[str(v) for v in grid['n_q'].values],
                yticklabels=[str(v) for v in grid['n_g'].values])
    ax.set_xlabel('n_q')
    ax.set_ylabel('n_g')
    if title is not None:
        ax.set_title(title)
    fig.tight_layout()
    if path is not None:
        fig.savefig(path)
        plt.close(fig)
    return fig, ax
