"""
Training procedure for KGR models
"""

import numpy as np
import tensorflow as tf
from dataclasses import dataclass, asdict
from typing import Optional, Sequence, Union
import logging
tf.get_logger().setLevel(logging.ERROR)

from ..utils import Timing, checkarg_nonnegative_int, checkarg_positive_int
from ..models import init_model
from ..losses import training_loss
from ..exceptions import EmptyTrainSet, InvalidConfig
from .base import Trainer
from .optimizers import init_adam_state, adam_step

__all__ = ['TrainConfig', 'KGRTrainer', 'train', 'sample_negatives']


@dataclass
class TrainConfig:
    """
    Optimization settings of end-to-end KGR training.

    Parameters
    ----------
    learning_rate : float or sequence of float
        Learning rate, or piecewise-constant values switched at
        ``lr_boundaries``.
    batch_size : int
        Queries per optimizer step.
    steps : int
        Number of optimizer steps.
    negatives_per_positive : int
        Non-answer entities of the target category sampled per query.
    margin : float
        Margin of the squared hinge on negatives.
    seed : int
        Seed of minibatch and negative sampling.
    lr_boundaries : sequence of int or None
    """
    learning_rate: Union[float, Sequence[float]] = 1e-3
    batch_size: int = 512
    steps: int = 50000
    negatives_per_positive: int = 4
    margin: float = 1.0
    seed: int = 0
    lr_boundaries: Optional[Sequence[int]] = None

    def __post_init__(self):
        rates = self.learning_rate if isinstance(self.learning_rate, (list, tuple)) else [self.learning_rate]
        if not rates or min(float(r) for r in rates) <= 0:
            raise InvalidConfig(f'`learning_rate` must be > 0, got {self.learning_rate}')
        checkarg_positive_int(self.batch_size, 'batch_size')
        checkarg_nonnegative_int(self.steps, 'steps')
        checkarg_nonnegative_int(self.negatives_per_positive, 'negatives_per_positive')
        if self.margin < 0:
            raise InvalidConfig(f'`margin` must be >= 0, got {self.margin}')

    def to_dict(self):
        d = asdict(self)
        for key in ('learning_rate', 'lr_boundaries'):
            if isinstance(d[key], tuple):
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def sample_negatives(kg, answered, n_neg, rng):
    """Uniform non-answer entities of each query's target category.

    Returns an int array [B, n_neg]; -1 pads rows whose category holds no
    non-answer entity.
    """
    out = -np.ones((len(answered), n_neg), dtype=np.int64)
    if n_neg == 0:
        return out
    for i, aq in enumerate(answered):
        cat = aq.query.target_category
        pool = kg.entities_of_category(cat) if cat is not None else np.arange(kg.n_entities)
        pool = pool[~np.isin(pool, aq.truth)]
        if len(pool):
            out[i] = pool[rng.integers(len(pool), size=n_neg)]
    return out


class KGRTrainer(Trainer):
    """
    """
    def __init__(
        self,
        kg,
        train_set,
        cfg=None,
        model=None,
        dim=64,
        layers=2,
        model_seed=0,
        verbose=True,
        save=False,
        save_path=None,
        show_plot=False,
        ):
        """Minibatch Adam training of a KGR model on answered queries.

        Parameters
        ----------
        kg : KnowledgeGraph
            Graph the model is bound to (entity catalog, categories).
        train_set : list of AnsweredQuery
            Training queries.
        cfg : TrainConfig or None
            Optimization settings. Defaults to ``TrainConfig()``.
        model : KGRModel or None
            Model to continue training from. It is copied, never modified. If
            None, a model is initialized with ``dim``, ``layers`` and
            ``model_seed``.
        verbose : bool
            Verbosity mode, shows a progress bar.
        save : bool
            Whether to save the checkpoint, loss trace and learning curve.
        save_path : str or None
            Output folder, ``'./'`` if None.
        show_plot : bool
            If True the learning curve is shown after training.
        """
        self.cfg = cfg if cfg is not None else TrainConfig()
        super().__init__(
            kg=kg,
            train_set=train_set,
            learning_rate=self.cfg.learning_rate,
            lr_boundaries=self.cfg.lr_boundaries,
            steps=self.cfg.steps,
            batch_size=self.cfg.batch_size,
            seed=self.cfg.seed,
            verbose=verbose,
            save=save,
            save_path=save_path,
            show_plot=show_plot)
        self.initial_model = model
        self.dim = dim
        self.layers = layers
        self.model_seed = model_seed

    def setup_model(self):
        """Setting up the model
        """
        if self.initial_model is None:
            self.model = init_model(self.kg, self.dim, self.layers, self.model_seed)
        else:
            self.model = self.initial_model.copy()

    def run(self):
        """Training and saving the model
        """
        self.timing = Timing(self.verbose)
        self.setup_model()
        rng = np.random.default_rng(self.seed)
        n = len(self.train_set)
        params = self.model.parameters
        state = init_adam_state(params)
        if self.verbose and self.steps:
            progbar = tf.keras.utils.Progbar(self.steps, stateful_metrics=['loss'])

        for step in range(self.steps):
            idx = rng.choice(n, size=self.batch_size, replace=self.batch_size > n)
            batch = [self.train_set[i] for i in idx]
            negatives = sample_negatives(self.kg, batch, self.cfg.negatives_per_positive, rng)
            with tf.GradientTape() as tape:
                loss = training_loss(self.model, batch, negatives, self.cfg.margin)
            grads = tape.gradient(loss, params)
            values, state = adam_step(params, grads, state, self.lr_schedule(step))
            for var, value in zip(params, values):
                var.assign(value)
            self.loss_trace.append(float(loss))
            if self.verbose:
                progbar.update(step + 1, values=[('loss', float(loss))])

        self.timing.runtime()
        self.save_results(self.model)
        return self.model


def train(model, kg, train_set, cfg=None, verbose=False):
    """Train a copy of ``model`` on ``train_set``.

    Returns
    -------
    model : KGRModel
        Trained copy; the input model is left untouched.
    loss_trace : list of float
        Batch loss before each optimizer step.
    """
    if not train_set:
        raise EmptyTrainSet('`train_set` must hold at least one answered query')
    trainer = KGRTrainer(kg, train_set, cfg, model=model, verbose=verbose)
    trained = trainer.run()
    return trained, trainer.loss_trace
