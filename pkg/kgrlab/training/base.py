"""
Base training class
"""

import os
import numpy as np
import tensorflow as tf
from abc import ABC, abstractmethod
from matplotlib.pyplot import show, close
import logging
tf.get_logger().setLevel(logging.ERROR)

from ..exceptions import EmptyTrainSet
from ..models import save_model
from ..utils import plot_history, learning_rate_schedule, checkarg_nonnegative_int, checkarg_positive_int


__all__ = ['Trainer']


class Trainer(ABC):
    """
    """
    def __init__(
        self,
        kg,
        train_set,
        learning_rate=1e-3,
        lr_boundaries=None,
        steps=1000,
        batch_size=512,
        seed=0,
        verbose=True,
        save=False,
        save_path=None,
        show_plot=False,
        ):
        """
        """
        self.kg = kg
        self.train_set = list(train_set)
        if not self.train_set:
            raise EmptyTrainSet('`train_set` must hold at least one answered query')
        self.learning_rate = learning_rate
        self.lr_boundaries = lr_boundaries
        self.lr_schedule = learning_rate_schedule(learning_rate, lr_boundaries)
        self.steps = checkarg_nonnegative_int(steps, 'steps')
        self.batch_size = checkarg_positive_int(batch_size, 'batch_size')
        self.seed = seed
        self.verbose = verbose
        self.save = save
        self.save_path = save_path
        if self.save_path is None:
            self.save_path = './'
        else:
            if not self.save_path.endswith('/'):
                self.save_path += '/'
        self.show_plot = show_plot
        self.loss_trace = []
        self.timing = None

    @abstractmethod
    def run(self):
        pass

    @abstractmethod
    def setup_model(self):
        pass

    def save_results(self, model_to_save=None, folder_prefix=None):
        """
        Save the model checkpoint, loss trace, running time and learning curve.
        """
        if self.save:
            if model_to_save is None:
                model_to_save = self.model
            prefix = folder_prefix if folder_prefix is not None else ''
            os.makedirs(self.save_path, exist_ok=True)
            save_model(model_to_save, self.save_path + prefix + 'model.npz')
            np.savetxt(self.save_path + prefix + 'loss_trace.txt', np.asarray(self.loss_trace), fmt='%0.10f')
            if self.timing is not None and self.timing.running_time is not None:
                np.savetxt(self.save_path + prefix + 'running_time.txt', [self.timing.running_time], fmt='%s')

            if self.loss_trace:
                learning_curve_fname = self.save_path + prefix + 'learning_curve.png'
                plot_history({'loss': self.loss_trace}, path=learning_curve_fname, log_scale=True)
                if self.show_plot:
                    show()
                else:
                    close()
