"""
Base attack class
"""

import os
import tensorflow as tf
from abc import ABC, abstractmethod
from matplotlib.pyplot import show, close
import logging
tf.get_logger().setLevel(logging.ERROR)

from ..utils import canonical_json, plot_history

__all__ = ['Attack']


class Attack(ABC):
    """
    Adversary-side procedure. Attacks only ever receive the surrogate KG and
    the surrogate model.
    """
    artifact_name = 'attack.json'

    def __init__(
        self,
        kg_surrogate,
        model,
        verbose=True,
        save=False,
        save_path=None,
        show_plot=False,
        ):
        """
        Parameters
        ----------
        kg_surrogate : KnowledgeGraph
            Adversary's knowledge graph.
        model : KGRModel
            Surrogate model trained on ``kg_surrogate``. Never modified.
        verbose : bool
            Verbosity mode.
        save : bool
            Whether to write the attack artifact (JSON) and loss curves.
        save_path : str or None
            Output folder, ``'./'`` if None.
        """
        self.kg = kg_surrogate
        self.model = model
        self.verbose = verbose
        self.save = save
        self.save_path = save_path if save_path is not None else './'
        self.show_plot = show_plot
        self.result = None

    @abstractmethod
    def run(self):
        pass

    @abstractmethod
    def to_dict(self):
        pass

    def loss_traces(self):
        return {}

    def save_results(self):
        """
        Write the JSON artifact and, when traces exist, the loss curves.
        """
        if not self.save:
            return
        os.makedirs(self.save_path, exist_ok=True)
        with open(os.path.join(self.save_path, self.artifact_name), 'w', encoding='utf-8') as f:
            f.write(canonical_json(self.to_dict()))
        traces = {k: v for k, v in self.loss_traces().items() if len(v)}
        if traces:
            fname = os.path.join(self.save_path, self.artifact_name.replace('.json', '_loss.png'))
            plot_history(traces, path=fname)
            if self.show_plot:
                show()
            else:
                close()
