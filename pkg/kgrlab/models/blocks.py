import numpy as np
import tensorflow as tf

__all__ = ['ProjectionBlock', 'IntersectionBlock', 'uniform_init']


def uniform_init(rng, shape, dim):
    """I.i.d. uniform values in [-1/sqrt(d), 1/sqrt(d)]."""
    bound = 1.0 / np.sqrt(dim)
    return rng.uniform(-bound, bound, size=shape)


class ProjectionBlock(tf.Module):
    """
    One fully connected network per relation, stored as stacked kernels of
    shape [R, d, d] and biases [R, d] per layer. ReLU between layers, linear
    output layer.
    """
    def __init__(self, kernels, biases, name=None):
        super().__init__(name=name)
        if len(kernels) != len(biases) or not kernels:
            raise ValueError('`kernels` and `biases` must hold one array per layer')
        self.kernels = [tf.Variable(np.asarray(k, dtype=np.float64), name=f'kernel_{i}')
                        for i, k in enumerate(kernels)]
        self.biases = [tf.Variable(np.asarray(b, dtype=np.float64), name=f'bias_{i}')
                       for i, b in enumerate(biases)]

    @classmethod
    def random(cls, n_relations, dim, layers, rng, name=None):
        kernels, biases = [], []
        for _ in range(layers):
            kernels.append(uniform_init(rng, (n_relations, dim, dim), dim))
            biases.append(uniform_init(rng, (n_relations, dim), dim))
        return cls(kernels, biases, name=name)

    @property
    def n_layers(self):
        return len(self.kernels)

    @property
    def parameters(self):
        return self.kernels + self.biases

    def __call__(self, x, relations):
        """
        Parameters
        ----------
        x : tf.Tensor
            Inputs of shape [B, d].
        relations : array-like of int
            Relation id per row, shape [B].
        """
        relations = tf.convert_to_tensor(relations, dtype=tf.int64)
        h = x
        for i, (kernel, bias) in enumerate(zip(self.kernels, self.biases)):
            # every relation's layer on every row, then keep each row's own
            h_all = tf.einsum('bi,rij->brj', h, kernel)
            h = tf.gather(h_all, relations, axis=1, batch_dims=1) + tf.gather(bias, relations)
            if i < self.n_layers - 1:
                h = tf.nn.relu(h)
        return h


class IntersectionBlock(tf.Module):
    """
    Symmetric intersection: elementwise mean pooling followed by a fully
    connected network. A single input passes through unchanged.
    """
    def __init__(self, kernels, biases, name=None):
        super().__init__(name=name)
        self.kernels = [tf.Variable(np.asarray(k, dtype=np.float64), name=f'kernel_{i}')
                        for i, k in enumerate(kernels)]
        self.biases = [tf.Variable(np.asarray(b, dtype=np.float64), name=f'bias_{i}')
                       for i, b in enumerate(biases)]

    @classmethod
    def random(cls, dim, layers, rng, name=None):
        kernels, biases = [], []
        for _ in range(layers):
            kernels.append(uniform_init(rng, (dim, dim), dim))
            biases.append(uniform_init(rng, (dim,), dim))
        return cls(kernels, biases, name=name)

    @property
    def n_layers(self):
        return len(self.kernels)

    @property
    def parameters(self):
        return self.kernels + self.biases

    def __call__(self, inputs):
        """
        Parameters
        ----------
        inputs : list of tf.Tensor
            Tensors of equal shape [B, d] (or [d]).
        """
        if len(inputs) == 1:
            return inputs[0]
        # sorting across inputs makes the pooled value order independent bit for bit
        stacked = tf.sort(tf.stack(list(inputs), axis=-1), axis=-1)
        h = tf.reduce_mean(stacked, axis=-1)
        for i, (kernel, bias) in enumerate(zip(self.kernels, self.biases)):
            h = tf.tensordot(h, kernel, axes=[[-1], [0]]) + bias
            if i < self.n_layers - 1:
                h = tf.nn.relu(h)
        return h
