"""Fully-connected networks over slices of a shared flat parameter vector."""

from __future__ import annotations

import numpy as np

LEAK = 0.01


def leaky(z: np.ndarray) -> np.ndarray:
    # valid because 0 < LEAK < 1
    return np.maximum(z, LEAK * z)


def leaky_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, 1.0, LEAK)


class Mlp:
    """``widths[0] -> ... -> widths[-1]``; leaky rectifier on hidden layers,
    identity on the output.

    The network owns no parameters. It reads weights from ``theta[offset:]``
    so the optimizer can treat the whole compressor as one vector.
    """

    def __init__(self, widths, offset: int = 0):
        self.widths = tuple(int(w) for w in widths)
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValueError(f"bad layer widths {widths}")
        self.offset = offset
        self._slices = []
        pos = offset
        for n_in, n_out in zip(self.widths[:-1], self.widths[1:]):
            w = slice(pos, pos + n_in * n_out)
            pos += n_in * n_out
            b = slice(pos, pos + n_out)
            pos += n_out
            self._slices.append((w, b, (n_in, n_out)))
        self.size = pos - offset

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def layers(self, theta: np.ndarray):
        """(W, b) views, ``W`` shaped ``(n_in, n_out)``."""
        return [(theta[w].reshape(shape), theta[b]) for w, b, shape in self._slices]

    def init(self, theta: np.ndarray, rng: np.random.Generator) -> None:
        """Glorot-uniform weights, zero biases, written in place."""
        for w, b, (n_in, n_out) in self._slices:
            limit = np.sqrt(6.0 / (n_in + n_out))
            theta[w] = rng.uniform(-limit, limit, n_in * n_out)
            theta[b] = 0.0

    def forward(self, theta: np.ndarray, x: np.ndarray, cache: bool = False):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected input of shape (N, {self.in_dim}), got {x.shape}")
        inputs, pre = [], []
        h = x
        layers = self.layers(theta)
        for i, (w, b) in enumerate(layers):
            inputs.append(h)
            z = h @ w + b
            if i < len(layers) - 1:
                pre.append(z)
                h = leaky(z)
            else:
                h = z
        if cache:
            return h, (inputs, pre)
        return h

    def backward(self, theta: np.ndarray, cache, grad_out: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients into ``grad``; return input gradient."""
        inputs, pre = cache
        layers = self.layers(theta)
        g = grad_out
        for i in range(len(layers) - 1, -1, -1):
            w, _ = layers[i]
            ws, bs, _ = self._slices[i]
            grad[ws] += (inputs[i].T @ g).ravel()
            grad[bs] += g.sum(axis=0)
            g = g @ w.T
            if i > 0:
                np.multiply(g, LEAK, out=g, where=pre[i - 1] <= 0.0)
        return g

    def hidden_preactivations(self, theta: np.ndarray, x: np.ndarray):
        _, (_, pre) = self.forward(theta, x, cache=True)
        return pre

    def lipschitz_bound(self, theta: np.ndarray) -> float:
        """Product of layer spectral norms; leaky units are 1-Lipschitz."""
        return float(np.prod([np.linalg.norm(w, 2) for w, _ in self.layers(theta)]))
