"""Compressor models with hand-set weights.

These exercise the neural evaluation path against known answers: the
all-zero model (one symbol, source variance) and a two-dimensional
latent model that reproduces the hemisphere-product quantizer exactly.

Both constructions rely on one identity of the leaky rectifier ``L``:
``L(p + 1) - L(p)`` equals 1 for ``p >= 0`` and ``LEAK`` for ``p <= -1``,
so an affine rescaling of it is a unit step that is exact away from a
transition band of width one.
"""

from __future__ import annotations

import math

import numpy as np

from .. import bounds
from ..sources import make_stream
from .mlp import LEAK
from .model import HIDDEN, CompressorModel

# slope of the analysis steps; the transition band is 1/STEEP wide in z
STEEP = 1e8
_SHIFT = 2.0  # keeps pass-through units in the identity branch


def zero_model(kind: str, d_s: int = 64, d_c: int = 1, hidden: int = HIDDEN) -> CompressorModel:
    """All transform weights and biases zero, so every input maps to
    symbol 0 and is reconstructed at the source mean (the origin)."""
    model = CompressorModel(kind, d_s, d_c, hidden)
    model.initialize(make_stream(0, "init"))
    model.theta[: model.analysis.size + model.synthesis.size] = 0.0
    return model


def _set(model_mlp, theta, layer, w=None, b=None):
    W, B = model_mlp.layers(theta)[layer]
    if w is not None:
        W[...] = w
    if b is not None:
        B[...] = b


def hemisphere_model(k: int, hidden: int = HIDDEN) -> CompressorModel:
    """Circle model with a 2-D latent equal to the hemisphere-product code.

    The analysis transform outputs ``(bit, index)`` where ``bit`` is
    ``[sin theta >= 0]`` and ``index`` counts the companded ``cos`` edges
    below ``cos theta``; the synthesis transform returns the matching arc
    centroid. Together they act as the uniform ``2K``-arc quantizer.
    """
    if k < 1 or 2 * k > hidden:
        raise ValueError(f"K={k} does not fit in {hidden} hidden units")
    model = CompressorModel("circle", 64, 2, hidden)
    model.initialize(make_stream(0, "init"))
    th = model.theta
    th[: model.analysis.size + model.synthesis.size] = 0.0
    scale = 1.0 - LEAK

    # analysis, layer 1: step pairs on z2 (bit) and on z1 at each interior edge
    edges = np.cos((k - np.arange(1, k)) * math.pi / k)  # ascending
    w1 = np.zeros((2, hidden))
    b1 = np.zeros(hidden)
    w1[1, 0:2] = STEEP
    b1[0:2] = (1.0, 0.0)
    for j, e in enumerate(edges):
        c = 2 + 2 * j
        w1[0, c : c + 2] = STEEP
        b1[c : c + 2] = (1.0 - STEEP * e, -STEEP * e)
    _set(model.analysis, th, 0, w1, b1)

    # layer 2: sum the steps, shifted positive so the rectifier is inert
    w2 = np.zeros((hidden, hidden))
    b2 = np.zeros(hidden)
    w2[0, 0], w2[1, 0] = 1.0 / scale, -1.0 / scale
    b2[0] = -LEAK / scale + _SHIFT
    for j in range(k - 1):
        c = 2 + 2 * j
        w2[c, 1], w2[c + 1, 1] = 1.0 / scale, -1.0 / scale
    b2[1] = -(k - 1) * LEAK / scale + _SHIFT
    _set(model.analysis, th, 1, w2, b2)
    w3 = np.zeros((hidden, 2))
    w3[0, 0] = w3[1, 1] = 1.0
    _set(model.analysis, th, 2, w3, np.full(2, -_SHIFT))

    # synthesis targets at each index: x = -s cos(a_i), |y| = s sin(a_i)
    a = (np.arange(k) + 0.5) * math.pi / k
    s = bounds.sinc(math.pi / (2 * k))
    xs, hs = -s * np.cos(a), s * np.sin(a)

    # layer 1: units L(i - j) for j < K, plus the bit passed through
    v1 = np.zeros((2, hidden))
    c1 = np.zeros(hidden)
    v1[1, 0:k] = 1.0
    c1[0:k] = -np.arange(k)
    v1[0, k] = 1.0
    c1[k] = _SHIFT

    # layer 2: q_x = x(i) + S, q_h = h(i) + S, q_b = b + S, and the selector
    # r = h(i) + 2b - 2, which is >= 0 only on the upper hemisphere
    def interp(values):
        # weights on the L(i - j) units and a constant, exact at integers,
        # via [i >= m] = (L(i - m + 1) - L(i - m) - LEAK) / scale
        w = np.zeros(hidden)
        const = values[0]
        for m in range(1, k):
            d = (values[m] - values[m - 1]) / scale
            w[m - 1] += d
            w[m] -= d
            const -= d * LEAK
        return w, const

    v2 = np.zeros((hidden, hidden))
    c2 = np.zeros(hidden)
    wx, cx = interp(xs)
    wh, ch = interp(hs)
    v2[:, 0], c2[0] = wx, cx + _SHIFT
    v2[:, 1], c2[1] = wh, ch + _SHIFT
    v2[k, 2], c2[2] = 1.0, 0.0
    v2[:, 3] = wh
    v2[k, 3] = 2.0
    c2[3] = ch - 2.0 * _SHIFT - 2.0
    _set(model.synthesis, th, 1, v2, c2)
    _set(model.synthesis, th, 0, v1, c1)

    # output: x = q_x - S;  y = 2 relu(r) - h, relu(r) = (L(r) - LEAK r) / scale
    v3 = np.zeros((hidden, 2))
    c3 = np.zeros(2)
    v3[0, 0], c3[0] = 1.0, -_SHIFT
    # r = q_h + 2 q_b - 3S - 2 in terms of layer-2 outputs
    v3[3, 1] = 2.0 / scale
    v3[1, 1] = -2.0 * LEAK / scale - 1.0
    v3[2, 1] = -4.0 * LEAK / scale
    c3[1] = 2.0 * LEAK / scale * (3.0 * _SHIFT + 2.0) + _SHIFT
    _set(model.synthesis, th, 2, v3, c3)
    return model
