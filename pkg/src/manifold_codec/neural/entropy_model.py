"""Factorized density over latents: one learned monotone CDF per dimension.

Each dimension maps ``y -> logit`` through three monotone layers
(``1 -> H -> H -> 1``). Weights pass through a softplus so they stay
positive, and the hidden layers add a gated ``tanh`` whose gate lies in
``(-1, 1)``. The CDF is ``sigmoid(logit)``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit as sigmoid

LOG2 = np.log(2.0)
MIN_MASS = 2.0**-64


def softplus(x):
    return np.logaddexp(0.0, x)


class FactorizedEntropyModel:
    def __init__(self, dims: int, hidden: int = 8, offset: int = 0):
        self.dims = int(dims)
        self.hidden = int(hidden)
        self.offset = offset
        h, c = self.hidden, self.dims
        shapes = [
            ("m1", (c, h, 1)), ("b1", (c, h)), ("a1", (c, h)),
            ("m2", (c, h, h)), ("b2", (c, h)), ("a2", (c, h)),
            ("m3", (c, 1, h)), ("b3", (c, 1)),
        ]  # fmt: skip
        self._slices = {}
        pos = offset
        for name, shape in shapes:
            n = int(np.prod(shape))
            self._slices[name] = (slice(pos, pos + n), shape)
            pos += n
        self.size = pos - offset
        self.clamp_count = 0

    def unpack(self, theta):
        return {k: theta[s].reshape(shape) for k, (s, shape) in self._slices.items()}

    def init(self, theta: np.ndarray, rng: np.random.Generator, init_scale: float = 4.0) -> None:
        """Near-logistic density of width about ``init_scale`` around 0."""
        scale = init_scale ** (1.0 / 3.0)
        fan_in = {"m1": 1, "m2": self.hidden, "m3": self.hidden}
        for name, (s, shape) in self._slices.items():
            if name in fan_in:
                theta[s] = np.log(np.expm1(1.0 / scale / fan_in[name]))
            elif name.startswith("b"):
                theta[s] = rng.uniform(-0.5, 0.5, int(np.prod(shape)))
            else:
                theta[s] = 0.0

    def logits(self, theta, y, cache: bool = False):
        """Per-dimension logit of the CDF at ``y`` of shape ``(N, dims)``."""
        p = self.unpack(theta)
        x0 = np.asarray(y, dtype=float)
        w1 = softplus(p["m1"])[..., 0]  # (c, h)
        z1 = x0[..., None] * w1 + p["b1"]
        t1 = np.tanh(z1)
        g1 = np.tanh(p["a1"])
        x1 = z1 + g1 * t1
        w2 = softplus(p["m2"])
        z2 = np.einsum("ckh,nch->nck", w2, x1) + p["b2"]
        t2 = np.tanh(z2)
        g2 = np.tanh(p["a2"])
        x2 = z2 + g2 * t2
        w3 = softplus(p["m3"])[:, 0, :]  # (c, h)
        f = np.einsum("ch,nch->nc", w3, x2) + p["b3"][:, 0]
        if cache:
            return f, (p, x0, w1, z1, t1, g1, x1, w2, z2, t2, g2, x2, w3)
        return f

    def logits_backward(self, theta, cache, grad_f, grad):
        """Accumulate parameter gradients; return gradient w.r.t. ``y``."""
        p, x0, w1, z1, t1, g1, x1, w2, z2, t2, g2, x2, w3 = cache
        sl = self._slices
        # layer 3
        grad[sl["b3"][0]] += grad_f.sum(axis=0)
        dw3 = np.einsum("nc,nch->ch", grad_f, x2)
        grad[sl["m3"][0]] += (dw3 * sigmoid(p["m3"][:, 0, :])).ravel()
        dx2 = grad_f[..., None] * w3
        # layer 2
        grad[sl["a2"][0]] += (np.einsum("nch,nch->ch", dx2, t2) * (1.0 - g2 * g2)).ravel()
        dz2 = dx2 * (1.0 + g2 * (1.0 - t2 * t2))
        grad[sl["b2"][0]] += dz2.sum(axis=0).ravel()
        dw2 = np.einsum("nck,nch->ckh", dz2, x1)
        grad[sl["m2"][0]] += (dw2 * sigmoid(p["m2"])).ravel()
        dx1 = np.einsum("ckh,nck->nch", w2, dz2)
        # layer 1
        grad[sl["a1"][0]] += (np.einsum("nch,nch->ch", dx1, t1) * (1.0 - g1 * g1)).ravel()
        dz1 = dx1 * (1.0 + g1 * (1.0 - t1 * t1))
        grad[sl["b1"][0]] += dz1.sum(axis=0).ravel()
        dw1 = np.einsum("nch,nc->ch", dz1, x0)
        grad[sl["m1"][0]] += (dw1 * sigmoid(p["m1"][..., 0])).ravel()
        return np.einsum("nch,ch->nc", dz1, w1)

    def cdf(self, theta, y):
        return sigmoid(self.logits(theta, y))

    def bin_mass(self, theta, y):
        """Mass of the unit bin centred on each ``y``; shape ``(N, dims)``."""
        y = np.asarray(y, dtype=float)
        f = self.logits(theta, np.concatenate([y - 0.5, y + 0.5], axis=0))
        lo, hi = f[: y.shape[0]], f[y.shape[0] :]
        return _mass(lo, hi)

    def rate_bits(self, theta, y):
        """Per-sample codelength in bits, summed over dimensions.

        Bin masses below ``2**-64`` are clamped and counted in
        ``clamp_count`` rather than raising.
        """
        mass = self.bin_mass(theta, y)
        low = mass < MIN_MASS
        self.clamp_count += int(low.sum())
        return -np.log2(np.maximum(mass, MIN_MASS)).sum(axis=-1)

    def rate_and_grad(self, theta, y, grad, weight):
        """Per-sample bits and the gradient of ``sum(weight * bits)``.

        ``weight`` is a scalar or one value per sample.
        Parameter gradients go into ``grad``; the input gradient is returned.
        """
        y = np.asarray(y, dtype=float)
        n = y.shape[0]
        f, cache = self.logits(theta, np.concatenate([y - 0.5, y + 0.5], axis=0), cache=True)
        lo, hi = f[:n], f[n:]
        mass = _mass(lo, hi)
        low = mass < MIN_MASS
        self.clamp_count += int(low.sum())
        bits = -np.log2(np.maximum(mass, MIN_MASS)).sum(axis=-1)
        wcol = np.reshape(weight, (-1, 1)) if np.ndim(weight) else weight
        dmass = np.where(low, 0.0, -wcol / (np.maximum(mass, MIN_MASS) * LOG2))
        d_hi = dmass * _dsig(hi)
        d_lo = -dmass * _dsig(lo)
        gy = self.logits_backward(theta, cache, np.concatenate([d_lo, d_hi], axis=0), grad)
        return bits, gy[:n] + gy[n:]


def _dsig(x):
    return sigmoid(x) * sigmoid(-x)


def _mass(lo, hi):
    # evaluate in whichever tail keeps the difference well conditioned
    upper_tail = (lo + hi) > 0.0
    return np.where(upper_tail, sigmoid(-lo) - sigmoid(-hi), sigmoid(hi) - sigmoid(lo))
