"""Differentiable stand-ins for rounding used during training."""

from __future__ import annotations

import numpy as np

PHASES = ("dither", "soft", "hard")


def soft_round(y, tau: float):
    """``floor(y) + 1/2 + tanh(tau r) / (2 tanh(tau/2))`` with
    ``r = y - floor(y) - 1/2``.

    Smooth, strictly increasing, fixes the integers and commutes with
    integer shifts. Tends to ``round`` as ``tau`` grows.
    """
    if tau <= 0.0:
        raise ValueError(f"temperature must be positive, got {tau}")
    y = np.asarray(y, dtype=float)
    fl = np.floor(y)
    r = y - fl - 0.5
    return fl + 0.5 + np.tanh(tau * r) / (2.0 * np.tanh(tau / 2.0))


def soft_round_grad(y, tau: float):
    y = np.asarray(y, dtype=float)
    r = y - np.floor(y) - 0.5
    t = np.tanh(tau * r)
    return tau * (1.0 - t * t) / (2.0 * np.tanh(tau / 2.0))


def quant_proxy(y, phase: str, u=None, tau: float | None = None):
    """Return ``(y_hat, dy_hat/dy)`` for one annealing phase.

    ``dither`` adds the uniform noise ``u``; ``soft`` applies
    :func:`soft_round`; ``hard`` rounds with a pass-through derivative.
    """
    y = np.asarray(y, dtype=float)
    if phase == "dither":
        if u is None:
            raise ValueError("dither phase needs noise u")
        return y + u, np.ones_like(y)
    if phase == "soft":
        if tau is None or tau <= 0.0:
            raise ValueError(f"soft phase needs a positive temperature, got {tau}")
        return soft_round(y, tau), soft_round_grad(y, tau)
    if phase == "hard":
        return np.rint(y), np.ones_like(y)
    raise ValueError(f"unknown proxy phase {phase!r}")


def training_proxy(y, phase: str, u=None, tau: float | None = None):
    """Rate point ``z`` and decoder input ``y_hat`` for one training phase.

    Returns ``(z, dz_dy, y_hat, dyhat_dz)``. The soft phase composes
    ``z = s(y) + u`` and ``y_hat = s(z)``, so it starts at dithering
    (``s`` is close to the identity for small ``tau``) and ends at hard
    rounding (``s -> round``) without a jump in either term.
    """
    if phase == "soft":
        a, da = quant_proxy(y, "soft", tau=tau)
        if u is None:
            raise ValueError("soft phase needs noise u")
        z = a + u
        y_hat, dy = quant_proxy(z, "soft", tau=tau)
        return z, da, y_hat, dy
    z, dz = quant_proxy(y, phase, u=u, tau=tau)
    return z, dz, z, np.ones_like(z)
