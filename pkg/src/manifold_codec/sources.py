"""Circle and ramp sources.

The circle is ``Z = (cos theta, sin theta)`` with ``theta ~ Unif[0, 2pi)``.
The ramp is the random cyclic shift ``J_t = ((t + V) mod 1) - 1/2`` with
``V ~ Unif[0, 1)``, discretized at midpoints ``t_k = (k + 1/2) / d_s``.

Single-point helpers return small dataclasses; the ``*_batch`` functions
are what the Monte Carlo and training code actually use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi
DEFAULT_RAMP_DIM = 64

# purpose tags for independent random streams
_PURPOSES = {"train": 0, "dither": 1, "eval": 2, "init": 3, "dataset": 4, "probe": 5, "misc": 6}


def make_stream(seed: int, purpose: str = "misc") -> np.random.Generator:
    """Counter-based generator for one (seed, purpose) pair.

    Streams for different purposes never overlap, so e.g. changing the
    evaluation sample count does not perturb the training data.
    """
    if purpose not in _PURPOSES:
        raise ValueError(f"unknown stream purpose {purpose!r}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_PURPOSES[purpose],))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class CirclePoint:
    theta: float
    z: np.ndarray


@dataclass(frozen=True)
class RampSignal:
    phase: float
    samples: np.ndarray
    sample_times: np.ndarray

    @property
    def dim(self) -> int:
        return self.samples.shape[0]


def circle_from_angle(theta: float) -> CirclePoint:
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta}")
    theta = theta % TWO_PI
    return CirclePoint(theta, np.array([math.cos(theta), math.sin(theta)]))


def circle_batch(theta: np.ndarray) -> np.ndarray:
    """Ambient points, shape ``(N, 2)``, for an array of angles."""
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def sample_circle_angles(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.uniform(0.0, TWO_PI, size=n)


def sample_circle(rng: np.random.Generator) -> CirclePoint:
    return circle_from_angle(rng.uniform(0.0, TWO_PI))


def sample_times(d_s: int) -> np.ndarray:
    if d_s < 1:
        raise ValueError(f"d_s must be >= 1, got {d_s}")
    return (np.arange(d_s) + 0.5) / d_s


def ramp_batch(phase: np.ndarray, d_s: int = DEFAULT_RAMP_DIM) -> np.ndarray:
    """Discretized ramp realizations, shape ``(N, d_s)``."""
    t = sample_times(d_s)
    phase = np.asarray(phase, dtype=float)
    return np.mod(t[None, :] + phase[:, None], 1.0) - 0.5


def ramp_from_phase(v: float, d_s: int = DEFAULT_RAMP_DIM) -> RampSignal:
    v = float(v)
    if not (0.0 <= v < 1.0):
        raise ValueError(f"phase must lie in [0, 1), got {v}")
    t = sample_times(d_s)
    return RampSignal(v, np.mod(t + v, 1.0) - 0.5, t)


def sample_ramp_phases(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=n)


def sample_ramp(rng: np.random.Generator, d_s: int = DEFAULT_RAMP_DIM) -> RampSignal:
    return ramp_from_phase(rng.uniform(0.0, 1.0), d_s)


def phases_of(samples: np.ndarray) -> np.ndarray:
    """Invert the ramp map at the first sample time, row-wise."""
    samples = np.atleast_2d(samples)
    t0 = 0.5 / samples.shape[1]
    v = np.mod(samples[:, 0] + 0.5 - t0, 1.0)
    # mod can round a tiny negative up to exactly 1.0
    return np.where(v >= 1.0, 0.0, v)


def phase_of(signal: RampSignal) -> float:
    return float(phases_of(signal.samples[None, :])[0])


def ramp_discrete_energy(v: float, d_s: int) -> float:
    """Exact ``mean(samples**2)`` of the midpoint-sampled ramp at phase ``v``.

    The wrapped sample positions are ``(j + a) / d_s`` with
    ``a = frac(d_s * v + 1/2)``, which gives
    ``1/12 - 1/(12 d_s^2) + ((a - 1/2) / d_s)^2``.
    """
    a = math.fmod(d_s * v + 0.5, 1.0)
    return 1.0 / 12.0 - 1.0 / (12.0 * d_s**2) + ((a - 0.5) / d_s) ** 2


def ramp_cell_moments(phase, d_s: int = DEFAULT_RAMP_DIM):
    """Exact averages of ``J_t`` and ``J_t**2`` over each sampling cell
    ``[k/d_s, (k+1)/d_s)``; both of shape ``(N, d_s)``.

    ``J_t`` has slope 1 with one downward jump at ``t = 1 - v``, so each
    cell splits into at most two linear pieces.
    """
    v = np.asarray(phase, dtype=float)[:, None]
    lo = np.arange(d_s)[None, :] / d_s
    hi = (np.arange(d_s)[None, :] + 1) / d_s
    mid = np.clip(1.0 - v, lo, hi)
    s1 = np.zeros((v.shape[0], d_s))
    s2 = np.zeros_like(s1)
    for a, b, c in ((lo, mid, v - 0.5), (mid, hi, v - 1.5)):
        pa, pb = a + c, b + c
        pa2, pb2 = pa * pa, pb * pb
        s1 += (pb2 - pa2) / 2.0
        s2 += (pb2 * pb - pa2 * pa) / 3.0
    return s1 * d_s, s2 * d_s


def ramp_hold_error(phase, x_hat) -> np.ndarray:
    """Continuous-time squared error ``int_0^1 (J_t - x_hat(t))^2 dt`` when
    ``x_hat`` is held constant over each sampling cell.

    Unlike the sample MSE this is a distortion of the ramp process itself,
    so no encoder can beat the ramp's entropy-distortion function on it.
    Equals ``mean((x_hat - cell_mean)**2)`` plus a within-cell floor that
    depends on the phase only.
    """
    x_hat = np.atleast_2d(np.asarray(x_hat, dtype=float))
    m1, m2 = ramp_cell_moments(phase, x_hat.shape[1])
    return ((x_hat - m1) ** 2).mean(axis=-1) + (m2 - m1 * m1).mean(axis=-1)


def sample_source(kind: str, rng: np.random.Generator, n: int, d_s: int = DEFAULT_RAMP_DIM):
    """Draw ``n`` ambient samples and their latent parameters.

    Returns ``(x, latent)``: ``x`` has shape ``(n, 2)`` for the circle and
    ``(n, d_s)`` for the ramp; ``latent`` is the angle or the phase.
    """
    if kind == "circle":
        theta = sample_circle_angles(rng, n)
        return circle_batch(theta), theta
    if kind == "ramp":
        v = sample_ramp_phases(rng, n)
        return ramp_batch(v, d_s), v
    raise ValueError(f"unknown source kind {kind!r}")


def source_dim(kind: str, d_s: int = DEFAULT_RAMP_DIM) -> int:
    if kind == "circle":
        return 2
    if kind == "ramp":
        return d_s
    raise ValueError(f"unknown source kind {kind!r}")


def squared_error(kind: str, x: np.ndarray, x_hat: np.ndarray) -> np.ndarray:
    """Per-sample squared error: summed over circle coordinates, averaged
    over ramp samples so it approximates the integral over ``t``."""
    diff2 = (np.asarray(x) - np.asarray(x_hat)) ** 2
    if kind == "circle":
        return diff2.sum(axis=-1)
    if kind == "ramp":
        return diff2.mean(axis=-1)
    raise ValueError(f"unknown source kind {kind!r}")
