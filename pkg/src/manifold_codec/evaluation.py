"""Monte Carlo entropy/MSE estimates and gaps to the analytic curves."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import bounds
from .bounds import EDCurve, EDPoint, ZERO_RATE_DISTORTION
from .sources import squared_error

INTERP_TOL_BITS = 0.02
CONVERSE_SIGMAS = 4.0


class ConverseViolation(RuntimeError):
    """A measured point lies below the dual lower bound beyond tolerance."""


@dataclass
class SymbolHistogram:
    counts: Counter = field(default_factory=Counter)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @classmethod
    def from_symbols(cls, symbols) -> "SymbolHistogram":
        """Count symbols; rows of a 2-D array are treated as tuples."""
        sym = np.asarray(symbols)
        if sym.ndim == 1:
            vals, cnt = np.unique(sym, return_counts=True)
            keys = [v.item() for v in vals]
        else:
            vals, cnt = np.unique(sym.reshape(sym.shape[0], -1), axis=0, return_counts=True)
            keys = [tuple(v.tolist()) for v in vals]
        return cls(Counter(dict(zip(keys, (int(c) for c in cnt)))))

    def merge(self, other: "SymbolHistogram") -> "SymbolHistogram":
        return SymbolHistogram(self.counts + other.counts)

    def probabilities(self) -> np.ndarray:
        n = self.total
        return np.array(sorted(self.counts.values()), dtype=float) / n


def empirical_entropy(h: SymbolHistogram) -> float:
    """Plug-in entropy in bits.

    Biased low by roughly ``(K - 1) / (2 N ln 2)`` for K observed symbols
    (Miller-Madow); no correction is applied.
    """
    if h.total < 1:
        raise ValueError("empty histogram")
    return bounds.entropy_bits_of(h.probabilities())


def entropy_stderr(h: SymbolHistogram) -> float:
    """Delta-method standard error of the plug-in entropy."""
    n = h.total
    if n < 2:
        return 0.0
    p = h.probabilities()
    info = -np.log2(p)
    mean = math.fsum(p * info)
    var = max(math.fsum(p * info * info) - mean * mean, 0.0)
    return math.sqrt(var / n)


def entropy_of_symbols(symbols) -> tuple[float, float]:
    h = SymbolHistogram.from_symbols(symbols)
    return empirical_entropy(h), entropy_stderr(h)


class MeanAccumulator:
    """Streaming mean and standard error with compensated block sums.

    Blocks may arrive in any order; totals are order independent up to
    ``math.fsum`` exactness.
    """

    def __init__(self):
        self._sums = []
        self._sq = []
        self.n = 0

    def add(self, values) -> None:
        v = np.asarray(values, dtype=float).ravel()
        self._sums.append(math.fsum(v))
        self._sq.append(math.fsum(v * v))
        self.n += v.size

    def result(self) -> tuple[float, float]:
        if self.n < 2:
            raise ValueError("need at least 2 values for a standard error")
        mean = math.fsum(self._sums) / self.n
        var = max(math.fsum(self._sq) / self.n - mean * mean, 0.0) * self.n / (self.n - 1)
        return mean, math.sqrt(var / self.n)


def empirical_mse(x, x_hat, kind: str) -> tuple[float, float]:
    """Mean squared error and its standard error.

    The norm follows the source: sum over circle coordinates, mean over
    ramp samples.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 2:
        raise ValueError("need at least 2 pairs")
    acc = MeanAccumulator()
    acc.add(squared_error(kind, x, x_hat))
    return acc.result()


@lru_cache(maxsize=4)
def default_curves(kind: str) -> dict:
    return bounds.ed_curves(kind)


def _curve_slope(curve: EDCurve, distortion: float) -> float:
    """|dH/dD| of a curve near ``distortion`` from its log-D samples."""
    d, h = curve.distortions, curve.entropies
    if distortion >= d[-1]:
        return 0.0
    i = int(np.clip(np.searchsorted(d, distortion) - 1, 0, d.size - 2))
    dh_dlogd = (h[i + 1] - h[i]) / math.log(d[i + 1] / d[i])
    return abs(dh_dlogd) / distortion


def gap_report(point: EDPoint, kind: str, curves: dict | None = None, check: bool = True) -> dict:
    """Entropy gap of ``point`` above the lower curve and versus the upper curve.

    Curves are interpolated linearly in ``(log D, H)``. A point below the
    lower curve by more than the interpolation tolerance plus four standard
    errors raises :class:`ConverseViolation` when ``check`` is set.
    """
    curves = curves or default_curves(kind)
    lower, upper = curves["lower"], curves["upper"]
    d = float(point.distortion)
    if d <= 0.0:
        raise ValueError("gap undefined at zero distortion")
    if d >= ZERO_RATE_DISTORTION[kind]:
        lo_h = up_h = 0.0
    else:
        lo_h = bounds.interpolate_curve(lower, d)
        up_h = bounds.interpolate_curve(upper, d)
    vs_lower = point.entropy_bits - lo_h
    vs_upper = point.entropy_bits - up_h
    tol = converse_tolerance(point, lower)
    report = {"vs_lower": vs_lower, "vs_upper": vs_upper, "tolerance": tol}
    if check and vs_lower < -tol:
        raise ConverseViolation(
            f"{point.scheme} point (H={point.entropy_bits:.6g}, D={d:.6g}) lies {-vs_lower:.4g} bits "
            f"below the {kind} lower bound (tolerance {tol:.4g})"
        )
    return report


def converse_tolerance(point: EDPoint, lower: EDCurve) -> float:
    sig = (point.entropy_stderr or 0.0) + _curve_slope(lower, point.distortion) * (point.stderr or 0.0)
    return INTERP_TOL_BITS + CONVERSE_SIGMAS * sig
