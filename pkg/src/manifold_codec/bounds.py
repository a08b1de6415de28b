"""Closed-form cell distortions and entropy-distortion bounds.

Entropies are in bits throughout. The Lagrange multipliers used by the
dual bounds are therefore in bits per unit of distortion.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .sources import TWO_PI

ZERO_RATE_DISTORTION = {"circle": 1.0, "ramp": 1.0 / 12.0}
TOTAL_MASS = {"circle": TWO_PI, "ramp": 1.0}

_SINC_SERIES_CUTOFF = 1e-4
_DROP_FRACTION = 1e-12

DUAL_GRID_POINTS = 4096
DUAL_LAMBDA_RANGE = (2.0**-10, 2.0**20)
DUAL_TOL = 1e-10

BIUNIFORM_EPS_STEPS = 512
BIUNIFORM_K_MAX = 4096

CURVE_COLUMNS = ("distortion", "entropy_bits", "scheme", "params")


def sinc(x):
    """``sin(x)/x`` with the removable singularity filled in.

    Uses a Taylor branch near zero. Accepts scalars or arrays.
    """
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SINC_SERIES_CUTOFF
    x2 = x * x
    series = 1.0 - x2 / 6.0 + x2 * x2 / 120.0
    with np.errstate(invalid="ignore", divide="ignore"):
        direct = np.sin(x) / x
    out = np.where(small, series, direct)
    return float(out) if out.ndim == 0 else out


def _check_range(name, value, lo, hi, lo_open=True):
    arr = np.asarray(value, dtype=float)
    lo_bad = arr <= lo if lo_open else arr < lo
    if np.any(lo_bad | (arr > hi) | ~np.isfinite(arr)):
        raise ValueError(f"{name} must lie in {'(' if lo_open else '['}{lo}, {hi}], got {value}")


def circle_cell_distortion(arc_len):
    """Conditional MSE of a contiguous arc about its conditional mean."""
    _check_range("arc length", arc_len, 0.0, TWO_PI)
    s = sinc(np.asarray(arc_len, dtype=float) / 2.0)
    return 1.0 - s * s


def ramp_cell_conditional_mse(p):
    """Conditional MSE ``p(2-p)/12`` of a phase interval of probability ``p``."""
    _check_range("cell probability", p, 0.0, 1.0)
    p = np.asarray(p, dtype=float)
    out = p * (2.0 - p) / 12.0
    return float(out) if out.ndim == 0 else out


def ramp_cell_distortion(p):
    """Distortion contribution ``p^2 (2-p) / 12`` of a phase interval.

    Already weighted by the cell probability, unlike the circle version.
    """
    _check_range("cell probability", p, 0.0, 1.0)
    p = np.asarray(p, dtype=float)
    out = p * p * (2.0 - p) / 12.0
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Partition:
    """Cell masses of a contiguous-cell quantizer.

    Arc lengths summing to ``2pi`` for the circle, probabilities summing
    to 1 for the ramp.
    """

    masses: tuple
    kind: str

    def __post_init__(self):
        if self.kind not in TOTAL_MASS:
            raise ValueError(f"unknown partition kind {self.kind!r}")
        m = np.asarray(self.masses, dtype=float)
        if m.ndim != 1 or m.size == 0:
            raise ValueError("partition needs at least one cell")
        if np.any(~np.isfinite(m)) or np.any(m <= 0.0):
            raise ValueError("partition masses must be positive and finite")
        if np.any(m > self.total * (1.0 + 1e-12)):
            raise ValueError("a cell exceeds the total mass")
        if abs(math.fsum(m) - self.total) > 1e-9:
            raise ValueError(f"masses sum to {math.fsum(m)}, expected {self.total}")
        object.__setattr__(self, "masses", tuple(float(v) for v in m))

    @property
    def total(self) -> float:
        return TOTAL_MASS[self.kind]

    @property
    def probabilities(self) -> np.ndarray:
        return np.asarray(self.masses) / self.total

    @classmethod
    def uniform(cls, kind: str, k: int) -> "Partition":
        total = TOTAL_MASS[kind]
        return cls(tuple([total / k] * k), kind)

    @classmethod
    def from_probabilities(cls, kind: str, probs) -> "Partition":
        """Build from probabilities, dropping negligible cells and
        renormalizing away float round-off."""
        q = np.asarray(probs, dtype=float)
        q = q[q > _DROP_FRACTION]
        q = q / math.fsum(q)
        return cls(tuple(q * TOTAL_MASS[kind]), kind)


@dataclass
class EDPoint:
    entropy_bits: float
    distortion: float
    scheme: str = ""
    params: dict = field(default_factory=dict)
    stderr: float | None = None  # standard error of the distortion
    entropy_stderr: float | None = None

    def __post_init__(self):
        if self.entropy_bits < -1e-12 or self.distortion < -1e-12:
            raise ValueError(f"negative entropy or distortion: {self}")


@dataclass
class EDCurve:
    points: list
    kind: str  # lower_bound | upper_bound | oracle | neural

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda p: p.distortion)

    @property
    def distortions(self) -> np.ndarray:
        return np.array([p.distortion for p in self.points])

    @property
    def entropies(self) -> np.ndarray:
        return np.array([p.entropy_bits for p in self.points])

    def __len__(self):
        return len(self.points)

    def is_nonincreasing(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.diff(self.entropies) <= tol))

    def to_csv(self) -> str:
        return points_to_csv(self.points)


def _format_params(params: dict) -> str:
    return ";".join(f"{k}={_fmt(v)}" for k, v in sorted(params.items()))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def points_to_csv(points, extra_columns: tuple = ()) -> str:
    """Serialize ED points with the stable ``distortion,entropy_bits,scheme,params``
    header, optionally followed by extra columns pulled from ``params``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_COLUMNS + tuple(extra_columns))
    for p in points:
        params = {k: v for k, v in p.params.items() if k not in extra_columns}
        row = [repr(float(p.distortion)), repr(float(p.entropy_bits)), p.scheme, _format_params(params)]
        row += [_fmt(p.params.get(c, "")) for c in extra_columns]
        writer.writerow(row)
    return buf.getvalue()


def read_curve_csv(text: str, kind: str) -> EDCurve:
    rows = list(csv.DictReader(io.StringIO(text)))
    pts = []
    for r in rows:
        params = {}
        if r["params"]:
            for item in r["params"].split(";"):
                k, _, v = item.partition("=")
                params[k] = v
        pts.append(EDPoint(float(r["entropy_bits"]), float(r["distortion"]), r["scheme"], params))
    return EDCurve(pts, kind)


def entropy_bits_of(probs) -> float:
    q = np.asarray(probs, dtype=float)
    q = q[q > 0.0]
    return max(0.0, -math.fsum(q * np.log2(q)))


def partition_ed(partition: Partition) -> EDPoint:
    q = partition.probabilities
    keep = q > _DROP_FRACTION
    q = q[keep]
    masses = np.asarray(partition.masses)[keep]
    h = entropy_bits_of(q)
    if partition.kind == "circle":
        d = math.fsum(q * circle_cell_distortion(np.minimum(masses, TWO_PI)))
    else:
        d = math.fsum(np.atleast_1d(ramp_cell_distortion(np.minimum(q, 1.0))))
    return EDPoint(h, max(d, 0.0), f"{partition.kind}_partition", {"cells": len(q)})


# --- golden-section search -------------------------------------------------

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_min(f, lo: float, hi: float, tol: float = 1e-10, max_iter: int = 200):
    """Minimize a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x))``."""
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    cands = [(fc, c), (fd, d), (f(a), a), (f(b), b)]
    fx, x = min(cands)
    return x, fx


# --- dual lower bounds -----------------------------------------------------


def _circle_inner(theta, lam):
    s = sinc(theta / 2.0)
    return -np.log2(theta / TWO_PI) + lam * (1.0 - s * s)


def _ramp_inner(p, lam):
    return -np.log2(p) + lam * p * (2.0 - p) / 12.0


@lru_cache(maxsize=None)
def _inner_grid(kind: str) -> np.ndarray:
    if kind == "circle":
        return np.concatenate([np.geomspace(TWO_PI * 1e-12, TWO_PI, DUAL_GRID_POINTS - 1), [TWO_PI]])
    return np.geomspace(1e-12, 1.0, DUAL_GRID_POINTS)


def _scalar_inner(kind: str, lam: float):
    if kind == "circle":
        def f(theta):
            h = theta / 2.0
            s = 1.0 - h * h / 6.0 if h < _SINC_SERIES_CUTOFF else math.sin(h) / h
            return -math.log2(theta / TWO_PI) + lam * (1.0 - s * s)
    else:
        def f(p):
            return -math.log2(p) + lam * p * (2.0 - p) / 12.0
    return f


def inner_minimum(kind: str, lam: float) -> tuple:
    """``inf_x`` of the per-cell Lagrangian (without the ``-lam*D`` term).

    Dense log grid, then golden-section refinement in the winning bracket,
    which copes with the two competing local minima.
    """
    grid = _inner_grid(kind)
    vals = _circle_inner(grid, lam) if kind == "circle" else _ramp_inner(grid, lam)
    i = int(np.argmin(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid.size - 1)]
    x, fx = golden_section_min(_scalar_inner(kind, lam), float(lo), float(hi), tol=DUAL_TOL)
    if vals[i] < fx:
        x, fx = float(grid[i]), float(vals[i])
    return x, fx


def dual_objective(kind: str, lam: float, distortion: float) -> float:
    if lam == 0.0:
        return 0.0
    return inner_minimum(kind, lam)[1] - lam * distortion


def dual_lower_bound(kind: str, distortion: float) -> float:
    """Weak-duality lower bound on the entropy-distortion function, in bits.

    Returns 0 at and beyond the zero-rate distortion.
    """
    if kind not in ZERO_RATE_DISTORTION:
        raise ValueError(f"unknown source kind {kind!r}")
    distortion = float(distortion)
    if not math.isfinite(distortion) or distortion <= 0.0:
        raise ValueError(f"distortion must be positive, got {distortion}")
    if distortion >= ZERO_RATE_DISTORTION[kind]:
        return 0.0
    lo, hi = (math.log(v) for v in DUAL_LAMBDA_RANGE)
    _, neg = golden_section_min(lambda u: -dual_objective(kind, math.exp(u), distortion), lo, hi, tol=1e-7)
    return max(0.0, -neg)


def circle_dual_lower_bound(distortion: float) -> float:
    return dual_lower_bound("circle", distortion)


def ramp_dual_lower_bound(distortion: float) -> float:
    return dual_lower_bound("ramp", distortion)


# --- biuniform upper bound -------------------------------------------------


def lower_convex_hull(d, h):
    """Indices of the decreasing lower convex hull of points ``(d, h)``.

    Returned in increasing ``d``; the branch to the right of the minimum
    entropy is dropped so the result is nonincreasing.
    """
    d = np.asarray(d, dtype=float)
    h = np.asarray(h, dtype=float)
    order = np.lexsort((h, d))
    hull = []
    for i in order:
        while len(hull) >= 2:
            i0, i1 = hull[-2], hull[-1]
            cross = (d[i1] - d[i0]) * (h[i] - h[i0]) - (h[i1] - h[i0]) * (d[i] - d[i0])
            if cross <= 0.0:
                hull.pop()
            else:
                break
        if hull and d[hull[-1]] == d[i]:
            continue
        hull.append(i)
    # keep up to the first minimum-entropy vertex
    hvals = h[hull]
    stop = int(np.argmin(hvals)) + 1
    return [int(i) for i in hull[:stop]]


def _pareto_filter(d, h):
    """Points not dominated in (smaller d, smaller h); cheap prefilter.

    Ties in ``d`` may keep a dominated point, which the hull step removes.
    """
    order = np.argsort(d, kind="stable")
    best = np.minimum.accumulate(h[order])
    keep = np.ones(order.size, dtype=bool)
    keep[1:] = h[order][1:] < best[:-1]
    return order[keep]


def biuniform_partition(kind: str, k: int, eps: float) -> Partition:
    """One cell of probability ``eps`` plus ``k`` equal cells sharing the rest."""
    if k < 1 or not (0.0 <= eps < 1.0):
        raise ValueError(f"need k >= 1 and 0 <= eps < 1, got k={k}, eps={eps}")
    return Partition.from_probabilities(kind, [eps] + [(1.0 - eps) / k] * k)


@lru_cache(maxsize=16)
def _biuniform_points(kind: str, k_max: int, eps_steps: int):
    ks = np.arange(1, k_max + 1, dtype=float)[:, None]
    eps = (np.arange(eps_steps, dtype=float) / eps_steps)[None, :]
    big = (1.0 - eps) / ks  # probability of each of the K equal cells
    with np.errstate(divide="ignore", invalid="ignore"):
        h_small = np.where(eps > _DROP_FRACTION, -eps * np.log2(eps), 0.0)
        h = h_small - ks * big * np.log2(big)
        if kind == "circle":
            d_small = np.where(eps > _DROP_FRACTION, eps * circle_cell_distortion(np.maximum(eps, 1e-300) * TWO_PI), 0.0)
            d = d_small + ks * big * circle_cell_distortion(big * TWO_PI)
        else:
            d_small = np.where(eps > _DROP_FRACTION, ramp_cell_distortion(np.maximum(eps, 1e-300)), 0.0)
            d = d_small + ks * ramp_cell_distortion(big)
    k_col = np.broadcast_to(ks, d.shape).ravel()
    e_col = np.broadcast_to(eps, d.shape).ravel()
    d, h = d.ravel(), np.maximum(h.ravel(), 0.0)
    idx = _pareto_filter(d, h)
    hull = np.asarray(lower_convex_hull(d[idx], h[idx]))
    sel = idx[hull]
    return d[sel], h[sel], k_col[sel], e_col[sel]


def biuniform_upper_curve(kind: str, k_max: int = BIUNIFORM_K_MAX, eps_steps: int = BIUNIFORM_EPS_STEPS) -> EDCurve:
    """Lower convex hull of all (K equal cells + one epsilon cell) partitions."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    d, h, k, e = _biuniform_points(kind, int(k_max), int(eps_steps))
    pts = [
        EDPoint(float(hi), float(di), "biuniform", {"K": int(ki), "eps": float(ei)})
        for di, hi, ki, ei in zip(d, h, k, e)
    ]
    return EDCurve(pts, "upper_bound")


def interpolate_curve(curve: EDCurve, distortion: float, log_d: bool = True) -> float:
    """Curve entropy at ``distortion``.

    Linear in ``(log D, H)`` by default. Beyond the zero-rate end the curve
    is 0; below its smallest distortion it is undefined.
    """
    d = curve.distortions
    h = curve.entropies
    if distortion < d[0] * (1.0 - 1e-12):
        raise ValueError(f"distortion {distortion} below curve range starting at {d[0]}")
    if distortion >= d[-1]:
        if h[-1] <= 1e-12:
            return 0.0
        raise ValueError(f"distortion {distortion} above curve range ending at {d[-1]}")
    x = np.log(d) if log_d else d
    xd = math.log(distortion) if log_d else distortion
    return float(np.interp(xd, x, h))


def upper_at(kind: str, distortion: float, curve: EDCurve | None = None) -> float:
    """Biuniform upper bound at one distortion, exact along hull segments."""
    if distortion >= ZERO_RATE_DISTORTION[kind]:
        return 0.0
    curve = curve or biuniform_upper_curve(kind)
    return interpolate_curve(curve, distortion, log_d=False)


def default_d_grid(kind: str, n: int = 200) -> np.ndarray:
    """Log-spaced distortion grid up to (and including) the zero-rate end."""
    lo = 1e-6 if kind == "circle" else 5e-5
    return np.geomspace(lo, ZERO_RATE_DISTORTION[kind], n)


def validate_d_grid(kind: str, d_grid) -> np.ndarray:
    d_grid = np.asarray(d_grid, dtype=float)
    if d_grid.ndim != 1 or d_grid.size == 0:
        raise ValueError("distortion grid must be a nonempty 1-D list")
    if np.any(~np.isfinite(d_grid)) or np.any(d_grid <= 0.0):
        raise ValueError("distortion grid values must be positive and finite")
    return d_grid


def ed_curves(kind: str, d_grid=None, k_max: int = BIUNIFORM_K_MAX, eps_steps: int = BIUNIFORM_EPS_STEPS) -> dict:
    """Lower (dual) and upper (biuniform) curves on a distortion grid."""
    d_grid = validate_d_grid(kind, default_d_grid(kind) if d_grid is None else d_grid)
    d0 = ZERO_RATE_DISTORTION[kind]
    # the hull is only needed below the zero-rate distortion
    upper_hull = biuniform_upper_curve(kind, k_max, eps_steps) if d_grid.min() < d0 else None
    reach = upper_hull.distortions[0] if upper_hull else d0
    if d_grid.min() < reach * (1.0 - 1e-12):
        raise ValueError(
            f"distortion {d_grid.min():.6g} is below the smallest distortion {reach:.6g} reachable "
            f"with k_max={k_max}; raise k_max or the smallest grid distortion"
        )
    lower_pts, upper_pts = [], []
    for dv in d_grid:
        up = upper_at(kind, float(dv), upper_hull)
        lo = min(dual_lower_bound(kind, float(dv)), up)
        lower_pts.append(EDPoint(lo, float(dv), "lower_bound", {"source": kind}))
        upper_pts.append(EDPoint(up, float(dv), "biuniform", {"source": kind}))
    return {"lower": EDCurve(lower_pts, "lower_bound"), "upper": EDCurve(upper_pts, "upper_bound")}
