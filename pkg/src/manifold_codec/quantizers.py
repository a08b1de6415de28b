"""Contiguous-cell quantizers with conditional-mean decoders.

Cells are half-open, ``[b_i, b_{i+1})``, so a boundary point belongs to the
cell whose left edge it sits on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import bounds
from .bounds import EDPoint, Partition
from .evaluation import MeanAccumulator, entropy_of_symbols
from .sources import (
    DEFAULT_RAMP_DIM,
    TWO_PI,
    CirclePoint,
    RampSignal,
    circle_batch,
    make_stream,
    phases_of,
    ramp_batch,
    sample_times,
    squared_error,
)

MIN_MC_SAMPLES = 1000
_BLOCK = 1 << 17


def _check_boundaries(b: np.ndarray, start: float, span: float) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.ndim != 1 or b.size < 2:
        raise ValueError("need at least two boundaries")
    if np.any(np.diff(b) <= 0.0):
        raise ValueError("boundaries must be strictly increasing")
    if abs((b[-1] - b[0]) - span) > 1e-9 or (start is not None and b[0] != start):
        raise ValueError("boundaries do not cover the full range")
    return b


@dataclass(frozen=True)
class ArcQuantizer:
    boundaries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "boundaries", _check_boundaries(self.boundaries, None, TWO_PI))

    @classmethod
    def from_partition(cls, partition: Partition, offset: float = 0.0) -> "ArcQuantizer":
        if partition.kind != "circle":
            raise ValueError("arc quantizers need a circle partition")
        b = offset + np.concatenate([[0.0], np.cumsum(partition.masses)])
        b[-1] = offset + TWO_PI
        return cls(b)

    @classmethod
    def uniform(cls, k: int, offset: float = 0.0) -> "ArcQuantizer":
        return cls.from_partition(Partition.uniform("circle", k), offset)

    @property
    def size(self) -> int:
        return self.boundaries.size - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.boundaries)

    def partition(self) -> Partition:
        return Partition(tuple(self.lengths * (TWO_PI / self.lengths.sum())), "circle")

    def encode_angles(self, theta) -> np.ndarray:
        rel = np.mod(np.asarray(theta, dtype=float) - self.boundaries[0], TWO_PI)
        idx = np.searchsorted(self.boundaries - self.boundaries[0], rel, side="right") - 1
        return np.clip(idx, 0, self.size - 1)

    def encode_points(self, z) -> np.ndarray:
        z = np.atleast_2d(z)
        return self.encode_angles(np.arctan2(z[:, 1], z[:, 0]))

    def centroids(self) -> np.ndarray:
        mid = 0.5 * (self.boundaries[:-1] + self.boundaries[1:])
        norm = bounds.sinc(self.lengths / 2.0)
        return norm[:, None] * circle_batch(mid)

    def decode(self, index) -> np.ndarray:
        index = np.asarray(index)
        if np.any((index < 0) | (index >= self.size)):
            raise IndexError(f"cell index out of range for {self.size} arcs")
        return self.centroids()[index]

    def to_text(self) -> str:
        return _quantizer_text("arc", self.boundaries)


def arc_encode(q: ArcQuantizer, z: CirclePoint) -> int:
    return int(q.encode_angles(z.theta))


def arc_decode(q: ArcQuantizer, index: int) -> np.ndarray:
    return q.decode(int(index))


@dataclass(frozen=True)
class IntervalQuantizer:
    boundaries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "boundaries", _check_boundaries(self.boundaries, 0.0, 1.0))

    @classmethod
    def from_partition(cls, partition: Partition) -> "IntervalQuantizer":
        if partition.kind != "ramp":
            raise ValueError("interval quantizers need a ramp partition")
        b = np.concatenate([[0.0], np.cumsum(partition.masses)])
        b[-1] = 1.0
        return cls(b)

    @classmethod
    def uniform(cls, k: int) -> "IntervalQuantizer":
        return cls.from_partition(Partition.uniform("ramp", k))

    @property
    def size(self) -> int:
        return self.boundaries.size - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.boundaries)

    def partition(self) -> Partition:
        return Partition(tuple(self.lengths / self.lengths.sum()), "ramp")

    def encode_phases(self, v) -> np.ndarray:
        idx = np.searchsorted(self.boundaries, np.asarray(v, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.size - 1)

    def encode_signals(self, samples) -> np.ndarray:
        return self.encode_phases(phases_of(samples))

    def cell(self, index: int) -> tuple[float, float]:
        if not 0 <= index < self.size:
            raise IndexError(f"cell index {index} out of range for {self.size} cells")
        return float(self.boundaries[index]), float(self.boundaries[index + 1])

    def decode(self, index, t) -> np.ndarray:
        """Conditional mean ``E[J_t | V in cell]`` at times ``t``.

        ``index`` may be an array, giving one row per index.
        """
        index = np.asarray(index)
        if np.any((index < 0) | (index >= self.size)):
            raise IndexError(f"cell index out of range for {self.size} cells")
        a = self.boundaries[index][..., None]
        b = self.boundaries[index + 1][..., None]
        return conditional_ramp_mean(a, b, np.asarray(t, dtype=float))

    def to_text(self) -> str:
        return _quantizer_text("interval", self.boundaries)


def conditional_ramp_mean(a, b, t):
    """``t + (a+b)/2 - |[a,b) n [1-t,1]| / (b-a) - 1/2``."""
    overlap = np.clip(np.minimum(b, 1.0) - np.maximum(a, 1.0 - t), 0.0, None)
    return t + 0.5 * (a + b) - overlap / (b - a) - 0.5


def interval_encode(q: IntervalQuantizer, signal: RampSignal) -> int:
    return int(q.encode_signals(signal.samples[None, :])[0])


def interval_decode(q: IntervalQuantizer, index: int, t_grid=None) -> np.ndarray:
    if t_grid is None:
        t_grid = sample_times(DEFAULT_RAMP_DIM)
    return q.decode(int(index), t_grid)


_GL = np.array([-1.0, 1.0]) / math.sqrt(3.0)


def ramp_integrated_sq_error(v, a, b) -> np.ndarray:
    """Exact ``int_0^1 (J_t - E[J_t | V in [a,b)])^2 dt`` for phases ``v``.

    The error is linear between the kinks at ``1-b``, ``1-v``, ``1-a``, so
    two-point Gauss-Legendre on each piece integrates its square exactly.
    """
    v, a, b = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (v, a, b)))
    knots = np.stack([np.zeros_like(v), 1.0 - b, 1.0 - v, 1.0 - a, np.ones_like(v)], axis=-1)
    knots = np.sort(np.clip(knots, 0.0, 1.0), axis=-1)
    lo, hi = knots[..., :-1], knots[..., 1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    total = np.zeros(v.shape)
    for g in _GL:
        t = mid + half * g
        j = np.mod(t + v[..., None], 1.0) - 0.5
        y = conditional_ramp_mean(a[..., None], b[..., None], t)
        total += ((j - y) ** 2 * half).sum(axis=-1)
    return total


@dataclass(frozen=True)
class HemisphereProductQuantizer:
    """One bit for the sign of ``sin theta`` times a ``K``-level companded
    quantizer of ``cos theta``.

    The ``cos`` bins have edges ``cos(j pi / K)``, indexed in increasing
    ``cos`` order, so every (bit, index) pair is an arc of length ``pi/K``.
    """

    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("K must be >= 1")

    @property
    def cos_edges(self) -> np.ndarray:
        edges = np.cos((self.k - np.arange(self.k + 1)) * math.pi / self.k)
        edges[0], edges[-1] = -1.0, 1.0
        return edges

    def encode_points(self, z) -> np.ndarray:
        z = np.atleast_2d(z)
        bit = (z[:, 1] >= 0.0).astype(np.int64)
        idx = np.searchsorted(self.cos_edges, z[:, 0], side="right") - 1
        return np.stack([bit, np.clip(idx, 0, self.k - 1)], axis=-1)

    def arc(self, bit: int, index: int) -> tuple[float, float]:
        """The arc ``[lo, hi)`` (up to endpoint conventions) of a code pair."""
        step = math.pi / self.k
        if bit:
            return (self.k - index - 1) * step, (self.k - index) * step
        return math.pi + index * step, math.pi + (index + 1) * step

    def decode(self, codes) -> np.ndarray:
        codes = np.atleast_2d(codes)
        step = math.pi / self.k
        bit, idx = codes[:, 0], codes[:, 1]
        mid = np.where(bit == 1, (self.k - idx - 0.5) * step, math.pi + (idx + 0.5) * step)
        return bounds.sinc(step / 2.0) * circle_batch(mid)

    def equivalent_arc_quantizer(self) -> ArcQuantizer:
        return ArcQuantizer.uniform(2 * self.k)

    def partition(self) -> Partition:
        return Partition.uniform("circle", 2 * self.k)


def hemisphere_product_encode(k: int, z: CirclePoint) -> tuple[int, int]:
    bit, idx = HemisphereProductQuantizer(k).encode_points(z.z)[0]
    return int(bit), int(idx)


def _quantizer_text(kind: str, boundaries: np.ndarray) -> str:
    lines = [f"kind {kind}", f"K {boundaries.size - 1}"]
    lines.append("boundaries " + " ".join(f"{b:.17g}" for b in boundaries))
    return "\n".join(lines) + "\n"


def quantizer_from_text(text: str):
    fields = {}
    for line in text.strip().splitlines():
        key, _, rest = line.strip().partition(" ")
        fields[key] = rest.strip()
    try:
        kind, k = fields["kind"], int(fields["K"])
        b = np.array([float(x) for x in fields["boundaries"].split()])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"malformed quantizer text: {exc}") from exc
    if b.size != k + 1:
        raise ValueError(f"expected {k + 1} boundaries, got {b.size}")
    if kind == "arc":
        return ArcQuantizer(b)
    if kind == "interval":
        return IntervalQuantizer(b)
    raise ValueError(f"unknown quantizer kind {kind!r}")


def _source_kind(quantizer) -> str:
    if isinstance(quantizer, (ArcQuantizer, HemisphereProductQuantizer)):
        return "circle"
    if isinstance(quantizer, IntervalQuantizer):
        return "ramp"
    raise TypeError(f"not a quantizer: {quantizer!r}")


def oracle_ed(quantizer, mode: str = "exact", n: int = 10**6, seed: int = 0, ramp_dim: int | None = None) -> EDPoint:
    """Entropy and distortion of an oracle quantizer.

    ``exact`` evaluates the closed forms from the cell masses.
    ``monte_carlo`` draws ``n`` source samples, encodes and decodes them.
    Ramp distortion is the exact time integral per sample unless
    ``ramp_dim`` selects the discretized mean-over-samples MSE.
    """
    kind = _source_kind(quantizer)
    scheme = type(quantizer).__name__
    if mode == "exact":
        pt = bounds.partition_ed(quantizer.partition())
        pt.scheme = scheme
        pt.params = {"mode": "exact", "cells": quantizer.partition().probabilities.size}
        return pt
    if mode != "monte_carlo":
        raise ValueError(f"unknown mode {mode!r}")
    if n < MIN_MC_SAMPLES:
        raise ValueError(f"monte_carlo mode needs N >= {MIN_MC_SAMPLES}, got {n}")
    rng = make_stream(seed, "eval")
    acc = MeanAccumulator()
    codes = []
    done = 0
    while done < n:
        m = min(_BLOCK, n - done)
        if kind == "circle":
            z = circle_batch(rng.uniform(0.0, TWO_PI, m))
            c = quantizer.encode_points(z)
            acc.add(squared_error("circle", z, quantizer.decode(c)))
        else:
            v = rng.uniform(0.0, 1.0, m)
            if ramp_dim is None:
                c = quantizer.encode_phases(v)
                acc.add(ramp_integrated_sq_error(v, quantizer.boundaries[c], quantizer.boundaries[c + 1]))
            else:
                x = ramp_batch(v, ramp_dim)
                c = quantizer.encode_signals(x)
                acc.add(squared_error("ramp", x, quantizer.decode(c, sample_times(ramp_dim))))
        codes.append(c)
        done += m
    h, h_se = entropy_of_symbols(np.concatenate(codes))
    d, d_se = acc.result()
    return EDPoint(h, d, scheme, {"mode": "monte_carlo", "N": n, "seed": seed}, stderr=d_se, entropy_stderr=h_se)
