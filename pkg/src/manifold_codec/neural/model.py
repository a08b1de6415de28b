"""Compressor = analysis MLP + rounding proxy + factorized entropy model +
synthesis MLP, all reading one flat parameter vector."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from ..sources import source_dim
from .entropy_model import FactorizedEntropyModel
from .mlp import Mlp
from .proxy import training_proxy

HIDDEN = 100
CHECKPOINT_MAGIC = b"MCODEC\x00\x01"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, message, iteration=None, trace=None):
        super().__init__(message)
        self.iteration = iteration
        self.trace = trace or []


@dataclass
class LossParts:
    loss: float
    rate: float
    distortion: float


class CompressorModel:
    def __init__(self, kind: str, d_s: int, d_c: int, hidden: int = HIDDEN, em_hidden: int = 8):
        self.kind = kind
        self.d_s = int(d_s)
        self.d_c = int(d_c)
        self.hidden = int(hidden)
        self.em_hidden = int(em_hidden)
        dim = source_dim(kind, d_s)
        self.dim = dim
        self.analysis = Mlp((dim, hidden, hidden, d_c), offset=0)
        self.synthesis = Mlp((d_c, hidden, hidden, dim), offset=self.analysis.size)
        self.entropy_model = FactorizedEntropyModel(d_c, em_hidden, offset=self.analysis.size + self.synthesis.size)
        self.size = self.analysis.size + self.synthesis.size + self.entropy_model.size
        self.theta = np.zeros(self.size)

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "d_s": self.d_s,
            "d_c": self.d_c,
            "hidden": self.hidden,
            "em_hidden": self.em_hidden,
            "analysis": list(self.analysis.widths),
            "synthesis": list(self.synthesis.widths),
            "entropy_model": {"dims": self.d_c, "hidden": self.em_hidden},
            "size": self.size,
        }

    def initialize(self, rng: np.random.Generator, init_scale: float = 4.0) -> "CompressorModel":
        self.analysis.init(self.theta, rng)
        self.synthesis.init(self.theta, rng)
        self.entropy_model.init(self.theta, rng, init_scale)
        return self

    def copy(self) -> "CompressorModel":
        other = CompressorModel(self.kind, self.d_s, self.d_c, self.hidden, self.em_hidden)
        other.theta = self.theta.copy()
        return other

    # --- inference ---------------------------------------------------------

    def encode(self, x) -> np.ndarray:
        return self.analysis.forward(self.theta, x)

    def symbols(self, x) -> np.ndarray:
        return np.rint(self.encode(x)).astype(np.int64)

    def decode(self, y_hat) -> np.ndarray:
        return self.synthesis.forward(self.theta, np.asarray(y_hat, dtype=float))

    def rate_bits(self, y_hat) -> np.ndarray:
        return self.entropy_model.rate_bits(self.theta, y_hat)

    # --- training objective ------------------------------------------------

    def distortion_terms(self, x, x_hat, target=None, floor=None):
        """Per-sample squared error and its gradient w.r.t. ``x_hat``.

        ``target``/``floor`` replace ``x`` for the ramp's continuous-time
        error: ``mean((x_hat - target)**2) + floor``
        (see :func:`~manifold_codec.sources.ramp_hold_error`).
        """
        diff = x_hat - (x if target is None else target)
        if self.kind == "circle":
            return (diff * diff).sum(axis=1), 2.0 * diff
        se = (diff * diff).mean(axis=1)
        if floor is not None:
            se = se + floor
        return se, 2.0 * diff / diff.shape[1]

    def loss_and_grad(
        self, x, lam: float, phase: str, u=None, tau=None, weights=None, theta=None, target=None, floor=None
    ):
        """Monte Carlo Lagrangian ``mean(rate) + lam * mean(mse)`` and its
        gradient w.r.t. every parameter, by reverse accumulation.

        The rate is the entropy model's bin likelihood at the proxy point
        ``z``; the synthesis transform sees ``y_hat`` (see
        :func:`~manifold_codec.neural.proxy.training_proxy`).
        ``weights`` (per sample, default uniform) generalize the batch mean;
        ``target``/``floor`` are passed to :meth:`distortion_terms`.
        """
        theta = self.theta if theta is None else theta
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        if n == 0:
            raise ValueError("empty batch")
        w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float) / np.sum(weights)
        grad = np.zeros_like(theta)

        y, a_cache = self.analysis.forward(theta, x, cache=True)
        z, dz, y_hat, dyhat = training_proxy(y, phase, u=u, tau=tau)
        bits, g_z = self.entropy_model.rate_and_grad(theta, z, grad, w)
        x_hat, s_cache = self.synthesis.forward(theta, y_hat, cache=True)
        se, g_xhat = self.distortion_terms(x, x_hat, target, floor)

        rate = float(w @ bits)
        dist = float(w @ se)
        loss = rate + lam * dist

        g_xhat *= (lam * w)[:, None]
        g_yhat = self.synthesis.backward(theta, s_cache, g_xhat, grad)
        self.analysis.backward(theta, a_cache, (g_z + g_yhat * dyhat) * dz, grad)
        return LossParts(loss, rate, dist), grad

    def loss(self, x, lam, phase, u=None, tau=None, weights=None, theta=None, target=None, floor=None) -> float:
        theta = self.theta if theta is None else theta
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float) / np.sum(weights)
        y = self.analysis.forward(theta, x)
        z, _, y_hat, _ = training_proxy(y, phase, u=u, tau=tau)
        bits = self.entropy_model.rate_bits(theta, z)
        se, _ = self.distortion_terms(x, self.synthesis.forward(theta, y_hat), target, floor)
        return float(w @ bits) + lam * float(w @ se)

    # --- checkpoints ---------------------------------------------------------

    def save(self, path) -> None:
        """Binary checkpoint: magic, JSON descriptor line, little-endian f8 vector."""
        head = json.dumps({"version": CHECKPOINT_VERSION, **self.descriptor()}, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", len(head)))
            fh.write(head)
            fh.write(self.theta.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "CompressorModel":
        with open(path, "rb") as fh:
            if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
                raise ValueError(f"{path}: not a compressor checkpoint")
            (n,) = struct.unpack("<I", fh.read(4))
            desc = json.loads(fh.read(n))
            if desc.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: unsupported checkpoint version {desc.get('version')}")
            data = np.frombuffer(fh.read(), dtype="<f8")
        model = cls(desc["kind"], desc["d_s"], desc["d_c"], desc["hidden"], desc["em_hidden"])
        if data.size != model.size:
            raise ValueError(f"{path}: expected {model.size} parameters, found {data.size}")
        model.theta = data.astype(float).copy()
        return model
