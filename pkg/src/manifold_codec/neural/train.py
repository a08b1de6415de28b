"""Training, hard-quantized evaluation, probes and lambda sweeps."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import bounds
from ..bounds import EDCurve, EDPoint
from ..evaluation import MeanAccumulator, entropy_of_symbols
from ..sources import (
    DEFAULT_RAMP_DIM,
    circle_batch,
    make_stream,
    ramp_batch,
    ramp_cell_moments,
    ramp_hold_error,
    sample_source,
    squared_error,
)
from .model import CompressorModel, TrainingDiverged
from .proxy import training_proxy

TRACE_EVERY = 100
TRACE_COLUMNS = ("iter", "loss", "rate_bits", "distortion", "temperature", "phase")
MIN_EVAL_SAMPLES = 10**4
_EVAL_BLOCK = 1 << 16


@dataclass(frozen=True)
class TrainConfig:
    source: str = "circle"
    lam: float = 512.0
    d_s: int = DEFAULT_RAMP_DIM
    d_c: int = 1
    batch_size: int = 1024
    iterations: int = 50_000
    learning_rate: float = 1e-3
    hard_lr_scale: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    phase_fractions: tuple = (0.4, 0.5, 0.1)
    tau_start: float = 1.0
    tau_end: float = 20.0
    data_regime: str = "fresh"
    dataset_size: int = 1000
    seed: int = 0
    hidden: int = 100
    em_hidden: int = 8
    em_init_scale: float = 4.0
    # pass-through gradients into the encoder drift its cell boundaries once
    # rounding is hard; by default only the decoder and density adapt then
    hard_freeze_analysis: bool = True

    def __post_init__(self):
        object.__setattr__(self, "phase_fractions", tuple(float(f) for f in self.phase_fractions))
        self.validate()

    def validate(self) -> None:
        if self.source not in ("circle", "ramp"):
            raise ValueError(f"source must be circle or ramp, got {self.source!r}")
        if not (math.isfinite(self.lam) and self.lam >= 0.0):
            raise ValueError(f"lambda must be a nonnegative number, got {self.lam}")
        for name in ("d_s", "d_c", "batch_size", "iterations", "dataset_size", "hidden", "em_hidden"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.learning_rate <= 0.0 or self.hard_lr_scale <= 0.0:
            raise ValueError("learning rates must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0 and self.adam_eps > 0.0):
            raise ValueError("invalid Adam hyperparameters")
        fr = self.phase_fractions
        if len(fr) != 3 or min(fr) < 0.0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"phase fractions must be 3 nonnegative numbers summing to 1, got {fr}")
        if not (0.0 < self.tau_start <= self.tau_end):
            raise ValueError("temperatures must be positive and nondecreasing")
        if self.data_regime not in ("fresh", "fixed"):
            raise ValueError(f"data_regime must be fresh or fixed, got {self.data_regime!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phase_fractions"] = list(self.phase_fractions)
        return d


def schedule(config: TrainConfig, it: int) -> tuple[str, float | None, float]:
    """``(phase, temperature, learning_rate)`` at iteration ``it``."""
    n = config.iterations
    f_dither, f_soft, _ = config.phase_fractions
    end_dither = round(f_dither * n)
    end_soft = round((f_dither + f_soft) * n)
    if it < end_dither:
        return "dither", None, config.learning_rate
    if it < end_soft:
        span = max(end_soft - end_dither - 1, 1)
        frac = (it - end_dither) / span
        tau = config.tau_start * (config.tau_end / config.tau_start) ** frac
        return "soft", tau, config.learning_rate
    return "hard", None, config.learning_rate * config.hard_lr_scale


class Adam:
    def __init__(self, size: int, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, theta: np.ndarray, grad: np.ndarray, lr: float, active: slice = slice(None)) -> None:
        """One update of ``theta[active]``; other entries and moments stay put."""
        self.t += 1
        m, v, g = self.m[active], self.v[active], grad[active]
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        v *= self.beta2
        v += (1.0 - self.beta2) * g * g
        m_hat = m / (1.0 - self.beta1**self.t)
        v_hat = v / (1.0 - self.beta2**self.t)
        theta[active] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TraceRow:
    iter: int
    loss: float
    rate_bits: float
    distortion: float
    temperature: float
    phase: str


def trace_to_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in trace:
        w.writerow([r.iter, repr(r.loss), repr(r.rate_bits), repr(r.distortion), repr(r.temperature), r.phase])
    return buf.getvalue()


def new_model(config: TrainConfig) -> CompressorModel:
    model = CompressorModel(config.source, config.d_s, config.d_c, config.hidden, config.em_hidden)
    return model.initialize(make_stream(config.seed, "init"), config.em_init_scale)


def distortion_target(kind: str, latent, d_s: int):
    """``(target, floor)`` for :meth:`CompressorModel.loss_and_grad`.

    The circle compares against the input itself. The ramp compares the
    reconstruction, held constant over each sampling cell, against the
    continuous signal.
    """
    if kind == "circle":
        return None, None
    m1, m2 = ramp_cell_moments(latent, d_s)
    return m1, (m2 - m1 * m1).mean(axis=1)


def train(config: TrainConfig, model: CompressorModel | None = None):
    """Stochastically minimize ``rate + lam * mse``; deterministic given the seed.

    Returns ``(model, trace)``, with a trace row every 100 iterations and
    at the last iteration.
    """
    model = model or new_model(config)
    data_rng = make_stream(config.seed, "train")
    dither_rng = make_stream(config.seed, "dither")
    dataset = None
    if config.data_regime == "fixed":
        dataset = sample_source(config.source, make_stream(config.seed, "dataset"), config.dataset_size, config.d_s)
    opt = Adam(model.size, config.beta1, config.beta2, config.adam_eps)
    trace = []
    for it in range(config.iterations):
        phase, tau, lr = schedule(config, it)
        if dataset is None:
            x, latent = sample_source(config.source, data_rng, config.batch_size, config.d_s)
        else:
            pick = data_rng.integers(0, config.dataset_size, config.batch_size)
            x, latent = dataset[0][pick], dataset[1][pick]
        target, floor = distortion_target(config.source, latent, config.d_s)
        u = dither_rng.uniform(-0.5, 0.5, (config.batch_size, config.d_c))
        parts, grad = model.loss_and_grad(x, config.lam, phase, u=u, tau=tau, target=target, floor=floor)
        if not (math.isfinite(parts.loss) and np.all(np.isfinite(grad))):
            raise TrainingDiverged(f"non-finite loss at iteration {it} ({phase} phase)", it, trace)
        if it % TRACE_EVERY == 0 or it == config.iterations - 1:
            temp = 0.0 if phase == "dither" else (math.inf if phase == "hard" else tau)
            trace.append(TraceRow(it, parts.loss, parts.rate, parts.distortion, temp, phase))
        active = slice(None)
        if phase == "hard" and config.hard_freeze_analysis:
            active = slice(model.analysis.size, None)
        opt.step(model.theta, grad, lr, active)
    return model, trace


def _sample_blocks(kind, rng, n, d_s):
    done = 0
    while done < n:
        m = min(_EVAL_BLOCK, n - done)
        yield sample_source(kind, rng, m, d_s)
        done += m


def eval_hard(model: CompressorModel, n: int = 10**6, seed: int = 0, label: str = "neural") -> EDPoint:
    """Test-time entropy and distortion with hard rounding.

    Entropy is the plug-in joint entropy of the integer symbol tuples; the
    entropy model's own average codelength is reported alongside as
    ``model_rate_bits``. Ramp distortion is the continuous-time error of the
    cell-wise held reconstruction; the plain per-sample MSE is reported as
    ``sample_mse``.
    """
    if n < MIN_EVAL_SAMPLES:
        raise ValueError(f"eval_hard needs N >= {MIN_EVAL_SAMPLES}, got {n}")
    rng = make_stream(seed, "eval")
    mse = MeanAccumulator()
    sample_mse = MeanAccumulator()
    codelen = MeanAccumulator()
    syms = []
    for x, latent in _sample_blocks(model.kind, rng, n, model.d_s):
        s = model.symbols(x)
        x_hat = model.decode(s)
        se = squared_error(model.kind, x, x_hat)
        sample_mse.add(se)
        mse.add(ramp_hold_error(latent, x_hat) if model.kind == "ramp" else se)
        codelen.add(model.rate_bits(s.astype(float)))
        syms.append(s)
    symbols = np.concatenate(syms)
    h, h_se = entropy_of_symbols(symbols if model.d_c > 1 else symbols[:, 0])
    d, d_se = mse.result()
    rate, _ = codelen.result()
    params = {"N": n, "eval_seed": seed, "model_rate_bits": rate, "d_c": model.d_c}
    if model.kind == "ramp":
        params["sample_mse"] = sample_mse.result()[0]
    return EDPoint(h, d, label, params, stderr=d_se, entropy_stderr=h_se)


def _probe_inputs(kind, grid, d_s):
    if kind == "circle":
        param = np.linspace(0.0, 2.0 * math.pi, grid, endpoint=False)
        return param, circle_batch(param)
    param = np.linspace(0.0, 1.0, grid, endpoint=False)
    return param, ramp_batch(param, d_s)


def probe_analysis(model: CompressorModel, grid: int = 1024) -> np.ndarray:
    """Rows ``(theta or v, symbol_0, ..., symbol_{d_c-1})`` over a uniform grid."""
    if grid < 1:
        raise ValueError("grid must be positive")
    param, x = _probe_inputs(model.kind, grid, model.d_s)
    return np.column_stack([param, model.symbols(x)])


def probe_synthesis(model: CompressorModel, index: int, grid: int = 1024) -> np.ndarray:
    """Rows ``(theta or v, reconstruction[index])`` of ``g_s(round(g_a(x)))``."""
    if not 0 <= index < model.dim:
        raise ValueError(f"coordinate index {index} out of range for dimension {model.dim}")
    param, x = _probe_inputs(model.kind, grid, model.d_s)
    return np.column_stack([param, model.decode(model.symbols(x))[:, index]])


def probe_to_csv(table: np.ndarray, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in table:
        w.writerow([repr(float(row[0]))] + [_num(v) for v in row[1:]])
    return buf.getvalue()


def _num(v) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 2**53 else repr(v)


def staircase_defects(symbols: np.ndarray) -> dict:
    """Diagnostics of a cyclic symbol staircase (one latent dimension).

    Counts adjacent grid steps whose symbols jump by more than one level and
    symbols whose grid positions form more than one contiguous run.
    """
    s = np.asarray(symbols).astype(np.int64)
    jumps = np.abs(np.diff(np.concatenate([s, s[:1]])))
    runs = {}
    for i in range(s.size):
        if s[i] != s[i - 1]:
            runs[s[i]] = runs.get(s[i], 0) + 1
    revisited = sum(1 for c in runs.values() if c > 1)
    return {
        "distinct": int(np.unique(s).size),
        "big_jumps": int(np.sum(jumps[:-1] > 1) + (jumps[-1] > 1)),
        "revisited_symbols": int(revisited),
    }


# --- gradient check ------------------------------------------------------


def gradient_check(
    model: CompressorModel,
    x,
    lam: float,
    phase: str,
    u=None,
    tau=None,
    n_coords: int = 64,
    step: float = 1e-4,
    seed: int = 0,
    target=None,
    floor=None,
):
    """Compare backprop against central differences on random coordinates.

    A coordinate is skipped when the +/- step flips the sign of any hidden
    pre-activation, since the finite difference then straddles a kink of
    the leaky rectifier. Returns ``(relative_error, coords, analytic, numeric)``.
    """
    rng = np.random.default_rng(seed)
    kw = {"u": u, "tau": tau, "target": target, "floor": floor}
    _, grad = model.loss_and_grad(x, lam, phase, **kw)
    y_hat_sign = _kink_signature(model, model.theta, x, phase, u, tau)
    coords, num, ana = [], [], []
    for i in rng.permutation(model.size):
        th = model.theta.copy()
        th[i] += step
        if not np.array_equal(_kink_signature(model, th, x, phase, u, tau), y_hat_sign):
            continue
        lp = model.loss(x, lam, phase, theta=th, **kw)
        th[i] -= 2.0 * step
        if not np.array_equal(_kink_signature(model, th, x, phase, u, tau), y_hat_sign):
            continue
        lm = model.loss(x, lam, phase, theta=th, **kw)
        coords.append(int(i))
        num.append((lp - lm) / (2.0 * step))
        ana.append(grad[i])
        if len(coords) == n_coords:
            break
    num, ana = np.array(num), np.array(ana)
    rel = float(np.linalg.norm(ana - num) / max(np.linalg.norm(num), np.linalg.norm(ana), 1e-300))
    return rel, coords, ana, num


def _kink_signature(model, theta, x, phase, u, tau):
    y, (_, pre_a) = model.analysis.forward(theta, x, cache=True)
    z, _, y_hat, _ = training_proxy(y, phase, u=u, tau=tau)
    _, (_, pre_s) = model.synthesis.forward(theta, y_hat, cache=True)
    sig = [p > 0.0 for p in pre_a + pre_s]
    if phase == "soft":
        sig += [np.floor(y), np.floor(z)]
    return np.concatenate([s.ravel() for s in sig])


# --- sweeps --------------------------------------------------------------


@dataclass
class SweepResult:
    hull: EDCurve
    points: list
    failures: list = field(default_factory=list)


def _train_and_eval(args):
    config, eval_n, label = args
    try:
        model, trace = train(config)
        pt = eval_hard(model, eval_n, seed=config.seed + 10_000, label=label)
        pt.params.update({"lam": config.lam, "seed": config.seed, "batch_size": config.batch_size, "regime": config.data_regime})
        return pt, None
    except (TrainingDiverged, FloatingPointError, ValueError) as exc:
        return None, f"lam={config.lam} seed={config.seed}: {exc}"


def neural_hull(points, label: str = "neural") -> EDCurve:
    if not points:
        return EDCurve([], "neural")
    d = np.array([p.distortion for p in points])
    h = np.array([p.entropy_bits for p in points])
    idx = bounds.lower_convex_hull(d, h)
    return EDCurve([points[i] for i in idx], "neural")


def sweep_lambda(base: TrainConfig, lambdas, seeds=(0,), eval_n: int = 10**6, label: str = "neural", workers: int = 1) -> SweepResult:
    """Train one model per (lambda, seed) and hull the evaluated points.

    Individual failures are recorded and skipped; raises only if all fail.
    """
    lambdas = list(lambdas)
    if not lambdas:
        raise ValueError("empty lambda list")
    jobs = [(replace(base, lam=float(lam), seed=int(s)), eval_n, label) for lam in lambdas for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_train_and_eval, jobs))
    else:
        results = [_train_and_eval(j) for j in jobs]
    points = [p for p, _ in results if p is not None]
    failures = [f for _, f in results if f is not None]
    if not points:
        raise TrainingDiverged("every run in the sweep failed: " + "; ".join(failures))
    return SweepResult(neural_hull(points, label), points, failures)
