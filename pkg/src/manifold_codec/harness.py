"""Experiment commands: result files, run manifests and figure reproduction.

Every command writes into one output directory. Files are written to a
temporary name and renamed into place, and each run ends with
``manifest.json`` holding the config snapshot, seeds, timestamps and the
SHA-256 of every file it wrote. CSV content depends only on the config,
so reruns reproduce the digests.
"""

from __future__ import annotations

import contextlib
import datetime as _dt
import hashlib
import json
import math
import os
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, bounds
from . import config as cfg
from .bounds import points_to_csv
from .evaluation import gap_report
from .neural import (
    CompressorModel,
    TrainingDiverged,
    eval_hard,
    gradient_check,
    hemisphere_model,
    probe_analysis,
    probe_synthesis,
    staircase_defects,
    sweep_lambda,
    train,
)
from .neural.train import TrainConfig, distortion_target, probe_to_csv, trace_to_csv
from .quantizers import ArcQuantizer, HemisphereProductQuantizer, IntervalQuantizer, conditional_ramp_mean, oracle_ed
from .sources import make_stream, sample_source

OUT_ENV = "MANIFOLD_CODEC_OUT"
GAP_COLUMNS = ("stderr", "entropy_stderr", "vs_lower", "vs_upper")
FIGURES = ("fig1", "fig2a", "fig2b", "fig3a", "fig3b", "ramp_rd")
EVAL_SEED_OFFSET = 10_000


class ReproError(RuntimeError):
    pass


def output_root() -> Path:
    return Path(os.environ.get(OUT_ENV) or "runs")


def resolve_output(explicit, configured: str, default_name: str) -> Path:
    """``--out`` wins, then the config's ``output`` key; relative paths
    live under the output root."""
    path = Path(explicit or configured or default_name)
    return path if path.is_absolute() or explicit else output_root() / path


def atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def sha256_of(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class Run:
    """Output directory of one command plus its manifest bookkeeping."""

    def __init__(self, out: Path, command: str, config_text: str = "", seeds=()):
        self.out = Path(out)
        self.command = command
        self.config_text = config_text
        self.seeds = sorted({int(s) for s in seeds})
        self.started = _now()
        self.files: dict[str, str] = {}
        self.notes: dict = {}
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {self.out}: {exc}") from exc

    def write(self, name: str, text) -> Path:
        data = text.encode() if isinstance(text, str) else bytes(text)
        path = self.out / name
        atomic_write(path, data)
        self.files[name] = hashlib.sha256(data).hexdigest()
        return path

    def finish(self) -> dict:
        manifest = {
            "command": self.command,
            "toolkit_version": __version__,
            "config": self.config_text,
            "seeds": self.seeds,
            "started": self.started,
            "finished": _now(),
            "files": dict(sorted(self.files.items())),
            "notes": self.notes,
        }
        atomic_write(self.out / "manifest.json", (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
        return manifest


def annotate(points, kind: str, curves=None) -> list:
    """Attach gap columns to each point; below-bound anomalies raise."""
    for p in points:
        rep = gap_report(p, kind, curves)
        p.params.update(
            {
                "stderr": p.stderr if p.stderr is not None else 0.0,
                "entropy_stderr": p.entropy_stderr if p.entropy_stderr is not None else 0.0,
                "vs_lower": float(rep["vs_lower"]),
                "vs_upper": float(rep["vs_upper"]),
            }
        )
    return points


def ed_csv(points) -> str:
    return points_to_csv(points, GAP_COLUMNS)


# --- commands --------------------------------------------------------------


def cmd_bounds(values: dict, run: Run) -> dict:
    kind = values["source"]
    grid = cfg.d_grid(values)
    curves = bounds.ed_curves(kind, grid, values["k_max"], values["eps_steps"])
    run.write("lower.csv", curves["lower"].to_csv())
    run.write("upper.csv", curves["upper"].to_csv())
    return curves


def _oracle_quantizers(values):
    kind, scheme = values["source"], values["scheme"]
    if scheme == "uniform":
        for k in values["k"]:
            q = ArcQuantizer.uniform(k) if kind == "circle" else IntervalQuantizer.uniform(k)
            yield {"K": k}, q
    elif scheme == "hemisphere":
        for k in values["k"]:
            yield {"K": k}, HemisphereProductQuantizer(k)
    else:
        for k in values["k"]:
            for e in values["eps"]:
                p = bounds.biuniform_partition(kind, k, e)
                q = ArcQuantizer.from_partition(p) if kind == "circle" else IntervalQuantizer.from_partition(p)
                yield {"K": k, "eps": e}, q


def oracle_points(values: dict) -> list:
    modes = ("exact", "monte_carlo") if values["mode"] == "both" else (values["mode"],)
    ramp_dim = values["ramp_dim"] or None
    pts = []
    for extra, q in _oracle_quantizers(values):
        for mode in modes:
            pt = oracle_ed(q, mode, n=values["n"], seed=values["seed"], ramp_dim=ramp_dim)
            pt.scheme = values["scheme"]
            pt.params = {**extra, "mode": mode, **({"N": values["n"], "seed": values["seed"]} if mode != "exact" else {})}
            pts.append(pt)
    return pts


def cmd_oracle(values: dict, run: Run) -> list:
    pts = annotate(oracle_points(values), values["source"])
    # keep the configured order rather than sorting by distortion
    run.write("oracle.csv", ed_csv(pts))
    return pts


def train_and_evaluate(config: TrainConfig, eval_n: int, label: str = "neural"):
    model, trace = train(config)
    pt = eval_hard(model, eval_n, seed=config.seed + EVAL_SEED_OFFSET, label=label)
    pt.params.update({"lam": config.lam, "seed": config.seed, "batch_size": config.batch_size, "regime": config.data_regime})
    return model, trace, pt


def cmd_train(values: dict, run: Run):
    config = cfg.train_config(values)
    try:
        model, trace, pt = train_and_evaluate(config, values["eval_n"])
    except TrainingDiverged as exc:
        run.write("trace.csv", trace_to_csv(exc.trace))
        run.notes["diverged"] = str(exc)
        run.finish()
        raise
    run.write("trace.csv", trace_to_csv(trace))
    ckpt = run.out / "model.ckpt"
    tmp = run.out / ".model.ckpt.tmp"
    model.save(tmp)
    os.replace(tmp, ckpt)
    run.files["model.ckpt"] = sha256_of(ckpt)
    run.write("point.csv", ed_csv(annotate([pt], config.source)))
    run.notes["entropy_model_clamps"] = model.entropy_model.clamp_count
    return model, pt


def cmd_sweep(values: dict, run: Run):
    base = cfg.train_config(values, lam=1.0, seed=0)
    res = sweep_lambda(base, values["lambdas"], values["seeds"], values["eval_n"], values["label"], values["workers"])
    annotate(res.points, base.source)
    run.write("ed.csv", ed_csv(res.hull.points))
    run.write("runs.csv", ed_csv(sorted(res.points, key=lambda p: (p.params["lam"], p.params["seed"]))))
    run.notes["failures"] = res.failures
    return res


def _probe_model(values: dict):
    if values["checkpoint"]:
        return CompressorModel.load(values["checkpoint"])
    model, _ = train(cfg.train_config(values))
    return model


def probe_index(model: CompressorModel, seed: int, index: int = -1) -> int:
    if index >= 0:
        return index
    return int(make_stream(seed, "probe").integers(0, model.dim))


def write_probes(run: Run, model: CompressorModel, grid: int, which: str, seed: int, index: int = -1, prefix: str = "probe"):
    param = "theta" if model.kind == "circle" else "phase"
    if which in ("analysis", "both"):
        table = probe_analysis(model, grid)
        header = [param] + [f"symbol_{j}" for j in range(model.d_c)]
        run.write(f"{prefix}_analysis.csv", probe_to_csv(table, header))
        if model.d_c == 1:
            run.notes[f"{prefix}_staircase"] = staircase_defects(table[:, 1])
        run.notes[f"{prefix}_distinct_symbols"] = int(np.unique(table[:, 1:], axis=0).shape[0])
    if which in ("synthesis", "both"):
        idx = probe_index(model, seed, index)
        table = probe_synthesis(model, idx, grid)
        run.write(f"{prefix}_synthesis.csv", probe_to_csv(table, [param, f"reconstruction_{idx}"]))
        run.notes[f"{prefix}_synthesis_index"] = idx


def cmd_probe(values: dict, run: Run):
    model = _probe_model(values)
    write_probes(run, model, values["grid"], values["probe"], values["seed"], values["index"])
    return model


# --- figure reproduction ---------------------------------------------------

SCALES = {
    # acceptance scale: minutes on one core
    "quick": {"iterations": 3000, "batch_size": 256, "small_batch": 64, "eval_n": 10**6, "seeds": (0, 1, 2)},
    "desk": {"iterations": 50_000, "batch_size": 1024, "small_batch": 64, "eval_n": 10**6, "seeds": (0, 1, 2)},
    "full": {"iterations": 200_000, "batch_size": 1024, "small_batch": 64, "eval_n": 10**6, "seeds": (0, 1, 2, 3, 4)},
}
CIRCLE_LAMBDAS = tuple(float(4**j) for j in range(7))  # 1, 4, ..., 4096
RAMP_LAMBDAS = (1.0, 4.0, 16.0, 64.0, 256.0, 1024.0, 4096.0)
PROBE_LAMBDA = {"circle": 512.0, "ramp": 4096.0}


def scale_settings(scale: str = "desk", iterations=None, seeds=None, eval_n=None) -> dict:
    if scale not in SCALES:
        raise ValueError(f"unknown scale {scale!r}; choose from {', '.join(SCALES)}")
    s = dict(SCALES[scale])
    if iterations is not None:
        s["iterations"] = int(iterations)
    if seeds is not None:
        s["seeds"] = tuple(range(int(seeds)))
    if eval_n is not None:
        s["eval_n"] = int(eval_n)
    return s


@contextlib.contextmanager
def _stage(figure: str, name: str):
    try:
        yield
    except (ReproError, KeyboardInterrupt):
        raise
    except Exception as exc:
        raise ReproError(f"{figure}/{name}: {type(exc).__name__}: {exc}") from exc


def _neural_curve(run: Run, name: str, base: TrainConfig, lambdas, s: dict, workers: int, label: str):
    res = sweep_lambda(base, lambdas, s["seeds"], s["eval_n"], label, workers)
    annotate(res.points, base.source)
    run.write(f"{name}.csv", ed_csv(res.hull.points))
    run.notes[f"{name}_runs"] = [
        {k: p.params[k] for k in ("lam", "seed", "vs_lower")} | {"H": p.entropy_bits, "D": p.distortion}
        for p in res.points
    ]
    if res.failures:
        run.notes[f"{name}_failures"] = res.failures
    return res


def cmd_repro(figure: str, out: Path, scale: str = "desk", iterations=None, seeds=None, eval_n=None, workers: int = 1) -> Run:
    """Run one figure's pipeline with pinned seeds and write its CSVs."""
    if figure not in FIGURES:
        raise ValueError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
    s = scale_settings(scale, iterations, seeds, eval_n)
    settings_text = json.dumps({"figure": figure, "scale": scale, **{k: list(v) if isinstance(v, tuple) else v for k, v in s.items()}}, sort_keys=True)
    run = Run(out, f"repro {figure}", settings_text, s["seeds"])
    kind = "ramp" if figure in ("fig3a", "fig3b", "ramp_rd") else "circle"
    base = TrainConfig(source=kind, iterations=s["iterations"], batch_size=s["batch_size"], lam=PROBE_LAMBDA[kind])

    if figure in ("fig1", "ramp_rd"):
        with _stage(figure, "bounds"):
            curves = bounds.ed_curves(kind)
            run.write("lower.csv", curves["lower"].to_csv())
            run.write("upper.csv", curves["upper"].to_csv())
        lambdas = CIRCLE_LAMBDAS if kind == "circle" else RAMP_LAMBDAS
        variants = [("neural_d1", base), ("neural_d2", replace(base, d_c=2))]
        if figure == "fig1":
            variants += [
                ("neural_small_batch", replace(base, batch_size=s["small_batch"])),
                ("neural_fixed_data", replace(base, data_regime="fixed")),
            ]
        else:
            with _stage(figure, "oracle"):
                vals = cfg.load("oracle", overrides=["source=ramp", "mode=exact"])
                run.write("oracle_uniform.csv", ed_csv(annotate(oracle_points(vals), "ramp")))
        for name, conf in variants:
            with _stage(figure, name):
                _neural_curve(run, name, conf, lambdas, s, workers, name)
    else:
        d_c = 2 if figure == "fig2b" else 1
        conf = replace(base, d_c=d_c)
        with _stage(figure, "train"):
            model, trace, pt = train_and_evaluate(conf, s["eval_n"])
            run.write("trace.csv", trace_to_csv(trace))
            run.write("point.csv", ed_csv(annotate([pt], kind)))
        with _stage(figure, "probe"):
            which = "synthesis" if figure == "fig3b" else "analysis"
            write_probes(run, model, 1024, which, conf.seed)
        if figure == "fig2b":
            with _stage(figure, "handbuilt"):
                hb = hemisphere_model(4)
                hpt = eval_hard(hb, s["eval_n"], seed=EVAL_SEED_OFFSET, label="hemisphere_handbuilt")
                run.write("handbuilt_point.csv", ed_csv(annotate([hpt], "circle")))
                write_probes(run, hb, 1024, "analysis", 0, prefix="handbuilt")
    run.finish()
    return run


# --- self test -------------------------------------------------------------


def selftest() -> list:
    """A few fast end-to-end checks; returns ``(name, passed, detail)`` rows."""
    rows = []

    def check(name, fn):
        try:
            ok, detail = fn()
        except Exception as exc:  # report, do not crash the self test
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        rows.append((name, bool(ok), detail))

    def zero_rate():
        a = bounds.dual_lower_bound("circle", 1.0), bounds.dual_lower_bound("ramp", 1.0 / 12.0)
        return a == (0.0, 0.0), f"E_c(1)={a[0]}, E_r(1/12)={a[1]}"

    def oracle():
        q = ArcQuantizer.uniform(8)
        ex = oracle_ed(q)
        mc = oracle_ed(q, "monte_carlo", n=10**5)
        target = 1.0 - bounds.sinc(math.pi / 8) ** 2
        ok = abs(ex.distortion - target) < 1e-12 and abs(mc.distortion - target) < 4 * mc.stderr
        return ok, f"exact D={ex.distortion:.6f}, MC D={mc.distortion:.6f}+-{mc.stderr:.1e}"

    def ramp_mean():
        t = np.linspace(0.0, 1.0, 101)
        s = 0.25
        got = conditional_ramp_mean(0.0, s, t)
        want = np.where(t > 1 - s, t * (1 - 1 / s) + s / 2 - 1.5 + 1 / s, t - (1 - s) / 2)
        err = float(np.max(np.abs(got - want)))
        return err < 1e-12, f"max error {err:.1e}"

    def gradients():
        worst = 0.0
        for kind in ("circle", "ramp"):
            m = CompressorModel(kind, 64, 1).initialize(make_stream(0, "init"))
            rng = make_stream(1)
            x, lat = sample_source(kind, rng, 16)
            target, floor = distortion_target(kind, lat, 64)
            u = rng.uniform(-0.5, 0.5, (16, 1))
            rel, *_ = gradient_check(m, x, 64.0, "soft", u=u, tau=3.0, target=target, floor=floor)
            worst = max(worst, rel)
        return worst < 1e-4, f"worst relative error {worst:.1e}"

    def handbuilt():
        pt = eval_hard(hemisphere_model(4), 10**5)
        ex = oracle_ed(ArcQuantizer.uniform(8))
        ok = abs(pt.distortion - ex.distortion) < 4 * pt.stderr and abs(pt.entropy_bits - 3.0) < 0.01
        return ok, f"H={pt.entropy_bits:.4f} D={pt.distortion:.5f} vs oracle D={ex.distortion:.5f}"

    check("zero-rate endpoints", zero_rate)
    check("uniform arc oracle", oracle)
    check("ramp conditional mean", ramp_mean)
    check("backprop vs finite differences", gradients)
    check("hand-built hemisphere model", handbuilt)
    return rows

