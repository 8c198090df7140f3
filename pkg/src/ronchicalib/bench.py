"""Monte-Carlo benchmark of the calibration loop and its ablations.

Every run draws a true x0 uniformly in the box and executes each method on
the same observation noise stream. Per-run seeds are spawned from one
master seed, so the CSV outputs are a pure function of the configuration.
"""

import csv
import functools
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import em, testbed
from .errors import ConfigError, PersistenceError, RonchiError

log = logging.getLogger(__name__)

METHODS = {
    "full": {"update_model": True, "hard": False},
    "fixed-prior": {"update_model": False, "hard": False},
    "hard-em": {"update_model": True, "hard": True},
}
SOURCES = ("testbed", "wave", "analytic")


@dataclass
class BenchmarkConfig:
    runs: int = 100
    n: int = 3
    source: str = "testbed"
    scenario: str = "mismatch-0.3"
    box: float = 200.0
    horizon: int = 30
    seed: int = 20240611
    out: str = None
    methods: tuple = ("full", "fixed-prior", "hard-em")
    workers: int = 0  # 0 means available parallelism
    encoder_path: str = None  # image sources only
    model_path: str = None
    testbed: dict = field(default_factory=dict)  # ScenarioSpec overrides
    em: dict = field(default_factory=dict)  # EMConfig overrides

    def __post_init__(self):
        if self.runs < 1 or self.horizon < 1:
            raise ConfigError("runs and horizon must be at least 1")
        if self.source not in SOURCES:
            raise ConfigError(f"source must be one of {SOURCES}")
        self.methods = tuple(self.methods)
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if self.source != "testbed" and not (self.encoder_path and self.model_path):
            raise ConfigError("image sources need encoder_path and model_path")


@dataclass
class BenchmarkResult:
    config: BenchmarkConfig
    errors: dict  # method -> (runs, horizon + 1), NaN rows for failed runs
    step_seconds: dict  # method -> (runs,) mean seconds per step
    failures: dict  # method -> list of run indices
    x0: np.ndarray  # (runs, n)

    @property
    def methods(self):
        return list(self.errors)


@functools.lru_cache(maxsize=8)
def _scenario(name, overrides):
    return testbed.make_scenario(name, **dict(overrides))


@functools.lru_cache(maxsize=2)
def _image_parts(encoder_path, model_path):
    from . import encoder, gp
    return encoder.load_params(encoder_path), gp.load_model(model_path)


def _source_and_model(cfg, x0, rng):
    if cfg.source == "testbed":
        ov = dict(cfg.testbed)
        ov.setdefault("n", cfg.n)
        ov.setdefault("box", cfg.box)
        smap, model = _scenario(cfg.scenario, tuple(sorted(ov.items())))
        return testbed.TestbedSource(smap, x0, rng), model
    from . import optics, pipeline
    params, model = _image_parts(cfg.encoder_path, cfg.model_path)
    mode = "wave" if cfg.source == "wave" else "analytic_even"
    return pipeline.ImageSource(params, optics.SimConfig(mode=mode), x0, rng), model


def run_one(cfg, index, seed_seq):
    """All methods on one run; returns (index, x0, {method: (errors, sec/step) or None})."""
    x_seq, obs_seq, em_seq = seed_seq.spawn(3)
    x0 = np.random.default_rng(x_seq).uniform(-cfg.box, cfg.box, size=cfg.n)
    out = {}
    for name in cfg.methods:
        kw = dict(cfg.em)
        kw.update(METHODS[name])
        kw.update(horizon=cfg.horizon, box=cfg.box, stop_on_convergence=False)
        source, model = _source_and_model(cfg, x0, np.random.default_rng(obs_seq))
        try:
            trace = em.run_calibration(source, model, em.EMConfig(**kw),
                                       np.random.default_rng(em_seq), x0_true=x0)
            out[name] = (np.asarray(trace.errors, dtype=float), float(np.mean(trace.step_seconds)))
        except RonchiError as exc:
            log.warning("run %d method %s failed: %s", index, name, exc)
            out[name] = None
    return index, x0, out


def _workers(cfg):
    return cfg.workers if cfg.workers and cfg.workers > 0 else (os.cpu_count() or 1)


def run_benchmark(cfg):
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.runs)
    H = cfg.horizon + 1
    errors = {m: np.full((cfg.runs, H), np.nan) for m in cfg.methods}
    seconds = {m: np.full(cfg.runs, np.nan) for m in cfg.methods}
    failures = {m: [] for m in cfg.methods}
    X0 = np.zeros((cfg.runs, cfg.n))
    workers = min(_workers(cfg), cfg.runs)
    if workers == 1:
        results = [run_one(cfg, i, s) for i, s in enumerate(children)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, [cfg] * cfg.runs, range(cfg.runs), children))
    for index, x0, out in results:
        X0[index] = x0
        for m, res in out.items():
            if res is None:
                failures[m].append(index)
            else:
                errors[m][index], seconds[m][index] = res
    return BenchmarkResult(cfg, errors, seconds, failures, X0)


def quantile_curves(errors):
    """(median, q25, q75) per step over successful runs: (horizon + 1, 3)."""
    ok = errors[~np.any(np.isnan(errors), axis=1)]
    if ok.shape[0] == 0:
        return np.full((errors.shape[1], 3), np.nan)
    return np.stack([np.quantile(ok, q, axis=0) for q in (0.5, 0.25, 0.75)], axis=1)


def curves_header(methods):
    cols = ["step"]
    for m in methods:
        cols.extend([f"{m}_median", f"{m}_q25", f"{m}_q75"])
    return cols


def _fmt(v):
    return repr(float(v))


def emit_results(result, directory):
    """Write curves.csv, runs.csv, an SVG plot and manifest.json into ``directory``.

    curves.csv: step, then median/q25/q75 per method. runs.csv: run, step,
    method, error (long format). Floats are written with repr, so parsing
    them back reproduces the in-memory values exactly. Wall-clock figures
    appear only in the manifest.
    """
    directory = Path(directory)
    methods = result.methods
    curves = {m: quantile_curves(result.errors[m]) for m in methods}
    H = result.config.horizon + 1
    svg_name = f"curves_{result.config.scenario if result.config.source == 'testbed' else result.config.source}.svg"
    try:
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "curves.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(curves_header(methods))
            for t in range(H):
                row = [t]
                for m in methods:
                    row.extend(_fmt(v) for v in curves[m][t])
                w.writerow(row)
        with open(directory / "runs.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["run", "step", "method", "error"])
            for r in range(result.config.runs):
                for m in methods:
                    if r in result.failures[m]:
                        continue
                    for t in range(H):
                        w.writerow([r, t, m, _fmt(result.errors[m][r, t])])
        _plot(curves, methods, directory / svg_name, result.config)
        manifest = {
            "config": _jsonable(asdict(result.config)),
            "failures": {m: list(map(int, v)) for m, v in result.failures.items()},
            "seconds_per_step": {m: float(np.nanmean(result.step_seconds[m]))
                                 if np.any(np.isfinite(result.step_seconds[m])) else None
                                 for m in methods},
            "written_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "files": ["curves.csv", "runs.csv", svg_name],
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    except OSError as exc:
        raise PersistenceError(f"cannot write benchmark results to {directory}: {exc}") from exc
    return directory


def _jsonable(d):
    return json.loads(json.dumps(d, default=lambda o: list(o) if isinstance(o, tuple) else str(o)))


def read_curves(path):
    """Parse curves.csv back to {method: (steps, 3)}."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    methods = [h[:-len("_median")] for h in header if h.endswith("_median")]
    data = np.array([[float(v) for v in r] for r in body])
    return {m: data[:, 1 + 3 * i:4 + 3 * i] for i, m in enumerate(methods)}


def _plot(curves, methods, path, cfg):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "ronchicalib", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        steps = np.arange(next(iter(curves.values())).shape[0])
        for m in methods:
            c = curves[m]
            ax.plot(steps, c[:, 0], label=m)
            ax.fill_between(steps, c[:, 1], c[:, 2], alpha=0.2)
        ax.set_yscale("log")
        ax.set_xlabel("observations")
        ax.set_ylabel("error norm (nm)")
        ax.set_title(f"{cfg.source}: {cfg.scenario}" if cfg.source == "testbed" else cfg.source)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
