"""``ronchi`` command-line entry point.

Subcommands: simulate, train-encoder, calibrate, benchmark, ident-check.
Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import ConfigError, PersistenceError, RonchiError

log = logging.getLogger("ronchicalib")
DATASET_KEYS = ("count", "box", "kind", "log1p")


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def _pop(section, key, kind, default):
    if key not in section:
        return default
    return cfgmod._convert(section.pop(key), kind, key)


def _write_csv(path, header, rows):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc


def cmd_simulate(args, cfg, seed, out):
    from . import optics
    from .preprocess import preprocess

    section = dict(cfg.get("simulate", {}))
    count = _pop(section, "count", int, 200)  # dataset keys; the rest is SimConfig
    box = _pop(section, "box", float, 200.0)
    kind = _pop(section, "kind", str, "counts")
    log1p = _pop(section, "log1p", bool, True)
    count = args.count if args.count is not None else count
    kind = args.kind or kind
    if kind not in ("counts", "spectrum"):
        raise ConfigError("kind must be counts or spectrum")
    sim = cfgmod.build(optics.SimConfig, {"simulate": section}, "simulate", mode=args.mode)
    rng = np.random.default_rng(seed)
    states = rng.uniform(-box, box, size=(count, 3))
    seeds = rng.integers(0, 2**31 - 1, size=count)
    grams = [optics.simulate(x, sim, int(s)) for x, s in zip(states, seeds)]
    grids = [preprocess(g, log1p).values for g in grams] if kind == "spectrum" else None
    optics.save_dataset(out, grams, [int(s) for s in seeds], sim, kind=kind, grids=grids)
    print(f"wrote {count} {kind} grids to {out}")


def cmd_train_encoder(args, cfg, seed, out):
    from . import encoder, gp, optics, pipeline
    from .preprocess import preprocess_batch

    grids, states, _, _, kind = optics.load_dataset(args.dataset)
    if grids.shape[0] == 0:
        raise ConfigError(f"dataset {args.dataset} is empty")
    spectra = grids if kind == "spectrum" else preprocess_batch(grids)
    tcfg = cfgmod.build(encoder.TrainConfig, cfg, "encoder", seed=seed, epochs=args.epochs)
    params, elbo_log = encoder.train_vae(spectra, tcfg)
    out.mkdir(parents=True, exist_ok=True)
    encoder.save_params(params, out / "encoder.bin", elbo_log)
    print(f"encoder: final ELBO {elbo_log[-1]:.4g}, weights at {out / 'encoder.bin'}")
    if states is not None and not args.no_model:
        section = dict(cfg.get("gp", {}))
        knots = _pop(section, "knots", int, 7)
        extent = _pop(section, "extent", float, 200.0)
        if section:
            raise ConfigError(f"unknown gp keys {sorted(section)}")
        model = pipeline.build_image_model(params, states, spectra, knots, extent)
        gp.save_model(model, out / "model")
        print(f"GP model at {out / 'model'}.json")


def _calibration_source(source, cfg, args, x0, rng, n):
    """(source object, GPModel) for the chosen observation path."""
    from . import encoder, gp, optics, pipeline, testbed

    if source == "testbed":
        overrides = cfgmod.typed(cfg.get("testbed", {}), testbed.ScenarioSpec)
        overrides.setdefault("n", n)
        smap, model = testbed.make_scenario(args.scenario, **overrides)
        return testbed.TestbedSource(smap, x0, rng), model
    if not (args.encoder and args.model):
        raise ConfigError("image sources need --encoder and --model")
    params = encoder.load_params(args.encoder)
    model = gp.load_model(args.model)
    mode = "wave" if source == "wave" else "analytic_even"
    section = {k: v for k, v in cfg.get("simulate", {}).items() if k not in DATASET_KEYS}
    sim = cfgmod.build(optics.SimConfig, {"simulate": section}, "simulate", mode=mode)
    return pipeline.ImageSource(params, sim, x0, rng), model


def cmd_calibrate(args, cfg, seed, out):
    from . import em

    ecfg = cfgmod.build(em.EMConfig, cfg, "em", horizon=args.horizon)
    rng = np.random.default_rng(seed)
    n = 3
    if args.x0 is not None:
        x0 = np.array(_floats(args.x0))
        n = x0.size
    else:
        x0 = rng.uniform(-ecfg.box, ecfg.box, size=n)
    src, model = _calibration_source(args.source, cfg, args, x0, rng, n)
    if model.n != x0.size:
        raise ConfigError(f"model has n = {model.n} but x0 has {x0.size} components")
    trace = em.run_calibration(src, model, ecfg, rng, x0_true=x0)
    n = x0.size
    header = (["step"] + [f"x0hat_{i}" for i in range(n)] + ["error", "elbo"]
              + [f"u_{i}" for i in range(n)])
    rows = []
    for t, (est, err, val, u) in enumerate(zip(trace.estimates, trace.errors, trace.elbos, trace.inputs)):
        rows.append([t] + [repr(float(v)) for v in est] + [repr(err), repr(float(val))]
                    + [repr(float(v)) for v in u])
    _write_csv(out / "trace.csv", header, rows)
    print(f"x0 = {np.round(x0, 2)}  estimate = {np.round(trace.estimates[-1], 2)}  "
          f"error = {trace.errors[-1]:.3g} after {len(trace) - 1} inputs")


def cmd_benchmark(args, cfg, seed, out):
    from . import bench, em, testbed

    section = dict(cfg.get("benchmark", {}))
    kw = cfgmod.typed(section, bench.BenchmarkConfig) if section else {}
    for key in ("runs", "workers", "scenario", "source", "horizon"):
        if getattr(args, key) is not None:
            kw[key] = getattr(args, key)
    if args.encoder:
        kw["encoder_path"] = args.encoder
    if args.model:
        kw["model_path"] = args.model
    kw["testbed"] = cfgmod.typed(cfg.get("testbed", {}), testbed.ScenarioSpec)
    kw["em"] = cfgmod.typed(cfg.get("em", {}), em.EMConfig)
    kw["seed"] = seed
    kw["out"] = str(out)
    bcfg = bench.BenchmarkConfig(**kw)
    result = bench.run_benchmark(bcfg)
    bench.emit_results(result, out)
    for m in result.methods:
        c = bench.quantile_curves(result.errors[m])
        print(f"{m:12s} median error at step {bcfg.horizon}: {c[-1, 0]:.3g}  "
              f"failures: {len(result.failures[m])}")
    print(f"results in {out}")


def cmd_ident_check(args, cfg, seed, out):
    from . import identifiability as ident

    icfg = cfgmod.build(ident.IdentConfig, cfg, "ident", family=args.family, seed=seed)
    results = ident.run_ident(icfg)
    rows = [[r.name, "pass" if r.passed else "fail", repr(float(r.value))] for r in results]
    _write_csv(out / "verdicts.csv", ["check", "verdict", "value"], rows)
    for r in results:
        print(f"{r.name:10s} {'pass' if r.passed else 'FAIL'}  {r.value:.4g}")
    verdict = "identifiable" if ident.identifiable(results) else "NOT identifiable"
    print(f"{icfg.family} basis (n={icfg.n}, m={icfg.m}): {verdict}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="INI file with per-module sections")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (env RONCHI_SEED)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (env RONCHI_OUT)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="ronchi", parents=[common],
                                description="Ronchigram aberration calibration toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="render a labelled dataset")
    s.add_argument("--count", type=int)
    s.add_argument("--mode", choices=("wave", "analytic_even"))
    s.add_argument("--kind", choices=("counts", "spectrum"))
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train-encoder", parents=[common], help="train the VAE on a dataset")
    t.add_argument("--dataset", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--no-model", action="store_true", help="skip fitting the GP latent model")
    t.set_defaults(func=cmd_train_encoder)

    c = sub.add_parser("calibrate", parents=[common], help="run one calibration and write its trace")
    c.add_argument("--source", choices=("wave", "analytic", "testbed"), default="testbed")
    c.add_argument("--encoder")
    c.add_argument("--model")
    c.add_argument("--scenario", default="mismatch-0.3")
    c.add_argument("--x0", help="true state, comma separated (default: uniform in the box)")
    c.add_argument("--horizon", type=int)
    c.set_defaults(func=cmd_calibrate)

    b = sub.add_parser("benchmark", parents=[common], help="Monte-Carlo comparison of methods")
    b.add_argument("--runs", type=int)
    b.add_argument("--workers", type=int)
    b.add_argument("--scenario")
    b.add_argument("--source", choices=("wave", "analytic", "testbed"))
    b.add_argument("--horizon", type=int)
    b.add_argument("--encoder")
    b.add_argument("--model")
    b.set_defaults(func=cmd_benchmark)

    i = sub.add_parser("ident-check", parents=[common], help="identifiability report for a basis")
    i.add_argument("--family")
    i.set_defaults(func=cmd_ident_check)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load(getattr(args, "config", None))
        seed = cfgmod.resolve_seed(getattr(args, "seed", None))
        out = cfgmod.resolve_out(getattr(args, "out", None), default=f"ronchi-{args.command}")
        args.func(args, cfg, seed, Path(out))
    except RonchiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
