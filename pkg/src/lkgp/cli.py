"""``lkgp`` command line: benchmarks, break-even sweep, fit, predict, verify.

Exit codes: 0 success, 1 verification failure, 2 usage or data error,
3 numerical failure. ``LKGP_THREADS`` caps BLAS threads.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import bench
from .errors import LkgpError, NumericalError
from .grid import PartialGrid, Standardization, load_csv, standardize
from .kernels import kernel_from_dict
from .model import (
    LkgpModel,
    fit,
    load_checkpoint,
    metrics,
    pathwise_posterior_samples,
    predict,
    save_checkpoint,
)
from .solvers import SolverConfig
from .verify import format_table, run_all

log = logging.getLogger("lkgp")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3

DEFAULTS = {
    "synth-bench": {"sizes": "1e2,1e3,1e4", "dims": 10, "reps": 100, "seed": 0,
                    "dense_cap": bench.DEFAULT_DENSE_CAP, "results": None, "csv": None},
    "breakeven": {"p": 512, "q": 512, "ratios": "0:0.95:0.05", "reps": 10, "seed": 0, "dims": 1,
                  "dense_cap": bench.DEFAULT_DENSE_CAP, "results": None, "csv": None},
    "fit": {"data": None, "kernel_config": None, "steps": 100, "lr": 0.1, "tol": 0.01,
            "max_iters": 1000, "precond_rank": 100, "probes": 16, "seed": 0,
            "standardize": True, "out": "checkpoint.json", "results": None},
    "predict": {"checkpoint": None, "data": None, "out": "predictions.csv", "targets": "missing",
                "cells": None, "test_data": None, "samples": 64, "tol": 0.01, "max_iters": 1000,
                "precond_rank": 100, "seed": 0, "results": None},
    "verify": {"seed": 0},
}


class UsageError(Exception):
    pass


def _floats(text):
    """``"1e2,1e3"`` or ``"start:stop:step"`` (inclusive stop) to a float list."""
    text = str(text).strip()
    if ":" in text:
        lo, hi, step = (float(v) for v in text.split(":"))
        count = int(round((hi - lo) / step)) + 1
        return [round(lo + i * step, 12) for i in range(count)]
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser():
    ap = argparse.ArgumentParser(prog="lkgp", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(p):
        p.add_argument("--config", default=S, help="JSON file of option values; flags override it")
        p.add_argument("--seed", type=int, default=S)

    p = sub.add_parser("synth-bench", help="kernel-evaluation and MVM cost, latent vs dense")
    common(p)
    p.add_argument("--sizes", default=S, help="comma-separated n values, e.g. 1e2,1e3,1e4")
    p.add_argument("--dims", type=int, default=S)
    p.add_argument("--reps", type=int, default=S)
    p.add_argument("--dense-cap", type=int, default=S, help="max dense matrix elements")
    p.add_argument("--results", default=S, help="append JSON lines here")
    p.add_argument("--csv", default=S, help="write a tidy CSV here")

    p = sub.add_parser("breakeven", help="sweep missing ratios and locate the latent/dense crossover")
    common(p)
    p.add_argument("--p", type=int, default=S)
    p.add_argument("--q", type=int, default=S)
    p.add_argument("--ratios", default=S, help="comma list or start:stop:step")
    p.add_argument("--reps", type=int, default=S)
    p.add_argument("--dims", type=int, default=S)
    p.add_argument("--dense-cap", type=int, default=S)
    p.add_argument("--results", default=S)
    p.add_argument("--csv", default=S)

    p = sub.add_parser("fit", help="fit hyperparameters on a CSV dataset")
    common(p)
    p.add_argument("--data", default=S)
    p.add_argument("--kernel-config", default=S, help="JSON file with 'spatial', 'temporal', optional 'noise'")
    p.add_argument("--steps", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--tol", type=float, default=S)
    p.add_argument("--max-iters", type=int, default=S)
    p.add_argument("--precond-rank", type=int, default=S)
    p.add_argument("--probes", type=int, default=S)
    p.add_argument("--no-standardize", dest="standardize", action="store_false", default=S)
    p.add_argument("--out", default=S, help="checkpoint path")
    p.add_argument("--results", default=S)

    p = sub.add_parser("predict", help="posterior predictions at grid cells from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", default=S)
    p.add_argument("--data", default=S)
    p.add_argument("--out", default=S)
    p.add_argument("--targets", choices=["missing", "observed", "all", "cells"], default=S)
    p.add_argument("--cells", default=S, help="j:k pairs, comma-separated (with --targets cells)")
    p.add_argument("--test-data", default=S, help="CSV of held-out cells for metrics")
    p.add_argument("--samples", type=int, default=S)
    p.add_argument("--tol", type=float, default=S)
    p.add_argument("--max-iters", type=int, default=S)
    p.add_argument("--precond-rank", type=int, default=S)
    p.add_argument("--results", default=S)

    p = sub.add_parser("verify", help="run the small-instance oracle suite")
    common(p)
    return ap


def resolve_config(command, given):
    """Defaults, then the ``--config`` file, then explicit flags."""
    cfg = dict(DEFAULTS[command])
    path = given.pop("config", None)
    if path:
        try:
            file_cfg = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(file_cfg)
    cfg.update(given)
    return cfg


def _emit(records, cfg):
    for rec in records:
        print(json.dumps(rec, default=_jsonable))
    if cfg.get("results"):
        with open(cfg["results"], "a", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, default=_jsonable) + "\n")
    if cfg.get("csv"):
        rows = bench.tidy_rows(records)
        keys = sorted({k for r in rows for k in r})
        with open(cfg["csv"], "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            w.writerows(rows)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def cmd_synth_bench(cfg):
    records = bench.synth_bench(_floats(cfg["sizes"]), cfg["dims"], cfg["reps"], cfg["seed"], cfg["dense_cap"])
    _emit(records, cfg)
    return EXIT_OK


def cmd_breakeven(cfg):
    records = bench.breakeven(cfg["p"], cfg["q"], _floats(cfg["ratios"]), cfg["reps"], cfg["seed"],
                              cfg["dims"], cfg["dense_cap"])
    _emit(records, cfg)
    return EXIT_OK


def _solver_config(cfg):
    return SolverConfig(rel_tol=cfg["tol"], max_iters=cfg["max_iters"], precond_rank=cfg["precond_rank"],
                        seed=cfg["seed"])


def _kernels_for(grid: PartialGrid, kernel_config):
    doc = {}
    if kernel_config:
        doc = json.loads(Path(kernel_config).read_text())
    ks = kernel_from_dict(doc.get("spatial", {"family": "se"}), dims=grid.s_points.shape[1])
    kt = kernel_from_dict(doc.get("temporal", {"family": "se"}), dims=grid.t_points.shape[1])
    return ks, kt, doc.get("noise")


def cmd_fit(cfg):
    if not cfg["data"]:
        raise UsageError("fit needs --data")
    grid = load_csv(cfg["data"])
    st = None
    if cfg["standardize"]:
        y, st = standardize(grid.y)
        grid = grid.with_y(y)
    ks, kt, noise = _kernels_for(grid, cfg["kernel_config"])
    model = LkgpModel(grid, ks, kt) if noise is None else LkgpModel(grid, ks, kt, float(noise))
    fitted, report = fit(model, cfg["steps"], cfg["lr"], _solver_config(cfg), cfg["probes"], seed=cfg["seed"])
    save_checkpoint(cfg["out"], fitted, st, data_path=cfg["data"])
    record = {"schema_version": bench.SCHEMA_VERSION, "command": "fit", "config": cfg,
              "n": grid.n, "p": grid.p, "q": grid.q, "missing_ratio": grid.mask.missing_ratio,
              "params": dict(zip(fitted.param_names(), fitted.params.tolist())),
              "noise": fitted.noise, "fit": report.to_dict()}
    _emit([record], cfg)
    if report.aborted:
        log.error("fit aborted: %s", report.aborted)
        return EXIT_NUMERICAL
    return EXIT_OK


def _parse_cells(text):
    out = []
    for item in str(text).split(","):
        j, k = item.split(":")
        out.append((int(j), int(k)))
    return out


def _lookup_cells(grid: PartialGrid, path):
    """Map the rows of a held-out CSV onto cells of ``grid`` by exact feature match."""
    test = load_csv(path)
    s_index = {row.tobytes(): j for j, row in enumerate(grid.s_points)}
    t_index = {row.tobytes(): k for k, row in enumerate(grid.t_points)}
    cells = []
    for j, k in test.cells():
        sj = s_index.get(test.s_points[j].tobytes())
        tk = t_index.get(test.t_points[k].tobytes())
        if sj is None or tk is None:
            raise UsageError(f"{path}: test point is not on the training grid")
        cells.append(sj * grid.q + tk)
    return np.asarray(cells, dtype=np.int64), test.y


def _metric_row(pred, truth):
    """Standardized units; ``nll`` in observation space, ``nll_latent`` without noise."""
    rmse, nll = metrics(pred, truth)
    return {"rmse": rmse, "nll": nll, "nll_latent": metrics(pred, truth, space="latent")[1]}


def cmd_predict(cfg):
    if not cfg["checkpoint"] or not cfg["data"]:
        raise UsageError("predict needs --checkpoint and --data")
    ks, kt, noise, st, doc = load_checkpoint(cfg["checkpoint"])
    grid = load_csv(cfg["data"])
    st = st or Standardization.identity()
    model = LkgpModel(grid.with_y(st.apply(grid.y)), ks, kt, noise)

    targets = cfg["targets"]
    if targets == "missing":
        cells = grid.mask.missing()
    elif targets == "observed":
        cells = grid.mask.observed
    elif targets == "all":
        cells = np.arange(grid.mask.pq)
    else:
        if not cfg["cells"]:
            raise UsageError("--targets cells needs --cells")
        cells = np.array([j * grid.q + k for j, k in _parse_cells(cfg["cells"])], dtype=np.int64)
    if cells.size == 0:
        warnings.warn("no target cells to predict; the grid has no missing cells")

    t0 = time.perf_counter()
    samples = pathwise_posterior_samples(model, cfg["samples"], _solver_config(cfg), seed=cfg["seed"])
    wall = time.perf_counter() - t0

    metric_rows = {}
    train = predict(model, samples, grid.mask.observed)
    metric_rows["train"] = _metric_row(train, model.data.y)
    if cfg["test_data"]:
        test_cells, test_y = _lookup_cells(grid, cfg["test_data"])
        test = predict(model, samples, test_cells)
        metric_rows["test"] = _metric_row(test, st.apply(test_y))

    pred = predict(model, samples, cells).destandardize(st) if cells.size else None
    _write_predictions(cfg["out"], grid, pred)
    record = {"schema_version": bench.SCHEMA_VERSION, "command": "predict", "config": cfg,
              "n_targets": int(cells.size), "n_samples": samples.n_samples,
              "failed_samples": samples.failed.tolist(), "metrics": metric_rows,
              "solver": {"max_iterations": max(r.iterations for r in samples.reports),
                         "mean_iterations": float(np.mean([r.iterations for r in samples.reports]))},
              "wall_time": wall}
    _emit([record], cfg)
    return EXIT_OK


def _write_predictions(path, grid, pred):
    s_names = [f"s:{i}" for i in range(grid.s_points.shape[1])]
    t_names = [f"t:{i}" for i in range(grid.t_points.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "j", "k"] + s_names + t_names + ["mean", "variance", "latent_variance"])
        if pred is None:
            return
        for c, m, v, lv in zip(pred.cells, pred.mean, pred.variance, pred.latent_variance):
            j, k = divmod(int(c), grid.q)
            w.writerow([int(c), j, k] + [repr(float(x)) for x in grid.s_points[j]]
                       + [repr(float(x)) for x in grid.t_points[k]] + [repr(float(m)), repr(float(v)), repr(float(lv))])


def cmd_verify(cfg):
    results = run_all(cfg["seed"])
    print(format_table(results))
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_VERIFY


COMMANDS = {"synth-bench": cmd_synth_bench, "breakeven": cmd_breakeven, "fit": cmd_fit,
            "predict": cmd_predict, "verify": cmd_verify}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    given = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    try:
        cfg = resolve_config(args.command, given)
        threads = os.environ.get("LKGP_THREADS")
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(int(threads)):
                return COMMANDS[args.command](cfg)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"lkgp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"lkgp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (LkgpError, OSError, ValueError) as exc:
        print(f"lkgp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
