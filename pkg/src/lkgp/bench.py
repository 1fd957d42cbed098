"""Resource benchmarks: latent Kronecker vs dense kernel matrices.

Both benchmarks report instrumented counts (exact, deterministic) next to
wall-clock timings (noisy). Records are plain dicts ready for JSON lines.
"""
from __future__ import annotations

import logging
import math
import statistics
import time

import numpy as np

from .grid import Uniform, generate_mask
from .kernels import SEKernel
from .linops import CostCounters, LatentKroneckerOperator, breakeven_points, kron_mvm, observed_kernel_matrix

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_DENSE_CAP = 200_000_000
# element budget for the row block used to time dense MVMs that exceed the cap
TIMING_BLOCK_ELEMENTS = 1 << 24


def _timed(fn, reps):
    times = []
    out = None
    for _ in range(reps):
        t0 = time.perf_counter()
        out = fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return out, {"mean": statistics.fmean(times), "median": statistics.median(times)}


def dense_kernel_matrix(kernel, X, block=2048):
    """``kernel(X, X)`` filled block-row by block-row to bound temporaries."""
    n = X.shape[0]
    K = np.empty((n, n))
    for lo in range(0, n, block):
        K[lo:lo + block] = kernel.matrix(X[lo:lo + block], X)
    return K


def synth_bench(sizes, dims=10, repetitions=100, seed=0, dense_cap=DEFAULT_DENSE_CAP):
    """Kernel evaluation and MVM cost on a complete ``p x p`` grid per size ``n``.

    Inputs are i.i.d. uniform on ``[0, 1]^dims`` for both factors and the
    kernel is a product of squared exponentials, so the dense path is an SE
    kernel on the concatenated ``2 * dims`` features.
    """
    config = {"sizes": [int(s) for s in sizes], "dims": dims, "repetitions": repetitions,
              "seed": seed, "dense_cap": dense_cap, "input_law": f"uniform[0,1]^{dims}"}
    records = []
    for size in config["sizes"]:
        p = q = max(1, int(round(math.sqrt(size))))
        n = p * q
        rng = np.random.default_rng([seed, size])
        S = rng.uniform(size=(p, dims))
        T = rng.uniform(size=(q, dims))
        x = rng.standard_normal(n)
        ks, kt = SEKernel(dims=dims), SEKernel(dims=dims)

        counters = CostCounters()
        (K_SS, K_TT), kernel_ms = _timed(lambda: (ks.matrix(S), kt.matrix(T)), repetitions)
        counters.kernel_evals = p * p + q * q
        _, mvm_ms = _timed(lambda: kron_mvm(K_SS, K_TT, x), repetitions)
        kron_mvm(K_SS, K_TT, x, counters)
        counters.observe_storage(p * p + q * q + n)
        latent = {"kernel_ms": kernel_ms, "mvm_ms": mvm_ms, **counters.as_dict()}

        dense_counts = {"mults": n * n, "kernel_evals": n * n, "peak_elements": n * n + n}
        if n * n > dense_cap:
            dense = {"skipped": "exceeds budget", "elements": n * n, "cap": dense_cap, **dense_counts}
        else:
            X = np.hstack([np.repeat(S, q, axis=0), np.tile(T, (p, 1))])
            kx = SEKernel(dims=2 * dims)
            K, dk_ms = _timed(lambda: dense_kernel_matrix(kx, X), max(1, min(repetitions, 3)))
            _, dm_ms = _timed(lambda: K @ x, repetitions)
            del K
            dense = {"kernel_ms": dk_ms, "mvm_ms": dm_ms, **dense_counts}
        records.append({
            "schema_version": SCHEMA_VERSION, "command": "synth-bench", "config": config,
            "n": n, "p": p, "q": q, "latent": latent, "dense": dense,
            "mult_ratio": (n * n) / latent["mults"],
        })
    return records


def _crossover(gammas, ratios):
    """Missing ratio where ``dense / latent`` first drops through 1 (linear interpolation)."""
    pts = [(g, r) for g, r in zip(gammas, ratios) if r is not None]
    for (g0, r0), (g1, r1) in zip(pts, pts[1:]):
        if r0 >= 1.0 >= r1 and r0 != r1:
            return g0 + (g1 - g0) * (r0 - 1.0) / (r0 - r1)
    return None


def _dense_mvm_ms(K_SS, K_TT, mask, x, reps, dense_cap):
    """Time a dense observed-covariance MVM; extrapolate from a row block above the cap."""
    n = mask.count
    if n * n <= dense_cap:
        K = np.empty((n, n))
        step = max(1, TIMING_BLOCK_ELEMENTS // n)
        for lo in range(0, n, step):
            K[lo:lo + step] = observed_kernel_matrix(K_SS, K_TT, mask, rows=mask.observed[lo:lo + step])
        _, ms = _timed(lambda: K @ x, reps)
        return ms, False
    rows = max(1, min(n, TIMING_BLOCK_ELEMENTS // n))
    K = observed_kernel_matrix(K_SS, K_TT, mask, rows=mask.observed[:rows])
    _, ms = _timed(lambda: K @ x, reps)
    return {k: v * n / rows for k, v in ms.items()}, True


def breakeven(p, q, ratios, repetitions=10, seed=0, dims=1, dense_cap=DEFAULT_DENSE_CAP):
    """Sweep the missing ratio and locate where latent and dense MVMs cost the same.

    Returns one record per ratio followed by a summary record holding the
    analytic break-even points and the empirical crossovers (counted
    multiplications, counted storage and wall-clock).
    """
    config = {"p": p, "q": q, "ratios": [float(r) for r in ratios], "repetitions": repetitions,
              "seed": seed, "dims": dims, "dense_cap": dense_cap}
    rng = np.random.default_rng(seed)
    S = rng.uniform(size=(p, dims))
    T = rng.uniform(size=(q, dims))
    ks, kt = SEKernel(dims=dims), SEKernel(dims=dims)
    K_SS, K_TT = ks.matrix(S), kt.matrix(T)
    records = []
    for i, gamma in enumerate(config["ratios"]):
        mask = generate_mask(p, q, Uniform(gamma), seed=[seed, i])
        n = mask.count
        op = LatentKroneckerOperator(K_SS, K_TT, mask)
        x = np.random.default_rng([seed, i, 1]).standard_normal(n)
        op.matvec(x)
        latent = dict(op.counters.as_dict())
        _, latent_ms = _timed(lambda: op.matvec(x), repetitions)
        dense_ms, extrapolated = _dense_mvm_ms(K_SS, K_TT, mask, x, repetitions, dense_cap)
        records.append({
            "schema_version": SCHEMA_VERSION, "command": "breakeven", "config": config,
            "gamma": gamma, "missing_ratio": mask.missing_ratio, "n": n,
            "latent": {**latent, "kernel_elements": p * p + q * q, "mvm_ms": latent_ms},
            "dense": {"mults": n * n, "peak_elements": n * n, "kernel_elements": n * n,
                      "mvm_ms": dense_ms, "extrapolated": extrapolated},
        })
    g_time, g_mem = breakeven_points(p, q)
    gammas = [r["missing_ratio"] for r in records]
    summary = {
        "schema_version": SCHEMA_VERSION, "command": "breakeven", "config": config, "kind": "summary",
        "gamma_time": g_time, "gamma_mem": g_mem,
        "empirical_counted_time": _crossover(
            gammas, [r["dense"]["mults"] / r["latent"]["mults"] for r in records]),
        "empirical_counted_mem": _crossover(
            gammas, [r["dense"]["kernel_elements"] / r["latent"]["kernel_elements"] for r in records]),
        "empirical_wallclock_time": _crossover(
            gammas, [r["dense"]["mvm_ms"]["median"] / r["latent"]["mvm_ms"]["median"] for r in records]),
    }
    records.append(summary)
    return records


WALL_FIELDS = ("kernel_ms", "mvm_ms", "wall_time", "empirical_wallclock_time")


def strip_wall_times(obj):
    """Copy of a record with every wall-clock field removed (for reproducibility checks)."""
    if isinstance(obj, dict):
        return {k: strip_wall_times(v) for k, v in obj.items() if k not in WALL_FIELDS}
    if isinstance(obj, list):
        return [strip_wall_times(v) for v in obj]
    return obj


def tidy_rows(records):
    """Flatten records into ``(key -> scalar)`` rows for CSV output."""
    rows = []
    for rec in records:
        row = {}

        def walk(prefix, v):
            if isinstance(v, dict):
                for k, w in v.items():
                    walk(f"{prefix}.{k}" if prefix else k, w)
            elif not isinstance(v, list):
                row[prefix] = v

        walk("", {k: v for k, v in rec.items() if k != "config"})
        rows.append(row)
    return rows
