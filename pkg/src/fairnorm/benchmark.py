"""Seeded synthetic benchmark: fairness direction and convergence speed.

Both experiments use the ``pokec-z`` generator preset with one dataset and
one stratified split per seed; the training seed equals the data seed.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import generate_synthetic, make_splits, spec_from_preset
from .graph import build_gcn_operator
from .model import TrainConfig
from .suites import thread_count
from .train import TrainResult, epochs_to_threshold, train

NORM_MODES = ("none", "graphnorm_single", "mnorm_group")


@dataclass
class BenchmarkConfig:
    preset: str = "pokec-z"
    seeds: tuple = (0, 1, 2, 3, 4)
    data_overrides: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    threads: int | None = None


def benchmark_graph(cfg: BenchmarkConfig, seed: int):
    g = generate_synthetic(spec_from_preset(cfg.preset, seed=seed, **cfg.data_overrides))
    return g.with_masks(*make_splits(g, cfg.train.split_fractions, seed=seed))


def run_many(cfg: BenchmarkConfig, variants: dict) -> dict:
    """Train every (variant, seed) pair. ``variants`` maps a name to TrainConfig overrides.

    Returns {name: [TrainResult per seed]}.
    """
    graphs = {s: benchmark_graph(cfg, s) for s in cfg.seeds}
    ops = {s: build_gcn_operator(g) for s, g in graphs.items()}
    jobs = [(name, s, replace(cfg.train, seed=s, **over))
            for name, over in variants.items() for s in cfg.seeds]

    def one(job) -> TrainResult:
        _, s, tc = job
        return train(graphs[s], tc, ops[s])

    n = min(cfg.threads or thread_count(), len(jobs))
    if n <= 1:
        results = [one(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(one, jobs))
    out: dict = {name: [] for name in variants}
    for (name, _, _), r in zip(jobs, results):
        out[name].append(r)
    return out


def _median(values):
    vals = [v for v in values if v is not None]
    return float(np.median(vals)) if vals else None


def fairness_direction(cfg: BenchmarkConfig | None = None) -> dict:
    """Fairnorm against the same group-normalized model with both weights at zero."""
    cfg = cfg or BenchmarkConfig()
    t0 = time.perf_counter()
    runs = run_many(cfg, {
        "base": dict(norm_mode="mnorm_group", fairness_mode="none", kappa=0.0, tau=0.0),
        "fairnorm": dict(norm_mode="mnorm_group", fairness_mode="fairnorm"),
    })
    summary: dict = {}
    for name, results in runs.items():
        tests = [r.test for r in results]
        summary[name] = {
            "accuracy": [t.accuracy for t in tests],
            "dsp": [t.dsp for t in tests],
            "deo": [t.deo for t in tests],
            "final_loss_mu": [r.series[-1]["loss_mu"] for r in results],
        }
        for k in ("accuracy", "dsp", "deo", "final_loss_mu"):
            summary[name]["median_" + k] = _median(summary[name][k])
    b, f = summary["base"], summary["fairnorm"]
    summary["dsp_lower"] = f["median_dsp"] < b["median_dsp"]
    summary["deo_lower"] = f["median_deo"] < b["median_deo"]
    summary["accuracy_gap"] = abs(f["median_accuracy"] - b["median_accuracy"])
    summary["accuracy_ok"] = summary["accuracy_gap"] <= 0.02
    summary["loss_mu_lower"] = f["median_final_loss_mu"] < b["median_final_loss_mu"]
    summary["pass"] = summary["dsp_lower"] and summary["deo_lower"] and summary["accuracy_ok"]
    summary["elapsed_s"] = time.perf_counter() - t0
    return summary


def epochs_to_fixed_loss(losses, threshold: float) -> int | None:
    """First epoch with loss <= threshold, or None if never reached."""
    hit = np.flatnonzero(np.asarray(losses, dtype=np.float64) <= threshold)
    return int(hit[0]) if hit.size else None


def convergence_direction(cfg: BenchmarkConfig | None = None, factor: float = 1.05,
                          fixed_threshold: float | None = None) -> dict:
    """Epochs-to-threshold per normalization mode.

    Two thresholds are reported: ``factor`` times each run's own minimum loss,
    and optionally a fixed absolute loss shared by all runs. A run that never
    reaches the fixed threshold counts as one epoch past the budget.
    """
    cfg = cfg or BenchmarkConfig()
    t0 = time.perf_counter()
    runs = run_many(cfg, {m: dict(norm_mode=m, fairness_mode="none") for m in NORM_MODES})
    summary: dict = {}
    for mode, results in runs.items():
        curves = [[r["loss_total"] for r in res.series] for res in results]
        rel = [epochs_to_threshold(c, factor) for c in curves]
        row = {"relative_epochs": rel, "median_relative": float(np.median(rel)),
               "min_loss": [float(min(c)) for c in curves]}
        if fixed_threshold is not None:
            fixed = [epochs_to_fixed_loss(c, fixed_threshold) for c in curves]
            fixed = [cfg.train.epochs if e is None else e for e in fixed]
            row["fixed_epochs"] = fixed
            row["median_fixed"] = float(np.median(fixed))
        summary[mode] = row
    base = summary["none"]["median_relative"]
    summary["relative_pass"] = all(summary[m]["median_relative"] < base for m in NORM_MODES[1:])
    if fixed_threshold is not None:
        base = summary["none"]["median_fixed"]
        summary["fixed_threshold"] = fixed_threshold
        summary["fixed_pass"] = all(summary[m]["median_fixed"] < base for m in NORM_MODES[1:])
    summary["elapsed_s"] = time.perf_counter() - t0
    return summary


__all__ = ["BenchmarkConfig", "NORM_MODES", "benchmark_graph", "run_many", "fairness_direction",
           "convergence_direction", "epochs_to_fixed_loss"]
