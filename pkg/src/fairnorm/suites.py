"""Randomized verification suites: interlacing, projection algebra, mean-gap bound, GD convergence.

Each suite runs independent seeded trials (optionally on a thread pool; rows
come back in trial order either way) and returns per-trial rows plus a
summary with one pass flag per invariant.
"""
from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fairness import check_mean_gap_bound
from .graph import operator_from_adjacency
from .spectral import LinearGNNConfig, run_paired_trial, verify_interlacing, verify_projection_algebra

SUITES = ("interlacing", "projection", "bound", "convergence")
DEFAULT_TRIALS = {"interlacing": 1000, "projection": 500, "bound": 1000, "convergence": 200}
DOMINANCE_REQUIRED = 0.95


@dataclass
class SuiteResult:
    name: str
    rows: list  # one dict per trial, same keys in every row
    summary: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return bool(self.summary.get("pass", False))


def thread_count() -> int:
    env = os.environ.get("FAIRNORM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _fan_out(fn, n_trials, threads):
    threads = thread_count() if threads is None else max(1, threads)
    if threads == 1:
        return [fn(i) for i in range(n_trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_trials)))


def _random_partition(rng, n):
    s = np.zeros(n, dtype=np.int64)
    k = int(rng.integers(1, n))
    s[rng.permutation(n)[:k]] = 1
    return s


def _interlacing_trial(seed, i):
    rng = np.random.default_rng([seed, i])
    n = int(rng.integers(6, 61))
    p = rng.uniform(0.05, 0.6)
    upper = np.triu(rng.random((n, n)) < p, k=1)
    adj = (upper | upper.T).astype(np.float64)
    s = _random_partition(rng, n)
    q = operator_from_adjacency(adj, s).q.toarray()
    rep = verify_interlacing(q, s)
    return {"trial": i, "n": n, "edge_prob": p, "group1": int(s.sum()),
            "sigma_max": float(rep.lam[-1]), "gamma_zero_2": float(rep.gamma[1]),
            "max_violation": rep.max_violation, "tol": rep.tol, "ok": rep.ok}


def _projection_trial(seed, i):
    rng = np.random.default_rng([seed, i])
    n = int(rng.integers(2, 129))
    s = _random_partition(rng, n)
    rep = verify_projection_algebra(s)
    return {"trial": i, "n": n, "group1": int(s.sum()), "max_error": rep["max_error"],
            "symmetric": rep["symmetric"], "idempotent": rep["idempotent"],
            "commute": rep["commute"], "annihilate": rep["annihilate"], "ok": rep["ok"]}


def _bound_trial(seed, i):
    rng = np.random.default_rng([seed, i])
    f = int(rng.integers(1, 17))
    sizes = rng.integers(1, 65, size=2)
    scale = 10.0 ** rng.uniform(-2, 1)
    offsets = rng.normal(0.0, 2.0, size=(2, f))
    reps = [offsets[g][:, None] + scale * rng.standard_normal((f, sizes[g])) for g in (0, 1)]
    rows = []
    for act in ("relu", "sigmoid"):
        for p in (1, 2, np.inf):
            r = check_mean_gap_bound(reps[0], reps[1], act, p)
            rows.append((act, p, r))
    worst = max(rows, key=lambda t: t[2].mu_gap_p - t[2].bound_rhs)
    return {"trial": i, "f": f, "size0": int(sizes[0]), "size1": int(sizes[1]),
            "worst_activation": worst[0], "worst_p": str(worst[1]),
            "worst_slack": float(worst[2].bound_rhs - worst[2].mu_gap_p),
            "ok": all(r.holds for _, _, r in rows)}


def _convergence_trial(seed, i, cfg):
    t = run_paired_trial(cfg, seed + i)
    return {"trial": i, "seed": seed + i, "n": t.n_nodes, "f": t.f_features,
            "rate_vanilla": t.rate_vanilla, "rate_shift": t.rate_shift,
            "epochs_vanilla": t.vanilla.epochs_to_threshold,
            "epochs_shift": t.shift.epochs_to_threshold,
            "envelope_violation_vanilla": t.vanilla.max_envelope_violation,
            "envelope_violation_shift": t.shift.max_envelope_violation,
            "resamples": t.resamples,
            "dominates": bool(t.rate_shift <= t.rate_vanilla),
            "ok": bool(t.vanilla.envelope_ok and t.shift.envelope_ok)}


def run_suite(name: str, trials: int | None = None, seed: int = 0, threads: int | None = None,
              convergence_config: LinearGNNConfig | None = None) -> SuiteResult:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")
    trials = DEFAULT_TRIALS[name] if trials is None else int(trials)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    start = time.perf_counter()
    if name == "convergence":
        cfg = convergence_config or LinearGNNConfig()
        rows = _fan_out(lambda i: _convergence_trial(seed, i, cfg), trials, threads)
    else:
        fn = {"interlacing": _interlacing_trial, "projection": _projection_trial,
              "bound": _bound_trial}[name]
        rows = _fan_out(lambda i: fn(seed, i), trials, threads)
    n_ok = sum(r["ok"] for r in rows)
    summary = {"suite": name, "trials": trials, "seed": seed, "passed": n_ok,
               "failed": trials - n_ok, "all_trials_ok": n_ok == trials}
    if name == "convergence":
        rv = np.array([r["rate_vanilla"] for r in rows])
        rs = np.array([r["rate_shift"] for r in rows])
        frac = float(np.mean(rs <= rv))
        summary.update({
            "dominance_fraction": frac,
            "dominance_ok": frac > DOMINANCE_REQUIRED,
            "median_rate_vanilla": float(np.median(rv)),
            "median_rate_shift": float(np.median(rs)),
            "median_ok": bool(np.median(rs) <= np.median(rv)),
            "envelope_ok": n_ok == trials,
        })
        summary["pass"] = bool(summary["dominance_ok"] and summary["median_ok"]
                               and summary["envelope_ok"])
    else:
        summary["pass"] = n_ok == trials
    summary["elapsed_s"] = time.perf_counter() - start
    return SuiteResult(name=name, rows=rows, summary=summary)
