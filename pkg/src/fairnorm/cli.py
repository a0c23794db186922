"""Command line: ``fairnorm {gen,train,verify,curves}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 invariant violation.
Every run writes ``manifest.json`` into its output directory before doing work.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import (PRESETS, DataError, SyntheticSpec, compute_stats, generate_synthetic,
                   load_dataset, make_splits, write_dataset)
from .graph import GraphError, build_gcn_operator
from .model import TrainConfig
from .suites import DEFAULT_TRIALS, SUITES, run_suite, thread_count
from .train import LOG_COLUMNS, epochs_to_threshold, train

log = logging.getLogger("fairnorm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3
NORM_FLAGS = {"none": "none", "single": "graphnorm_single", "group": "mnorm_group"}
FAIRNESS_FLAGS = {"none": "none", "fairnorm": "fairnorm", "covariance": "covariance_baseline"}
CURVE_CONFIGS = {
    "none": dict(norm_mode="none"),
    "single": dict(norm_mode="graphnorm_single"),
    "group": dict(norm_mode="mnorm_group"),
    "fairnorm": dict(norm_mode="mnorm_group", fairness_mode="fairnorm"),
    "covariance": dict(norm_mode="mnorm_group", fairness_mode="covariance_baseline"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- serialization -----------------------------------------------------------

def _num(v):
    """Full-precision float text; ints and strings pass through; None becomes empty."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, rows: list[dict], columns=None) -> None:
    columns = list(columns or (rows[0].keys() if rows else []))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_num(r.get(c)) for c in columns])


def blob_hash(path: Path) -> str:
    """Git blob id of a file's contents."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: list
    inputs: dict = field(default_factory=dict)  # file name -> git blob id
    input_hash: str = ""
    outputs: list = field(default_factory=list)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        write_json(path, asdict(self))
        return path


def _inputs(dataset: Path | None) -> tuple[dict, str]:
    if dataset is None:
        return {}, ""
    files = {p.name: blob_hash(p) for p in sorted(dataset.iterdir()) if p.is_file()
             and p.name in ("edges.tsv", "features.csv", "meta.json")}
    joined = "".join(f"{k} {v}\n" for k, v in sorted(files.items()))
    return files, hashlib.sha1(joined.encode()).hexdigest()


def _start(out: Path, command: str, config: dict, seeds, outputs, dataset=None) -> RunManifest:
    out.mkdir(parents=True, exist_ok=True)
    files, digest = _inputs(dataset)
    m = RunManifest(command=command, config=config, seeds=list(seeds), inputs=files,
                    input_hash=digest, outputs=sorted(outputs))
    m.write(out)
    return m


# -- commands ----------------------------------------------------------------

def _spec_from_args(a) -> SyntheticSpec:
    base = dict(PRESETS[a.preset]) if a.preset else {}
    for key in ("n0", "n1", "intra_edge_target", "inter_edge_target", "f", "feature_shift",
                "label_bias", "label_signal", "label_noise", "noise_std", "label_smoothing"):
        v = getattr(a, key)
        if v is not None:
            base[key] = v
    return SyntheticSpec(seed=a.seed, **base)


def cmd_gen(a) -> int:
    spec = _spec_from_args(a)
    out = Path(a.out)
    _start(out, "gen", {"spec": asdict(spec), "split_fractions": list(a.split)}, [a.seed],
           ["edges.tsv", "features.csv", "meta.json", "stats.json"])
    g = generate_synthetic(spec)
    g = g.with_masks(*make_splits(g, tuple(a.split), seed=a.seed))
    write_dataset(g, out, {"generator": asdict(spec), "seed": a.seed,
                           "split_fractions": list(a.split)})
    stats = compute_stats(g)
    write_json(out / "stats.json", stats.as_dict())
    print(json.dumps(_jsonable(stats.as_dict()), sort_keys=True))
    return EXIT_OK


def _config_from_args(a, seed: int, **overrides) -> TrainConfig:
    kw = dict(seed=seed, epochs=a.epochs, lr=a.lr, weight_decay=a.weight_decay,
              hidden_dim=a.hidden, activation=a.activation, norm_mode=NORM_FLAGS[a.norm],
              fairness_mode=FAIRNESS_FLAGS[a.fairness], kappa=a.kappa, tau=a.tau,
              cov_weight=a.cov_weight, norm_position=a.norm_position)
    kw.update(overrides)
    try:
        return TrainConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _seeds(a) -> list[int]:
    k = a.seeds if a.seeds is not None else 1
    if k < 1:
        raise UsageError("--seeds must be >= 1")
    return [a.seed + i for i in range(k)]


def _run_one(graph, config: TrainConfig):
    g = graph.with_masks(*make_splits(graph, config.split_fractions, seed=config.seed))
    return train(g, config, build_gcn_operator(g))


def _parallel(fn, items):
    n = min(thread_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _mean_std(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return {"mean": None, "std": None, "n": 0}
    std = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
    return {"mean": float(np.mean(vals)), "std": std, "n": len(vals)}


def cmd_train(a) -> int:
    seeds = _seeds(a)
    configs = [_config_from_args(a, s) for s in seeds]
    dataset = Path(a.dataset)
    out = Path(a.out)
    outputs = ["aggregate.json"] + [f"log_seed{s}.csv" for s in seeds] + \
              [f"metrics_seed{s}.json" for s in seeds]
    cfg0 = asdict(configs[0])
    cfg0.pop("seed")
    _start(out, "train", cfg0, seeds, outputs, dataset)
    graph = load_dataset(dataset)
    results = _parallel(lambda c: _run_one(graph, c), configs)
    per_seed = []
    for s, r in zip(seeds, results):
        write_csv(out / f"log_seed{s}.csv", r.series, LOG_COLUMNS)
        test = r.test.as_dict() if r.test else {"accuracy": None, "dsp": None, "deo": None}
        rec = {"seed": s, "best_epoch": r.best_epoch, "test": test}
        write_json(out / f"metrics_seed{s}.json", rec)
        per_seed.append(test)
    agg = {"seeds": seeds, "config": cfg0,
           "test": {k: _mean_std([t[k] for t in per_seed]) for k in ("accuracy", "dsp", "deo")}}
    write_json(out / "aggregate.json", agg)
    print(json.dumps(_jsonable(agg["test"]), sort_keys=True))
    return EXIT_OK


def cmd_verify(a) -> int:
    out = Path(a.out)
    names = list(SUITES) if a.suite == "all" else [a.suite]
    outputs = [f"{n}_trials.csv" for n in names] + [f"{n}_summary.json" for n in names]
    trials = {n: (a.trials if a.trials is not None else DEFAULT_TRIALS[n]) for n in names}
    _start(out, "verify", {"suites": names, "trials": trials}, [a.seed], outputs)
    code = EXIT_OK
    for n in names:
        res = run_suite(n, trials=trials[n], seed=a.seed)
        summary = dict(res.summary)
        elapsed = summary.pop("elapsed_s")
        write_csv(out / f"{n}_trials.csv", res.rows)
        write_json(out / f"{n}_summary.json", summary)
        print(f"{n}: {'PASS' if res.ok else 'FAIL'} "
              f"({summary['passed']}/{summary['trials']} trials ok)")
        log.info("%s suite took %.2fs", n, elapsed)
        if not res.ok:
            code = EXIT_INVARIANT
    return code


def cmd_curves(a) -> int:
    names = [c.strip() for c in a.configs.split(",") if c.strip()]
    unknown = [c for c in names if c not in CURVE_CONFIGS]
    if unknown or not names:
        raise UsageError(f"unknown curve configs {unknown}; choose from {sorted(CURVE_CONFIGS)}")
    seeds = _seeds(a)
    dataset = Path(a.dataset)
    out = Path(a.out)
    _start(out, "curves", {"configs": {n: CURVE_CONFIGS[n] for n in names},
                           "base": {k: v for k, v in asdict(_config_from_args(a, 0)).items()
                                    if k not in ("seed", "norm_mode", "fairness_mode")}},
           seeds, ["curves.csv", "curves_summary.json"], dataset)
    graph = load_dataset(dataset)
    jobs = [(n, s, _config_from_args(a, s, **CURVE_CONFIGS[n])) for n in names for s in seeds]
    results = _parallel(lambda j: _run_one(graph, j[2]), jobs)
    rows, summary = [], {}
    for (n, s, _), r in zip(jobs, results):
        for rec in r.series:
            rows.append({"config": n, "seed": s, "epoch": rec["epoch"],
                         "loss_total": rec["loss_total"], "loss_c": rec["loss_c"]})
        if r.series:
            summary.setdefault(n, []).append(
                epochs_to_threshold([x["loss_total"] for x in r.series]))
    write_csv(out / "curves.csv", rows, ["config", "seed", "epoch", "loss_total", "loss_c"])
    report = {n: {"epochs_to_threshold": v, "median": float(np.median(v))}
              for n, v in summary.items()}
    write_json(out / "curves_summary.json", report)
    print(json.dumps(_jsonable(report), sort_keys=True))
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _train_flags(p):
    p.add_argument("--dataset", required=True, help="dataset directory (see `fairnorm gen`)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=None, help="number of consecutive seeds")
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-5)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--activation", choices=("relu", "sigmoid"), default="relu")
    p.add_argument("--norm", choices=tuple(NORM_FLAGS), default="group")
    p.add_argument("--norm-position", choices=("pre", "post"), default="pre")
    p.add_argument("--fairness", choices=tuple(FAIRNESS_FLAGS), default="none")
    p.add_argument("--kappa", type=float, default=100.0)
    p.add_argument("--tau", type=float, default=1e-7)
    p.add_argument("--cov-weight", type=float, default=1.0)
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairnorm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic biased dataset")
    g.add_argument("--preset", choices=sorted(PRESETS), default="pokec-z")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n0", type=int)
    g.add_argument("--n1", type=int)
    g.add_argument("--intra", dest="intra_edge_target", type=int)
    g.add_argument("--inter", dest="inter_edge_target", type=int)
    g.add_argument("--features", dest="f", type=int)
    g.add_argument("--feature-shift", type=float)
    g.add_argument("--label-bias", type=float)
    g.add_argument("--label-signal", type=float)
    g.add_argument("--label-noise", type=float)
    g.add_argument("--label-smoothing", type=int)
    g.add_argument("--noise-std", type=float)
    g.add_argument("--split", type=float, nargs=3, default=(0.5, 0.25, 0.25),
                   metavar=("TRAIN", "VAL", "TEST"))
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train over one or more seeds")
    _train_flags(t)
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("verify", help="run a randomized verification suite")
    v.add_argument("--suite", choices=(*SUITES, "all"), required=True)
    v.add_argument("--trials", type=int, default=None)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("curves", help="training-loss curves per config, long format")
    _train_flags(c)
    c.add_argument("--configs", default="none,single,fairnorm",
                   help=f"comma list from {sorted(CURVE_CONFIGS)}")
    c.set_defaults(func=cmd_curves)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.func(a)
    except UsageError as exc:
        print(f"fairnorm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GraphError, FileNotFoundError) as exc:
        print(f"fairnorm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
