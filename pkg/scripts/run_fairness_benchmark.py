"""Fairnorm against the unregularized group-normalized model on the synthetic benchmark.

    python scripts/run_fairness_benchmark.py [--seeds 5] [--out results/fairness.json]
"""
import argparse
import json
from pathlib import Path

from fairnorm.benchmark import BenchmarkConfig, fairness_direction


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--preset", default="pokec-z")
    p.add_argument("--out", default=None)
    a = p.parse_args()
    s = fairness_direction(BenchmarkConfig(preset=a.preset, seeds=tuple(range(a.seeds))))
    for name in ("base", "fairnorm"):
        r = s[name]
        print(f"{name:9s} acc {r['median_accuracy']:.3f}  dsp {r['median_dsp']:.3f}  "
              f"deo {r['median_deo']:.3f}  final L_mu {r['median_final_loss_mu']:.3g}")
    print(f"direction holds: {s['pass']}  ({s['elapsed_s']:.0f}s)")
    if a.out:
        Path(a.out).parent.mkdir(parents=True, exist_ok=True)
        Path(a.out).write_text(json.dumps({k: v for k, v in s.items() if k != "elapsed_s"},
                                          indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
