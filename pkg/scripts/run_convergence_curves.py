"""Epochs-to-threshold for each normalization mode on the synthetic benchmark.

Reports both the relative threshold (1.05x each run's own minimum) and a fixed
absolute loss level.

    python scripts/run_convergence_curves.py [--seeds 5] [--fixed 0.1]
"""
import argparse

from fairnorm.benchmark import NORM_MODES, BenchmarkConfig, convergence_direction


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--preset", default="pokec-z")
    p.add_argument("--fixed", type=float, default=0.1)
    p.add_argument("--factor", type=float, default=1.05)
    a = p.parse_args()
    s = convergence_direction(BenchmarkConfig(preset=a.preset, seeds=tuple(range(a.seeds))),
                              factor=a.factor, fixed_threshold=a.fixed)
    print(f"{'mode':18s} {'relative':>9s} {'fixed':>7s}  min loss")
    for m in NORM_MODES:
        r = s[m]
        print(f"{m:18s} {r['median_relative']:9.0f} {r['median_fixed']:7.0f}  "
              f"{min(r['min_loss']):.2e}")
    print(f"relative-threshold direction: {s['relative_pass']}; "
          f"fixed-threshold direction: {s['fixed_pass']} ({s['elapsed_s']:.0f}s)")


if __name__ == "__main__":
    main()
