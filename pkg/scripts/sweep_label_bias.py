"""Fairness direction as the generator's label bias varies.

    python scripts/sweep_label_bias.py [--biases 0.0 0.1 0.2 0.3] [--seeds 5]
"""
import argparse

from fairnorm.benchmark import BenchmarkConfig, fairness_direction


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--biases", type=float, nargs="+", default=[0.0, 0.1, 0.2, 0.3])
    p.add_argument("--seeds", type=int, default=5)
    a = p.parse_args()
    for bias in a.biases:
        cfg = BenchmarkConfig(seeds=tuple(range(a.seeds)), data_overrides={"label_bias": bias})
        s = fairness_direction(cfg)
        b, f = s["base"], s["fairnorm"]
        print(f"bias {bias:.2f}: dsp {b['median_dsp']:.3f} -> {f['median_dsp']:.3f}, "
              f"deo {b['median_deo']:.3f} -> {f['median_deo']:.3f}, "
              f"acc {b['median_accuracy']:.3f} -> {f['median_accuracy']:.3f}")


if __name__ == "__main__":
    main()
