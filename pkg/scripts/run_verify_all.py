"""Run every verification suite at its default trial count and print a summary.

    python scripts/run_verify_all.py [--seed 0]
"""
import argparse
import sys

from fairnorm.suites import SUITES, run_suite


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    ok = True
    for name in SUITES:
        res = run_suite(name, seed=a.seed)
        s = res.summary
        extra = ""
        if name == "convergence":
            extra = (f", dominance {s['dominance_fraction']:.1%}, median rate "
                     f"{s['median_rate_shift']:.3f} vs {s['median_rate_vanilla']:.3f}")
        print(f"{name:12s} {'PASS' if res.ok else 'FAIL'} {s['passed']}/{s['trials']} "
              f"in {s['elapsed_s']:.1f}s{extra}")
        ok &= res.ok
    sys.exit(0 if ok else 3)


if __name__ == "__main__":
    main()
