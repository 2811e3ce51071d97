"""Interval calibration before and after per-level scaling on the pairwise synthetic system.

Also reports the nominal-level remapping baseline for comparison. Example:

    python3 scripts/synthetic_calibration.py --seeds 0 1 2 3 4 --out cal.json
"""

import argparse
import json
import statistics

from perfbnn import experiments, metrics, synthetic


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(5)))
    ap.add_argument("--n-train", type=int, default=150)
    ap.add_argument("--n-test", type=int, default=1000)
    ap.add_argument("--out", help="write per-seed results as JSON")
    args = ap.parse_args()

    system = synthetic.pairwise_system()
    trials = []
    print(f"{'seed':>4} {'depth':>5} {'cal before':>10} {'cal after':>9} {'remap':>7} {'a90 before':>10} {'a90 after':>9}")
    for seed in args.seeds:
        t = experiments.run_trial(system, seed, args.n_train, args.n_test)
        trials.append(t)
        print(f"{seed:>4} {t.depth:>5} {t.cal_before:>10.1f} {t.cal_after:>9.1f} {t.cal_platt:>7.1f} "
              f"{t.alpha_at(90, False):>10.1f} {t.alpha_at(90):>9.1f}", flush=True)

    print(f"median cal: before {statistics.median(t.cal_before for t in trials):.1f}, "
          f"after {statistics.median(t.cal_after for t in trials):.1f}, "
          f"remap {statistics.median(t.cal_platt for t in trials):.1f}")
    if len(trials) >= 2:
        d = metrics.welch_t_test([t.cal_after for t in trials], [t.cal_before for t in trials])
        print(f"Welch (scaled vs uncalibrated): {d}")
    if args.out:
        with open(args.out, "w") as f:
            json.dump([t.to_dict() for t in trials], f, indent=1)


if __name__ == "__main__":
    main()
