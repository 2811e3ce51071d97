"""Ensemble MAPE against ordinary least squares on the three-way-interaction synthetic system.

    python3 scripts/synthetic_accuracy.py --seeds 0 1 2 3 4 5 6 7 8 9
"""

import argparse
import json

from perfbnn import experiments, metrics, synthetic


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(10)))
    ap.add_argument("--n-train", type=int, default=300)
    ap.add_argument("--n-test", type=int, default=1000)
    ap.add_argument("--out", help="write per-seed results as JSON")
    args = ap.parse_args()

    system = synthetic.threeway_system()
    trials = []
    print(f"{'seed':>4} {'depth':>5} {'ensemble':>9} {'ols':>8} {'ratio':>6} {'secs':>6}")
    for seed in args.seeds:
        t = experiments.run_trial(system, seed, args.n_train, args.n_test)
        trials.append(t)
        print(f"{seed:>4} {t.depth:>5} {t.mape:>9.2f} {t.ols_mape:>8.2f} {t.mape / t.ols_mape:>6.2f} "
              f"{t.seconds:>6.0f}", flush=True)

    if len(trials) >= 2:
        ens = metrics.summarize([t.mape for t in trials])
        ols = metrics.summarize([t.ols_mape for t in trials])
        print(f"ensemble MAPE {ens.mean:.2f} +/- {ens.margin:.2f}; OLS {ols.mean:.2f} +/- {ols.margin:.2f}")
        print(f"Welch (ensemble vs OLS): {metrics.welch_t_test([t.mape for t in trials], [t.ols_mape for t in trials])}")
    if args.out:
        with open(args.out, "w") as f:
            json.dump([t.to_dict() for t in trials], f, indent=1)


if __name__ == "__main__":
    main()
