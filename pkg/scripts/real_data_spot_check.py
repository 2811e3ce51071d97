"""t-wise sample a measured population, tune and train on it, and score on the whole population.

Meant for public configuration datasets such as LLVM (11 options, 1024
configurations). The CSV needs one column per option plus the performance
column.

    python3 scripts/real_data_spot_check.py llvm.csv --column performance -t 3
"""

import argparse
import time

from perfbnn import dataset, ensemble, hpo, metrics


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("population")
    ap.add_argument("--column", default="performance")
    ap.add_argument("-t", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    start = time.perf_counter()
    full = dataset.load_dataset(args.population, args.column)
    train = full.subset(dataset.twise_select(full, args.t, args.seed))
    reduced, report = dataset.remove_collinear(train)
    print(f"{len(train)} sampled of {len(full)}; dropped columns: {report.dropped_columns}")
    hp = hpo.tune(reduced, args.seed).hyperparams
    print(f"tuned: {hp}")
    em = ensemble.train_ensemble(train, hp, seed=args.seed)
    mape = metrics.mape(ensemble.ensemble_predict(em, full.rows), full.performance)
    cal = metrics.cal_score(lambda x, r: ensemble.ensemble_interval(em, x, r), full.rows, full.performance)
    print(f"MAPE {mape:.2f}  cal {cal:.1f}  ({(time.perf_counter() - start) / 60:.1f} min)")


if __name__ == "__main__":
    main()
