"""Command-line interface: sample, tune, train, predict, evaluate.

Every command accepts ``--config file.json`` (flat keys named like the
``RunConfig`` fields); flags given on the command line win over the file.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bnn, dataset, ensemble, hpo, metrics, net
from .calibration import DEFAULT_GRID_SIZE, DEFAULT_LEVELS

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("perfbnn")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    k: int = ensemble.DEFAULT_K
    predictive_samples: int = bnn.DEFAULT_PREDICTIVE_SAMPLES
    levels: list = field(default_factory=lambda: list(DEFAULT_LEVELS))
    grid_size: int = DEFAULT_GRID_SIZE
    t: int | None = None
    performance_column: str = "performance"
    population: str | None = None
    train: str | None = None
    test: str | None = None
    input: str | None = None
    model: list | None = None
    trace: str | None = None
    out: str | None = None
    curve: str | None = None
    max_depth: int = hpo.MAX_DEPTH
    depth: int | None = None
    epochs: int | None = None
    base_lr: float | None = None
    neurons_per_layer: int | None = None
    laplace_scale: float | None = None

    def require(self, *names):
        missing = [n for n in names if getattr(self, n) in (None, [])]
        if missing:
            raise ConfigError(f"missing required setting(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")


def build_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            values = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: expected a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name in known:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if isinstance(values.get("model"), str):
        values["model"] = [values["model"]]
    if isinstance(values.get("levels"), str):
        values["levels"] = parse_levels(values["levels"])
    cfg = RunConfig(**values)
    if cfg.k < 2:
        raise ConfigError("k must be >= 2")
    if cfg.predictive_samples < 2:
        raise ConfigError("predictive_samples must be >= 2")
    if any(not 0 < r < 100 for r in cfg.levels) or list(cfg.levels) != sorted(set(cfg.levels)):
        raise ConfigError(f"levels must be strictly increasing inside (0, 100): {cfg.levels}")
    return cfg


def parse_levels(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse levels {text!r}") from None


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def _level_tag(rho: float) -> str:
    return f"{rho:g}"


def _write_text(path, text: str):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_sample(cfg: RunConfig) -> int:
    cfg.require("population", "t")
    pop = dataset.load_dataset(cfg.population, cfg.performance_column)
    n = len(pop.schema)
    if not 1 <= cfg.t <= min(3, n):
        raise ConfigError(f"t must be in [1, {min(3, n)}] for {n} options, got {cfg.t}")
    index = dataset.twise_select(pop, cfg.t, cfg.seed)
    covered, total = dataset.coverage(pop.schema, pop.rows[index], cfg.t)
    reachable, _ = dataset.coverage(pop.schema, pop.rows, cfg.t)
    if cfg.out is None:
        raise ConfigError("sample needs --out")
    dataset.write_dataset(pop.subset(index), cfg.out, cfg.performance_column)
    print(f"selected {len(index)} of {len(pop)} configurations; "
          f"{cfg.t}-wise coverage {covered}/{total} tuples ({reachable} present in population)",
          file=sys.stderr)
    return EXIT_OK


def cmd_tune(cfg: RunConfig) -> int:
    cfg.require("train")
    train = dataset.load_dataset(cfg.train, cfg.performance_column)
    reduced, report = dataset.remove_collinear(train)
    result = hpo.tune(reduced, cfg.seed, max_depth=cfg.max_depth)
    trace = result.to_dict()
    trace.update(seed=cfg.seed, preprocess=report.to_dict())
    _write_text(cfg.out, _dump_json(trace))
    log.info("chosen depth %d; %d evaluations", result.best_depth, len(result.records))
    return EXIT_OK


def _hyperparams(cfg: RunConfig, n_options: int) -> hpo.Hyperparams:
    if cfg.trace:
        path = Path(cfg.trace)
        if not path.is_file():
            raise FileNotFoundError(f"no such file: {path}")
        hp = hpo.Hyperparams.from_dict(json.loads(path.read_text())["hyperparams"])
    else:
        cfg.require("depth", "epochs", "base_lr", "neurons_per_layer", "laplace_scale")
        hp = hpo.Hyperparams(cfg.depth, cfg.epochs, cfg.base_lr, cfg.neurons_per_layer, cfg.laplace_scale)
    overrides = {k: getattr(cfg, k) for k in ("depth", "epochs", "base_lr", "neurons_per_layer", "laplace_scale")
                 if cfg.trace and getattr(cfg, k) is not None}
    hp = dataclasses.replace(hp, **overrides)
    try:
        hpo.SearchSpace(n_options, max(cfg.max_depth, hp.depth)).validate(hp)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return hp


def cmd_train(cfg: RunConfig) -> int:
    cfg.require("train")
    train = dataset.load_dataset(cfg.train, cfg.performance_column)
    reduced, _ = dataset.remove_collinear(train)
    hp = _hyperparams(cfg, len(reduced.schema))
    em = ensemble.train_ensemble(train, hp, cfg.k, cfg.seed, cfg.levels, cfg.grid_size,
                                 cfg.predictive_samples)
    _write_text(cfg.out, em.dumps() + "\n")
    return EXIT_OK


def load_model(path) -> ensemble.EnsembleModel:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        return ensemble.EnsembleModel.loads(path.read_text())
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise dataset.DataError(f"{path}: not a valid model ({exc})") from None


def cmd_predict(cfg: RunConfig) -> int:
    cfg.require("model", "input")
    em = load_model(cfg.model[0])
    x = dataset.read_configurations(cfg.input, em.schema, allow_extra=[cfg.performance_column])
    header = em.schema.names + ["prediction"]
    for rho in cfg.levels:
        header += [f"lo_{_level_tag(rho)}", f"hi_{_level_tag(rho)}"]
    lines = [",".join(header)]
    if x.shape[0]:
        pred = ensemble.ensemble_predict(em, x)
        bounds = [ensemble.ensemble_interval(em, x, rho) for rho in cfg.levels]
        for i in range(x.shape[0]):
            cells = [_fmt(v) for v in x[i]] + [_fmt(pred[i])]
            for lo, hi in bounds:
                cells += [_fmt(lo[i]), _fmt(hi[i])]
            lines.append(",".join(cells))
    _write_text(cfg.out, "\n".join(lines) + "\n")
    return EXIT_OK


def evaluate_model(em: ensemble.EnsembleModel, x, truths, levels) -> dict:
    pred = ensemble.ensemble_predict(em, x)
    after = metrics.frequencies(lambda xx, r: ensemble.ensemble_interval(em, xx, r, True), x, truths, levels)
    before = metrics.frequencies(lambda xx, r: ensemble.ensemble_interval(em, xx, r, False), x, truths, levels)
    return {
        "mape": metrics.mape(pred, truths),
        "cal": metrics.cal_from_frequencies(levels, after),
        "cal_uncalibrated": metrics.cal_from_frequencies(levels, before),
        "alpha_after": after,
        "alpha_before": before,
    }


def _summary(scores) -> dict:
    if len(scores) >= 2:
        return metrics.summarize(scores).to_dict()
    return {"scores": list(scores), "mean": float(scores[0]), "margin": None}


def cmd_evaluate(cfg: RunConfig) -> int:
    cfg.require("model", "test")
    models = [load_model(p) for p in cfg.model]
    test = dataset.load_dataset(cfg.test, cfg.performance_column)
    results = []
    for em in models:
        x = dataset.read_configurations(cfg.test, em.schema, allow_extra=[cfg.performance_column])
        results.append(evaluate_model(em, x, test.performance, cfg.levels))
    mape = [r["mape"] for r in results]
    cal = [r["cal"] for r in results]
    cal_before = [r["cal_uncalibrated"] for r in results]
    alpha_after = np.mean([r["alpha_after"] for r in results], axis=0)
    alpha_before = np.mean([r["alpha_before"] for r in results], axis=0)
    decisions = []
    if len(results) >= 2:
        decisions.append({"metric": "cal", "a": "calibrated", "b": "uncalibrated", "alpha": 0.05,
                          "decision": metrics.welch_t_test(cal, cal_before, 0.05)})
    report = {
        "n_test": len(test),
        "mape": _summary(mape),
        "cal": _summary(cal),
        "cal_uncalibrated": _summary(cal_before),
        "per_level": [[float(r), float(a)] for r, a in zip(cfg.levels, alpha_after)],
        "per_level_uncalibrated": [[float(r), float(a)] for r, a in zip(cfg.levels, alpha_before)],
        "repeats": results,
        "decisions": decisions,
    }
    _write_text(cfg.out, _dump_json(report))
    if cfg.curve:
        rows = ["rho,alpha_before,alpha_after"]
        rows += [f"{_level_tag(r)},{b!r},{a!r}" for r, b, a in zip(cfg.levels, alpha_before.tolist(), alpha_after.tolist())]
        Path(cfg.curve).write_text("\n".join(rows) + "\n", encoding="utf-8")
    return EXIT_OK


COMMANDS = {"sample": cmd_sample, "tune": cmd_tune, "train": cmd_train,
            "predict": cmd_predict, "evaluate": cmd_evaluate}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of flat settings")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output path (stdout if omitted)")
    common.add_argument("--performance-column", dest="performance_column")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="perfbnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", parents=[common], help="t-wise sample from a measured population")
    p.add_argument("--population")
    p.add_argument("-t", type=int, dest="t")

    p = sub.add_parser("tune", parents=[common], help="tune hyperparameters, write a trace")
    p.add_argument("--train", "--train-file", dest="train")
    p.add_argument("--max-depth", type=int, dest="max_depth")

    p = sub.add_parser("train", parents=[common], help="train a calibrated ensemble")
    p.add_argument("--train", "--train-file", dest="train")
    p.add_argument("--trace", help="tuning trace JSON to take hyperparameters from")
    p.add_argument("-k", type=int, dest="k")
    p.add_argument("--predictive-samples", type=int, dest="predictive_samples")
    p.add_argument("--levels", type=parse_levels)
    p.add_argument("--grid-size", type=int, dest="grid_size")
    p.add_argument("--depth", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--base-lr", type=float, dest="base_lr")
    p.add_argument("--neurons-per-layer", type=int, dest="neurons_per_layer")
    p.add_argument("--laplace-scale", type=float, dest="laplace_scale")
    p.add_argument("--max-depth", type=int, dest="max_depth")

    p = sub.add_parser("predict", parents=[common], help="predict values and intervals")
    p.add_argument("--model", action="append")
    p.add_argument("--input")
    p.add_argument("--levels", type=parse_levels)

    p = sub.add_parser("evaluate", parents=[common], help="MAPE, cal score and calibration curve")
    p.add_argument("--model", action="append", help="repeatable; one model per repeat")
    p.add_argument("--test")
    p.add_argument("--levels", type=parse_levels)
    p.add_argument("--curve", help="write rho,alpha_before,alpha_after CSV here")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"perfbnn {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (dataset.DataError, FileNotFoundError) as exc:
        print(f"perfbnn {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (net.NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"perfbnn {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
