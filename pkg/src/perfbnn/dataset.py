"""Measurement data: loading, preprocessing, t-wise sampling and fold splits."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

BINARY = "binary"
NUMERIC = "numeric"

COLLINEAR_TOL = 1e-8


class DataError(ValueError):
    """Raised for unreadable or inconsistent measurement data."""


@dataclass(frozen=True)
class Option:
    name: str
    kind: str
    levels: tuple[float, ...]


@dataclass(frozen=True)
class OptionSchema:
    options: tuple[Option, ...]

    def __post_init__(self):
        names = [o.name for o in self.options]
        if any(not n for n in names):
            raise DataError("option names must be non-empty")
        if len(set(names)) != len(names):
            raise DataError(f"duplicate option names in {names}")
        for o in self.options:
            if o.kind == BINARY and tuple(o.levels) != (0.0, 1.0):
                raise DataError(f"binary option {o.name!r} must have levels (0, 1)")
            if o.kind == NUMERIC and len(o.levels) < 2:
                raise DataError(f"numeric option {o.name!r} needs >= 2 levels")
            if o.kind not in (BINARY, NUMERIC):
                raise DataError(f"unknown option kind {o.kind!r}")

    @property
    def names(self) -> list[str]:
        return [o.name for o in self.options]

    def __len__(self):
        return len(self.options)

    @classmethod
    def infer(cls, names: Sequence[str], rows: np.ndarray) -> "OptionSchema":
        """Binary iff a column's values are a subset of {0, 1}; numeric otherwise.

        A column holding a single value still gets a schema entry (levels are
        padded so the schema stays valid); remove_collinear drops it later.
        """
        options = []
        for j, name in enumerate(names):
            levels = sorted(set(float(v) for v in rows[:, j]))
            if set(levels) <= {0.0, 1.0}:
                options.append(Option(name, BINARY, (0.0, 1.0)))
            elif len(levels) == 1:
                options.append(Option(name, NUMERIC, (levels[0], levels[0] + 1.0)))
            else:
                options.append(Option(name, NUMERIC, tuple(levels)))
        return cls(tuple(options))

    def to_dict(self) -> list[dict]:
        return [{"name": o.name, "kind": o.kind, "levels": list(o.levels)}
                for o in self.options]

    @classmethod
    def from_dict(cls, items: list[dict]) -> "OptionSchema":
        return cls(tuple(Option(d["name"], d["kind"], tuple(float(v) for v in d["levels"]))
                         for d in items))


@dataclass(frozen=True)
class PerformanceDataset:
    schema: OptionSchema
    rows: np.ndarray
    performance: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        perf = np.asarray(self.performance, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != len(self.schema):
            raise DataError(f"rows shape {rows.shape} does not match {len(self.schema)} options")
        if perf.shape != (rows.shape[0],):
            raise DataError("performance length must equal row count")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "performance", perf)

    def __len__(self):
        return self.rows.shape[0]

    def subset(self, index) -> "PerformanceDataset":
        index = np.asarray(index, dtype=int)
        return PerformanceDataset(self.schema, self.rows[index], self.performance[index])

    def with_performance(self, performance) -> "PerformanceDataset":
        return PerformanceDataset(self.schema, self.rows, performance)


@dataclass(frozen=True)
class Normalizer:
    """Affine map of performance values onto [0, 100]."""

    y_min: float
    y_max: float

    def __post_init__(self):
        if not self.y_max > self.y_min:
            raise DataError(f"degenerate performance range [{self.y_min}, {self.y_max}]")

    @property
    def span(self) -> float:
        return self.y_max - self.y_min

    def forward(self, y):
        return (np.asarray(y, dtype=float) - self.y_min) / self.span * 100.0

    def inverse(self, v):
        return np.asarray(v, dtype=float) / 100.0 * self.span + self.y_min

    def to_dict(self) -> dict:
        return {"y_min": self.y_min, "y_max": self.y_max}


@dataclass
class PreprocessReport:
    dropped_columns: list[tuple[str, str]] = field(default_factory=list)
    retained: list[str] = field(default_factory=list)

    @property
    def retained_count(self) -> int:
        return len(self.retained)

    def to_dict(self) -> dict:
        return {
            "dropped_columns": [{"name": n, "reason": r} for n, r in self.dropped_columns],
            "retained": list(self.retained),
            "retained_count": self.retained_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessReport":
        return cls([(c["name"], c["reason"]) for c in d["dropped_columns"]], list(d["retained"]))


def load_dataset(path, performance_column: str) -> PerformanceDataset:
    """Read a CSV of option columns plus one performance column."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if performance_column not in header:
            raise DataError(f"{path}: performance column {performance_column!r} not in header")
        values = []
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(record)}")
            row = []
            for name, cell in zip(header, record):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: column {name!r}: cannot parse {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}:{lineno}: column {name!r}: non-finite value {cell!r}")
                row.append(v)
            values.append(row)
    if not values:
        raise DataError(f"{path}: no data rows")
    table = np.array(values, dtype=float)
    perf_idx = header.index(performance_column)
    names = [h for j, h in enumerate(header) if j != perf_idx]
    rows = np.delete(table, perf_idx, axis=1)
    return PerformanceDataset(OptionSchema.infer(names, rows), rows, table[:, perf_idx])


def _cell(v: float) -> str:
    return str(int(v)) if float(v).is_integer() and abs(v) < 2**53 else repr(float(v))


def write_dataset(ds: PerformanceDataset, path, performance_column: str = "performance") -> None:
    """Write ``ds`` as CSV (options then performance); values round-trip exactly."""
    lines = [",".join(ds.schema.names + [performance_column])]
    for row, perf in zip(ds.rows, ds.performance):
        lines.append(",".join([_cell(v) for v in row] + [_cell(perf)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_configurations(path, schema: OptionSchema, allow_extra: Sequence[str] = ()) -> np.ndarray:
    """Read the option columns named by ``schema`` from a CSV.

    Columns outside the schema are an error unless listed in ``allow_extra``.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [n for n in schema.names if n not in header]
        unknown = [h for h in header if h not in schema.names and h not in allow_extra]
        if missing or unknown:
            raise DataError(f"{path}: schema mismatch; missing columns {missing}, unknown columns {unknown}")
        order = [header.index(n) for n in schema.names]
        rows = []
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            try:
                rows.append([float(record[j]) for j in order])
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: malformed row {record!r}") from None
    return np.array(rows, dtype=float).reshape(-1, len(schema))


def remove_collinear(ds: PerformanceDataset, tol: float = COLLINEAR_TOL):
    """Drop constant columns, then columns that are (affine) combinations of
    retained earlier ones. Returns the reduced dataset and a report."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    n_rows = len(ds)
    basis = np.ones((n_rows, 1))
    keep, report = [], PreprocessReport()
    for j, opt in enumerate(ds.schema.options):
        col = ds.rows[:, j]
        if np.ptp(col) == 0:
            report.dropped_columns.append((opt.name, "constant"))
            continue
        coef, *_ = np.linalg.lstsq(basis, col, rcond=None)
        resid = np.linalg.norm(col - basis @ coef)
        if resid < tol * np.linalg.norm(col):
            report.dropped_columns.append((opt.name, "linearly-dependent"))
            continue
        keep.append(j)
        report.retained.append(opt.name)
        basis = np.column_stack([basis, col])
    if not keep:
        raise DataError("no columns left after collinearity removal")
    schema = OptionSchema(tuple(ds.schema.options[j] for j in keep))
    return PerformanceDataset(schema, ds.rows[:, keep], ds.performance), report


def apply_report(rows: np.ndarray, schema: OptionSchema, report: PreprocessReport) -> np.ndarray:
    """Project raw configuration rows onto the retained columns."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[None, :]
    if rows.shape[1] != len(schema):
        raise DataError(f"expected {len(schema)} option values, got {rows.shape[1]}")
    idx = [schema.names.index(n) for n in report.retained]
    return rows[:, idx]


def fit_normalizer(performance) -> Normalizer:
    y = np.asarray(performance, dtype=float)
    return Normalizer(float(y.min()), float(y.max()))


def normalize_performance(ds: PerformanceDataset, normalizer: Normalizer | None = None):
    """Map performance onto [0, 100]; fits the normalizer on ``ds`` unless one is given."""
    nz = normalizer if normalizer is not None else fit_normalizer(ds.performance)
    return ds.with_performance(nz.forward(ds.performance)), nz


def denormalize_interval(lo: float, hi: float, nz: Normalizer) -> tuple[float, float]:
    if lo > hi:
        raise ValueError(f"interval lower bound {lo} exceeds upper bound {hi}")
    return float(nz.inverse(lo)), float(nz.inverse(hi))


# ---------------------------------------------------------------------------
# t-wise sampling
# ---------------------------------------------------------------------------

_ENUMERATION_LIMIT = 1 << 14


def _level_index(schema: OptionSchema, rows: np.ndarray) -> np.ndarray:
    idx = np.empty(rows.shape, dtype=np.int64)
    for j, opt in enumerate(schema.options):
        levels = np.asarray(opt.levels)
        k = np.searchsorted(levels, rows[:, j])
        k = np.clip(k, 0, len(levels) - 1)
        if not np.all(levels[k] == rows[:, j]):
            raise DataError(f"values of option {opt.name!r} outside its levels")
        idx[:, j] = k
    return idx


class _Coverage:
    """Bookkeeping of uncovered t-tuples as one boolean table per option subset."""

    def __init__(self, sizes: Sequence[int], t: int):
        self.subsets = list(itertools.combinations(range(len(sizes)), t))
        self.strides, self.uncovered = [], []
        for sub in self.subsets:
            dims = [sizes[j] for j in sub]
            self.strides.append(np.cumprod([1] + dims[:0:-1])[::-1])
            self.uncovered.append(np.ones(int(np.prod(dims)), dtype=bool))

    def codes(self, idx: np.ndarray) -> np.ndarray:
        """Tuple code of every candidate for every subset, shape (candidates, subsets)."""
        out = np.empty((idx.shape[0], len(self.subsets)), dtype=np.int64)
        for s, (sub, stride) in enumerate(zip(self.subsets, self.strides)):
            out[:, s] = idx[:, list(sub)] @ stride
        return out

    def gain(self, codes: np.ndarray) -> np.ndarray:
        g = np.zeros(codes.shape[0], dtype=np.int64)
        for s, unc in enumerate(self.uncovered):
            g += unc[codes[:, s]]
        return g

    def mark(self, code_row: np.ndarray):
        for s, unc in enumerate(self.uncovered):
            unc[code_row[s]] = False

    def remaining(self) -> int:
        return int(sum(u.sum() for u in self.uncovered))

    def first_uncovered(self, rng) -> tuple[tuple[int, ...], tuple[int, ...]] | None:
        open_subsets = [s for s, u in enumerate(self.uncovered) if u.any()]
        if not open_subsets:
            return None
        s = open_subsets[rng.integers(len(open_subsets))]
        codes = np.flatnonzero(self.uncovered[s])
        code = int(codes[rng.integers(len(codes))])
        values = []
        for st in self.strides[s]:
            values.append(code // int(st))
            code %= int(st)
        return self.subsets[s], tuple(values)


def _greedy_pick(cov: _Coverage, codes: np.ndarray, rng) -> list[int]:
    picks = []
    if codes.shape[0] == 0:
        return picks
    while True:
        g = cov.gain(codes)
        best = g.max()
        if best == 0:
            return picks
        ties = np.flatnonzero(g == best)
        pick = int(ties[rng.integers(len(ties))])
        cov.mark(codes[pick])
        picks.append(pick)


def _check_t(t: int, n: int):
    if t < 1 or t > min(3, n):
        raise ValueError(f"t must be in [1, min(3, {n})], got {t}")


def twise_sample(schema: OptionSchema, t: int, seed: int, pool_size: int = 256) -> np.ndarray:
    """Greedy t-wise covering array over the schema's option levels.

    Each step picks the candidate configuration covering the most uncovered
    t-tuples; ties go to a seeded random choice. The full level product is the
    candidate set when small enough. Otherwise a fresh random pool is drawn per
    step, each pool member seeded with one uncovered tuple so every step makes
    progress.
    """
    n = len(schema)
    _check_t(t, n)
    rng = np.random.default_rng(seed)
    sizes = [len(o.levels) for o in schema.options]
    cov = _Coverage(sizes, t)

    if math.prod(sizes) <= _ENUMERATION_LIMIT:
        cand = np.array(list(itertools.product(*[range(s) for s in sizes])), dtype=np.int64)
        chosen = cand[_greedy_pick(cov, cov.codes(cand), rng)]
    else:
        chosen = []
        while (target := cov.first_uncovered(rng)) is not None:
            pool = np.column_stack([rng.integers(s, size=pool_size) for s in sizes])
            sub, vals = target
            pool[:, list(sub)] = vals
            codes = cov.codes(pool)
            g = cov.gain(codes)
            ties = np.flatnonzero(g == g.max())
            pick = int(ties[rng.integers(len(ties))])
            cov.mark(codes[pick])
            chosen.append(pool[pick])
        chosen = np.array(chosen, dtype=np.int64)

    levels = [np.asarray(o.levels) for o in schema.options]
    return np.column_stack([levels[j][chosen[:, j]] for j in range(n)])


def twise_select(population: PerformanceDataset, t: int, seed: int) -> np.ndarray:
    """Row indices of a greedy t-wise sample drawn from a measured population.

    Tuples that no population row exhibits (e.g. excluded by constraints) stay
    uncovered.
    """
    _check_t(t, len(population.schema))
    rng = np.random.default_rng(seed)
    cov = _Coverage([len(o.levels) for o in population.schema.options], t)
    cand = _level_index(population.schema, population.rows)
    return np.array(_greedy_pick(cov, cov.codes(cand), rng), dtype=int)


def coverage(schema: OptionSchema, configs: np.ndarray, t: int) -> tuple[int, int]:
    """(covered, total) count of t-tuples over the schema's levels, by enumeration."""
    idx = _level_index(schema, np.asarray(configs, dtype=float).reshape(-1, len(schema)))
    covered = total = 0
    for sub in itertools.combinations(range(len(schema)), t):
        seen = {tuple(r) for r in idx[:, list(sub)]}
        total += math.prod(len(schema.options[j].levels) for j in sub)
        covered += len(seen)
    return covered, total


def kfold_split(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Shuffle 0..n-1 and cut into k folds whose sizes differ by at most one."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    if n < k:
        raise ValueError(f"cannot split {n} points into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]
