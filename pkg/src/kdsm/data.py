"""Randomized-trial datasets: schema, CSV ingestion, stratified splitting,
and a synthetic generator with known per-row treatment effects.

A dataset holds a feature matrix (numeric columns plus integer-coded
categorical columns), a binary treatment indicator, and a binary outcome.
Missing values are not supported anywhere; ingestion rejects them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParseError, SchemaError
from .seeds import derive_seed

NUMERIC = "numeric"
CATEGORICAL = "categorical"

#: Cardinality used for every categorical column emitted by the synthetic
#: generator.
SYNTHETIC_CARDINALITY = 4

#: Built-in treatment-effect shapes for the synthetic generator. All of them
#: depend on at most the first two numeric features; every other column is
#: noise by construction.
EFFECT_FUNCTIONS = ("zero", "piecewise-on-two-features", "linear-clipped")

#: (min effect, max effect) attained by each built-in shape.
EFFECT_RANGES = {
    "zero": (0.0, 0.0),
    "piecewise-on-two-features": (0.0, 0.1),
    "linear-clipped": (-0.1, 0.1),
}


@dataclass(frozen=True)
class Column:
    """One feature column: a name plus a kind.

    Numeric columns hold finite floats. Categorical columns hold integer
    codes in [0, cardinality); `cardinality` must be >= 2 and is 0 for
    numeric columns. `categories` optionally pins the label-to-code
    dictionary (label of code i at position i); when absent, CSV ingestion
    discovers one by first appearance. Pinning keeps codes consistent
    across files written and re-read by the pipeline.
    """

    name: str
    kind: str
    cardinality: int = 0
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"unknown column kind {self.kind!r} for column {self.name!r}")
        if self.kind == CATEGORICAL and self.cardinality < 2:
            raise SchemaError(
                f"categorical column {self.name!r} needs cardinality >= 2, got {self.cardinality}"
            )
        if self.kind == NUMERIC and self.cardinality != 0:
            raise SchemaError(f"numeric column {self.name!r} must have cardinality 0")
        if self.kind == NUMERIC and self.categories:
            raise SchemaError(f"numeric column {self.name!r} cannot carry categories")
        if self.categories:
            if len(self.categories) > self.cardinality:
                raise SchemaError(
                    f"column {self.name!r}: {len(self.categories)} categories exceed "
                    f"cardinality {self.cardinality}"
                )
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"column {self.name!r}: duplicate category labels")


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature columns. Column names must be unique and non-empty."""

    columns: tuple[Column, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if any(not n for n in names):
            raise SchemaError("empty column name")
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate column name(s): {dupes}")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def numeric_indices(self) -> np.ndarray:
        return np.array([i for i, c in enumerate(self.columns) if c.kind == NUMERIC], dtype=np.int64)

    @property
    def categorical_indices(self) -> np.ndarray:
        return np.array(
            [i for i, c in enumerate(self.columns) if c.kind == CATEGORICAL], dtype=np.int64
        )

    def to_jsonable(self) -> list[dict]:
        out = []
        for c in self.columns:
            d = {"name": c.name, "kind": c.kind, "cardinality": c.cardinality}
            if c.categories:
                d["categories"] = list(c.categories)
            out.append(d)
        return out

    @classmethod
    def from_jsonable(cls, obj: list[dict]) -> "FeatureSchema":
        return cls(
            tuple(
                Column(
                    d["name"],
                    d["kind"],
                    int(d.get("cardinality", 0)),
                    tuple(d.get("categories", ())),
                )
                for d in obj
            )
        )


@dataclass(frozen=True)
class SplitRatios:
    """Train/valid/test fractions; must be positive and sum to 1 (tol 1e-9)."""

    train: float = 0.6
    valid: float = 0.2
    test: float = 0.2

    def __post_init__(self):
        for name, v in (("train", self.train), ("valid", self.valid), ("test", self.test)):
            if not (0.0 < v < 1.0):
                raise DomainError(f"split ratio {name}={v} must lie in (0, 1)")
        if abs(self.train + self.valid + self.test - 1.0) > 1e-9:
            raise DomainError(
                f"split ratios must sum to 1, got {self.train + self.valid + self.test!r}"
            )


@dataclass
class Dataset:
    """Feature matrix plus binary treatment and outcome arrays.

    `features` is float64 with shape (n, len(schema.columns)); categorical
    cells hold integer codes stored as floats. `treatment` and `outcome` are
    int64 arrays of 0/1.
    """

    schema: FeatureSchema
    features: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def validate(self) -> None:
        """Check every dataset invariant; raise on the first violation."""
        n = self.features.shape[0]
        if self.features.ndim != 2 or self.features.shape[1] != len(self.schema.columns):
            raise SchemaError(
                f"feature matrix shape {self.features.shape} does not match schema "
                f"({len(self.schema.columns)} columns)"
            )
        if self.treatment.shape != (n,) or self.outcome.shape != (n,):
            raise DomainError("treatment/outcome length does not match feature rows")
        for arr, what in ((self.treatment, "treatment"), (self.outcome, "outcome")):
            bad = ~np.isin(arr, (0, 1))
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise DomainError(f"{what} value {arr[i]!r} at row {i} is not 0/1")
        if not np.isfinite(self.features).all():
            i, j = map(int, np.argwhere(~np.isfinite(self.features))[0])
            raise DomainError(
                f"non-finite value in column {self.schema.columns[j].name!r} at row {i}"
            )
        for j in map(int, self.schema.categorical_indices):
            col = self.schema.columns[j]
            vals = self.features[:, j]
            codes = vals.astype(np.int64)
            if (codes != vals).any():
                i = int(np.flatnonzero(codes != vals)[0])
                raise DomainError(
                    f"non-integer code {vals[i]!r} in categorical column {col.name!r} at row {i}"
                )
            if codes.size and (codes.min() < 0 or codes.max() >= col.cardinality):
                raise DomainError(
                    f"code out of range [0, {col.cardinality}) in column {col.name!r}"
                )

    def subset(self, rows: np.ndarray) -> "Dataset":
        """New dataset containing `rows` (indices) in the given order."""
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            schema=self.schema,
            features=self.features[rows],
            treatment=self.treatment[rows],
            outcome=self.outcome[rows],
        )


@dataclass
class DatasetSplit:
    """Result of `split_dataset`: three datasets plus bookkeeping.

    Iterating yields (train, valid, test) so the result unpacks like a tuple.
    `indices` maps split name to the sorted original row indices it received;
    `warnings` records non-fatal conditions such as empty strata.
    """

    train: Dataset
    valid: Dataset
    test: Dataset
    indices: dict[str, np.ndarray] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter((self.train, self.valid, self.test))


@dataclass(frozen=True)
class SyntheticConfig:
    """Configuration of the synthetic randomized-trial generator.

    Numeric features are U[0,1], categorical features are uniform codes,
    treatment is Bernoulli(treatment_fraction) independent of features, and
    the outcome is Bernoulli(base_rate + treatment * effect(x)). The effect
    shape is one of EFFECT_FUNCTIONS; `noise_features` adds that many extra
    numeric columns which never influence the outcome (the named shapes only
    read the first two numeric features, so any further column is noise too).
    """

    n: int
    d_numeric: int = 2
    d_categorical: int = 0
    base_rate: float = 0.1
    effect_function: str = "piecewise-on-two-features"
    effect_scale: float = 1.0
    treatment_fraction: float = 0.5
    noise_features: int = 0
    seed: int = 0

    def validate(self) -> None:
        if self.n < 1:
            raise DomainError(f"n={self.n} must be >= 1")
        if self.d_numeric < 0 or self.d_categorical < 0 or self.noise_features < 0:
            raise DomainError("feature counts must be non-negative")
        if self.effect_function not in EFFECT_FUNCTIONS:
            raise DomainError(
                f"unknown effect_function {self.effect_function!r}; "
                f"expected one of {EFFECT_FUNCTIONS}"
            )
        if self.effect_function != "zero" and self.d_numeric < 2:
            raise DomainError(
                f"effect_function {self.effect_function!r} reads the first two numeric "
                f"features; d_numeric={self.d_numeric} is too small"
            )
        if not (0.0 < self.base_rate < 1.0):
            raise DomainError(f"base_rate={self.base_rate} must lie in (0, 1)")
        if self.effect_scale < 0.0:
            raise DomainError(f"effect_scale={self.effect_scale} must be >= 0")
        if not (0.0 < self.treatment_fraction < 1.0):
            raise DomainError(
                f"treatment_fraction={self.treatment_fraction} must lie in (0, 1)"
            )
        lo, hi = (self.effect_scale * e for e in EFFECT_RANGES[self.effect_function])
        if self.base_rate + hi > 1.0 or self.base_rate + lo < 0.0:
            raise DomainError(
                f"base_rate={self.base_rate} with effect range [{lo}, {hi}] leaves "
                f"outcome probabilities outside [0, 1]"
            )


def effect_values(name: str, features: np.ndarray) -> np.ndarray:
    """Per-row treatment effect of a built-in shape on a synthetic feature
    matrix (reads columns 0 and 1, the first two numeric features)."""
    if name == "zero":
        return np.zeros(features.shape[0])
    f0 = features[:, 0]
    f1 = features[:, 1]
    if name == "piecewise-on-two-features":
        return np.where(f0 > 0.5, 0.1, np.where(f1 > 0.5, 0.05, 0.0))
    if name == "linear-clipped":
        return np.clip(0.4 * (f0 - 0.5) + 0.2 * (f1 - 0.5), -0.1, 0.1)
    raise DomainError(f"unknown effect_function {name!r}")


def gen_synthetic(cfg: SyntheticConfig) -> tuple[Dataset, np.ndarray]:
    """Generate a synthetic trial; returns (dataset, true per-row effect).

    Bit-identical output for identical configs: the draw order (numeric
    block, categorical block, noise block, treatment, outcome) is fixed.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n

    cols: list[Column] = []
    blocks: list[np.ndarray] = []
    if cfg.d_numeric:
        blocks.append(rng.random((n, cfg.d_numeric)))
        cols += [Column(f"num_{i}", NUMERIC) for i in range(cfg.d_numeric)]
    if cfg.d_categorical:
        blocks.append(
            rng.integers(0, SYNTHETIC_CARDINALITY, (n, cfg.d_categorical)).astype(np.float64)
        )
        codes = tuple(str(c) for c in range(SYNTHETIC_CARDINALITY))
        cols += [
            Column(f"cat_{i}", CATEGORICAL, SYNTHETIC_CARDINALITY, codes)
            for i in range(cfg.d_categorical)
        ]
    if cfg.noise_features:
        blocks.append(rng.random((n, cfg.noise_features)))
        cols += [Column(f"noise_{i}", NUMERIC) for i in range(cfg.noise_features)]

    features = np.concatenate(blocks, axis=1) if blocks else np.zeros((n, 0))
    schema = FeatureSchema(tuple(cols))
    treatment = (rng.random(n) < cfg.treatment_fraction).astype(np.int64)
    tau = cfg.effect_scale * effect_values(cfg.effect_function, features)
    p = cfg.base_rate + treatment * tau
    outcome = (rng.random(n) < p).astype(np.int64)

    ds = Dataset(schema=schema, features=features, treatment=treatment, outcome=outcome)
    ds.validate()
    return ds, tau


def load_csv(
    path: str,
    schema: FeatureSchema,
    treatment_col: str = "treatment",
    outcome_col: str = "outcome",
) -> Dataset:
    """Read a CSV file into a Dataset under the given schema.

    Categorical values may be arbitrary strings. A column with pinned
    `categories` maps each label to its fixed code and rejects unknown
    labels; otherwise labels are coded by first appearance (0, 1, ... in
    the order distinct values are first seen) and the discovered dictionary
    is pinned into the returned dataset's schema. Numeric cells must parse
    as finite floats; treatment/outcome cells must be the literal integers
    0 or 1. Errors name the row and column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty file")
        required = schema.names + [treatment_col, outcome_col]
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        pos = {name: header.index(name) for name in required}

        code_maps: dict[str, dict[str, int]] = {
            c.name: {label: i for i, label in enumerate(c.categories)}
            for c in schema.columns
            if c.kind == CATEGORICAL
        }
        pinned = {c.name for c in schema.columns if c.categories}
        feat_rows: list[list[float]] = []
        t_list: list[int] = []
        y_list: list[int] = []
        for i, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}: line {i} has {len(row)} cells, expected {len(header)}")
            vals: list[float] = []
            for col in schema.columns:
                cell = row[pos[col.name]]
                if cell == "":
                    raise ParseError(
                        f"{path}: line {i}, column {col.name!r}: missing values are not supported"
                    )
                if col.kind == NUMERIC:
                    try:
                        v = float(cell)
                    except ValueError:
                        raise ParseError(
                            f"{path}: line {i}, column {col.name!r}: cannot parse {cell!r} as a number"
                        ) from None
                    if not np.isfinite(v):
                        raise DomainError(
                            f"{path}: line {i}, column {col.name!r}: non-finite value {cell!r}"
                        )
                    vals.append(v)
                else:
                    codes = code_maps[col.name]
                    code = codes.get(cell)
                    if code is None:
                        if col.name in pinned:
                            raise DomainError(
                                f"{path}: line {i}, column {col.name!r}: value {cell!r} is not "
                                f"one of the declared categories"
                            )
                        code = len(codes)
                        if code >= col.cardinality:
                            raise DomainError(
                                f"{path}: line {i}, column {col.name!r}: value {cell!r} exceeds "
                                f"declared cardinality {col.cardinality}"
                            )
                        codes[cell] = code
                    vals.append(float(code))
            for col_name, sink in ((treatment_col, t_list), (outcome_col, y_list)):
                cell = row[pos[col_name]]
                try:
                    v = int(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: line {i}, column {col_name!r}: cannot parse {cell!r} as an integer"
                    ) from None
                if v not in (0, 1):
                    raise DomainError(
                        f"{path}: line {i}, column {col_name!r}: value {cell!r} is not 0/1"
                    )
                sink.append(v)
            feat_rows.append(vals)

    n = len(feat_rows)
    features = (
        np.array(feat_rows, dtype=np.float64)
        if n
        else np.zeros((0, len(schema.columns)))
    )
    # pin discovered dictionaries so a re-save keeps labels and codes stable
    out_cols = tuple(
        c
        if c.kind == NUMERIC or c.name in pinned or not code_maps[c.name]
        else Column(
            c.name,
            c.kind,
            c.cardinality,
            tuple(sorted(code_maps[c.name], key=code_maps[c.name].get)),
        )
        for c in schema.columns
    )
    ds = Dataset(
        schema=FeatureSchema(out_cols),
        features=features,
        treatment=np.array(t_list, dtype=np.int64),
        outcome=np.array(y_list, dtype=np.int64),
    )
    ds.validate()
    return ds


def save_csv(
    ds: Dataset,
    path: str,
    treatment_col: str = "treatment",
    outcome_col: str = "outcome",
) -> None:
    """Write a dataset as CSV (features, then treatment and outcome columns).

    Numeric cells use shortest exact float representation, so a written file
    re-reads to bit-identical values; reruns produce byte-identical files.
    Categorical cells hold the pinned label of the code when the column has
    one, else the literal code.
    """
    labels = {
        j: ds.schema.columns[j].categories
        for j in map(int, ds.schema.categorical_indices)
    }
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ds.schema.names + [treatment_col, outcome_col])
        for i in range(ds.n):
            row = []
            for j, v in enumerate(ds.features[i]):
                if j in labels:
                    cats = labels[j]
                    row.append(cats[int(v)] if cats else str(int(v)))
                else:
                    row.append(repr(float(v)))
            row.append(str(int(ds.treatment[i])))
            row.append(str(int(ds.outcome[i])))
            writer.writerow(row)


def _largest_remainder(total: int, fracs: tuple[float, ...]) -> list[int]:
    """Integer allocation of `total` by fractions, largest remainder first
    (ties go to the earlier entry)."""
    exact = [total * f for f in fracs]
    counts = [int(np.floor(e)) for e in exact]
    rem = total - sum(counts)
    order = sorted(range(len(fracs)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:rem]:
        counts[i] += 1
    return counts


_STRATA = ((0, 0), (0, 1), (1, 0), (1, 1))


def split_dataset(ds: Dataset, ratios: SplitRatios, seed: int) -> DatasetSplit:
    """Partition rows into train/valid/test, stratified on (treatment, outcome).

    Each stratum is shuffled with its own seeded stream and divided as close
    to the ratios as integer rounding allows, so the partition depends only
    on (treatment, outcome, seed, ratios). Empty strata produce a warning in
    the result, not an error. Row order within each split follows the
    original dataset. Requires n >= 10.
    """
    if ds.n < 10:
        raise DomainError(f"dataset has {ds.n} rows; need at least 10 to split")
    fracs = (ratios.train, ratios.valid, ratios.test)
    parts: dict[str, list[np.ndarray]] = {"train": [], "valid": [], "test": []}
    warnings: list[str] = []
    for si, (t, y) in enumerate(_STRATA):
        idx = np.flatnonzero((ds.treatment == t) & (ds.outcome == y))
        if idx.size == 0:
            warnings.append(f"stratum (treatment={t}, outcome={y}) is empty")
            continue
        rng = np.random.default_rng(derive_seed(seed, "split-stratum", si))
        idx = rng.permutation(idx)
        n_train, n_valid, _ = _largest_remainder(idx.size, fracs)
        parts["train"].append(idx[:n_train])
        parts["valid"].append(idx[n_train : n_train + n_valid])
        parts["test"].append(idx[n_train + n_valid :])
    indices = {
        name: np.sort(np.concatenate(chunks)) if chunks else np.array([], dtype=np.int64)
        for name, chunks in parts.items()
    }
    return DatasetSplit(
        train=ds.subset(indices["train"]),
        valid=ds.subset(indices["valid"]),
        test=ds.subset(indices["test"]),
        indices=indices,
        warnings=warnings,
    )


def subsample_per_arm(ds: Dataset, n_per_arm: int, seed: int) -> Dataset:
    """Uniform random subsample of `n_per_arm` rows from each treatment arm.

    Intended for rebalancing heavily skewed trials before splitting; the
    result keeps original row order. Requires both arms to hold at least
    `n_per_arm` rows.
    """
    if n_per_arm < 1:
        raise DomainError(f"n_per_arm={n_per_arm} must be >= 1")
    keep: list[np.ndarray] = []
    for arm in (0, 1):
        idx = np.flatnonzero(ds.treatment == arm)
        if idx.size < n_per_arm:
            raise DomainError(
                f"arm {arm} has {idx.size} rows; cannot subsample {n_per_arm} per arm"
            )
        rng = np.random.default_rng(derive_seed(seed, "subsample-arm", arm))
        keep.append(rng.choice(idx, size=n_per_arm, replace=False))
    rows = np.sort(np.concatenate(keep))
    return ds.subset(rows)
