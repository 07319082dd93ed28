"""Mixed-type tabular data: schema, samples, CSV ingestion, encoding and a
synthetic generator.

Encoded layout: the first ``d_n`` entries hold z-scored numerics, followed by
one one-hot block per categorical feature in schema order.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import yaml

from .errors import DataError, SchemaError, UsageError

MAX_CATEGORIES = 50
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class MixedSchema:
    numerical_names: tuple[str, ...]
    categorical_specs: tuple[tuple[str, tuple[str, ...]], ...]
    label_name: str
    label_vocabulary: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "numerical_names", tuple(self.numerical_names))
        object.__setattr__(
            self,
            "categorical_specs",
            tuple((name, tuple(vocab)) for name, vocab in self.categorical_specs),
        )
        object.__setattr__(self, "label_vocabulary", tuple(self.label_vocabulary))

        names = list(self.numerical_names) + [n for n, _ in self.categorical_specs]
        names.append(self.label_name)
        seen = set()
        for name in names:
            if name in seen:
                raise SchemaError(f"duplicate column identifier {name!r}")
            seen.add(name)
        for name, vocab in self.categorical_specs:
            if not 2 <= len(vocab) <= MAX_CATEGORIES:
                raise SchemaError(
                    f"categorical {name!r} has {len(vocab)} categories; "
                    f"expected between 2 and {MAX_CATEGORIES}"
                )
            if len(set(vocab)) != len(vocab):
                raise SchemaError(f"categorical {name!r} has duplicate categories")
        if len(self.label_vocabulary) < 2:
            raise SchemaError("label vocabulary needs at least 2 classes")
        if len(set(self.label_vocabulary)) != len(self.label_vocabulary):
            raise SchemaError("label vocabulary has duplicates")

    @property
    def d_n(self) -> int:
        return len(self.numerical_names)

    @property
    def d_c(self) -> int:
        return len(self.categorical_specs)

    @property
    def cat_sizes(self) -> tuple[int, ...]:
        return tuple(len(v) for _, v in self.categorical_specs)

    @property
    def n_classes(self) -> int:
        return len(self.label_vocabulary)

    @property
    def width(self) -> int:
        return self.d_n + sum(self.cat_sizes)

    @property
    def layout(self) -> "Layout":
        return Layout(self.d_n, self.cat_sizes)

    def columns(self) -> list[str]:
        return (
            list(self.numerical_names)
            + [n for n, _ in self.categorical_specs]
            + [self.label_name]
        )

    def to_dict(self) -> dict:
        return {
            "numerical_names": list(self.numerical_names),
            "categorical_specs": [
                {"name": n, "vocabulary": list(v)} for n, v in self.categorical_specs
            ],
            "label_name": self.label_name,
            "label_vocabulary": list(self.label_vocabulary),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixedSchema":
        try:
            cats = [(str(c["name"]), [str(v) for v in c["vocabulary"]])
                    for c in d.get("categorical_specs") or []]
            return cls(
                numerical_names=[str(n) for n in d.get("numerical_names") or []],
                categorical_specs=cats,
                label_name=str(d["label_name"]),
                label_vocabulary=[str(v) for v in d["label_vocabulary"]],
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema: missing or invalid {exc}") from exc


@dataclass(frozen=True)
class Layout:
    """Column layout of an encoded vector."""

    d_n: int
    cat_sizes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "cat_sizes", tuple(int(k) for k in self.cat_sizes))

    @property
    def d_c(self) -> int:
        return len(self.cat_sizes)

    @property
    def width(self) -> int:
        return self.d_n + sum(self.cat_sizes)

    @property
    def cat_width(self) -> int:
        return sum(self.cat_sizes)

    @cached_property
    def block_starts(self) -> np.ndarray:
        """Start of each one-hot block, relative to the categorical section."""
        starts = np.concatenate([[0], np.cumsum(self.cat_sizes)[:-1]]).astype(np.intp) \
            if self.cat_sizes else np.zeros(0, dtype=np.intp)
        starts.flags.writeable = False
        return starts

    @cached_property
    def _block_owner(self) -> np.ndarray:
        owner = np.repeat(np.arange(self.d_c), self.cat_sizes)
        owner.flags.writeable = False
        return owner

    def block_slice(self, i: int) -> slice:
        start = self.d_n + int(self.block_starts[i])
        return slice(start, start + self.cat_sizes[i])

    def one_hot(self, cats) -> np.ndarray:
        """One-hot categorical section for an index vector (or a batch of them)."""
        cats = np.asarray(cats, dtype=np.intp)
        out = np.zeros(cats.shape[:-1] + (self.cat_width,))
        if self.d_c:
            cols = self.block_starts + cats
            np.put_along_axis(out, cols, 1.0, axis=-1)
        return out

    def argmax_blocks(self, cat_part: np.ndarray) -> np.ndarray:
        """Per-block argmax (lowest index on ties) of a categorical section."""
        z = np.asarray(cat_part, dtype=float)
        if not self.d_c:
            return np.zeros(z.shape[:-1] + (0,), dtype=np.intp)
        top = np.maximum.reduceat(z, self.block_starts, axis=-1)
        at_top = z == top[..., self._block_owner]
        pos = np.where(at_top, np.arange(self.cat_width), self.cat_width)
        return (np.minimum.reduceat(pos, self.block_starts, axis=-1) - self.block_starts).astype(np.intp)


@dataclass(frozen=True)
class MixedSample:
    numerics: tuple[float, ...]
    categoricals: tuple[int, ...]
    label: int | None = None


@dataclass(frozen=True)
class StandardizationStats:
    means: np.ndarray
    std_devs: np.ndarray

    def transform(self, numerics: np.ndarray) -> np.ndarray:
        return (np.asarray(numerics, dtype=float) - self.means) / self.std_devs

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.std_devs + self.means


@dataclass(eq=False)
class MixedDataset(Sequence):
    """Column-major container behaving as a sequence of :class:`MixedSample`."""

    schema: MixedSchema
    numerics: np.ndarray
    categoricals: np.ndarray
    labels: np.ndarray
    _check: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.intp).reshape(-1)
        n = len(self.labels)
        try:
            self.numerics = np.asarray(self.numerics, dtype=float).reshape(n, self.schema.d_n)
            self.categoricals = np.asarray(self.categoricals, dtype=np.intp).reshape(
                n, self.schema.d_c)
        except ValueError:
            raise DataError("numerics, categoricals and labels disagree in shape") from None
        if self._check:
            if not np.all(np.isfinite(self.numerics)):
                raise DataError("numerics contain NaN or Inf")
            sizes = np.asarray(self.schema.cat_sizes, dtype=np.intp)
            if n and self.schema.d_c and (
                    np.any(self.categoricals < 0) or np.any(self.categoricals >= sizes)):
                raise DataError("category index out of vocabulary bounds")
            if n and (np.any(self.labels < 0) or np.any(self.labels >= self.schema.n_classes)):
                raise DataError("label index out of bounds")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, idx):
        if isinstance(idx, slice) or isinstance(idx, (list, np.ndarray)):
            idx = np.arange(len(self))[idx] if isinstance(idx, slice) else np.asarray(idx)
            return MixedDataset(self.schema, self.numerics[idx], self.categoricals[idx],
                                self.labels[idx], _check=False)
        return MixedSample(
            tuple(float(v) for v in self.numerics[idx]),
            tuple(int(v) for v in self.categoricals[idx]),
            int(self.labels[idx]),
        )

    def __iter__(self) -> Iterator[MixedSample]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_samples(cls, samples: Sequence[MixedSample], schema: MixedSchema) -> "MixedDataset":
        n = len(samples)
        return cls(
            schema,
            np.array([s.numerics for s in samples], dtype=float).reshape(n, schema.d_n),
            np.array([s.categoricals for s in samples], dtype=np.intp).reshape(n, schema.d_c),
            np.array([s.label for s in samples], dtype=np.intp),
        )

    def to_csv(self, path) -> None:
        schema = self.schema
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(schema.columns())
            for i in range(len(self)):
                row = [repr(float(v)) for v in self.numerics[i]]
                row += [schema.categorical_specs[j][1][c]
                        for j, c in enumerate(self.categoricals[i])]
                row.append(schema.label_vocabulary[self.labels[i]])
                writer.writerow(row)


# -- schema files -----------------------------------------------------------

def load_schema(path) -> MixedSchema:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise DataError(f"cannot read schema {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise SchemaError(f"schema {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaError(f"schema {path} must be a mapping")
    return MixedSchema.from_dict(raw)


def save_schema(schema: MixedSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(schema.to_dict(), fh, sort_keys=False)


# -- CSV --------------------------------------------------------------------

def load_csv(path, schema: MixedSchema) -> MixedDataset:
    """Read a headered CSV into a dataset, validating every cell against ``schema``.

    Columns may appear in any order; extra columns are ignored. Row numbers in
    error messages are 1-based data rows (the header is row 0).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file {path} does not exist")
    cat_index = [{lab: i for i, lab in enumerate(v)} for _, v in schema.categorical_specs]
    label_index = {lab: i for i, lab in enumerate(schema.label_vocabulary)}

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        pos = {h: i for i, h in enumerate(header)}
        for col in schema.columns():
            if col not in pos:
                raise SchemaError(f"column {col!r} missing from {path}")
        num_cols = [pos[n] for n in schema.numerical_names]
        cat_cols = [pos[n] for n, _ in schema.categorical_specs]
        lab_col = pos[schema.label_name]

        nums, cats, labels = [], [], []
        for rowno, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) < len(header):
                raise DataError(f"row {rowno}: expected {len(header)} cells, got {len(row)}")
            vals = []
            for name, c in zip(schema.numerical_names, num_cols):
                cell = row[c].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"row {rowno}, column {name!r}: cannot parse {cell!r} as a number"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(f"row {rowno}, column {name!r}: non-finite value {cell!r}")
                vals.append(v)
            idx = []
            for (name, _), c, lookup in zip(schema.categorical_specs, cat_cols, cat_index):
                cell = row[c].strip()
                if cell not in lookup:
                    raise DataError(
                        f"row {rowno}, column {name!r}: category {cell!r} not in vocabulary"
                    )
                idx.append(lookup[cell])
            cell = row[lab_col].strip()
            if cell not in label_index:
                raise DataError(f"row {rowno}: label {cell!r} not in label vocabulary")
            nums.append(vals)
            cats.append(idx)
            labels.append(label_index[cell])

    n = len(labels)
    return MixedDataset(
        schema,
        np.array(nums, dtype=float).reshape(n, schema.d_n),
        np.array(cats, dtype=np.intp).reshape(n, schema.d_c),
        np.array(labels, dtype=np.intp),
    )


# -- standardization and encoding ----------------------------------------------

def fit_standardization(train) -> StandardizationStats:
    if isinstance(train, MixedDataset):
        X = train.numerics
    else:
        X = np.array([s.numerics for s in train], dtype=float)
    if len(X) == 0:
        raise UsageError("cannot fit standardization on an empty training set")
    X = X.reshape(len(X), -1)
    means = X.mean(axis=0)
    if len(X) > 1:
        std = X.std(axis=0, ddof=1)
    else:
        std = np.zeros_like(means)
    return StandardizationStats(means, np.maximum(std, STD_FLOOR))


def encode(sample: MixedSample, stats: StandardizationStats, schema: MixedSchema) -> np.ndarray:
    z = stats.transform(sample.numerics).reshape(schema.d_n)
    return np.concatenate([z, schema.layout.one_hot(sample.categoricals)])


def encode_dataset(ds: MixedDataset, stats: StandardizationStats) -> np.ndarray:
    """Encode a whole dataset into an ``N x D`` matrix."""
    z = stats.transform(ds.numerics)
    return np.hstack([z, ds.schema.layout.one_hot(ds.categoricals)])


def decode(dense, stats: StandardizationStats, schema: MixedSchema) -> MixedSample:
    dense = np.asarray(dense, dtype=float)
    if dense.shape != (schema.width,):
        raise DataError(f"encoded vector has shape {dense.shape}, expected ({schema.width},)")
    if not np.all(np.isfinite(dense)):
        raise DataError("encoded vector contains non-finite entries")
    numerics = stats.inverse(dense[: schema.d_n])
    cats = schema.layout.argmax_blocks(dense[schema.d_n:])
    return MixedSample(tuple(float(v) for v in numerics), tuple(int(c) for c in cats), None)


def train_test_split(ds: MixedDataset, frac: float = 0.8, seed: int = 0):
    if not 0.0 < frac < 1.0:
        raise UsageError(f"split fraction must be in (0, 1), got {frac}")
    n = len(ds)
    perm = np.random.default_rng(seed).permutation(n)
    cut = int(round(frac * n))
    if cut == 0 or cut == n:
        raise UsageError(f"split {frac} of {n} rows leaves an empty side")
    return ds[perm[:cut]], ds[perm[cut:]]


# -- synthetic data -------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    d_n: int = 13
    cat_sizes: tuple[int, ...] = (10,) * 7
    n_samples: int = 5000
    seed: int = 0
    label_noise: float = 0.03


def _planted_score(z_num, cats, params) -> np.ndarray:
    w, cat_bias, inter_col, inter_slope = params
    score = z_num @ w
    for i in range(cats.shape[1]):
        score = score + cat_bias[i][cats[:, i]]
        score = score + inter_slope[i][cats[:, i]] * z_num[:, inter_col[i]]
    return score


def generate_synthetic(spec: SyntheticSpec | dict | None = None, **kwargs):
    """Seeded mixed-type dataset with numeric/categorical correlation and a
    planted labelling rule.

    Categories are drawn from per-cluster distributions of a hidden cluster
    variable, so categorical features co-vary. Each numeric's mean shifts with
    the categories, and the label thresholds a score mixing linear numeric
    terms, per-category offsets and category-dependent numeric slopes.

    Returns ``(dataset, schema)``. ``dataset.planted_labels`` holds the
    noise-free rule output.
    """
    if spec is None:
        spec = SyntheticSpec(**kwargs)
    elif isinstance(spec, dict):
        spec = SyntheticSpec(**{**spec, **kwargs})
    d_n, sizes, n = int(spec.d_n), tuple(int(k) for k in spec.cat_sizes), int(spec.n_samples)
    if n < 10:
        raise UsageError(f"n_samples must be >= 10, got {n}")
    if d_n < 1:
        raise UsageError("synthetic data needs at least one numerical feature")
    if any(not 2 <= k <= MAX_CATEGORIES for k in sizes):
        raise UsageError(f"category counts must lie in [2, {MAX_CATEGORIES}]")
    if not 0.0 <= spec.label_noise < 0.5:
        raise UsageError("label_noise must lie in [0, 0.5)")

    rng = np.random.default_rng(spec.seed)
    d_c = len(sizes)
    n_clusters = 3

    cluster = rng.integers(n_clusters, size=n)
    cats = np.empty((n, d_c), dtype=np.intp)
    for i, k in enumerate(sizes):
        probs = rng.dirichlet(np.full(k, 0.8), size=n_clusters)
        u = rng.random(n)
        cdf = np.cumsum(probs[cluster], axis=1)
        cats[:, i] = np.minimum((u[:, None] > cdf).sum(axis=1), k - 1)

    # category-conditioned means plus correlated Gaussian noise
    effects = [rng.normal(0.0, 0.9, size=(k, d_n)) * (rng.random(d_n) < 0.5) for k in sizes]
    mix = rng.normal(0.0, 1.0, size=(d_n, d_n)) / math.sqrt(d_n)
    scale = rng.uniform(0.5, 5.0, size=d_n)
    offset = rng.normal(0.0, 10.0, size=d_n)
    latent = rng.normal(size=(n, d_n)) @ (np.eye(d_n) * 0.8 + mix * 0.6)
    for i in range(d_c):
        latent += effects[i][cats[:, i]]
    numerics = latent * scale + offset

    mu, sd = latent.mean(axis=0), latent.std(axis=0)
    z = (latent - mu) / sd
    w = rng.normal(0.0, 1.0, size=d_n) / math.sqrt(d_n)
    cat_bias = [rng.normal(0.0, 0.5, size=k) for k in sizes]
    # the first two categoricals split their categories into two groups that
    # flip the sign of one numeric's effect
    inter_col = rng.integers(d_n, size=d_c)
    inter_slope = [np.where(rng.random(k) < 0.5, -1.0, 1.0) * (i < 2)
                   for i, k in enumerate(sizes)]
    score = _planted_score(z, cats, (w, cat_bias, inter_col, inter_slope))
    planted = (score > np.median(score)).astype(np.intp)
    flip = rng.random(n) < spec.label_noise
    labels = np.where(flip, 1 - planted, planted)

    schema = MixedSchema(
        numerical_names=[f"num_{j}" for j in range(d_n)],
        categorical_specs=[(f"cat_{i}", [f"c{j}" for j in range(k)])
                           for i, k in enumerate(sizes)],
        label_name="label",
        label_vocabulary=["0", "1"],
    )
    ds = MixedDataset(schema, numerics, cats, labels)
    ds.planted_labels = planted
    return ds, schema
