"""Tabular schemas, instances, datasets, encodings and synthetic data."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, NamedTuple, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError as PydanticValidationError

from .errors import DegenerateRange, ParseError, SchemaError, SchemaMismatch, ValidationError
from .prng import Xoshiro256

NUMERIC = "numeric"
CATEGORICAL = "categorical"
LABEL_COLUMN = "label"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: Literal["numeric", "categorical"]
    range: tuple[float, float] | None = None
    categories: tuple[str, ...] = ()
    sensitive: bool = False

    @property
    def is_numeric(self) -> bool:
        return self.kind == NUMERIC

    def to_dict(self) -> dict:
        d: dict = {"name": self.name, "kind": self.kind}
        if self.is_numeric:
            d["range"] = [self.range[0], self.range[1]]
        else:
            d["categories"] = list(self.categories)
        d["sensitive"] = self.sensitive
        return d


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[FeatureSpec, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if not names:
            raise SchemaError("schema has no features")
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate feature names: {dup}")
        if LABEL_COLUMN in names:
            raise SchemaError(f"'{LABEL_COLUMN}' is reserved for the class column")
        for f in self.features:
            if f.kind == NUMERIC:
                if f.range is None or len(f.range) != 2:
                    raise SchemaError(f"numeric feature {f.name!r} needs a [lo, hi] range")
                lo, hi = f.range
                if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                    raise SchemaError(f"feature {f.name!r}: range must satisfy lo < hi")
            elif f.kind == CATEGORICAL:
                if len(f.categories) < 2 or len(set(f.categories)) != len(f.categories):
                    raise SchemaError(
                        f"categorical feature {f.name!r} needs >= 2 distinct categories"
                    )
            else:
                raise SchemaError(f"feature {f.name!r}: unknown kind {f.kind!r}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    @property
    def d(self) -> int:
        return len(self.features)

    @property
    def sensitive(self) -> frozenset[str]:
        return frozenset(f.name for f in self.features if f.sensitive)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaMismatch(f"unknown feature {name!r}") from None

    def __getitem__(self, name: str) -> FeatureSpec:
        return self.features[self.index(name)]

    def instance(self, *values, label: int | None = None) -> "Instance":
        """Build a validated instance, coercing numbers and category tokens."""
        if len(values) != self.d:
            raise SchemaMismatch(f"expected {self.d} values, got {len(values)}")
        out = []
        for f, v in zip(self.features, values):
            out.append(float(v) if f.is_numeric else str(v))
        inst = Instance(tuple(out), label)
        self.validate(inst)
        return inst

    def validate(self, inst: "Instance") -> None:
        if len(inst.values) != self.d:
            raise SchemaMismatch(f"instance has {len(inst.values)} values, schema has {self.d}")
        for f, v in zip(self.features, inst.values):
            if f.is_numeric:
                if not isinstance(v, float) or not math.isfinite(v):
                    raise SchemaMismatch(f"feature {f.name!r}: non-finite or non-float value {v!r}")
            elif v not in f.categories:
                raise SchemaMismatch(f"feature {f.name!r}: {v!r} not in {list(f.categories)}")
        if inst.label not in (None, 0, 1):
            raise SchemaMismatch(f"label must be 0 or 1, got {inst.label!r}")

    def to_dict(self) -> dict:
        return {"features": [f.to_dict() for f in self.features]}

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureSchema":
        try:
            parsed = _SchemaFile.model_validate(data)
        except PydanticValidationError as exc:
            raise ParseError(f"malformed schema: {exc}") from None
        specs = []
        for f in parsed.features:
            if f.kind == NUMERIC:
                if f.categories is not None or f.range is None:
                    raise SchemaError(f"numeric feature {f.name!r} takes 'range' only")
                specs.append(FeatureSpec(f.name, NUMERIC, (float(f.range[0]), float(f.range[1])),
                                         sensitive=f.sensitive))
            else:
                if f.range is not None or f.categories is None:
                    raise SchemaError(f"categorical feature {f.name!r} takes 'categories' only")
                specs.append(FeatureSpec(f.name, CATEGORICAL, None,
                                         tuple(str(c) for c in f.categories), f.sensitive))
        return cls(tuple(specs))


class _FeatureEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")
    name: str
    kind: Literal["numeric", "categorical"]
    range: tuple[float, float] | None = None
    categories: list[str | int] | None = None
    sensitive: bool = False


class _SchemaFile(BaseModel):
    model_config = ConfigDict(extra="forbid")
    features: list[_FeatureEntry]


@dataclass(frozen=True)
class Instance:
    """One row: numeric values as floats, categorical values as tokens."""

    values: tuple
    label: int | None = None

    def __len__(self):
        return len(self.values)

    def with_values(self, values: Iterable) -> "Instance":
        return Instance(tuple(values), None)


@dataclass(frozen=True)
class Dataset:
    schema: FeatureSchema
    rows: tuple[Instance, ...]
    provenance: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.rows)

    def labels(self) -> np.ndarray:
        if any(r.label is None for r in self.rows):
            raise ValidationError("dataset has unlabeled rows")
        return np.array([r.label for r in self.rows], dtype=np.int64)

    def head(self, n: int) -> "Dataset":
        return Dataset(self.schema, self.rows[:n], dict(self.provenance))

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        return (Dataset(self.schema, self.rows[:n_first], dict(self.provenance, part="train")),
                Dataset(self.schema, self.rows[n_first:], dict(self.provenance, part="test")))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        labeled = bool(self.rows) and all(r.label is not None for r in self.rows)
        w.writerow(list(self.schema.names) + ([LABEL_COLUMN] if labeled else []))
        for r in self.rows:
            cells = [format_value(v) for v in r.values]
            w.writerow(cells + ([str(r.label)] if labeled else []))
        return buf.getvalue()


def format_value(v) -> str:
    """Shortest exact text for a cell value."""
    if isinstance(v, float):
        if v.is_integer() and abs(v) < 1e15:
            return str(int(v))
        return repr(v)
    return str(v)


# --------------------------------------------------------------------- loading

def load_schema(path: str | Path) -> FeatureSchema:
    """Load a schema config file (JSON, see README for the grammar)."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read schema {path}: {exc}") from None
    return FeatureSchema.from_dict(data)


def load_csv(path: str | Path, schema: FeatureSchema) -> Dataset:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    return parse_csv(text, schema, source=str(path))


def parse_csv(text: str, schema: FeatureSchema, source: str = "<string>") -> Dataset:
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty CSV") from None
    header = [h.strip() for h in header]
    has_label = LABEL_COLUMN in header
    expected = set(schema.names) | ({LABEL_COLUMN} if has_label else set())
    if set(header) != expected or len(header) != len(expected):
        raise ParseError(f"header {header} does not match schema names {list(schema.names)}")
    pos = {name: header.index(name) for name in header}
    rows = []
    for i, cells in enumerate(reader):
        if not cells:
            continue
        if len(cells) != len(header):
            raise ParseError(f"row {i}: expected {len(header)} cells, got {len(cells)}")
        values = []
        for f in schema.features:
            cell = cells[pos[f.name]].strip()
            if f.is_numeric:
                try:
                    v = float(cell)
                except ValueError:
                    raise ValidationError(f"row {i}, column {f.name!r}: {cell!r} is not numeric",
                                          row=i, column=f.name) from None
                if not math.isfinite(v):
                    raise ValidationError(f"row {i}, column {f.name!r}: non-finite value",
                                          row=i, column=f.name)
            else:
                if cell not in f.categories:
                    raise ValidationError(
                        f"row {i}, column {f.name!r}: {cell!r} not in {list(f.categories)}",
                        row=i, column=f.name)
                v = cell
            values.append(v)
        label = None
        if has_label:
            cell = cells[pos[LABEL_COLUMN]].strip()
            if cell not in ("0", "1"):
                raise ValidationError(f"row {i}, column 'label': {cell!r} not in {{0,1}}",
                                      row=i, column=LABEL_COLUMN)
            label = int(cell)
        rows.append(Instance(tuple(values), label))
    return Dataset(schema, tuple(rows), {"source": source})


# --------------------------------------------------------------- normalization

class Encoded(NamedTuple):
    vector: np.ndarray
    clamped: tuple[str, ...]


@dataclass(frozen=True)
class NormalizationContext:
    """Min-max scaling for numerics plus binary / one-hot codes for categoricals.

    Binary categoricals occupy one coordinate (first category -> 0, second -> 1).
    Categoricals with more levels are one-hot encoded, one coordinate per level.
    """

    schema: FeatureSchema
    mode: Literal["train-ranges", "local-set"]
    mins: tuple[float | None, ...]
    maxs: tuple[float | None, ...]

    def __post_init__(self):
        for f, lo, hi in zip(self.schema.features, self.mins, self.maxs):
            if f.is_numeric and not lo < hi:
                raise DegenerateRange(f"feature {f.name!r} is constant in the reference set")

    @property
    def slices(self) -> tuple[slice, ...]:
        out, k = [], 0
        for f in self.schema.features:
            width = 1 if f.is_numeric or len(f.categories) == 2 else len(f.categories)
            out.append(slice(k, k + width))
            k += width
        return tuple(out)

    @property
    def dim(self) -> int:
        return self.slices[-1].stop

    def ranges(self) -> np.ndarray:
        """Per-feature numeric range (nan for categoricals)."""
        return np.array([hi - lo if lo is not None else np.nan
                         for lo, hi in zip(self.mins, self.maxs)])

    def to_dict(self) -> dict:
        return {"mode": self.mode, "mins": list(self.mins), "maxs": list(self.maxs)}

    @classmethod
    def from_dict(cls, schema: FeatureSchema, data: dict) -> "NormalizationContext":
        return cls(schema, data["mode"], tuple(data["mins"]), tuple(data["maxs"]))


def make_normalization(reference: Dataset | Sequence[Instance],
                       mode: Literal["train-ranges", "local-set"] = "train-ranges",
                       schema: FeatureSchema | None = None,
                       constant_ok: bool = False) -> NormalizationContext:
    """Fit min/max per numeric feature over ``reference``.

    ``mode`` records intent: ``train-ranges`` for a training set, ``local-set``
    for ``{x} | E`` as in a single-instance worked example. A constant feature
    raises DegenerateRange unless ``constant_ok``, in which case it gets a unit
    range (every difference on it is zero anyway).
    """
    if isinstance(reference, Dataset):
        schema, rows = reference.schema, reference.rows
    else:
        rows = tuple(reference)
        if schema is None:
            raise SchemaMismatch("schema required when normalizing a bare instance list")
    if not rows:
        raise DegenerateRange("empty reference set")
    mins, maxs = [], []
    for j, f in enumerate(schema.features):
        if f.is_numeric:
            col = [r.values[j] for r in rows]
            lo, hi = float(min(col)), float(max(col))
            mins.append(lo)
            maxs.append(lo + 1.0 if constant_ok and lo == hi else hi)
        else:
            mins.append(None)
            maxs.append(None)
    return NormalizationContext(schema, mode, tuple(mins), tuple(maxs))


def encode(instance: Instance, ctx: NormalizationContext) -> Encoded:
    schema = ctx.schema
    schema.validate(instance)
    vec = np.zeros(ctx.dim)
    clamped = []
    for j, (f, sl) in enumerate(zip(schema.features, ctx.slices)):
        v = instance.values[j]
        if f.is_numeric:
            lo, hi = ctx.mins[j], ctx.maxs[j]
            z = (v - lo) / (hi - lo)
            if z < 0.0 or z > 1.0:
                clamped.append(f.name)
                z = min(1.0, max(0.0, z))
            vec[sl.start] = z
        else:
            k = f.categories.index(v)
            if len(f.categories) == 2:
                vec[sl.start] = float(k)
            else:
                vec[sl.start + k] = 1.0
    return Encoded(vec, tuple(clamped))


def encode_many(rows: Sequence[Instance], ctx: NormalizationContext) -> np.ndarray:
    """Vectorised ``encode`` (clamping applied, flags dropped)."""
    schema = ctx.schema
    out = np.zeros((len(rows), ctx.dim))
    if not rows:
        return out
    for j, (f, sl) in enumerate(zip(schema.features, ctx.slices)):
        col = [r.values[j] for r in rows]
        if f.is_numeric:
            lo, hi = ctx.mins[j], ctx.maxs[j]
            out[:, sl.start] = np.clip((np.asarray(col, dtype=float) - lo) / (hi - lo), 0.0, 1.0)
        else:
            lookup = {c: k for k, c in enumerate(f.categories)}
            try:
                idx = np.array([lookup[c] for c in col])
            except KeyError as exc:
                raise SchemaMismatch(f"feature {f.name!r}: unknown category {exc}") from None
            if len(f.categories) == 2:
                out[:, sl.start] = idx
            else:
                out[np.arange(len(rows)), sl.start + idx] = 1.0
    return out


def decode(vector: Sequence[float], ctx: NormalizationContext) -> Instance:
    """Inverse of ``encode`` for in-range numerics and exact categorical codes."""
    values = []
    for j, (f, sl) in enumerate(zip(ctx.schema.features, ctx.slices)):
        if f.is_numeric:
            lo, hi = ctx.mins[j], ctx.maxs[j]
            values.append(float(lo + vector[sl.start] * (hi - lo)))
        elif len(f.categories) == 2:
            values.append(f.categories[int(round(vector[sl.start]))])
        else:
            values.append(f.categories[int(np.argmax(vector[sl]))])
    return Instance(tuple(values))


# ------------------------------------------------------------------ generators

LOAN_SCHEMA = FeatureSchema((
    FeatureSpec("Income", NUMERIC, (0.0, 100000.0)),
    FeatureSpec("Gender", CATEGORICAL, None, ("F", "M"), sensitive=True),
    FeatureSpec("Employment", CATEGORICAL, None, ("Temporary", "Permanent")),
    FeatureSpec("Age", NUMERIC, (18.0, 80.0)),
))

XOR_SCHEMA = FeatureSchema((
    FeatureSpec("Income", NUMERIC, (0.0, 100000.0)),
    FeatureSpec("Gender", CATEGORICAL, None, ("0", "1"), sensitive=True),
))

XOR_THRESHOLD = 50000.0


def gen_synthetic_loan(n: int, seed: int) -> Dataset:
    """Synthetic loan-approval data over ``LOAN_SCHEMA``.

    Generative rule, per row (all draws from one xoshiro stream)::

        Gender      ~ M with prob 0.5
        Employment  ~ Permanent with prob 0.55
        Age         ~ uniform integer in [18, 80]
        Income      = clip(18000 + 600*(Age-18) + 14000*[Permanent] + 16000*N(0,1),
                           0, 100000), rounded to the nearest 100
        score       = 0.9*tanh((Income-45000)/15000) + 1.4*[Permanent]
                      + 1.4*[Gender=M] + 0.3*(Age-45)/30 - 1.4 + 0.5*N(0,1)
        label       = [score > 0]

    The Gender term makes the labelling (and hence trained models) depend on the
    sensitive feature, which is what a cherry-picking provider wants to hide.
    Income saturates, so for some applicants only a Gender or an Employment
    flip moves the decision on its own.
    """
    if n < 10:
        raise ValueError("n must be >= 10")
    rng = Xoshiro256(seed)
    rows = []
    for _ in range(n):
        male = rng.random() < 0.5
        perm = rng.random() < 0.55
        age = 18 + rng.randbelow(63)
        income = 18000 + 600 * (age - 18) + 14000 * perm + 16000 * rng.normal()
        income = float(round(min(100000.0, max(0.0, income)) / 100.0) * 100)
        score = (0.9 * math.tanh((income - 45000) / 15000) + 1.4 * perm + 1.4 * male
                 + 0.3 * (age - 45) / 30 - 1.4 + 0.5 * rng.normal())
        rows.append(Instance((income, "M" if male else "F",
                              "Permanent" if perm else "Temporary", float(age)),
                             int(score > 0)))
    return Dataset(LOAN_SCHEMA, tuple(rows),
                   {"source": "synthetic-loan", "n": n, "seed": seed})


def xor_label(income: float, gender: str | int) -> int:
    return int(str(gender) == "1") ^ int(income > XOR_THRESHOLD)


def gen_xor(n: int, seed: int) -> Dataset:
    """Rows labelled by ``Gender XOR (Income > 50000)`` with exactly n/2 per class.

    Each class is split as evenly as possible over its two (Gender, income side)
    quadrants; incomes are uniform integers on the quadrant's side of the
    threshold; row order is shuffled.
    """
    if n < 4 or n % 2:
        raise ValueError("n must be an even number >= 4")
    rng = Xoshiro256(seed)
    half = n // 2
    quads = {  # (gender, high income) -> count
        (0, True): (half + 1) // 2, (1, False): half // 2,   # label 1
        (0, False): (half + 1) // 2, (1, True): half // 2,   # label 0
    }
    rows = []
    for (g, high), count in quads.items():
        for _ in range(count):
            income = float(50001 + rng.randbelow(50000) if high else rng.randbelow(50001))
            rows.append(Instance((income, str(g)), xor_label(income, g)))
    rng.shuffle(rows)
    return Dataset(XOR_SCHEMA, tuple(rows), {"source": "synthetic-xor", "n": n, "seed": seed})
