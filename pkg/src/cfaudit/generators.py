"""Counterfactual generation methods.

* :func:`dice_random` -- stochastic level-n swap search (DiCE "random" style).
* :func:`greedy_sparse` -- deterministic swap scan, a second method for
  between-method comparisons.
* :func:`exhaustive_enumerate` -- every valid point of a finite grid; the
  ground-truth oracle used to certify top rank.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import CfNotFound, GridTooLarge, SchemaMismatch
from .models import Model
from .prng import Xoshiro256
from .tabular import Dataset, FeatureSchema, Instance, format_value

DEFAULT_GRID_CAP = 10**6


@dataclass(frozen=True)
class FeatureMask:
    editable: tuple[bool, ...]

    def __post_init__(self):
        if not any(self.editable):
            raise ValueError("feature mask must leave at least one feature editable")

    @classmethod
    def all(cls, schema: FeatureSchema) -> "FeatureMask":
        return cls((True,) * schema.d)

    @classmethod
    def excluding(cls, schema: FeatureSchema, names) -> "FeatureMask":
        names = set(names)
        unknown = names - set(schema.names)
        if unknown:
            raise SchemaMismatch(f"unknown features in mask: {sorted(unknown)}")
        return cls(tuple(n not in names for n in schema.names))

    @property
    def indices(self) -> list[int]:
        return [j for j, e in enumerate(self.editable) if e]

    def restricted(self, schema: FeatureSchema) -> list[str]:
        return [n for n, e in zip(schema.names, self.editable) if not e]


@dataclass(frozen=True)
class GenBudget:
    attempts_per_level: int = 100
    max_level: int = 4

    def __post_init__(self):
        if self.attempts_per_level < 1 or self.max_level < 1:
            raise ValueError("budget values must be >= 1")


@dataclass(frozen=True)
class Provenance:
    model_id: str
    method_id: str
    method_seed: int | None
    emission_index: int = 0
    model_index: int = 0
    method_index: int = 0
    seed_index: int = 0

    def sort_key(self) -> tuple:
        return (self.model_index, self.method_index, self.seed_index, self.emission_index)


@dataclass(frozen=True)
class ExplanationRecord:
    factual: Instance
    counterfactual: Instance
    factual_class: int
    counterfactual_class: int
    provenance: Provenance
    id: int | None = None
    evaluations: int = 0  # model queries spent by the generating method
    level: int = 0

    @property
    def changed(self) -> tuple[bool, ...]:
        return tuple(a != b for a, b in zip(self.factual.values, self.counterfactual.values))

    @property
    def delta(self) -> tuple:
        """Per feature: ``(changed, new value or None)``."""
        return tuple((c, e if c else None)
                     for c, e in zip(self.changed, self.counterfactual.values))

    def n_changed(self) -> int:
        return sum(self.changed)

    def to_dict(self, schema: FeatureSchema) -> dict:
        return {
            "id": self.id,
            "factual": dict(zip(schema.names, map(_json_value, self.factual.values))),
            "counterfactual": dict(zip(schema.names, map(_json_value, self.counterfactual.values))),
            "delta": {n: _json_value(v) for n, (c, v) in zip(schema.names, self.delta) if c},
            "factual_class": self.factual_class,
            "counterfactual_class": self.counterfactual_class,
            "provenance": {
                "model_id": self.provenance.model_id,
                "method_id": self.provenance.method_id,
                "method_seed": self.provenance.method_seed,
                "emission_index": self.provenance.emission_index,
                "model_index": self.provenance.model_index,
                "method_index": self.provenance.method_index,
                "seed_index": self.provenance.seed_index,
            },
            "evaluations": self.evaluations,
            "level": self.level,
        }

    @classmethod
    def from_dict(cls, d: dict, schema: FeatureSchema) -> "ExplanationRecord":
        x = schema.instance(*(d["factual"][n] for n in schema.names))
        e = schema.instance(*(d["counterfactual"][n] for n in schema.names))
        rec = cls(x, e, int(d["factual_class"]), int(d["counterfactual_class"]),
                  Provenance(**d["provenance"]), d.get("id"), d.get("evaluations", 0),
                  d.get("level", 0))
        delta = d.get("delta")
        if delta is not None:
            expected = {n for n, c in zip(schema.names, rec.changed) if c}
            if set(delta) != expected:
                raise SchemaMismatch(f"delta {sorted(delta)} inconsistent with (x, e)")
        return rec


def _json_value(v):
    if isinstance(v, float) and v.is_integer() and abs(v) < 1e15:
        return int(v)
    return v


def _record(model: Model, x: Instance, y0: int, e: Instance, y1: int, method: str,
            seed: int | None, evaluations: int, level: int) -> ExplanationRecord:
    return ExplanationRecord(x, Instance(e.values), y0, y1,
                             Provenance(model.model_id, method, seed),
                             evaluations=evaluations, level=level)


# ------------------------------------------------------------------ DiCE random

def dice_random(model: Model, x: Instance, train: Dataset, mask: FeatureMask,
                budget: GenBudget = GenBudget(), seed: int = 0) -> ExplanationRecord:
    """Random level-n swaps from training rows; first valid candidate wins.

    For n = 1..max_level, ``attempts_per_level`` candidates are drawn. Each
    picks n distinct editable features uniformly and, for each picked feature
    independently, copies that feature's value from a uniformly drawn training
    row. Candidates are evaluated in draw order and the first one whose
    prediction differs from ``predict(model, x)`` is returned.
    """
    model.schema.validate(x)
    editable = mask.indices
    y0 = int(model.predict_many([x])[0])
    rng = Xoshiro256(seed)
    rows = train.rows
    spent = 0
    for level in range(1, min(budget.max_level, len(editable)) + 1):
        cands = []
        for _ in range(budget.attempts_per_level):
            values = list(x.values)
            for j in rng.sample(editable, level):
                values[j] = rows[rng.randbelow(len(rows))].values[j]
            cands.append(Instance(tuple(values)))
        preds = model.predict_many(cands)
        hits = np.flatnonzero(preds != y0)
        if len(hits):
            k = int(hits[0])
            return _record(model, x, y0, cands[k], int(preds[k]), "dice-random", seed,
                           spent + k + 1, level)
        spent += len(cands)
    raise CfNotFound(f"dice-random exhausted its budget ({spent} candidates)")


# ---------------------------------------------------------------- greedy sparse

def greedy_scan_order(train: Dataset, mask: FeatureMask) -> list[int]:
    """Editable features by ascending count of distinct training values."""
    counts = {j: len({r.values[j] for r in train.rows}) for j in mask.indices}
    return sorted(mask.indices, key=lambda j: (counts[j], j))


def greedy_sparse(model: Model, x: Instance, train: Dataset, mask: FeatureMask,
                  max_level: int | None = None) -> ExplanationRecord:
    """Deterministic sparse search over training-row swaps.

    Level 1 scans features in :func:`greedy_scan_order` and, per feature, the
    distinct training values in row order. Level k > 1 scans k-subsets of that
    order lexicographically, copying all k values from one training row at a
    time (rows in order). The first valid candidate is returned.
    """
    model.schema.validate(x)
    y0 = int(model.predict_many([x])[0])
    order = greedy_scan_order(train, mask)
    top = min(max_level or len(order), len(order))
    spent = 0
    for level in range(1, top + 1):
        for feats in itertools.combinations(order, level):
            seen = set()
            cands = []
            for r in train.rows:
                key = tuple(r.values[j] for j in feats)
                if key in seen:
                    continue
                seen.add(key)
                values = list(x.values)
                for j, v in zip(feats, key):
                    values[j] = v
                if tuple(values) != x.values:
                    cands.append(Instance(tuple(values)))
            if not cands:
                continue
            preds = model.predict_many(cands)
            hits = np.flatnonzero(preds != y0)
            if len(hits):
                k = int(hits[0])
                return _record(model, x, y0, cands[k], int(preds[k]), "greedy-sparse", None,
                               spent + k + 1, level)
            spent += len(cands)
    raise CfNotFound("greedy-sparse found no valid swap")


# ------------------------------------------------------------ grid enumeration

def make_grid(schema: FeatureSchema, steps: dict[str, float] | None = None,
              points: int = 11) -> list[list]:
    """Per-feature value grid: numerics on a regular lattice over their range
    (``steps[name]`` spacing, else ``points`` evenly spaced values), categoricals
    in full."""
    steps = steps or {}
    grid = []
    for f in schema.features:
        if f.is_numeric:
            lo, hi = f.range
            if f.name in steps:
                k = int(math.floor((hi - lo) / steps[f.name] + 1e-9))
                grid.append([float(lo + i * steps[f.name]) for i in range(k + 1)])
            else:
                grid.append([float(v) for v in np.linspace(lo, hi, points)])
        else:
            grid.append(list(f.categories))
    return grid


def _masked_grid(x: Instance, grid: Sequence[Sequence], mask: FeatureMask) -> list[list]:
    if len(grid) != len(x.values):
        raise SchemaMismatch("grid arity differs from the instance")
    return [list(g) if m else [x.values[j]] for j, (g, m) in enumerate(zip(grid, mask.editable))]


def exhaustive_enumerate(model: Model, x: Instance, grid: Sequence[Sequence],
                         mask: FeatureMask, cap: int = DEFAULT_GRID_CAP,
                         chunk: int = 4096) -> list[ExplanationRecord]:
    """All valid grid counterfactuals respecting ``mask``, in lexicographic grid order."""
    model.schema.validate(x)
    axes = _masked_grid(x, grid, mask)
    size = math.prod(len(a) for a in axes)
    if size > cap:
        raise GridTooLarge(f"grid has {size} points (cap {cap})")
    schema = model.schema
    axes = [[float(v) if f.is_numeric else str(v) for v in a]
            for f, a in zip(schema.features, axes)]
    y0 = int(model.predict_many([x])[0])
    out = []
    it = itertools.product(*axes)
    while True:
        block = [Instance(v) for v in itertools.islice(it, chunk)]
        if not block:
            break
        preds = model.predict_many(block)
        for e, p in zip(block, preds):
            if p != y0 and e.values != x.values:
                out.append(_record(model, x, y0, e, int(p), "exhaustive", None, size, 0))
    return [replace(r, provenance=replace(r.provenance, emission_index=i))
            for i, r in enumerate(out)]


def grid_pick(model: Model, x: Instance, grid: Sequence[Sequence], mask: FeatureMask,
              index: int, cap: int = DEFAULT_GRID_CAP) -> ExplanationRecord:
    """The ``index``-th (mod count) valid grid counterfactual.

    Varying ``index`` realises a family of methods that together can reach
    every valid grid point, i.e. an unrestricted method set on a finite grid.
    """
    valid = exhaustive_enumerate(model, x, grid, mask, cap)
    if not valid:
        raise CfNotFound("no valid grid point")
    r = valid[index % len(valid)]
    return replace(r, provenance=Provenance(model.model_id, "grid-pick", index))


def describe(record: ExplanationRecord, schema: FeatureSchema) -> str:
    parts = [f"{n}: {format_value(a)} -> {format_value(b)}"
             for n, a, b, c in zip(schema.names, record.factual.values,
                                   record.counterfactual.values, record.changed) if c]
    return "; ".join(parts) or "(no change)"
