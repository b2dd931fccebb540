"""Admissible explanation spaces, utility-consistent ranking, the cherry-picked
predicate, provider selection policies and top-rank certificates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Literal, NamedTuple, Sequence

import numpy as np

from .errors import CfNotFound, EmptySpace, NoAdmissibleRecord, NotInSpace, ParseError
from .generators import (ExplanationRecord, FeatureMask, GenBudget, Provenance, dice_random,
                         greedy_sparse)
from .metrics import UtilityEnv, UtilitySpec, utility_values
from .models import Model
from .tabular import Dataset, FeatureSchema, Instance

log = logging.getLogger(__name__)

SPACE_FORMAT = "cfaudit.space/1"
METHODS = ("dice-random", "greedy-sparse")


@dataclass(frozen=True)
class MethodConfig:
    method: Literal["dice-random", "greedy-sparse"]
    mask: FeatureMask
    budget: GenBudget = GenBudget()
    seeds: tuple[int, ...] = (0,)

    def realisations(self) -> tuple[int | None, ...]:
        # greedy-sparse is deterministic: a single realisation
        return (None,) if self.method == "greedy-sparse" else self.seeds

    def describe(self, schema: FeatureSchema) -> dict:
        return {"method": self.method, "restricted": self.mask.restricted(schema),
                "budget": {"attempts_per_level": self.budget.attempts_per_level,
                           "max_level": self.budget.max_level},
                "seeds": list(self.seeds) if self.method != "greedy-sparse" else []}


def generate(model: Model, cfg: MethodConfig, x: Instance, train: Dataset,
             seed: int | None) -> ExplanationRecord:
    if cfg.method == "dice-random":
        return dice_random(model, x, train, cfg.mask, cfg.budget, seed)
    if cfg.method == "greedy-sparse":
        return greedy_sparse(model, x, train, cfg.mask, cfg.budget.max_level)
    raise ValueError(f"unknown method {cfg.method!r}")


@dataclass(frozen=True)
class ExplanationSpace:
    instance: Instance
    records: tuple[ExplanationRecord, ...]
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def by_id(self, rid: int) -> ExplanationRecord:
        if not 1 <= rid <= len(self.records):
            raise NotInSpace(f"no record with id {rid}")
        return self.records[rid - 1]

    def to_dict(self, schema: FeatureSchema) -> dict:
        from .generators import _json_value
        return {"format": SPACE_FORMAT,
                "instance": dict(zip(schema.names, map(_json_value, self.instance.values))),
                "records": [r.to_dict(schema) for r in self.records],
                "manifest": self.manifest}

    @classmethod
    def from_dict(cls, d: dict, schema: FeatureSchema) -> "ExplanationSpace":
        if d.get("format") != SPACE_FORMAT:
            raise ParseError(f"unsupported space format {d.get('format')!r}")
        x = schema.instance(*(d["instance"][n] for n in schema.names))
        recs = tuple(ExplanationRecord.from_dict(r, schema) for r in d["records"])
        return cls(x, recs, d.get("manifest", {}))


def assign_ids(x: Instance, records: Sequence[ExplanationRecord], manifest: dict | None = None
               ) -> ExplanationSpace:
    """Order records by provenance and number them 1..n."""
    ordered = sorted(records, key=lambda r: r.provenance.sort_key())
    return ExplanationSpace(x, tuple(replace(r, id=i) for i, r in enumerate(ordered, 1)),
                            manifest or {})


def build_space(models: Sequence[Model], method_configs: Sequence[MethodConfig], x: Instance,
                train: Dataset) -> ExplanationSpace:
    """One record per successful (model, method, seed) realisation at ``x``.

    Failed realisations are left out of the space and listed in the manifest.
    """
    if not models or not method_configs:
        raise ValueError("need at least one model and one method config")
    schema = models[0].schema
    records, failures = [], []
    for mi, model in enumerate(models):
        for ai, cfg in enumerate(method_configs):
            for si, seed in enumerate(cfg.realisations()):
                try:
                    rec = generate(model, cfg, x, train, seed)
                except CfNotFound as exc:
                    log.info("generation failed: model %d method %d seed %s: %s", mi, ai, seed, exc)
                    failures.append({"model_index": mi, "method_index": ai, "seed": seed,
                                     "reason": str(exc)})
                    continue
                records.append(replace(rec, provenance=replace(
                    rec.provenance, model_index=mi, method_index=ai, seed_index=si)))
    manifest = {"models": [m.model_id for m in models],
                "methods": [c.describe(schema) for c in method_configs],
                "failures": failures}
    if not records:
        raise EmptySpace("every generation attempt failed")
    return assign_ids(x, records, manifest)


# ---------------------------------------------------------------------- ranking

@dataclass(frozen=True)
class Ranking:
    space: ExplanationSpace
    utility: UtilitySpec
    values: np.ndarray        # utility per record, in id order
    rank: tuple[int, ...]     # rank per record, in id order
    tiebreak: str = "id-ascending"

    @property
    def order(self) -> list[ExplanationRecord]:
        """Records from rank 1 downwards."""
        out = [None] * len(self.rank)
        for rec, r in zip(self.space.records, self.rank):
            out[r - 1] = rec
        return out

    def rank_of(self, record: ExplanationRecord) -> int:
        return self.rank[_locate(self.space, record) - 1]

    def value_of(self, record: ExplanationRecord) -> float:
        return float(self.values[_locate(self.space, record) - 1])


def _locate(space: ExplanationSpace, record: ExplanationRecord) -> int:
    rid = record.id
    if rid is None or not 1 <= rid <= len(space.records):
        raise NotInSpace("record carries no id of this space")
    mine = space.records[rid - 1]
    if (mine.counterfactual.values != record.counterfactual.values
            or mine.factual.values != record.factual.values):
        raise NotInSpace(f"record {rid} does not match the space entry")
    return rid


def rank(space: ExplanationSpace, utility: UtilitySpec, env: UtilityEnv) -> Ranking:
    """Sort by decreasing utility, ties by ascending id; ranks are 1..n."""
    values = utility_values(utility, space.instance, space.records, env)
    ids = np.array([r.id for r in space.records])
    order = np.lexsort((ids, -values))
    ranks = np.empty(len(values), dtype=np.int64)
    ranks[order] = np.arange(1, len(values) + 1)
    return Ranking(space, utility, values, tuple(int(r) for r in ranks))


class CherryPick(NamedTuple):
    cherry_picked: bool
    rank: int
    witness: ExplanationRecord | None   # a record ranked strictly above
    strict: bool                        # witness has strictly higher utility
    gap: float                          # u(witness) - u(record), 0 if none


def is_cherry_picked(ranking: Ranking, record: ExplanationRecord) -> CherryPick:
    r = ranking.rank_of(record)
    if r == 1:
        return CherryPick(False, 1, None, False, 0.0)
    top = ranking.order[0]
    gap = ranking.value_of(top) - ranking.value_of(record)
    return CherryPick(True, r, top, gap > 0, float(gap))


# --------------------------------------------------------------------- policies

@dataclass(frozen=True)
class ProviderPolicy:
    kind: Literal["honest", "sensitive-avoiding"] = "honest"
    sensitive_set: tuple[str, ...] = ()
    fallback: Literal["error", "best-available"] = "error"

    def __post_init__(self):
        if self.kind == "sensitive-avoiding" and not self.sensitive_set:
            raise ValueError("sensitive-avoiding policy needs a sensitive set")


def edits_any(record: ExplanationRecord, schema: FeatureSchema, names: Sequence[str]) -> bool:
    idx = [schema.index(n) for n in names]
    return any(record.factual.values[j] != record.counterfactual.values[j] for j in idx)


def select_flagged(policy: ProviderPolicy, ranking: Ranking,
                   schema: FeatureSchema) -> tuple[ExplanationRecord, bool]:
    """Apply ``policy``; the flag is set when the avoiding policy fell back."""
    order = ranking.order
    if not order:
        raise EmptySpace("cannot select from an empty space")
    if policy.kind == "honest":
        return order[0], False
    for rec in order:
        if not edits_any(rec, schema, policy.sensitive_set):
            return rec, False
    if policy.fallback == "best-available":
        return order[0], True
    raise NoAdmissibleRecord(f"every record edits one of {list(policy.sensitive_set)}")


def select(policy: ProviderPolicy, ranking: Ranking, schema: FeatureSchema) -> ExplanationRecord:
    return select_flagged(policy, ranking, schema)[0]


# ------------------------------------------------------------------ certificate

@dataclass(frozen=True)
class Certificate:
    top_ranked: bool
    evaluations: int
    utility_table: tuple[tuple[int, float], ...] = ()   # (id, utility) for a proof
    counterexample: ExplanationRecord | None = None


def certify_top_rank(space: ExplanationSpace, utility: UtilitySpec, record: ExplanationRecord,
                     env: UtilityEnv) -> Certificate:
    """Prove ``record`` is rank 1 by scoring every record, or stop at the first
    record that outranks it."""
    rid = _locate(space, record)

    def u(rec) -> float:
        return float(utility_values(utility, space.instance, [rec], env, space.records)[0])

    mine = u(space.records[rid - 1])
    table = [(rid, mine)]
    for other in space.records:
        if other.id == rid:
            continue
        v = u(other)
        table.append((other.id, v))
        if v > mine or (v == mine and other.id < rid):
            return Certificate(False, len(table), counterexample=other)
    return Certificate(True, len(table), tuple(sorted(table)))


def literal_space(x: Instance, counterfactuals: Sequence[Instance], factual_class: int = 0,
                  method_id: str = "literal") -> ExplanationSpace:
    """A space given directly as a list of counterfactuals (ids follow list order)."""
    recs = [ExplanationRecord(x, Instance(e.values), factual_class, 1 - factual_class,
                              Provenance("literal", method_id, None, seed_index=k))
            for k, e in enumerate(counterfactuals)]
    return assign_ids(x, recs, {"source": method_id})
