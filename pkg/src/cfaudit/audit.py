"""Audits at the three access levels.

Verdict vocabulary is fixed per access level. Only a full audit, which
regenerates and scores the complete stated space, can return ``conformant``,
and only it attaches top-rank certificates. Partial and explanation-only
audits can at best say ``indeterminate``: with any part of the
specification unknown there is no finite check that rules cherry-picking out.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InsufficientSweep, RegenerationMismatch
from .generators import ExplanationRecord
from .pipeline import (SpecStatement, build_model, build_spaces, load_data, method_configs,
                       strip, utility_env)
from .ranking import ExplanationSpace, certify_top_rank, is_cherry_picked, rank
from .realizability import claim_from_reports, linear_realizability
from .stats import ks_two_sample, permutation_p
from .sweep import METRICS, RunSpec, SweepResult, execute_runs, explanation_metrics
from .tabular import FeatureSchema, NormalizationContext

CONFORMANT = "conformant"
CHERRY_PICKED = "cherry-picked"
INCONSISTENT = "inconsistent"
INDETERMINATE = "indeterminate"

ALLOWED_VERDICTS = {
    "full": frozenset({CONFORMANT, CHERRY_PICKED, INCONSISTENT}),
    "partial": frozenset({INDETERMINATE, INCONSISTENT}),
    "explanation-only": frozenset({INDETERMINATE, INCONSISTENT}),
}
VERDICT_COLUMNS = ("instance_index", "verdict", "rank", "strict", "utility_gap", "witness_id",
                   "reported_id", "detail")


@dataclass
class InstanceVerdict:
    instance_index: int
    verdict: str
    witness: dict | None = None
    evidence: dict = field(default_factory=dict)


@dataclass
class AuditReport:
    access_level: str
    verdicts: list[InstanceVerdict]
    summary: dict = field(default_factory=dict)
    evidence: dict = field(default_factory=dict)

    def __post_init__(self):
        allowed = ALLOWED_VERDICTS[self.access_level]
        for v in self.verdicts:
            if v.verdict not in allowed:
                raise ValueError(f"{self.access_level} audit cannot emit {v.verdict!r}")
            if v.verdict == CHERRY_PICKED and not v.witness:
                raise ValueError("cherry-picked verdict without a witness")
            if v.verdict == INCONSISTENT and not v.evidence:
                raise ValueError("inconsistent verdict without evidence")
            if "certificate" in v.evidence and self.access_level != "full":
                raise ValueError("only full audits carry top-rank certificates")
        if self.summary.get("overall", next(iter(allowed))) not in allowed:
            raise ValueError(f"{self.access_level} audit cannot conclude {self.summary['overall']!r}")
        self.summary = {**self._counts(), **self.summary}

    @property
    def flagged(self) -> list[int]:
        return [v.instance_index for v in self.verdicts if v.verdict in (CHERRY_PICKED, INCONSISTENT)]

    @property
    def overall(self) -> str:
        if "overall" in self.summary:
            return self.summary["overall"]
        kinds = {v.verdict for v in self.verdicts}
        for v in (INCONSISTENT, CHERRY_PICKED):
            if v in kinds:
                return v
        return CONFORMANT if self.access_level == "full" else INDETERMINATE

    def _counts(self) -> dict:
        counts = {k: 0 for k in ALLOWED_VERDICTS[self.access_level]}
        for v in self.verdicts:
            counts[v.verdict] += 1
        return {"verdict_counts": counts, "flagged": self.flagged, "n_instances": len(self.verdicts)}

    def to_dict(self) -> dict:
        return {"format": "cfaudit.audit/1", "access_level": self.access_level,
                "overall": self.overall, "summary": self.summary, "evidence": self.evidence,
                "verdicts": [{"instance_index": v.instance_index, "verdict": v.verdict,
                              "witness": v.witness, "evidence": v.evidence} for v in self.verdicts]}

    def verdicts_csv(self, extra: dict | None = None) -> str:
        extra = extra or {}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(list(VERDICT_COLUMNS) + list(extra))
        for v in self.verdicts:
            ev = v.evidence
            w.writerow([v.instance_index, v.verdict, ev.get("rank", ""), ev.get("strict", ""),
                        ev.get("utility_gap", ""), (v.witness or {}).get("id", ""),
                        ev.get("reported_id", ""), ev.get("detail", "")] + list(extra.values()))
        return buf.getvalue()


def _reports_by_instance(reported: Sequence[tuple[int, ExplanationRecord]]) -> dict[int, ExplanationRecord]:
    out = {}
    for i, r in reported:
        if i in out:
            raise ValueError(f"two reports for instance {i}")
        out[i] = r
    return out


# ------------------------------------------------------------------------ full

def regenerate(statement: SpecStatement, train):
    """Rebuild the stated models, checking declared content hashes."""
    models = []
    for k, entry in enumerate(statement.models):
        if entry.get("seed") is None and entry.get("kind") != "rule-xor":
            raise RegenerationMismatch(f"model {k} has no stated seed")
        m = build_model({k2: v for k2, v in entry.items() if k2 != "model_id"}, train)
        declared = entry.get("model_id")
        if declared is not None and declared != m.model_id:
            raise RegenerationMismatch(
                f"model {k}: declared id {declared} but regenerated {m.model_id}")
        models.append(m)
    return models


def match_in_space(space: ExplanationSpace, rec: ExplanationRecord) -> ExplanationRecord | None:
    """The space entry a report corresponds to: same provenance slot and values
    if possible, otherwise the lowest-id entry with identical values."""
    p = rec.provenance
    for cand in space.records:
        cp = cand.provenance
        if ((cp.model_index, cp.method_index, cp.seed_index) ==
                (p.model_index, p.method_index, p.seed_index)
                and cand.counterfactual.values == rec.counterfactual.values):
            return cand
    for cand in space.records:
        if cand.counterfactual.values == rec.counterfactual.values:
            return cand
    return None


def audit_full(statement: SpecStatement, reported: Sequence[tuple[int, ExplanationRecord]],
               jobs: int = 1, base_dir=None) -> AuditReport:
    """Regenerate each stated space, rank under the stated utility and flag
    every report that is not rank 1 (with the rank-1 record as witness)."""
    utility = statement.utility_spec()
    if statement.access_level != "full" or utility is None:
        raise ValueError("full audit needs every component stated")
    reports = _reports_by_instance(reported)
    train, test = load_data(statement.dataset, base_dir)
    env = utility_env(train, statement.recon_k)
    schema = train.schema
    try:
        models = regenerate(statement, train)
    except RegenerationMismatch as exc:
        verdicts = [InstanceVerdict(i, INCONSISTENT, evidence={"detail": f"regeneration mismatch: {exc}"})
                    for i in statement.instances]
        return AuditReport("full", verdicts, {"overall": INCONSISTENT,
                                              "regeneration_error": str(exc)})
    methods = method_configs(statement.methods, schema)
    xs = [strip(test.rows[i]) for i in statement.instances]
    spaces = build_spaces(models, methods, xs, train, jobs)
    verdicts = []
    n_strict = 0
    for i, space in zip(statement.instances, spaces):
        rec = reports.get(i)
        if rec is None:
            verdicts.append(InstanceVerdict(i, INCONSISTENT, evidence={"detail": "no report"}))
            continue
        if space is None:
            verdicts.append(InstanceVerdict(i, INCONSISTENT, evidence={
                "detail": "regenerated space is empty, nothing could have been reported"}))
            continue
        if rec.factual.values != space.instance.values:
            verdicts.append(InstanceVerdict(i, INCONSISTENT, evidence={
                "detail": "reported factual differs from the audited instance"}))
            continue
        entry = match_in_space(space, rec)
        if entry is None:
            verdicts.append(InstanceVerdict(i, INCONSISTENT, evidence={
                "detail": "reported explanation is not in the regenerated space",
                "space_size": len(space)}))
            continue
        ranking = rank(space, utility, env)
        cp = is_cherry_picked(ranking, entry)
        ev = {"rank": cp.rank, "space_size": len(space), "reported_id": entry.id,
              "utility": ranking.value_of(entry)}
        if cp.cherry_picked:
            n_strict += cp.strict
            ev.update(strict=cp.strict, utility_gap=cp.gap,
                      detail="strictly worse than rank 1" if cp.strict else "tie lost on id")
            verdicts.append(InstanceVerdict(i, CHERRY_PICKED, cp.witness.to_dict(schema), ev))
        else:
            cert = certify_top_rank(space, utility, entry, env)
            ev["certificate"] = {"top_ranked": cert.top_ranked, "evaluations": cert.evaluations,
                                 "utility_table": [list(t) for t in cert.utility_table]}
            verdicts.append(InstanceVerdict(i, CONFORMANT, evidence=ev))
    return AuditReport("full", verdicts, {"strictly_worse": n_strict,
                                          "utility": utility.to_dict()})


# --------------------------------------------------------------------- partial

def compare_to_sweep(reported: dict[str, np.ndarray], runs: Sequence[SweepResult],
                     alpha: float = 0.05, iterations: int = 1000, seed: int = 0,
                     min_runs: int = 2) -> dict:
    """Range containment per metric, then a permutation KS test when outside."""
    if len(runs) < min_runs:
        raise InsufficientSweep(f"{len(runs)} runs < minimum {min_runs}")
    out = {}
    for m in METRICS:
        means = np.array([getattr(r, f"mean_{m}") for r in runs])
        means = means[np.isfinite(means)]
        value = float(np.mean(reported[m])) if len(reported[m]) else float("nan")
        row = {"reported_mean": value, "sweep_min": float(means.min()),
               "sweep_max": float(means.max()), "runs": int(means.size)}
        inside = bool(means.min() <= value <= means.max())
        row["inside_range"] = inside
        if inside:
            row["verdict"] = INDETERMINATE
        else:
            pooled = np.concatenate([np.asarray(r.per_instance[m]) for r in runs])
            row["ks"] = ks_two_sample(reported[m], pooled)
            row["p_value"] = permutation_p(reported[m], pooled, iterations, seed)
            row["verdict"] = INCONSISTENT if row["p_value"] < alpha else INDETERMINATE
        out[m] = row
    return out


def audit_partial(statement: SpecStatement, reported: Sequence[tuple[int, ExplanationRecord]],
                  model_seeds: Sequence[int] = (), cf_seeds: Sequence[int] = (),
                  alpha: float = 0.05, iterations: int = 1000, min_runs: int = 2,
                  permutation_seed: int = 0, jobs: int = 1, base_dir=None) -> AuditReport:
    """Compare reported metric means with a sweep over the estimated seeds.

    The sweep uses the first stated model and method. Estimated model seeds are
    swept with the CF seed fixed (stated, else the first sweep CF seed), and
    vice versa, mirroring one-factor-at-a-time seed sweeps.
    """
    if statement.access_level != "partial":
        raise ValueError("partial audit needs at least one estimated component")
    train, test = load_data(statement.dataset, base_dir)
    env = utility_env(train, statement.recon_k)
    schema = train.schema
    model_entry = {k: v for k, v in statement.models[0].items() if k != "model_id"}
    method_entry = dict(statement.methods[0])
    restricted = tuple(method_entry.get("restricted", ()))
    est_model = model_entry.get("seed") is None
    est_cf = method_entry.get("seeds") is None
    if (est_model and not model_seeds) or (est_cf and not cf_seeds):
        raise InsufficientSweep("sweep must give seeds for every estimated component")
    fixed_model = model_seeds[0] if est_model else model_entry["seed"]
    fixed_cf = cf_seeds[0] if est_cf else method_entry["seeds"][0]
    specs = []
    if est_model:
        specs += [RunSpec("model-seed", "stated", restricted, s, fixed_cf) for s in model_seeds]
    if est_cf:
        specs += [RunSpec("cf-seed", "stated", restricted, fixed_model, s) for s in cf_seeds]
    if len(specs) < min_runs:
        raise InsufficientSweep(f"{len(specs)} runs < minimum {min_runs}")
    xs = [strip(test.rows[i]) for i in statement.instances]
    runs = execute_runs(specs, model_entry, method_entry, train, xs, env, jobs)

    reports = _reports_by_instance(reported)
    verdicts = []
    kept = []
    for i, x in zip(statement.instances, xs):
        rec = reports.get(i)
        if rec is None:
            verdicts.append(InstanceVerdict(i, INCONSISTENT, evidence={"detail": "no report"}))
            continue
        bad = [n for n in restricted
               if rec.factual.values[schema.index(n)] != rec.counterfactual.values[schema.index(n)]]
        if rec.factual.values != x.values:
            verdicts.append(InstanceVerdict(i, INCONSISTENT, evidence={
                "detail": "reported factual differs from the audited instance"}))
        elif bad:
            verdicts.append(InstanceVerdict(i, INCONSISTENT, evidence={
                "detail": f"edits features the stated method cannot edit: {bad}"}))
        else:
            verdicts.append(InstanceVerdict(i, INDETERMINATE, evidence={"detail": "within stated mask"}))
            kept.append(rec)
    metrics = explanation_metrics(kept, env)
    comparison = compare_to_sweep(metrics, runs, alpha, iterations, permutation_seed, min_runs)
    overall = (INCONSISTENT if any(v.verdict == INCONSISTENT for v in verdicts)
               or any(c["verdict"] == INCONSISTENT for c in comparison.values()) else INDETERMINATE)
    return AuditReport("partial", verdicts,
                       {"overall": overall, "estimated": statement.estimated},
                       {"distribution": comparison,
                        "sweep_runs": [r.row(k) for k, r in enumerate(runs)]})


# ------------------------------------------------------------ explanation-only

def schema_normalization(schema: FeatureSchema) -> NormalizationContext:
    """Encoding from declared schema ranges: all an outside auditor knows."""
    return NormalizationContext(schema, "train-ranges",
                                tuple(f.range[0] if f.is_numeric else None for f in schema.features),
                                tuple(f.range[1] if f.is_numeric else None for f in schema.features))


def audit_explanation_only(schema: FeatureSchema, reported: Sequence[tuple[int, ExplanationRecord]],
                           model_class: str | None = "linear", vc_bound: int | None = None
                           ) -> AuditReport:
    """Check that the reports are jointly realisable by the claimed model class."""
    verdicts: dict[int, InstanceVerdict] = {}
    usable = []
    for i, rec in reported:
        if rec.factual_class == rec.counterfactual_class:
            verdicts[i] = InstanceVerdict(i, INCONSISTENT, evidence={
                "detail": "counterfactual claims the factual's class"})
        else:
            usable.append((i, rec))
    if model_class == "linear":
        descriptor = "linear"
    elif vc_bound is not None:
        descriptor = f"vc:{vc_bound}"
    else:
        descriptor = "unrestricted"
    evidence: dict = {"descriptor": descriptor}
    if usable:
        claim = claim_from_reports([r for _, r in usable], schema_normalization(schema), descriptor)
        result = linear_realizability(claim)
        evidence["realizability"] = result.to_dict()
        involved = {usable[claim.sources[p]][0] for p in result.support} if result.realizable is False else set()
        for i, _ in usable:
            if i in involved:
                verdicts[i] = InstanceVerdict(i, INCONSISTENT, evidence={
                    "detail": "part of an infeasible subsystem for the claimed model class",
                    "certificate_points": [p for p in result.support if usable[claim.sources[p]][0] == i]})
            else:
                verdicts[i] = InstanceVerdict(i, INDETERMINATE, evidence={"detail": result.reason})
    ordered = [verdicts[i] for i, _ in reported]
    overall = INCONSISTENT if any(v.verdict == INCONSISTENT for v in ordered) else INDETERMINATE
    return AuditReport("explanation-only", ordered, {"overall": overall}, evidence)
