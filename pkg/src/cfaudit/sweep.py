"""Seed sweeps: how much do mean explanation quality metrics move when only the
model seed or only the counterfactual seed changes, with and without a
restricted edit mask."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import CfNotFound, InsufficientSweep
from .generators import ExplanationRecord
from .metrics import UtilityEnv, heom_many, im1, sparsity_u
from .models import Model
from .tabular import Dataset, Instance, encode_many

METRICS = ("sparsity", "heom", "im1")
RUN_COLUMNS = ("run", "group", "mask", "model_seed", "cf_seed", "n_instances", "n_found",
               "mean_sparsity", "mean_heom", "mean_im1")


@dataclass
class SweepResult:
    group: str            # baseline | model-seed | cf-seed
    mask: str             # all | restricted
    model_seed: int
    cf_seed: int
    n_instances: int
    n_found: int
    mean_sparsity: float
    mean_heom: float
    mean_im1: float
    per_instance: dict = field(default_factory=dict, repr=False)

    def row(self, run: int) -> dict:
        d = asdict(self)
        d.pop("per_instance")
        return {"run": run, **d}


def explanation_metrics(records: Sequence[ExplanationRecord], env: UtilityEnv) -> dict[str, np.ndarray]:
    """Per-record sparsity (changed-feature count), HEOM and IM1."""
    if not records:
        return {m: np.zeros(0) for m in METRICS}
    xs = [r.factual for r in records]
    es = [r.counterfactual for r in records]
    sp = np.array([-sparsity_u(x, e) for x, e in zip(xs, es)], dtype=float)
    he = heom_many(xs, es, env.train_ctx)
    Z = encode_many(es, env.recon.ctx)
    t = np.array([r.counterfactual_class for r in records])
    im = np.empty(len(es))
    for c in (0, 1):
        sel = t == c
        if sel.any():
            im[sel] = im1(Z[sel], env.recon, c)
    return {"sparsity": sp, "heom": he, "im1": im}


def run_once(model: Model, method, xs: Sequence[Instance], train: Dataset, seed: int,
             env: UtilityEnv) -> tuple[list[ExplanationRecord], dict[str, np.ndarray]]:
    from .ranking import generate
    recs = []
    for x in xs:
        try:
            recs.append(generate(model, method, x, train, seed))
        except CfNotFound:
            continue
    return recs, explanation_metrics(recs, env)


def make_result(group: str, mask: str, model_seed: int, cf_seed: int, n: int,
                metrics: dict[str, np.ndarray]) -> SweepResult:
    def mean(m):
        v = metrics[m]
        return float(v.mean()) if v.size else float("nan")
    return SweepResult(group, mask, model_seed, cf_seed, n, int(metrics["sparsity"].size),
                       mean("sparsity"), mean("heom"), mean("im1"),
                       {m: metrics[m].tolist() for m in METRICS})


def summarize_sweep(runs: Sequence[SweepResult]) -> dict:
    """Group ranges, restricted-vs-all pairing by seed, and plot data."""
    if len(runs) < 2:
        raise InsufficientSweep("need at least two runs to summarise")
    groups: dict[tuple[str, str], list[SweepResult]] = {}
    for r in runs:
        groups.setdefault((r.group, r.mask), []).append(r)
    table = []
    for (g, m), rs in sorted(groups.items()):
        row = {"group": g, "mask": m, "runs": len(rs)}
        for metric in METRICS:
            v = np.array([getattr(r, f"mean_{metric}") for r in rs])
            row[f"{metric}_mean"] = float(v.mean())
            row[f"{metric}_min"] = float(v.min())
            row[f"{metric}_max"] = float(v.max())
        table.append(row)
    by_key = {(r.group, r.model_seed, r.cf_seed, r.mask): r for r in runs}
    pairs = []
    for (g, ms, cs, mask), r in sorted(by_key.items()):
        if mask != "all" or (g, ms, cs, "restricted") not in by_key:
            continue
        rr = by_key[(g, ms, cs, "restricted")]
        pairs.append({"group": g, "model_seed": ms, "cf_seed": cs,
                      "all_sparsity": r.mean_sparsity, "restricted_sparsity": rr.mean_sparsity,
                      "restricted_lower": bool(rr.mean_sparsity < r.mean_sparsity)})
    lower = sum(p["restricted_lower"] for p in pairs)
    return {
        "groups": table,
        "pairs": pairs,
        "pairs_restricted_lower": lower,
        "pairs_total": len(pairs),
        "fraction_restricted_lower": lower / len(pairs) if pairs else float("nan"),
        "plot_sparsity": [{"group": r.group, "mask": r.mask, "seed": r.model_seed
                           if r.group == "model-seed" else r.cf_seed,
                           "mean_sparsity": r.mean_sparsity} for r in runs],
        "plot_proximity_plausibility": [{"group": r.group, "mask": r.mask,
                                         "mean_heom": r.mean_heom, "mean_im1": r.mean_im1}
                                        for r in runs],
    }


# ------------------------------------------------------------------- execution

@dataclass(frozen=True)
class RunSpec:
    group: str
    mask: str
    restricted: tuple[str, ...]
    model_seed: int
    cf_seed: int


def sweep_specs(model_seeds: Sequence[int], cf_seeds: Sequence[int], base_model_seed: int,
                base_cf_seed: int, restricted: Sequence[str]) -> list[RunSpec]:
    """Model-seed runs (CF seed fixed at baseline), then CF-seed runs (model
    seed fixed at baseline); each under the full and the restricted mask."""
    masks = (("all", ()), ("restricted", tuple(restricted)))
    specs = [RunSpec("model-seed", m, r, s, base_cf_seed) for s in model_seeds for m, r in masks]
    specs += [RunSpec("cf-seed", m, r, base_model_seed, s) for s in cf_seeds for m, r in masks]
    return specs


def baseline_specs(base_model_seed: int, base_cf_seed: int, restricted: Sequence[str]) -> list[RunSpec]:
    return [RunSpec("baseline", "all", (), base_model_seed, base_cf_seed),
            RunSpec("baseline", "restricted", tuple(restricted), base_model_seed, base_cf_seed)]


def _run_job(args) -> SweepResult:
    from .pipeline import build_method, build_model
    spec, model_entry, method_entry, train, xs, env = args
    model = build_model(dict(model_entry, seed=spec.model_seed), train)
    method = build_method(dict(method_entry, restricted=list(spec.restricted),
                               seeds=[spec.cf_seed]), train.schema)
    _, metrics = run_once(model, method, xs, train, spec.cf_seed, env)
    return make_result(spec.group, spec.mask, spec.model_seed, spec.cf_seed, len(xs), metrics)


def execute_runs(specs: Sequence[RunSpec], model_entry: dict, method_entry: dict, train: Dataset,
                 xs: Sequence[Instance], env: UtilityEnv, jobs: int = 1) -> list[SweepResult]:
    """Each run is a pure function of its spec, so results do not depend on ``jobs``."""
    from .pipeline import parallel_map
    return parallel_map(_run_job, [(s, model_entry, method_entry, train, list(xs), env)
                                   for s in specs], jobs)
