"""Glue between declarative descriptors (configs, statements) and live objects.

Both the provider side (``gen``/``pick``) and the auditor regenerate datasets,
models and spaces through these functions, so a stated specification means
exactly one thing.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import __version__
from .adult import load_adult
from .config import DatasetConfig, MethodConfigModel, ModelConfig, RunConfig
from .errors import ConfigError, EmptySpace, ParseError
from .generators import ExplanationRecord, FeatureMask, GenBudget
from .metrics import UtilityEnv, UtilitySpec, fit_recon
from .models import HyperParams, Model, train
from .ranking import ExplanationSpace, MethodConfig, build_space
from .tabular import (Dataset, FeatureSchema, Instance, gen_synthetic_loan, gen_xor, load_csv,
                      load_schema, make_normalization)

STATEMENT_FORMAT = "cfaudit.statement/1"
REPORTED_FORMAT = "cfaudit.reported/1"


# ------------------------------------------------------------------------ data

def load_data(dataset: dict, base_dir: Path | None = None) -> tuple[Dataset, Dataset]:
    """Train/test split for a dataset descriptor.

    Synthetic sources generate ``n_train + n_test`` rows from one seed; the
    first ``n_train`` rows train, the rest are the test (audit) set.
    """
    cfg = DatasetConfig.model_validate(dataset)
    if cfg.synthetic is not None:
        s = cfg.synthetic
        n = s.n_train + s.n_test
        if s.kind == "xor":
            full = gen_xor(n + (n % 2), s.seed)
        else:
            full = gen_synthetic_loan(n, s.seed)
        train, test = full.split(s.n_train)
        return train, Dataset(test.schema, test.rows[: s.n_test], test.provenance)
    base = base_dir or Path(".")
    if cfg.adult is not None:
        a = cfg.adult
        train_data, test_data = load_adult(base / a.train), load_adult(base / a.test)
        return train_data.head(a.n_train or len(train_data)), test_data.head(a.n_test or len(test_data))
    schema = load_schema(base / cfg.csv.schema_path)
    return load_csv(base / cfg.csv.train, schema), load_csv(base / cfg.csv.test, schema)


def build_model(entry: dict, train_data: Dataset) -> Model:
    m = ModelConfig.model_validate(entry)
    return train(m.kind, train_data, HyperParams(**m.hyperparams.model_dump()), m.seed or 0)


def build_method(entry: dict, schema: FeatureSchema) -> MethodConfig:
    m = MethodConfigModel.model_validate(entry)
    unknown = set(m.restricted) - set(schema.names)
    if unknown:
        raise ConfigError(f"restricted features not in schema: {sorted(unknown)}")
    if set(m.restricted) >= set(schema.names):
        raise ConfigError("mask disables every feature")
    seeds = m.seeds if isinstance(m.seeds, list) else []
    return MethodConfig(m.method, FeatureMask.excluding(schema, m.restricted),
                        GenBudget(m.budget.attempts_per_level, min(m.budget.max_level, schema.d)),
                        tuple(seeds))


def utility_env(train_data: Dataset, recon_k: int = 2) -> UtilityEnv:
    ctx = make_normalization(train_data, "train-ranges")
    return UtilityEnv(train_data.schema, ctx, fit_recon(train_data, recon_k, ctx=ctx))


def strip(inst: Instance) -> Instance:
    return Instance(inst.values)


# ------------------------------------------------------------------- statement

@dataclass
class SpecStatement:
    """What a provider discloses. ``None`` marks a component as estimated."""

    dataset: dict
    models: list[dict]           # {kind, hyperparams, seed|None, model_id|None}
    methods: list[dict]          # {method, restricted, budget, seeds|None}
    utility: dict | None
    instances: list[int]
    tiebreak: str = "id-ascending"
    model_class: str | None = None
    vc_bound: int | None = None
    recon_k: int = 2
    meta: dict = field(default_factory=dict)

    @property
    def estimated(self) -> list[str]:
        out = []
        if any(m.get("seed") is None and m.get("kind") != "rule-xor" for m in self.models):
            out.append("model_seed")
        if any(m.get("seeds") is None for m in self.methods):
            out.append("cf_seed")
        if self.utility is None:
            out.append("utility")
        return out

    @property
    def access_level(self) -> str:
        if not self.models and not self.methods:
            return "explanation-only"
        return "partial" if self.estimated else "full"

    def utility_spec(self) -> UtilitySpec | None:
        return UtilitySpec.from_dict(self.utility) if self.utility else None

    def to_dict(self) -> dict:
        return {"format": STATEMENT_FORMAT, "dataset": self.dataset, "models": self.models,
                "methods": self.methods, "utility": self.utility, "tiebreak": self.tiebreak,
                "instances": self.instances, "model_class": self.model_class,
                "vc_bound": self.vc_bound, "recon_k": self.recon_k,
                "access_level": self.access_level, "meta": self.meta}

    @classmethod
    def from_dict(cls, d: dict) -> "SpecStatement":
        if d.get("format") != STATEMENT_FORMAT:
            raise ParseError(f"unsupported statement format {d.get('format')!r}")
        known = {"format", "dataset", "models", "methods", "utility", "tiebreak", "instances",
                 "model_class", "vc_bound", "recon_k", "access_level", "meta"}
        extra = set(d) - known
        if extra:
            raise ParseError(f"unknown statement keys: {sorted(extra)}")
        st = cls(d["dataset"], d["models"], d["methods"], d.get("utility"), d["instances"],
                 d.get("tiebreak", "id-ascending"), d.get("model_class"), d.get("vc_bound"),
                 d.get("recon_k", 2), d.get("meta", {}))
        if d.get("access_level", st.access_level) != st.access_level:
            raise ParseError("declared access level contradicts the stated components")
        return st


def statement_from_config(cfg: RunConfig, models: Sequence[Model] | None = None) -> SpecStatement:
    """The statement a provider running ``cfg`` discloses, per ``cfg.audit``."""
    access = cfg.audit.access
    est = set(cfg.audit.estimated)
    if access == "explanation-only":
        return SpecStatement(cfg.dataset.model_dump(mode="json", exclude_none=True), [], [], None,
                             instance_indices(cfg), model_class=cfg.audit.model_class or "linear",
                             vc_bound=cfg.audit.vc_bound, recon_k=cfg.recon_k)
    mentries = []
    for i, m in enumerate(cfg.models):
        e = {"kind": m.kind, "hyperparams": m.hyperparams.model_dump(),
             "seed": None if "model_seed" in est else cfg.model_seed(i)}
        if models is not None and "model_seed" not in est:
            e["model_id"] = models[i].model_id
        mentries.append(e)
    aentries = []
    for i, m in enumerate(cfg.methods):
        restricted = list(m.restricted) if cfg.audit.disclose_restricted else []
        aentries.append({"method": m.method, "restricted": restricted,
                         "budget": m.budget.model_dump(),
                         "seeds": None if "cf_seed" in est else cfg.method_seeds(i)})
    return SpecStatement(cfg.dataset.model_dump(mode="json", exclude_none=True), mentries, aentries,
                         cfg.stated_utility, instance_indices(cfg), recon_k=cfg.recon_k)


def instance_indices(cfg: RunConfig) -> list[int]:
    sel = cfg.instances
    if sel.first is not None:
        return list(range(sel.first))
    return list(sel.indices)


def resolved_models(cfg: RunConfig) -> list[dict]:
    return [{"kind": m.kind, "hyperparams": m.hyperparams.model_dump(), "seed": cfg.model_seed(i)}
            for i, m in enumerate(cfg.models)]


def resolved_methods(cfg: RunConfig) -> list[dict]:
    return [{"method": m.method, "restricted": list(m.restricted), "budget": m.budget.model_dump(),
             "seeds": cfg.method_seeds(i)} for i, m in enumerate(cfg.methods)]


def method_configs(entries: Sequence[dict], schema: FeatureSchema) -> list[MethodConfig]:
    return [build_method(e, schema) for e in entries]


# ---------------------------------------------------------------------- spaces

def _space_job(args) -> ExplanationSpace | None:
    models, methods, x, train_data = args
    try:
        return build_space(models, methods, x, train_data)
    except EmptySpace:
        return None


def build_spaces(models: Sequence[Model], methods: Sequence[MethodConfig],
                 xs: Sequence[Instance], train_data: Dataset, jobs: int = 1
                 ) -> list[ExplanationSpace | None]:
    """One space per instance (None where every realisation failed); ``jobs``
    parallelises without changing results."""
    jobs_args = [(list(models), list(methods), x, train_data) for x in xs]
    return parallel_map(_space_job, jobs_args, jobs)


def parallel_map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """Ordered map, optionally over a process pool."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


# ------------------------------------------------------------------- reporting

def meta(cfg_hash: str | None) -> dict:
    return {"config_hash": cfg_hash, "tool_version": __version__}


def dump_json(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n",
                    encoding="utf-8")


def read_json(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None


def reported_to_dict(schema: FeatureSchema, reports: Iterable[tuple[int, ExplanationRecord]],
                     extra: dict | None = None) -> dict:
    return {"format": REPORTED_FORMAT, "schema": schema.to_dict(),
            "reports": [{"instance_index": i, "record": r.to_dict(schema)} for i, r in reports],
            **(extra or {})}


def reported_from_dict(d: dict) -> tuple[FeatureSchema, list[tuple[int, ExplanationRecord]]]:
    if d.get("format") != REPORTED_FORMAT:
        raise ParseError(f"unsupported reported-explanations format {d.get('format')!r}")
    schema = FeatureSchema.from_dict(d["schema"])
    return schema, [(int(r["instance_index"]), ExplanationRecord.from_dict(r["record"], schema))
                    for r in d["reports"]]
