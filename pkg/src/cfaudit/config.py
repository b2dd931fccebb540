"""Run configuration: a JSON document validated with pydantic.

Unknown keys are rejected everywhere so a misspelt constraint can never be
silently ignored. See README.md for the full grammar.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .metrics import UtilitySpec
from .prng import derive_seed


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SyntheticSource(_Strict):
    kind: Literal["loan", "xor"] = "loan"
    n_train: int = Field(500, ge=4)
    n_test: int = Field(100, ge=1)
    seed: int = 1


class CsvSource(_Strict):
    schema_path: str
    train: str
    test: str


class AdultSource(_Strict):
    """Local raw UCI files; the first n rows of each (after dropping '?' rows)."""
    train: str
    test: str
    n_train: int | None = Field(None, ge=4)
    n_test: int | None = Field(None, ge=1)


class DatasetConfig(_Strict):
    synthetic: SyntheticSource | None = None
    csv: CsvSource | None = None
    adult: AdultSource | None = None

    @model_validator(mode="after")
    def _one_source(self):
        if sum(s is not None for s in (self.synthetic, self.csv, self.adult)) != 1:
            raise ValueError("dataset needs exactly one of 'synthetic', 'csv' or 'adult'")
        return self


class HyperParamsConfig(_Strict):
    learning_rate: float = 0.5
    epochs: int = 2000
    max_depth: int = 6
    min_leaf: int = 1
    n_trees: int = 25
    bootstrap_fraction: float = 1.0
    max_features: int = 0


class ModelConfig(_Strict):
    kind: Literal["logistic", "tree", "forest", "rule-xor"] = "forest"
    seed: int | None = None
    hyperparams: HyperParamsConfig = HyperParamsConfig()


class SeedCount(_Strict):
    count: int = Field(ge=0)


class BudgetConfig(_Strict):
    attempts_per_level: int = Field(100, ge=1)
    max_level: int = Field(4, ge=1)


class MethodConfigModel(_Strict):
    method: Literal["dice-random", "greedy-sparse"] = "dice-random"
    restricted: list[str] = []
    budget: BudgetConfig = BudgetConfig()
    seeds: Union[list[int], SeedCount] = [0]


class PolicyConfig(_Strict):
    kind: Literal["honest", "sensitive-avoiding"] = "honest"
    sensitive_set: list[str] = []
    fallback: Literal["error", "best-available"] = "error"


class InstanceSelection(_Strict):
    first: int | None = Field(None, ge=1)
    indices: list[int] | None = None

    @model_validator(mode="after")
    def _one(self):
        if (self.first is None) == (self.indices is None):
            raise ValueError("instances needs exactly one of 'first' or 'indices'")
        return self


class AuditConfig(_Strict):
    access: Literal["full", "partial", "explanation-only"] = "full"
    estimated: list[Literal["model_seed", "cf_seed"]] = []
    disclose_restricted: bool = True   # False: the statement omits method masks
    model_class: Literal["linear", "unrestricted"] | None = None
    vc_bound: int | None = None
    alpha: float = 0.05
    iterations: int = Field(1000, ge=1)
    min_runs: int = Field(2, ge=1)
    sweep_model_seeds: Union[list[int], SeedCount] = SeedCount(count=20)
    sweep_cf_seeds: Union[list[int], SeedCount] = SeedCount(count=20)
    permutation_seed: int | None = None


class SweepConfig(_Strict):
    model_seeds: Union[list[int], SeedCount] = SeedCount(count=20)
    cf_seeds: Union[list[int], SeedCount] = SeedCount(count=20)
    baseline_model_seed: int = 42
    baseline_cf_seed: int = 42
    restricted: list[str] = ["Gender"]
    instances: InstanceSelection | None = None   # default: the whole test set


class RunConfig(_Strict):
    master_seed: int = 0
    dataset: DatasetConfig
    models: list[ModelConfig] = Field(min_length=1)
    methods: list[MethodConfigModel] = Field(min_length=1)
    stated_utility: dict
    true_utility: dict | None = None
    policy: PolicyConfig = PolicyConfig()
    instances: InstanceSelection = InstanceSelection(first=10)
    audit: AuditConfig = AuditConfig()
    sweep: SweepConfig | None = None
    recon_k: int = Field(2, ge=1)

    # -- derived values -------------------------------------------------------

    def stated(self) -> UtilitySpec:
        return UtilitySpec.from_dict(self.stated_utility)

    def true(self) -> UtilitySpec:
        return UtilitySpec.from_dict(self.true_utility or self.stated_utility)

    def model_seed(self, i: int) -> int:
        s = self.models[i].seed
        return derive_seed(self.master_seed, "model", i) if s is None else s

    def method_seeds(self, i: int) -> list[int]:
        return expand_seeds(self.methods[i].seeds, self.master_seed, "method", i)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def expand_seeds(spec, master: int, *labels) -> list[int]:
    """Explicit seed lists pass through; ``{"count": n}`` derives n seeds."""
    if isinstance(spec, SeedCount):
        return [derive_seed(master, *labels, k) for k in range(spec.count)]
    return list(spec)


def load_config(path: str | Path, seed_override: int | None = None) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(data, seed_override)


def parse_config(data: dict, seed_override: int | None = None) -> RunConfig:
    if seed_override is not None:
        data = dict(data, master_seed=seed_override)
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None
    try:
        cfg.stated()
        cfg.true()
    except Exception as exc:
        raise ConfigError(f"bad utility: {exc}") from None
    for i, m in enumerate(cfg.methods):
        if m.method == "dice-random" and not cfg.method_seeds(i):
            raise ConfigError(f"methods[{i}]: empty seed set")
    if cfg.policy.kind == "sensitive-avoiding" and not cfg.policy.sensitive_set:
        raise ConfigError("sensitive-avoiding policy needs a sensitive_set")
    return cfg
