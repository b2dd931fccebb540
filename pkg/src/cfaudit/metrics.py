"""Counterfactual quality metrics and the utilities built from them.

Utilities follow the convention "higher is better": distances enter negated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import DegenerateData, ParseError, SchemaMismatch
from .tabular import (Dataset, FeatureSchema, Instance, NormalizationContext, encode,
                      encode_many, make_normalization)

HARD_PENALTY = -100000.0
DEFAULT_EPS = 1e-6


def _check_pair(x: Instance, e: Instance) -> None:
    if len(x.values) != len(e.values):
        raise SchemaMismatch("x and e have different arity")


def sparsity_u(x: Instance, e: Instance) -> int:
    """Negative count of changed features."""
    _check_pair(x, e)
    return -sum(a != b for a, b in zip(x.values, e.values))


def l2_distance(x: Instance, e: Instance, ctx: NormalizationContext) -> float:
    _check_pair(x, e)
    return float(np.linalg.norm(encode(x, ctx).vector - encode(e, ctx).vector))


def l2_normalized_u(x: Instance, e: Instance, ctx: NormalizationContext) -> float:
    return -l2_distance(x, e, ctx)


def heom(x: Instance, e: Instance, ctx: NormalizationContext) -> float:
    """Heterogeneous Euclidean-overlap metric.

    Numeric terms are ``|x_j - e_j| / range_j`` clipped to [0, 1]; categorical
    terms are 0 on a match and 1 otherwise. Missing values would score 1 but
    cannot occur in validated instances.
    """
    _check_pair(x, e)
    total = 0.0
    for j, f in enumerate(ctx.schema.features):
        a, b = x.values[j], e.values[j]
        if f.is_numeric:
            d = min(1.0, abs(a - b) / (ctx.maxs[j] - ctx.mins[j]))
        else:
            d = float(a != b)
        total += d * d
    return math.sqrt(total)


def heom_many(xs: Sequence[Instance], es: Sequence[Instance], ctx: NormalizationContext) -> np.ndarray:
    """Row-wise HEOM for paired lists."""
    total = np.zeros(len(xs))
    for j, f in enumerate(ctx.schema.features):
        a = [r.values[j] for r in xs]
        b = [r.values[j] for r in es]
        if f.is_numeric:
            d = np.minimum(1.0, np.abs(np.subtract(a, b)) / (ctx.maxs[j] - ctx.mins[j]))
        else:
            d = np.array([u != v for u, v in zip(a, b)], dtype=float)
        total += d * d
    return np.sqrt(total)


# ------------------------------------------------------------------------- IM1

@dataclass(frozen=True)
class ReconPair:
    """Per-class linear (principal-component) reconstruction maps."""

    ctx: NormalizationContext
    k: int
    means: tuple[np.ndarray, np.ndarray]
    bases: tuple[np.ndarray, np.ndarray]  # each k x dim, orthonormal rows
    provenance: dict = field(default_factory=dict, compare=False)

    def reconstruct(self, z: np.ndarray, cls: int) -> np.ndarray:
        mu, V = self.means[cls], self.bases[cls]
        return mu + ((z - mu) @ V.T) @ V

    def residual(self, z: np.ndarray, cls: int) -> np.ndarray:
        """Squared reconstruction error, row-wise for 2-D input."""
        diff = z - self.reconstruct(z, cls)
        return np.sum(diff * diff, axis=-1)


def fit_recon(data: Dataset, k: int = 2, seed: int = 0,
              ctx: NormalizationContext | None = None) -> ReconPair:
    """Fit rank-``k`` PCA reconstructions separately on each labelled class.

    SVD is deterministic, so ``seed`` is only recorded in the provenance.
    """
    y = data.labels()
    ctx = ctx or make_normalization(data, "train-ranges")
    X = encode_many(data.rows, ctx)
    if not 1 <= k <= X.shape[1]:
        raise ValueError(f"k must be in [1, {X.shape[1]}]")
    means, bases = [], []
    for c in (0, 1):
        Xc = X[y == c]
        if len(Xc) < 2:
            raise DegenerateData(f"class {c} has fewer than two rows")
        mu = Xc.mean(axis=0)
        _, _, vt = np.linalg.svd(Xc - mu, full_matrices=False)
        V = vt[:k]
        # fix the sign of each component so the fit is reproducible across LAPACKs
        signs = np.sign(V[np.arange(len(V)), np.argmax(np.abs(V), axis=1)])
        means.append(mu)
        bases.append(V * signs[:, None])
    return ReconPair(ctx, k, tuple(means), tuple(bases),
                     {"source": data.provenance.get("source"), "n": len(data), "seed": seed})


def im1(e: np.ndarray, pair: ReconPair, target_class: int, eps: float = DEFAULT_EPS) -> np.ndarray | float:
    """Reconstruction-error ratio of the target class over the original class.

    ``e`` is encoded under ``pair.ctx``; lower means more plausible as a member
    of ``target_class``.
    """
    num = pair.residual(e, target_class)
    den = pair.residual(e, 1 - target_class)
    out = num / (den + eps)
    return float(out) if np.ndim(out) == 0 else out


# ------------------------------------------------------------------- utilities

UtilityKind = Literal["sparsity", "l2_normalized", "heom_negative", "im1_negative", "penalized"]


@dataclass(frozen=True)
class UtilitySpec:
    kind: UtilityKind
    base: "UtilitySpec | None" = None
    sensitive_set: tuple[str, ...] = ()
    penalty_mode: Literal["hard-constant", "sparsity-saturating"] = "hard-constant"
    penalty_value: float = HARD_PENALTY
    normalization: Literal["train-ranges", "local-set"] = "train-ranges"
    epsilon: float = DEFAULT_EPS

    def __post_init__(self):
        if self.kind == "penalized":
            if self.base is None or self.base.kind == "penalized":
                raise ValueError("penalized utility must wrap a non-penalized base")
            if not self.sensitive_set:
                raise ValueError("penalized utility needs a sensitive set")
            if self.penalty_mode == "sparsity-saturating" and self.base.kind != "sparsity":
                raise ValueError("sparsity-saturating penalty requires a sparsity base")
        elif self.base is not None:
            raise ValueError("only penalized utilities take a base")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "penalized":
            d.update(base=self.base.to_dict(), sensitive_set=list(self.sensitive_set),
                     penalty_mode=self.penalty_mode)
            if self.penalty_mode == "hard-constant":
                d["penalty_value"] = self.penalty_value
        if self.kind == "l2_normalized":
            d["normalization"] = self.normalization
        if self.kind == "im1_negative":
            d["epsilon"] = self.epsilon
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UtilitySpec":
        allowed = {"kind", "base", "sensitive_set", "penalty_mode", "penalty_value",
                   "normalization", "epsilon"}
        extra = set(d) - allowed
        if extra:
            raise ParseError(f"unknown utility keys: {sorted(extra)}")
        try:
            return cls(kind=d["kind"],
                       base=cls.from_dict(d["base"]) if d.get("base") else None,
                       sensitive_set=tuple(d.get("sensitive_set", ())),
                       penalty_mode=d.get("penalty_mode", "hard-constant"),
                       penalty_value=float(d.get("penalty_value", HARD_PENALTY)),
                       normalization=d.get("normalization", "train-ranges"),
                       epsilon=float(d.get("epsilon", DEFAULT_EPS)))
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"bad utility spec {d}: {exc}") from None


def penalized_u(spec: UtilitySpec, x: Instance, e: Instance, schema: FeatureSchema,
                base_value: float | None = None) -> float:
    """Penalised utility for one pair.

    ``hard-constant``: the constant when any sensitive feature changed, else the
    base utility (``base_value``). ``sparsity-saturating``:
    ``-min(||x-e||_0 + d * [any sensitive changed], d)``.
    """
    _check_pair(x, e)
    idx = [schema.index(s) for s in spec.sensitive_set]
    touched = any(x.values[j] != e.values[j] for j in idx)
    if spec.penalty_mode == "sparsity-saturating":
        d = schema.d
        return -float(min(-sparsity_u(x, e) + d * touched, d))
    if touched:
        return spec.penalty_value
    if base_value is None:
        raise ValueError("hard-constant mode needs the base utility value")
    return float(base_value)


@dataclass
class UtilityEnv:
    """What utilities need beyond (x, e): the schema, a training-range context
    and, for IM1, a fitted reconstruction pair."""

    schema: FeatureSchema
    train_ctx: NormalizationContext | None = None
    recon: ReconPair | None = None


def utility_values(spec: UtilitySpec, x: Instance, records: Sequence, env: UtilityEnv,
                   reference: Sequence | None = None) -> np.ndarray:
    """Utility of every record (each has ``counterfactual`` and class fields) at ``x``.

    ``reference`` is the record set a ``local-set`` normalization is fitted on
    (default: ``records``), so single records can be scored against a whole space.
    """
    es = [r.counterfactual for r in records]
    if spec.kind == "sparsity":
        return np.array([sparsity_u(x, e) for e in es], dtype=float)
    if spec.kind == "l2_normalized":
        if spec.normalization == "local-set":
            ref = es if reference is None else [r.counterfactual for r in reference]
            ctx = make_normalization([x, *ref], "local-set", env.schema, constant_ok=True)
        else:
            ctx = _need(env.train_ctx, "training normalization")
        zx = encode(x, ctx).vector
        Z = encode_many(es, ctx)
        return -np.linalg.norm(Z - zx, axis=1)
    if spec.kind == "heom_negative":
        ctx = _need(env.train_ctx, "training normalization")
        return -heom_many([x] * len(es), es, ctx)
    if spec.kind == "im1_negative":
        pair = _need(env.recon, "reconstruction pair")
        Z = encode_many(es, pair.ctx)
        t = np.array([r.counterfactual_class for r in records])
        out = np.empty(len(es))
        for c in (0, 1):
            sel = t == c
            if sel.any():
                out[sel] = -np.asarray(im1(Z[sel], pair, c, spec.epsilon))
        return out
    # penalized
    if spec.penalty_mode == "sparsity-saturating":
        return np.array([penalized_u(spec, x, e, env.schema) for e in es], dtype=float)
    base = utility_values(spec.base, x, records, env, reference)
    return np.array([penalized_u(spec, x, e, env.schema, b) for e, b in zip(es, base)])


def _need(obj, what: str):
    if obj is None:
        raise ValueError(f"utility needs a {what}")
    return obj
