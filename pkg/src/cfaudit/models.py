"""Seedable, deterministic binary classifiers.

Everything is implemented on numpy with draws from :mod:`cfaudit.prng`, so a
model is a pure function of (kind, hyperparameters, data, seed) and can be
serialised and reloaded bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateData, EmptyData, ParseError, SchemaMismatch
from .prng import Xoshiro256, derive_seed
from .tabular import (XOR_SCHEMA, XOR_THRESHOLD, Dataset, FeatureSchema, Instance,
                      NormalizationContext, encode_many, make_normalization)

MODEL_FORMAT = "cfaudit.model/1"


@dataclass(frozen=True)
class HyperParams:
    """Hyperparameters for every kind; each kind reads only its own fields."""

    learning_rate: float = 0.5      # logistic
    epochs: int = 2000              # logistic
    max_depth: int = 6              # tree, forest
    min_leaf: int = 1               # tree, forest
    n_trees: int = 25               # forest
    bootstrap_fraction: float = 1.0  # forest
    max_features: int = 0           # forest; 0 means ceil(sqrt(encoded dim))

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("hyperparameters must be positive")
        if self.n_trees < 1 or not 0 < self.bootstrap_fraction <= 1 or self.max_features < 0:
            raise ValueError("forest hyperparameters out of range")


@dataclass
class Tree:
    feature: np.ndarray    # int, -1 at leaves
    threshold: np.ndarray  # go left when x[feature] <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray      # leaf class

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                return self.value[node]
            a = rows[active]
            na = node[active]
            go_left = X[a, feat[active]] <= self.threshold[na]
            node[active] = np.where(go_left, self.left[na], self.right[na])

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(np.array(d["feature"], dtype=np.int64), np.array(d["threshold"], dtype=float),
                   np.array(d["left"], dtype=np.int64), np.array(d["right"], dtype=np.int64),
                   np.array(d["value"], dtype=np.int64))


@dataclass
class Model:
    kind: str  # logistic | tree | forest | rule-xor | table
    schema: FeatureSchema
    ctx: NormalizationContext | None
    hyperparams: HyperParams = field(default_factory=HyperParams)
    train_seed: int = 0
    weights: np.ndarray | None = None
    bias: float = 0.0
    trees: list[Tree] = field(default_factory=list)
    table: dict | None = None  # encoded-tuple -> label, for kind "table"

    def predict_encoded(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.kind == "logistic":
            return (X @ self.weights + self.bias > 0).astype(np.int64)
        if self.kind == "tree":
            return self.trees[0].predict(X)
        if self.kind == "forest":
            votes = np.zeros(len(X), dtype=np.int64)
            for t in self.trees:
                votes += t.predict(X)
            # ties go to class 0
            return (2 * votes > len(self.trees)).astype(np.int64)
        raise ValueError(f"{self.kind} models predict from raw instances")

    def predict_many(self, rows: Sequence[Instance]) -> np.ndarray:
        if self.kind == "rule-xor":
            return np.array([int(r.values[1] == "1") ^ int(r.values[0] > XOR_THRESHOLD)
                             for r in rows], dtype=np.int64)
        if self.kind == "table":
            try:
                return np.array([self.table[r.values] for r in rows], dtype=np.int64)
            except KeyError as exc:
                raise SchemaMismatch(f"point {exc} is not in the lookup table") from None
        return self.predict_encoded(encode_many(rows, self.ctx))

    @property
    def model_id(self) -> str:
        """Content hash of the serialised parameters."""
        blob = json.dumps(model_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def predict(model: Model, instance: Instance) -> int:
    model.schema.validate(instance)
    return int(model.predict_many([instance])[0])


def accuracy(model: Model, data: Dataset) -> float:
    if len(data) == 0:
        raise EmptyData("cannot score an empty dataset")
    if data.schema != model.schema:
        raise SchemaMismatch("dataset schema differs from the model schema")
    return float(np.mean(model.predict_many(data.rows) == data.labels()))


def _check_trainable(data: Dataset) -> np.ndarray:
    y = data.labels()
    if len(np.unique(y)) < 2:
        raise DegenerateData("training data must contain both classes")
    return y


# -------------------------------------------------------------------- logistic

def train_logistic(data: Dataset, hp: HyperParams = HyperParams(), seed: int = 0) -> Model:
    """Full-batch gradient descent on the mean log-loss, zero initialisation.

    A fixed epoch budget and no early stopping keep the fit deterministic; the
    objective is convex, so the seed is recorded but does not affect the fit.
    """
    y = _check_trainable(data).astype(float)
    ctx = make_normalization(data, "train-ranges")
    X = encode_many(data.rows, ctx)
    n, dim = X.shape
    w = np.zeros(dim)
    b = 0.0
    for _ in range(hp.epochs):
        p = 1.0 / (1.0 + np.exp(-(X @ w + b)))
        r = p - y
        w = w - hp.learning_rate * (X.T @ r) / n
        b = b - hp.learning_rate * float(r.sum()) / n
    return Model("logistic", data.schema, ctx, hp, seed, weights=w, bias=b)


# ------------------------------------------------------------------------ trees

def _best_split(X: np.ndarray, y: np.ndarray, features: Sequence[int], min_leaf: int):
    n = len(y)
    best = None  # (impurity, feature, threshold)
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        ones_left = np.cumsum(ys)[:-1]
        n_left = np.arange(1, n)
        n_right = n - n_left
        ones_right = ys.sum() - ones_left
        valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        pl = ones_left / n_left
        pr = ones_right / n_right
        impurity = (n_left * 2 * pl * (1 - pl) + n_right * 2 * pr * (1 - pr)) / n
        impurity = np.where(valid, impurity, np.inf)
        k = int(np.argmin(impurity))
        if best is None or impurity[k] < best[0]:
            best = (float(impurity[k]), f, float((xs[k] + xs[k + 1]) / 2))
    return best


def _grow_tree(X: np.ndarray, y: np.ndarray, hp: HyperParams, n_features: int,
               rng: Xoshiro256 | None) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0)
        return len(feature) - 1

    stack = [(new_node(), np.arange(len(y)), 0)]
    dim = X.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        ys = y[idx]
        ones = int(ys.sum())
        value[node] = int(2 * ones > len(ys))  # tie -> 0
        if depth >= hp.max_depth or ones in (0, len(ys)) or len(ys) < 2 * hp.min_leaf:
            continue
        if rng is None or n_features >= dim:
            feats = list(range(dim))
        else:
            feats = rng.sample(range(dim), n_features)
        parent = 2 * (ones / len(ys)) * (1 - ones / len(ys))
        split = _best_split(X[idx], ys, feats, hp.min_leaf)
        if split is None or split[0] >= parent - 1e-12:
            continue
        _, f, thr = split
        feature[node] = f
        threshold[node] = thr
        mask = X[idx, f] <= thr
        l, r = new_node(), new_node()
        left[node], right[node] = l, r
        # push right first so the left subtree is numbered first
        stack.append((r, idx[~mask], depth + 1))
        stack.append((l, idx[mask], depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=float),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(value, dtype=np.int64))


def train_tree(data: Dataset, hp: HyperParams = HyperParams(), seed: int = 0) -> Model:
    """Single CART tree on all features; deterministic (seed recorded only)."""
    y = _check_trainable(data)
    ctx = make_normalization(data, "train-ranges")
    X = encode_many(data.rows, ctx)
    return Model("tree", data.schema, ctx, hp, seed, trees=[_grow_tree(X, y, hp, X.shape[1], None)])


def train_forest(data: Dataset, hp: HyperParams = HyperParams(), seed: int = 0) -> Model:
    """Bagged Gini trees with per-node random feature subsets.

    Tree ``t`` draws its bootstrap sample and node feature subsets from its own
    stream seeded with ``derive_seed(seed, "tree", t)``.
    """
    y = _check_trainable(data)
    ctx = make_normalization(data, "train-ranges")
    X = encode_many(data.rows, ctx)
    n, dim = X.shape
    k = hp.max_features or max(1, math.ceil(math.sqrt(dim)))
    m = max(1, round(hp.bootstrap_fraction * n))
    trees = []
    for t in range(hp.n_trees):
        rng = Xoshiro256(derive_seed(seed, "tree", t))
        boot = np.array([rng.randbelow(n) for _ in range(m)], dtype=np.int64)
        if len(np.unique(y[boot])) < 2:
            boot = np.arange(n)
        trees.append(_grow_tree(X[boot], y[boot], hp, k, rng))
    return Model("forest", data.schema, ctx, hp, seed, trees=trees)


# ------------------------------------------------------------------ fixed rules

def rule_model_xor() -> Model:
    """``Gender XOR (Income > 50000)`` over ``XOR_SCHEMA``; no training."""
    return Model("rule-xor", XOR_SCHEMA, None)


def table_model(schema: FeatureSchema, table: dict) -> Model:
    """A lookup-table classifier over a finite grid of value tuples."""
    return Model("table", schema, None, table=dict(table))


TRAINERS = {"logistic": train_logistic, "tree": train_tree, "forest": train_forest}


def train(kind: str, data: Dataset, hp: HyperParams, seed: int) -> Model:
    if kind == "rule-xor":
        return rule_model_xor()
    try:
        return TRAINERS[kind](data, hp, seed)
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}") from None


# ---------------------------------------------------------------- serialisation

def model_to_dict(model: Model) -> dict:
    d = {"format": MODEL_FORMAT, "kind": model.kind, "schema": model.schema.to_dict(),
         "hyperparams": asdict(model.hyperparams), "train_seed": model.train_seed}
    if model.ctx is not None:
        d["normalization"] = model.ctx.to_dict()
    if model.kind == "logistic":
        d["weights"] = model.weights.tolist()
        d["bias"] = model.bias
    if model.trees:
        d["trees"] = [t.to_dict() for t in model.trees]
    if model.table is not None:
        d["table"] = [[list(k), v] for k, v in sorted(model.table.items(), key=lambda kv: repr(kv[0]))]
    return d


def model_from_dict(d: dict) -> Model:
    if d.get("format") != MODEL_FORMAT:
        raise ParseError(f"unsupported model format {d.get('format')!r}")
    schema = FeatureSchema.from_dict(d["schema"])
    ctx = NormalizationContext.from_dict(schema, d["normalization"]) if "normalization" in d else None
    m = Model(d["kind"], schema, ctx, HyperParams(**d["hyperparams"]), d["train_seed"])
    if m.kind == "logistic":
        m.weights = np.array(d["weights"], dtype=float)
        m.bias = float(d["bias"])
    m.trees = [Tree.from_dict(t) for t in d.get("trees", [])]
    if "table" in d:
        m.table = {tuple(k): v for k, v in d["table"]}
    return m


def save_model(model: Model, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), sort_keys=True, indent=1) + "\n")


def load_model(path: str | Path) -> Model:
    try:
        return model_from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ParseError(f"cannot load model {path}: {exc}") from None
