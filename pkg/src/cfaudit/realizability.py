"""Linear realizability of the decision-boundary behaviour implied by reports.

Each reported explanation ``(x, e)`` claims two labelled points: ``x`` with its
class and ``e`` with the opposite class. A linear model class can produce the
reports only if some hyperplane strictly separates the claimed points.

Separation ``s_i (w . p_i + b) > 0`` is scale invariant, so it is solved as the
LP feasibility problem ``s_i (w . p_i + b) >= 1``. When that LP is infeasible,
Gordan's alternative gives ``lambda >= 0`` with ``sum(lambda) = 1`` and
``sum_i lambda_i s_i (p_i, 1) = 0``; its support is the infeasible subsystem.
The multipliers are re-solved in exact rational arithmetic so the certificate
can be checked without any floating-point tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
import sympy
from scipy.optimize import linprog

from .generators import ExplanationRecord
from .tabular import NormalizationContext, encode

DEFAULT_MARGIN = 1e-9


@dataclass(frozen=True)
class BoundaryClaim:
    points: tuple[tuple[tuple[float, ...], int], ...]   # (encoded point, class)
    descriptor: str = "linear"                          # "linear" | "vc:<bound>" | "unrestricted"
    sources: tuple[int, ...] = ()                       # report index per point


def claim_from_reports(records: Sequence[ExplanationRecord], ctx: NormalizationContext,
                       descriptor: str = "linear") -> BoundaryClaim:
    pts, src = [], []
    for k, r in enumerate(records):
        pts.append((tuple(encode(r.factual, ctx).vector.tolist()), int(r.factual_class)))
        pts.append((tuple(encode(r.counterfactual, ctx).vector.tolist()), int(r.counterfactual_class)))
        src += [k, k]
    return BoundaryClaim(tuple(pts), descriptor, tuple(src))


@dataclass(frozen=True)
class RealizabilityVerdict:
    realizable: bool | None          # None: undecided for this descriptor
    weights: tuple[float, ...] = ()
    bias: float = 0.0
    support: tuple[int, ...] = ()    # point indices of the infeasible subsystem
    multipliers: tuple[str, ...] = ()  # exact rationals "p/q" aligned with support
    exact: bool = False
    reason: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"realizable": self.realizable, "reason": self.reason}
        if self.realizable:
            d.update(weights=list(self.weights), bias=self.bias)
        elif self.realizable is False:
            d.update(support=list(self.support), multipliers=list(self.multipliers),
                     exact=self.exact)
        return d


def _signed(claim: BoundaryClaim) -> tuple[np.ndarray, np.ndarray]:
    P = np.array([p for p, _ in claim.points], dtype=float)
    s = np.array([1.0 if c == 1 else -1.0 for _, c in claim.points])
    return P, s


def linear_realizability(claim: BoundaryClaim, margin: float = DEFAULT_MARGIN) -> RealizabilityVerdict:
    if not claim.points:
        raise ValueError("empty boundary claim")
    if claim.descriptor != "linear":
        return RealizabilityVerdict(None, reason=f"capacity descriptor {claim.descriptor!r} is "
                                    "accepted but only the linear class is decided")
    P, s = _signed(claim)
    n, dim = P.shape
    A = -(s[:, None] * np.hstack([P, np.ones((n, 1))]))
    res = linprog(np.zeros(dim + 1), A_ub=A, b_ub=-np.ones(n), bounds=[(None, None)] * (dim + 1),
                  method="highs")
    if res.status == 0:
        w, b = res.x[:dim], float(res.x[dim])
        if np.all(s * (P @ w + b) >= margin):
            return RealizabilityVerdict(True, tuple(float(v) for v in w), b,
                                        reason="separating hyperplane found")
    # Gordan alternative: sum_i lam_i s_i (p_i, 1) = 0, lam >= 0, sum lam = 1
    M = (s[:, None] * np.hstack([P, np.ones((n, 1))])).T
    A_eq = np.vstack([M, np.ones((1, n))])
    b_eq = np.concatenate([np.zeros(dim + 1), [1.0]])
    alt = linprog(np.zeros(n), A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * n, method="highs")
    if alt.status != 0:
        return RealizabilityVerdict(None, reason=f"LP solver failed: {res.message} / {alt.message}")
    support = tuple(int(i) for i in np.flatnonzero(alt.x > 1e-10))
    lam = _exact_multipliers(claim, support)
    if lam is not None:
        return RealizabilityVerdict(False, support=support, multipliers=tuple(map(str, lam)),
                                    exact=True, reason="exact infeasibility certificate")
    return RealizabilityVerdict(False, support=support,
                                multipliers=tuple(repr(float(alt.x[i])) for i in support),
                                exact=False, reason="numerical infeasibility certificate")


def _exact_multipliers(claim: BoundaryClaim, support: Sequence[int]) -> list[Fraction] | None:
    """Solve the Gordan system on ``support`` over the rationals."""
    rows = []
    for i in support:
        p, c = claim.points[i]
        sgn = 1 if c == 1 else -1
        rows.append([sympy.Rational(Fraction(v)) * sgn for v in p] + [sympy.Integer(sgn)])
    M = sympy.Matrix(rows).T
    A = M.col_join(sympy.ones(1, len(support)))
    rhs = sympy.zeros(M.rows, 1).col_join(sympy.Matrix([1]))
    try:
        sol, params = A.gauss_jordan_solve(rhs)
    except ValueError:
        return None
    if params.shape[0]:
        sol = sol.subs({t: 0 for t in params})
    lam = [Fraction(int(v.p), int(v.q)) for v in sol]
    cert = verify_certificate(claim, support, lam)
    return lam if cert else None


def verify_certificate(claim: BoundaryClaim, support: Sequence[int], lam: Sequence) -> bool:
    """Exact check of a Gordan infeasibility certificate."""
    lam = [Fraction(v) for v in lam]
    if len(lam) != len(support) or any(v < 0 for v in lam) or sum(lam) <= 0:
        return False
    dim = len(claim.points[0][0])
    acc = [Fraction(0)] * (dim + 1)
    for i, l in zip(support, lam):
        p, c = claim.points[i]
        sgn = 1 if c == 1 else -1
        for j, v in enumerate(p):
            acc[j] += l * sgn * Fraction(v)
        acc[dim] += l * sgn
    return all(a == 0 for a in acc)


def verify_witness(claim: BoundaryClaim, verdict: RealizabilityVerdict,
                   margin: float = DEFAULT_MARGIN) -> bool:
    P, s = _signed(claim)
    return bool(np.all(s * (P @ np.array(verdict.weights) + verdict.bias) >= margin))
