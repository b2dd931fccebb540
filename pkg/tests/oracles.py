"""Independent re-implementations used as test oracles.

They share no code with the package beyond plain data types, and are written
as direct loops so a bug in the vectorised library path shows up as a mismatch.
"""

import itertools
import math


def brute_rank(values, ids):
    """rank(i) = 1 + number of records that beat record i."""
    n = len(values)
    out = []
    for i in range(n):
        better = 0
        for j in range(n):
            if j == i:
                continue
            if values[j] > values[i] or (values[j] == values[i] and ids[j] < ids[i]):
                better += 1
        out.append(better + 1)
    return out


def brute_cherry_picked(values, ids, i):
    """True iff some other record has higher utility, or equal utility and a lower id."""
    return any(values[j] > values[i] or (values[j] == values[i] and ids[j] < ids[i])
               for j in range(len(values)) if j != i)


def l0(x, e):
    return sum(1 for a, b in zip(x, e) if a != b)


def minmax_l2(x, e, lo, hi, numeric):
    """Plain min-max encoded Euclidean distance for binary categoricals."""
    s = 0.0
    for j, (a, b) in enumerate(zip(x, e)):
        if numeric[j]:
            s += ((a - lo[j]) / (hi[j] - lo[j]) - (b - lo[j]) / (hi[j] - lo[j])) ** 2
        else:
            s += 0.0 if a == b else 1.0
    return math.sqrt(s)


def heom_loop(x, e, ranges):
    """HEOM with ``ranges[j]`` for numerics and None for categoricals."""
    s = 0.0
    for a, b, r in zip(x, e, ranges):
        if r is None:
            d = 0.0 if a == b else 1.0
        else:
            d = min(1.0, abs(a - b) / r)
        s += d * d
    return math.sqrt(s)


def enumerate_valid(predict, x, axes):
    """Every grid point whose prediction differs from x's, by nested loops."""
    y0 = predict(x)
    found = []
    for point in itertools.product(*axes):
        if point != tuple(x) and predict(point) != y0:
            found.append(point)
    return found


def separable_by_grid(points, labels, steps=41, span=4.0):
    """Search a grid of (w, b) for a strict separator of 2-D points."""
    grid = [span * (2 * k / (steps - 1) - 1) for k in range(steps)]
    for w0 in grid:
        for w1 in grid:
            for b in grid:
                ok = True
                for (p0, p1), c in zip(points, labels):
                    s = 1 if c == 1 else -1
                    if s * (w0 * p0 + w1 * p1 + b) <= 0:
                        ok = False
                        break
                if ok:
                    return (w0, w1, b)
    return None
