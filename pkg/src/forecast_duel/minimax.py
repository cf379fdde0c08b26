"""Exact solver for the per-round auxiliary game with two Reality outcomes.

Forecaster picks a mixture over m pure forecasts; pure forecast i costs
``a[i]`` if Reality says 0 and ``b[i]`` if Reality says 1.  The optimal
mixture minimises ``max(mu @ a, mu @ b)`` and never needs more than two
atoms, so the solver enumerates singletons and crossing pairs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import PayoffFunction


@dataclass(frozen=True)
class TwoByMGame:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).ravel()
        b = np.asarray(self.b, dtype=float).ravel()
        if a.size == 0 or a.shape != b.shape:
            raise ValueError("game needs a nonempty list of (a, b) pairs")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("payoffs must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_points(cls, points: Sequence[tuple[float, float]]) -> "TwoByMGame":
        arr = np.asarray(points, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])

    @classmethod
    def from_payoff(cls, S: PayoffFunction, grid) -> "TwoByMGame":
        """Payoffs -p*S(p) (outcome 0) and (1-p)*S(p) (outcome 1) on ``grid``."""
        p = np.asarray(grid, dtype=float)
        s = S(p)
        return cls(-p * s, (1.0 - p) * s)

    def __len__(self) -> int:
        return self.a.size


@dataclass(frozen=True)
class MinimaxSolution:
    weights: np.ndarray  # mixture over the game's pure strategies
    value: float
    support: tuple  # indices with positive weight, ascending
    hull: np.ndarray  # indices of the convex-hull vertices of the payoff points


def _hull_indices(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vertices of the convex hull of the points (a_i, b_i), Andrew's monotone chain.

    Returns the lowest original index for each distinct vertex.
    """
    order = np.lexsort((np.arange(a.size), b, a)).tolist()
    al, bl = a.tolist(), b.tolist()  # plain floats: much faster in the loop
    pts = []
    idx = []
    last = None
    for i in order:
        key = (al[i], bl[i])
        if key == last:
            continue
        last = key
        pts.append(key)
        idx.append(i)
    if len(pts) <= 2:
        return np.array(sorted(idx), dtype=int)

    def cross(o, p, q):
        return (p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0])

    lower: list[int] = []
    for j in range(len(pts)):
        while len(lower) >= 2 and cross(pts[lower[-2]], pts[lower[-1]], pts[j]) <= 0:
            lower.pop()
        lower.append(j)
    upper: list[int] = []
    for j in range(len(pts) - 1, -1, -1):
        while len(upper) >= 2 and cross(pts[upper[-2]], pts[upper[-1]], pts[j]) <= 0:
            upper.pop()
        upper.append(j)
    chain = lower[:-1] + upper[:-1]
    return np.array(sorted(idx[j] for j in set(chain)), dtype=int)


def solve_2xM(game: TwoByMGame, prune: bool = True) -> MinimaxSolution:
    """Minimise the worse of the two expected payoffs over all mixtures.

    The optimum sits at a single point or at the crossing of a segment with
    the diagonal ``a == b``.  With ``prune`` only segments between vertices
    of the convex hull of the payoff points are tried (the optimum lies on
    the hull boundary), which keeps fine grids cheap; ``prune=False``
    enumerates every pair.  Ties go to the lowest index pair.
    """
    a, b = game.a, game.b
    m = a.size
    hull = _hull_indices(a, b) if prune else np.arange(m)

    single = np.maximum(a, b)
    i0 = int(np.argmin(single))
    best_val, best = float(single[i0]), (i0, i0, 1.0)

    cand = hull
    d = a[cand] - b[cand]
    pos = cand[d > 0]
    neg = cand[d < 0]
    if pos.size and neg.size:
        I, J = np.meshgrid(pos, neg, indexing="ij")
        di = (a[I] - b[I])
        dj = (a[J] - b[J])
        lam = -dj / (di - dj)  # weight on i
        vals = lam * a[I] + (1.0 - lam) * a[J]
        lo = np.minimum(I, J)
        hi = np.maximum(I, J)
        flat = np.lexsort((hi.ravel(), lo.ravel(), vals.ravel()))[0]
        v = float(vals.ravel()[flat])
        if v < best_val:
            best_val = v
            best = (int(I.ravel()[flat]), int(J.ravel()[flat]), float(lam.ravel()[flat]))
        elif v == best_val:
            pair = (int(lo.ravel()[flat]), int(hi.ravel()[flat]))
            if pair < (i0, i0):
                best = (int(I.ravel()[flat]), int(J.ravel()[flat]), float(lam.ravel()[flat]))

    i, j, lam = best
    w = np.zeros(m)
    w[i] += lam
    w[j] += 1.0 - lam
    support = tuple(int(k) for k in np.flatnonzero(w > 0))
    # value actually achieved by the returned weights
    value = max(float(w @ a), float(w @ b))
    return MinimaxSolution(weights=w, value=value, support=support, hull=hull)


def reality_value_oracle(S: PayoffFunction, grid, q_resolution: int = 101) -> float:
    """Reality's side of the game: max over q of min over p of S(p)(q - p).

    The lower envelope of the lines q -> S(p_i)(q - p_i) is concave and
    piecewise linear, so scanning a uniform mesh together with every pairwise
    crossing point finds the maximum exactly.
    """
    if q_resolution < 2:
        raise ValueError("q_resolution must be at least 2")
    p = np.asarray(grid, dtype=float)
    s = S(p)
    intercept = -s * p  # line value at q = 0
    qs = [np.linspace(0.0, 1.0, q_resolution)]
    ds = s[:, None] - s[None, :]
    dc = intercept[None, :] - intercept[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = dc / ds
    iu = np.triu_indices(p.size, k=1)
    cross = cross[iu]
    cross = cross[np.isfinite(cross) & (cross >= 0.0) & (cross <= 1.0)]
    qs.append(cross)
    q = np.concatenate(qs)
    envelope = (s[:, None] * q[None, :] + intercept[:, None]).min(axis=0)
    return float(envelope.max())
