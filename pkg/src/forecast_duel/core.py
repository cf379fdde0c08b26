"""Domain types shared by the game engine, strategies and metrics.

Forecast distributions are finite-support measures on [0, 1], so every
integral the game needs is an exact weighted sum over the support.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

WEIGHT_SUM_TOL = 1e-12


def check_prob(value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"probability out of [0, 1]: {value!r}")
    return value


def check_outcome(value: int) -> int:
    if value not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {value!r}")
    return int(value)


class FiniteDistribution:
    """Probability measure on [0, 1] with finitely many atoms.

    The constructor puts the input in canonical form: support points are
    sorted and duplicates merged by summing their weights. Zero weights are
    kept so that a declared support point stays in the support.
    """

    __slots__ = ("support", "weights")

    def __init__(self, support: Sequence[float], weights: Sequence[float]):
        pts = np.asarray(support, dtype=float).ravel()
        w = np.asarray(weights, dtype=float).ravel()
        if pts.size == 0:
            raise ValueError("support must be nonempty")
        if pts.shape != w.shape:
            raise ValueError("support and weights differ in length")
        if not (pts.min() >= 0.0 and pts.max() <= 1.0):  # also rejects nan
            raise ValueError("support points must lie in [0, 1]")
        if not (w.min() >= 0.0 and np.isfinite(w).all()):
            raise ValueError("weights must be finite and nonnegative")
        total = math.fsum(w)
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {total!r}, not 1")
        if pts.size > 1 and not (pts[1:] > pts[:-1]).all():
            pts, inverse = np.unique(pts, return_inverse=True)
            w = np.bincount(inverse, weights=w, minlength=pts.size)
        pts.setflags(write=False)
        w.setflags(write=False)
        self.support = pts
        self.weights = w

    @classmethod
    def point_mass(cls, p: float) -> "FiniteDistribution":
        return cls([check_prob(p)], [1.0])

    @classmethod
    def from_dict(cls, atoms: dict) -> "FiniteDistribution":
        return cls(list(atoms.keys()), list(atoms.values()))

    def __len__(self) -> int:
        return self.support.size

    def __repr__(self) -> str:
        atoms = ", ".join(f"{p:g}: {w:g}" for p, w in zip(self.support, self.weights))
        return f"FiniteDistribution({{{atoms}}})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, FiniteDistribution):
            return NotImplemented
        return np.array_equal(self.support, other.support) and np.array_equal(
            self.weights, other.weights
        )

    __hash__ = None

    def mass(self, predicate: Callable[[np.ndarray], np.ndarray]) -> float:
        """Total weight of the support points where ``predicate`` holds."""
        return float(self.weights[predicate(self.support)].sum())

    def mean(self) -> float:
        return float(np.dot(self.weights, self.support))

    def to_dict(self) -> dict:
        return {"support": self.support.tolist(), "weights": self.weights.tolist()}


class PayoffFunction:
    """A real function on [0, 1], evaluable on scalars or numpy arrays.

    ``fn`` must accept an ndarray of points and return an ndarray of the same
    shape. ``bound`` is an optional declared sup-norm bound. ``slack`` is how
    far above zero the announcer admits E_P[f] may sit when the function is
    used as a test function (nonzero only for finite-grid minimax play).
    """

    __slots__ = ("fn", "bound", "name", "slack")

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray],
                 bound: Optional[float] = None, name: str = "", slack: float = 0.0):
        self.fn = fn
        self.bound = bound
        self.name = name
        self.slack = slack

    def __call__(self, p):
        if np.ndim(p) == 0:
            return float(self.fn(np.asarray([p], dtype=float))[0])
        return self.fn(np.asarray(p, dtype=float))

    def __repr__(self) -> str:
        return f"PayoffFunction({self.name or self.fn!r})"

    @classmethod
    def zero(cls) -> "PayoffFunction":
        return cls.constant(0.0)

    @classmethod
    def constant(cls, c: float) -> "PayoffFunction":
        c = float(c)
        return cls(lambda p: np.full(p.shape, c), bound=abs(c), name=f"const({c:g})")

    def times_residual(self, omega: int) -> "PayoffFunction":
        """The function p -> self(p) * (omega - p)."""
        fn = self.fn
        return PayoffFunction(lambda p: fn(p) * (omega - p), name=f"{self.name}*(w-p)")


def expectation(f: PayoffFunction, dist: FiniteDistribution) -> float:
    return float(np.dot(dist.weights, f(dist.support)))


def min_gap(dist: FiniteDistribution) -> float:
    """Smallest distance between two support points; ``inf`` for a point mass."""
    if dist.support.size < 2:
        return math.inf
    return float(np.diff(dist.support).min())


class RandomSource:
    """The Random Number Generator player: a seeded PCG64 stream.

    The same seed always replays the same draw sequence. Auxiliary streams
    (for example a randomised Reality) come from :meth:`derive`, which spawns
    an independent child of the same seed.
    """

    def __init__(self, seed: int, stream: int | None = None):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = stream
        spawn_key = () if stream is None else (int(stream),)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=spawn_key))
        )

    def uniform(self) -> float:
        return float(self._gen.random())

    def derive(self, stream: int) -> "RandomSource":
        return RandomSource(self.seed, stream)


def sample(dist: FiniteDistribution, rng: RandomSource) -> float:
    """Draw one support point by inverse CDF on a single uniform draw.

    Returns the first point whose cumulative weight strictly exceeds the draw.
    """
    if dist.support.size == 1:
        rng.uniform()
        return float(dist.support[0])
    u = rng.uniform()
    cum = np.cumsum(dist.weights)
    idx = int(np.searchsorted(cum, u, side="right"))
    if idx >= cum.size:
        # cumulative sum fell short of 1 by rounding; take the last charged atom
        idx = int(np.flatnonzero(dist.weights > 0)[-1])
    return float(dist.support[idx])


@dataclass(slots=True)
class RoundRecord:
    """Everything announced and computed in one round of the game."""

    n: int
    distribution: FiniteDistribution
    omega: int
    sampled_p: float
    s_at_p: float
    f_at_p: float
    q_increment: float
    f_increment: float
    log_capital_Q: float
    log_capital_F: float
    log_capital_K: float
    delta_n: float
    theta1: float
    theta2: float
    # E_P of the centred test function and of the announced f
    g_mean: float = 0.0
    f_mean: float = 0.0
    # max over both outcomes of E_P[S(p)(omega - p)]
    s_exposure: float = 0.0
    # per-account log capitals, rows (Q1, Q2, F); None for unstructured skeptics
    accounts: Optional[np.ndarray] = None
    # s_at_p and q_increment are in units of exp(log_unit); f_at_p and
    # f_increment in units of exp(log_unit_f)
    log_unit: float = 0.0
    log_unit_f: float = 0.0


@dataclass
class GameTrace:
    fingerprint: str
    records: list = field(default_factory=list)
    mode: str = ""
    depth: int = 0
    log_initial: float = 0.0
    complete: bool = True

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)
