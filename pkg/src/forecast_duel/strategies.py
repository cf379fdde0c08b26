"""Players for the forecasting game.

The Skeptic here is the defensive mixture that defeats any forecaster with a
positive level of discreteness; Reality is the randomised Oakes adversary.
Forecasters range from a plain deterministic rule to the finite-grid minimax
defence.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    FiniteDistribution,
    PayoffFunction,
    RandomSource,
    check_prob,
    expectation,
)
from .engine import (
    DEFAULT_DEPTH,
    NEG_TOL,
    CapitalLedger,
    GameMode,
    History,
    RestrictionViolation,
    _logsumexp,
    eps_levels,
    log_eps_levels,
)
from .minimax import TwoByMGame, solve_2xM

_FLOAT_MAX = float(np.finfo(float).max)
_LOG_FLOAT_MAX = math.log(_FLOAT_MAX)


class SlackNotMet(RuntimeError):
    def __init__(self, value: float, slack: float, n: Optional[int] = None):
        super().__init__(f"minimax value {value!r} above slack {slack!r} (round {n})")
        self.value = value
        self.slack = slack
        self.n = n


# --- Skeptic ---------------------------------------------------------------

@dataclass(frozen=True)
class SkepticParams:
    depth: int = DEFAULT_DEPTH

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")

    @property
    def eps(self) -> np.ndarray:
        return eps_levels(self.depth)


def g_values(p, omega: int):
    """(2*[p <= 0.5] - 1) * (omega - p), elementwise."""
    p = np.asarray(p, dtype=float)
    return np.where(p <= 0.5, 1.0, -1.0) * (omega - p)


def _mixed_stake(params: SkepticParams, log_accounts: np.ndarray,
                 log_unit: float = 0.0) -> float:
    """sum_k eps_k**2 * exp(log_accounts[k]) in units of exp(log_unit).

    Capped at the largest float; the ledger's unit normally keeps it far below.
    """
    log_sum = _logsumexp(2.0 * log_eps_levels(params.depth) + log_accounts) - log_unit
    if log_sum > _LOG_FLOAT_MAX:
        return _FLOAT_MAX
    return math.exp(log_sum) if log_sum > -math.inf else 0.0


def skeptic_announce_S(params: SkepticParams, ledger: CapitalLedger) -> PayoffFunction:
    """Bet against high forecasts with the Q1 accounts and for low ones with Q2.

    S(p) = -A1 for p > 0.5 and +A2 for p <= 0.5, where
    A_i = 0.5 * sum_k eps_k**2 * Q^{i,k}.
    """
    down = 0.5 * _mixed_stake(params, ledger.log_q1, ledger.log_unit)
    up = 0.5 * _mixed_stake(params, ledger.log_q2, ledger.log_unit)

    def S(p):
        return np.where(p > 0.5, -down, up)

    return PayoffFunction(S, bound=max(down, up), name="skeptic_S")


def skeptic_announce_f(params: SkepticParams, ledger: CapitalLedger,
                       dist: FiniteDistribution, omega: int) -> PayoffFunction:
    """Test function f(p) = -c * (g(p) - E_P g) with c = sum_k eps_k**2 F^k.

    Centring makes E_P f vanish for every P, so the restriction holds.
    """
    c = _mixed_stake(params, ledger.log_f, ledger.log_unit_f)
    g_mean = float(np.dot(dist.weights, g_values(dist.support, omega)))

    def f(p):
        return -c * (g_values(p, omega) - g_mean)

    return PayoffFunction(f, bound=2.0 * c, name="skeptic_f")


def _log_factor(move: np.ndarray, n: Optional[int]) -> np.ndarray:
    """log(1 + move); a factor within NEG_TOL below zero kills the account."""
    if move.min() < -1.0 - NEG_TOL:
        raise RestrictionViolation(RestrictionViolation.NEGATIVE_CAPITAL,
                                   f"settlement factor {1.0 + move.min()!r}", n)
    with np.errstate(divide="ignore"):
        return np.log1p(np.maximum(move, -1.0))


def skeptic_settle(params: SkepticParams, ledger: CapitalLedger, p: float, omega: int,
                   dist: FiniteDistribution, n: Optional[int] = None) -> CapitalLedger:
    """Multiply every account by its factor for the realised (p, omega).

    Q1 (factor 1 - eps_k (omega - p)) is charged only when p > 0.5 and Q2
    (factor 1 + eps_k (omega - p)) only when p <= 0.5.  The F accounts, with
    factor 1 - eps_k (g(p) - E_P g), move only in the modified game, where
    Skeptic owns the test function.
    """
    eps = params.eps
    resid = omega - p
    steps = np.zeros((3, params.depth))
    if p > 0.5:
        steps[0] = _log_factor(-eps * resid, n)
    else:
        steps[1] = _log_factor(eps * resid, n)
    if ledger.mode is GameMode.SKEPTIC_TEST:
        g_mean = float(np.dot(dist.weights, g_values(dist.support, omega)))
        centred = float(g_values(p, omega)) - g_mean
        steps[2] = _log_factor(-eps * centred, n)
    return ledger.multiply_accounts(steps)


class TheoremTwoSkeptic:
    """Mixture of eps_k-stake betting accounts over k = 1..depth."""

    structured = True

    def __init__(self, depth: int = DEFAULT_DEPTH):
        self.params = SkepticParams(depth)
        self.depth = depth

    def announce_S(self, history: History, ledger: CapitalLedger) -> PayoffFunction:
        return skeptic_announce_S(self.params, ledger)

    def announce_f(self, history: History, ledger: CapitalLedger) -> PayoffFunction:
        return skeptic_announce_f(self.params, ledger, history.P, history.omega)

    def settle(self, ledger, p, omega, dist):
        return skeptic_settle(self.params, ledger, p, omega, dist)


class ZeroSkeptic:
    structured = False
    depth = DEFAULT_DEPTH

    def announce_S(self, history, ledger):
        return PayoffFunction.zero()

    def announce_f(self, history, ledger):
        return PayoffFunction.zero()

    def settle(self, ledger, p, omega, dist):  # pragma: no cover - never structured
        return ledger


# --- Reality ---------------------------------------------------------------

def reality_oakes(dist: FiniteDistribution) -> int:
    """0 if P puts more than half its mass on (0.5, 1], else 1."""
    return 0 if dist.mass(lambda s: s > 0.5) > 0.5 else 1


def reality_oakes_deterministic(p: float) -> int:
    return 1 if p < 0.5 else 0


class OakesReality:
    def announce_omega(self, history: History) -> int:
        return reality_oakes(history.P)


class DeterministicOakesReality:
    """Oakes' rule for deterministic forecasts; needs a point-mass P."""

    def announce_omega(self, history: History) -> int:
        P = history.P
        if len(P) != 1:
            raise ValueError("oakes2 reality needs a deterministic (point-mass) forecast")
        return reality_oakes_deterministic(float(P.support[0]))


class BernoulliReality:
    def __init__(self, q: float, rng: RandomSource):
        self.q = check_prob(q)
        self.rng = rng

    def announce_omega(self, history: History) -> int:
        return 1 if self.rng.uniform() < self.q else 0


class ReplayReality:
    """Plays back a fixed outcome sequence, cycling if the game runs longer."""

    def __init__(self, outcomes: Sequence[int]):
        if not outcomes:
            raise ValueError("replay needs at least one outcome")
        self.outcomes = [int(w) for w in outcomes]
        if any(w not in (0, 1) for w in self.outcomes):
            raise ValueError("replay outcomes must be 0/1")

    @classmethod
    def from_file(cls, path) -> "ReplayReality":
        outcomes = []
        for line in Path(path).read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                outcomes.extend(int(tok) for tok in line.replace(",", " ").split())
        return cls(outcomes)

    def announce_omega(self, history: History) -> int:
        return self.outcomes[(history.n - 1) % len(self.outcomes)]


# --- Forecasters -----------------------------------------------------------

def laplace_forecast(outcomes: Sequence[int]) -> float:
    """Laplace's rule of succession (ones + 1) / (n + 2)."""
    return (sum(outcomes) + 1.0) / (len(outcomes) + 2.0)


class LaplaceRule:
    """Laplace's rule read off a game history, counting outcomes incrementally."""

    def __init__(self):
        self._seen = 0
        self._ones = 0

    def __call__(self, history: History) -> float:
        past = history.past
        if len(past) < self._seen:
            self._seen = self._ones = 0
        for rec in past[self._seen:]:
            self._ones += rec.omega
        self._seen = len(past)
        return (self._ones + 1.0) / (self._seen + 2.0)


class ConstantRule:
    def __init__(self, q: float):
        self.q = check_prob(q)

    def __call__(self, history: History) -> float:
        return self.q


def forecaster_point_mass(base_forecast: float) -> FiniteDistribution:
    return FiniteDistribution.point_mass(base_forecast)


@functools.lru_cache(maxsize=64)
def rounding_grid(step: float) -> np.ndarray:
    """{0, step, 2*step, ...} in [0, 1], with 1 appended when off the grid."""
    if not 0.0 < step < 1.0:
        raise ValueError("grid step must lie in (0, 1)")
    count = int(math.floor(1.0 / step + 1e-9))
    grid = step * np.arange(count + 1)
    grid = grid[grid <= 1.0]
    if grid[-1] < 1.0 - 1e-12:
        grid = np.append(grid, 1.0)
    else:
        grid[-1] = 1.0
    grid.setflags(write=False)
    return grid


def forecaster_uniform_round(base_forecast: float, step: float) -> FiniteDistribution:
    """Round q to its two grid neighbours so that the mean stays q."""
    q = check_prob(base_forecast)
    grid = rounding_grid(step)
    j = int(np.searchsorted(grid, q, side="right"))
    lo = float(grid[j - 1])
    if q - lo <= 1e-12:
        return FiniteDistribution.point_mass(lo)
    hi = float(grid[j])
    if hi - q <= 1e-12:
        return FiniteDistribution.point_mass(hi)
    w_hi = (q - lo) / (hi - lo)
    return FiniteDistribution([lo, hi], [1.0 - w_hi, w_hi])


# The mean-preserving two-point rounding is exactly Kakade and Foster's
# almost-deterministic randomisation; the separate name keeps reports honest.
forecaster_kf_round = forecaster_uniform_round


def forecaster_minimax(S: PayoffFunction, grid_step: float, slack: float,
                       grid: Optional[Sequence[float]] = None,
                       max_refinements: int = 20, n: Optional[int] = None,
                       raise_on_miss: bool = True):
    """Mixed forecast that keeps Skeptic's expected gain below ``slack``.

    Solves the auxiliary game on the grid {0, step, ..., 1} (or the given
    ``grid``) and, while the value exceeds ``slack``, halves the step and
    adds the new points around the current optimal support.  The hull of
    the refined grid is the hull of the old hull vertices plus the new
    points, so only those are carried forward.

    Returns ``(distribution, value)``.
    """
    if grid is None:
        if not 0.0 < grid_step <= 1.0:
            raise ValueError("grid step must lie in (0, 1]")
        pts = np.unique(np.append(grid_step * np.arange(int(1.0 / grid_step + 1e-9) + 1), 1.0))
        pts = pts[pts <= 1.0]
        h = grid_step
    else:
        pts = np.unique(np.asarray(grid, dtype=float))
        h = float(np.diff(pts).min()) if pts.size > 1 else grid_step

    best = None
    for attempt in range(max_refinements + 1):
        sol = solve_2xM(TwoByMGame.from_payoff(S, pts))
        if best is None or sol.value < best[1]:
            best = (pts, sol.value, sol)
        if sol.value <= slack or attempt == max_refinements:
            break
        h /= 2.0
        centres = pts[list(sol.support)]
        fresh = np.concatenate([centres - h, centres + h])
        fresh = fresh[(fresh >= 0.0) & (fresh <= 1.0)]
        pts = np.unique(np.concatenate([pts[sol.hull], fresh]))

    pts, value, sol = best
    if value > slack and raise_on_miss:
        raise SlackNotMet(value, slack, n)
    keep = sol.weights > 0
    weights = sol.weights[keep] / sol.weights[keep].sum()
    return FiniteDistribution(pts[keep], weights), value


class PointForecaster:
    """Deterministic forecaster: a point mass at the base rule's forecast."""

    def __init__(self, base: Optional[Callable[[History], float]] = None):
        self.base = base or LaplaceRule()

    def announce_P(self, history: History) -> FiniteDistribution:
        return forecaster_point_mass(self.base(history))

    def announce_f(self, history: History) -> PayoffFunction:
        return PayoffFunction.zero()


class RoundingForecaster:
    """Randomised rounding of a deterministic base rule to a grid of step Delta.

    ``kind`` is "uniform" or "kf"; both use the same construction.
    """

    def __init__(self, step: float, kind: str = "uniform",
                 base: Optional[Callable[[History], float]] = None):
        rounding_grid(step)
        if kind not in ("uniform", "kf"):
            raise ValueError(f"unknown rounding kind {kind!r}")
        self.step = step
        self.kind = kind
        self.base = base or LaplaceRule()

    def announce_P(self, history: History) -> FiniteDistribution:
        return forecaster_uniform_round(self.base(history), self.step)

    def announce_f(self, history: History) -> PayoffFunction:
        return PayoffFunction.zero()


class MinimaxForecaster:
    """Finite-grid minimax defence against the announced S_n.

    The slack at round n is ``slack0 / n**2``; the initial grid step comes
    from ``grid_schedule``.  As the second move it mirrors Skeptic's gain,
    f_n(p) = S_n(p)(omega_n - p), so its capital tracks Skeptic's exactly.
    """

    def __init__(self, slack0: float = 1.0,
                 grid_schedule: Callable[[int], float] = lambda n: 2.0 ** -8,
                 max_refinements: int = 20):
        if slack0 <= 0:
            raise ValueError("slack must be positive")
        self.slack0 = slack0
        self.grid_schedule = grid_schedule
        self.max_refinements = max_refinements
        self.values: list[float] = []

    def slack(self, n: int) -> float:
        return self.slack0 / n ** 2

    def announce_P(self, history: History) -> FiniteDistribution:
        n = history.n
        dist, value = forecaster_minimax(
            history.S, self.grid_schedule(n), self.slack(n),
            max_refinements=self.max_refinements, n=n)
        self.values.append(value)
        return dist

    def announce_f(self, history: History) -> PayoffFunction:
        f = history.S.times_residual(history.omega)
        f.slack = self.slack(history.n)
        return f


# --- registry --------------------------------------------------------------

def _split(spec: str) -> tuple[str, Optional[str]]:
    name, _, arg = spec.partition(":")
    return name.strip(), (arg.strip() or None)


def parse_forecaster(spec: str):
    name, arg = _split(spec)
    if name == "point":
        return PointForecaster(ConstantRule(float(arg)) if arg else None)
    if name in ("uniform", "kf"):
        if arg is None:
            raise ValueError(f"{name} forecaster needs a grid step, e.g. {name}:0.2")
        return RoundingForecaster(float(arg), kind=name)
    if name == "minimax":
        return MinimaxForecaster(float(arg) if arg else 1.0)
    raise ValueError(f"unknown forecaster {spec!r}")


def parse_reality(spec: str, rng: Optional[RandomSource] = None):
    name, arg = _split(spec)
    if name == "oakes":
        return OakesReality()
    if name == "oakes2":
        return DeterministicOakesReality()
    if name == "bernoulli":
        if arg is None or rng is None:
            raise ValueError("bernoulli reality needs q and a random source")
        return BernoulliReality(float(arg), rng)
    if name == "replay":
        if arg is None:
            raise ValueError("replay reality needs a file path")
        return ReplayReality.from_file(arg)
    raise ValueError(f"unknown reality {spec!r}")


def parse_skeptic(spec: str):
    name, arg = _split(spec)
    if name == "skeptic_t2":
        return TheoremTwoSkeptic(int(arg) if arg else DEFAULT_DEPTH)
    if name == "skeptic_zero":
        return ZeroSkeptic()
    raise ValueError(f"unknown skeptic {spec!r}")
