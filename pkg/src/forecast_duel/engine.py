"""Protocol driver for Binary Forecasting Game II and its modified variant.

One round is five announcements in a fixed order: Skeptic's bet S_n,
Forecaster's distribution P_n, Reality's outcome, the test function f_n and
the Random Number Generator's draw p_n.  In ``FORECASTER_TEST`` mode
Forecaster announces f_n and owns the capital it drives; in ``SKEPTIC_TEST``
mode Skeptic announces f_n and his capital is split into a betting account
Q and a testing account F.
"""
from __future__ import annotations

import enum
import functools
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Protocol, Sequence

import numpy as np

from .core import (
    FiniteDistribution,
    GameTrace,
    PayoffFunction,
    RandomSource,
    RoundRecord,
    check_outcome,
    expectation,
    min_gap,
    sample,
)

log = logging.getLogger(__name__)

F_TOL = 1e-9
NEG_TOL = 1e-12
DEFAULT_DEPTH = 16
# each ledger side is quoted in its own unit exp(log_unit); a unit moves only
# when its capital leaves this log-window.  The upper edge keeps quoted
# stakes small enough that rounding in E_P[f] stays far below F_TOL.
UNIT_WINDOW = (-300.0, 10.0)


class GameMode(enum.Enum):
    FORECASTER_TEST = "forecaster-test"
    SKEPTIC_TEST = "skeptic-test"


class RestrictionViolation(RuntimeError):
    F_CONSTRAINT = "F_CONSTRAINT"
    NEGATIVE_CAPITAL = "NEGATIVE_CAPITAL"

    def __init__(self, kind: str, message: str, n: Optional[int] = None):
        super().__init__(f"{kind} at round {n}: {message}")
        self.kind = kind
        self.n = n
        self.trace: Optional[GameTrace] = None


@functools.lru_cache(maxsize=None)
def eps_levels(depth: int) -> np.ndarray:
    eps = 2.0 ** -np.arange(1, depth + 1, dtype=float)
    eps.setflags(write=False)
    return eps


@functools.lru_cache(maxsize=None)
def log_eps_levels(depth: int) -> np.ndarray:
    out = np.log(eps_levels(depth))
    out.setflags(write=False)
    return out


def _logsumexp(x: np.ndarray) -> float:
    m = float(x.max())
    if m == -math.inf:
        return -math.inf
    return m + math.log(float(np.exp(x - m).sum()))


def _log_or_neginf(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def compensated_add(total: np.ndarray, comp: np.ndarray, x) -> tuple[np.ndarray, np.ndarray]:
    """Neumaier step: add ``x`` to ``total`` carrying the lost low bits in ``comp``.

    Log capitals grow to the hundreds while each round adds a tiny, often
    repeated, log factor; plain addition would round the same way every
    time.  Entries that become -inf (dead accounts) drop their compensation.
    """
    t = total + x
    with np.errstate(invalid="ignore"):
        lost = np.where(np.abs(total) >= np.abs(x), (total - t) + x, (x - t) + total)
    comp = comp + lost
    dead = ~np.isfinite(t)
    if dead.any():
        comp = np.where(dead, 0.0, comp)
    return t, comp


@dataclass(frozen=True)
class CapitalLedger:
    """Log-space capitals of the betting accounts.

    With a structured Skeptic, ``log_accounts`` has rows (Q1, Q2, F) and one
    column per stake level eps_k = 2**-k; otherwise it is ``None`` and only
    the totals move.  Each log is ``log_accounts + log_comp`` (a compensated
    running sum).  A log value of ``-inf`` is a dead account.  In
    ``SKEPTIC_TEST`` mode the Skeptic's capital is Q + F; in
    ``FORECASTER_TEST`` mode it is Q alone and F belongs to Forecaster.

    S_n and the Q increments are quoted in units of ``exp(log_unit)``, f_n
    and the F increments in units of ``exp(log_unit_f)``.  The two sides can
    drift a thousand nats apart over a long game, hence separate units.  In
    ``FORECASTER_TEST`` mode Forecaster's f is built from S, so both sides
    share the Q unit.  Units stay 0 unless a capital leaves ``UNIT_WINDOW``.
    """

    mode: GameMode
    depth: int
    log_q_total: float
    log_f_total: float
    log_accounts: Optional[np.ndarray] = None
    log_comp: Optional[np.ndarray] = None
    log_unit: float = 0.0
    log_unit_f: float = 0.0

    @classmethod
    def initial(cls, mode: GameMode, depth: int = DEFAULT_DEPTH,
                structured: bool = False) -> "CapitalLedger":
        if depth < 1:
            raise ValueError("truncation depth must be >= 1")
        log0 = math.log1p(-(2.0 ** -depth))
        if not structured:
            return cls(mode, depth, log0, log0)
        return cls(mode, depth, log0, log0, np.zeros((3, depth)), np.zeros((3, depth)))

    @property
    def structured(self) -> bool:
        return self.log_accounts is not None

    @property
    def eps(self) -> np.ndarray:
        return eps_levels(self.depth)

    def accounts_array(self) -> Optional[np.ndarray]:
        if not self.structured:
            return None
        return self.log_accounts + self.log_comp

    @property
    def log_q1(self) -> np.ndarray:
        return self.accounts_array()[0]

    @property
    def log_q2(self) -> np.ndarray:
        return self.accounts_array()[1]

    @property
    def log_f(self) -> np.ndarray:
        return self.accounts_array()[2]

    @property
    def log_k_total(self) -> float:
        if self.mode is GameMode.FORECASTER_TEST:
            return self.log_q_total
        return float(np.logaddexp(self.log_q_total, self.log_f_total))

    def multiply_accounts(self, log_factors: np.ndarray) -> "CapitalLedger":
        """Multiply each account by its factor (given as a (3, K) array of logs)
        and recompute both totals from the accounts."""
        total, comp = compensated_add(self.log_accounts, self.log_comp, log_factors)
        logs = total + comp
        log_eps = log_eps_levels(self.depth)
        log_q = _logsumexp(log_eps - _LOG2 + np.logaddexp(logs[0], logs[1]))
        if self.mode is GameMode.SKEPTIC_TEST:
            log_f_total = _logsumexp(log_eps + logs[2])
        else:
            log_f_total = self.log_f_total
        return replace(self, log_q_total=log_q, log_f_total=log_f_total,
                       log_accounts=total, log_comp=comp)

    def add_to_totals(self, q_inc: float, f_inc: float, n: int) -> "CapitalLedger":
        return replace(
            self,
            log_q_total=_additive_update(self.log_q_total, q_inc, self.log_unit, "Q", n),
            log_f_total=_additive_update(self.log_f_total, f_inc, self.log_unit_f, "F", n),
        )

    def rebased(self) -> "CapitalLedger":
        """Move each unit to its capital if the capital left the window."""
        unit = _rebase(self.log_q_total, self.log_unit)
        if self.mode is GameMode.FORECASTER_TEST:
            unit_f = unit
        else:
            unit_f = _rebase(self.log_f_total, self.log_unit_f)
        if unit == self.log_unit and unit_f == self.log_unit_f:
            return self
        return replace(self, log_unit=unit, log_unit_f=unit_f)


def _rebase(log_cap: float, unit: float) -> float:
    lo, hi = UNIT_WINDOW
    if not math.isfinite(log_cap) or lo <= log_cap - unit <= hi:
        return unit
    return float(math.floor(log_cap))


_LOG2 = math.log(2.0)


def _additive_update(log_cap: float, inc: float, log_unit: float, name: str,
                     n: int) -> float:
    """log(capital + inc * unit), rejecting a capital that goes negative."""
    if inc == 0.0:
        return log_cap
    new = (math.exp(log_cap - log_unit) if log_cap > -math.inf else 0.0) + inc
    if new < -NEG_TOL * math.exp(-log_unit):
        raise RestrictionViolation(
            RestrictionViolation.NEGATIVE_CAPITAL, f"{name} capital would be {new!r}", n)
    return _log_or_neginf(new) + log_unit if new > 0 else -math.inf


@dataclass(frozen=True)
class History:
    """What a player may see when it moves.

    ``past`` holds the completed rounds.  Within the current round ``S`` is
    visible to Forecaster, ``P`` additionally to Reality, and ``omega``
    additionally to whoever announces f_n.
    """

    past: Sequence[RoundRecord]
    S: Optional[PayoffFunction] = None
    P: Optional[FiniteDistribution] = None
    omega: Optional[int] = None

    @property
    def n(self) -> int:
        """Index of the round being played."""
        return len(self.past) + 1

    @property
    def outcomes(self) -> list[int]:
        return [r.omega for r in self.past]


class _PastView(Sequence):
    """Read-only window on the first ``stop`` records of a growing list."""

    __slots__ = ("_records", "_stop")

    def __init__(self, records: list, stop: int):
        self._records = records
        self._stop = stop

    def __len__(self) -> int:
        return self._stop

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self._records[j] for j in range(*i.indices(self._stop))]
        if i < 0:
            i += self._stop
        if not 0 <= i < self._stop:
            raise IndexError(i)
        return self._records[i]


class Skeptic(Protocol):
    structured: bool

    def announce_S(self, history: History, ledger: CapitalLedger) -> PayoffFunction: ...

    def announce_f(self, history: History, ledger: CapitalLedger) -> PayoffFunction: ...

    def settle(self, ledger: CapitalLedger, p: float, omega: int,
               dist: FiniteDistribution) -> CapitalLedger: ...


class Forecaster(Protocol):
    def announce_P(self, history: History) -> FiniteDistribution: ...

    def announce_f(self, history: History) -> PayoffFunction: ...


class Reality(Protocol):
    def announce_omega(self, history: History) -> int: ...


@dataclass
class GameState:
    mode: GameMode
    ledger: CapitalLedger
    records: list = field(default_factory=list)
    theta1: float = 0.0
    theta2: float = 0.0
    warned_gap: bool = False

    @classmethod
    def start(cls, mode: GameMode, depth: int, structured: bool) -> "GameState":
        return cls(mode, CapitalLedger.initial(mode, depth, structured))


def play_round(state: GameState, skeptic, forecaster, reality,
               rng: RandomSource) -> RoundRecord:
    """Play one round, append its record to ``state`` and return it."""
    n = len(state.records) + 1
    past = _PastView(state.records, n - 1)
    ledger = state.ledger = state.ledger.rebased()

    S = skeptic.announce_S(History(past), ledger)
    P = forecaster.announce_P(History(past, S=S))
    omega = check_outcome(reality.announce_omega(History(past, S=S, P=P)))
    seen = History(past, S=S, P=P, omega=omega)
    if state.mode is GameMode.SKEPTIC_TEST:
        f = skeptic.announce_f(seen, ledger)
    else:
        f = forecaster.announce_f(seen)

    f_mean = expectation(f, P)
    # a finite-grid minimax forecaster may declare the slack of its guarantee
    allowed = F_TOL + f.slack
    if f_mean > allowed:
        raise RestrictionViolation(
            RestrictionViolation.F_CONSTRAINT,
            f"E_P[f_n] = {f_mean!r} exceeds {allowed!r}", n)

    gap = min_gap(P)
    if not state.warned_gap and gap < 8.0 * 2.0 ** -ledger.depth:
        log.warning("support gap %.3g below 8*2^-K at round %d; deepen K", gap, n)
        state.warned_gap = True

    p = sample(P, rng)
    s_at_p = S(p)
    f_at_p = f(p)
    q_inc = s_at_p * (omega - p)

    if skeptic.structured:
        try:
            new = skeptic.settle(ledger, p, omega, P)
        except RestrictionViolation as exc:
            exc.n = n
            raise
        if state.mode is GameMode.FORECASTER_TEST:
            new = replace(new, log_f_total=_additive_update(
                ledger.log_f_total, f_at_p, ledger.log_unit_f, "F", n))
    else:
        new = ledger.add_to_totals(q_inc, f_at_p, n)
    state.ledger = new

    if p > 0.5:
        state.theta1 += omega - p
    else:
        state.theta2 += omega - p
    g = np.where(P.support <= 0.5, 1.0, -1.0) * (omega - P.support)
    s_vals = S(P.support)
    exposure = max(float(np.dot(P.weights, s_vals * (w - P.support))) for w in (0, 1))

    record = RoundRecord(
        n=n, distribution=P, omega=omega, sampled_p=p,
        s_at_p=s_at_p, f_at_p=f_at_p, q_increment=q_inc, f_increment=f_at_p,
        log_capital_Q=new.log_q_total, log_capital_F=new.log_f_total,
        log_capital_K=new.log_k_total, delta_n=gap,
        theta1=state.theta1, theta2=state.theta2,
        g_mean=float(np.dot(P.weights, g)), f_mean=f_mean, s_exposure=exposure,
        accounts=new.accounts_array(), log_unit=ledger.log_unit,
        log_unit_f=ledger.log_unit_f,
    )
    state.records.append(record)
    return record


def fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def run_game(rounds: int, skeptic, forecaster, reality, rng: RandomSource,
             mode: GameMode = GameMode.SKEPTIC_TEST, depth: int = DEFAULT_DEPTH,
             config: Optional[dict] = None, check_mirror: bool = False) -> GameTrace:
    """Play ``rounds`` rounds and return the trace.

    With ``check_mirror`` (forecaster-test mode with a mirroring f_n) every
    round also asserts that Forecaster's capital equals Skeptic's.
    On a restriction violation the partial trace rides on the exception.
    """
    if rounds < 1:
        raise ValueError("horizon must be at least one round")
    depth = getattr(skeptic, "depth", depth)
    state = GameState.start(mode, depth, skeptic.structured)
    trace = GameTrace(
        fingerprint=fingerprint(config or {}), records=state.records,
        mode=mode.value, depth=depth, log_initial=state.ledger.log_q_total,
    )
    try:
        for _ in range(rounds):
            rec = play_round(state, skeptic, forecaster, reality, rng)
            if check_mirror:
                _assert_mirror(rec)
    except RestrictionViolation as exc:
        trace.complete = False
        exc.trace = trace
        raise
    return trace


def _assert_mirror(rec: RoundRecord, rtol: float = 1e-9) -> None:
    k, f = rec.log_capital_K, rec.log_capital_F
    if k == f:
        return
    if math.isinf(k) or math.isinf(f) or abs(math.expm1(f - k)) > rtol:
        raise AssertionError(f"round {rec.n}: F_n != K_n (log {f!r} vs {k!r})")


@dataclass
class LedgerReport:
    max_log_discrepancy: float = 0.0
    flagged_rounds: list = field(default_factory=list)
    revived_accounts: list = field(default_factory=list)
    tolerance: float = 1e-9

    @property
    def ok(self) -> bool:
        return not self.flagged_rounds and not self.revived_accounts


class _Accumulator:
    """Capital rebuilt from its increments, in linear or log space.

    Both paths use Neumaier-compensated sums: of the increments themselves in
    linear space, of the log growth factors in log space.
    """

    def __init__(self, log0: float, use_log: bool):
        self.use_log = use_log
        self.total = log0 if use_log else math.exp(log0)
        self.comp = 0.0

    def _accumulate(self, x: float) -> None:
        t = self.total + x
        if abs(self.total) >= abs(x):
            self.comp += (self.total - t) + x
        else:
            self.comp += (x - t) + self.total
        self.total = t

    def add(self, inc: float, log_unit: float) -> float:
        if not self.use_log:
            # the unit is always 1 on this path
            self._accumulate(inc)
            return _log_or_neginf(self.total + self.comp)
        current = self.total + self.comp
        if inc == 0.0:
            return current
        log_inc = math.log(abs(inc)) + log_unit
        if current == -math.inf:
            if inc > 0:
                self.total, self.comp = log_inc, 0.0
            return self.total + self.comp
        lr = log_inc - current  # log |inc / capital|
        if inc < 0 and lr >= 0.0:
            self.total, self.comp = -math.inf, 0.0
            return -math.inf
        if inc > 0:
            step = math.log1p(math.exp(lr)) if lr < 30.0 else lr + math.log1p(math.exp(-lr))
        else:
            step = math.log1p(-math.exp(lr))
        self._accumulate(step)
        return self.total + self.comp


def _logdiff(x: float, y: float) -> float:
    if x == y:
        return 0.0
    if math.isinf(x) or math.isinf(y):
        # a truly dead account may show up as a tiny positive remainder on the other path
        finite = y if math.isinf(x) else x
        return 0.0 if finite < -700.0 else math.inf
    return abs(x - y)


def verify_ledger(trace: GameTrace, tol: float = 1e-9) -> LedgerReport:
    """Rebuild every capital from the per-round data and compare with the trace.

    Totals are rebuilt by summing increments (linear space when the capitals
    stay moderate, log space otherwise); per-account capitals by multiplying
    the settlement factors.  Also checks that dead accounts never revive.
    """
    report = LedgerReport(tolerance=tol)
    if not trace.records:
        return report
    mode = GameMode(trace.mode)
    logs = trace.column("log_capital_K")
    finite = logs[np.isfinite(logs)]
    use_log = (finite.size > 0 and float(np.abs(finite).max()) > 600.0) or any(
        r.log_unit != 0.0 or r.log_unit_f != 0.0 for r in trace.records)
    q_acc = _Accumulator(trace.log_initial, use_log)
    f_acc = _Accumulator(trace.log_initial, use_log)
    eps = eps_levels(trace.depth)
    log_eps = log_eps_levels(trace.depth)
    acc = None
    dead = None

    for rec in trace.records:
        worst = 0.0
        lq = q_acc.add(rec.q_increment, rec.log_unit)
        lf = f_acc.add(rec.f_increment, rec.log_unit_f)
        worst = max(worst, _logdiff(lq, rec.log_capital_Q), _logdiff(lf, rec.log_capital_F))
        lk = lq if mode is GameMode.FORECASTER_TEST else float(np.logaddexp(lq, lf))
        worst = max(worst, _logdiff(lk, rec.log_capital_K))

        if rec.accounts is not None:
            if acc is None:
                acc = np.zeros((3, trace.depth))
                acc_comp = np.zeros((3, trace.depth))
                dead = np.zeros((3, trace.depth), dtype=bool)
            p, w = rec.sampled_p, rec.omega
            hi = 1.0 if p > 0.5 else 0.0
            g = (1.0 - 2.0 * hi) * (w - p)
            moves = np.vstack([
                -eps * hi * (w - p),
                eps * (1.0 - hi) * (w - p),
                -eps * (g - rec.g_mean) if mode is GameMode.SKEPTIC_TEST
                else np.zeros_like(eps),
            ])
            with np.errstate(divide="ignore"):
                step = np.log1p(np.clip(moves, -1.0, None))
            acc, acc_comp = compensated_add(acc, acc_comp, step)
            for (i, k) in zip(*np.nonzero(dead & np.isfinite(rec.accounts))):
                report.revived_accounts.append((rec.n, int(i), int(k)))
            dead = dead | np.isneginf(rec.accounts)
            logs = acc + acc_comp
            diffs = [_logdiff(x, y) for x, y in zip(logs.ravel(), rec.accounts.ravel())]
            worst = max(worst, max(diffs))
            lq_acc = _logsumexp(log_eps - _LOG2 + np.logaddexp(logs[0], logs[1]))
            worst = max(worst, _logdiff(lq_acc, rec.log_capital_Q))

        report.max_log_discrepancy = max(report.max_log_discrepancy, worst)
        if worst > tol:
            report.flagged_rounds.append(rec.n)
    return report
