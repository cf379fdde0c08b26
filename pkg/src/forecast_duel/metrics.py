"""Calibration statistics and theorem diagnostics computed from game traces.

"limsup" quantities are finite-horizon surrogates: the maximum of the
running statistic over a trailing window of the trace (default the last
10% of rounds).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import FiniteDistribution, GameTrace
from .engine import eps_levels

TRAILING_WINDOW = 0.1


@dataclass(frozen=True)
class IntervalSelector:
    lower: float
    upper: float
    lower_closed: bool = True
    upper_closed: bool = True

    def __post_init__(self):
        if not 0.0 <= self.lower <= self.upper <= 1.0:
            raise ValueError("interval must be a subinterval of [0, 1]")

    @classmethod
    def parse(cls, text: str) -> "IntervalSelector":
        """Read interval notation such as ``[0, 0.5)`` or ``(0.5,1]``."""
        text = text.strip()
        if len(text) < 5 or text[0] not in "[(" or text[-1] not in ")]":
            raise ValueError(f"not an interval: {text!r}")
        lo, hi = (float(x) for x in text[1:-1].split(","))
        return cls(lo, hi, text[0] == "[", text[-1] == "]")

    def __call__(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        above = p >= self.lower if self.lower_closed else p > self.lower
        below = p <= self.upper if self.upper_closed else p < self.upper
        return above & below

    def __str__(self) -> str:
        return (f"{'[' if self.lower_closed else '('}{self.lower:g}, "
                f"{self.upper:g}{']' if self.upper_closed else ')'}")


LOW_CELL = IntervalSelector(0.0, 0.5, True, False)  # [0, 0.5)
HIGH_CELL = IntervalSelector(0.5, 1.0, True, True)  # [0.5, 1]


def _forecasts(trace: GameTrace, n: Optional[int]) -> tuple[np.ndarray, np.ndarray]:
    n = len(trace) if n is None else n
    if not 0 <= n <= len(trace):
        raise ValueError(f"n={n} outside the trace (length {len(trace)})")
    recs = trace.records[:n]
    p = np.fromiter((r.sampled_p for r in recs), float, n)
    w = np.fromiter((r.omega for r in recs), float, n)
    return p, w


def calibration_ratio(trace: GameTrace, interval: IntervalSelector,
                      n: Optional[int] = None) -> Optional[float]:
    """Selected mean deviation sum I(p_i)(w_i - p_i) / sum I(p_i); None if nothing selected."""
    p, w = _forecasts(trace, n)
    sel = interval(p)
    count = int(sel.sum())
    if count == 0:
        return None
    return float((w[sel] - p[sel]).sum() / count)


def kf_error(trace: GameTrace, interval: IntervalSelector, n: Optional[int] = None) -> float:
    """|sum I(p_i)(w_i - p_i)| / n, the per-round normalisation."""
    p, w = _forecasts(trace, n)
    if p.size == 0:
        raise ValueError("kf_error needs n >= 1")
    sel = interval(p)
    return float(abs((w[sel] - p[sel]).sum()) / p.size)


def theta(trace: GameTrace, n: Optional[int] = None) -> tuple[float, float]:
    """Signed forecast errors summed over p > 0.5 and over p <= 0.5."""
    p, w = _forecasts(trace, n)
    hi = p > 0.5
    return float((w[hi] - p[hi]).sum()), float((w[~hi] - p[~hi]).sum())


def p_plus_minus(dist: FiniteDistribution) -> tuple[float, float]:
    """Nearest support points on either side of 0.5, padded with 0 and 1."""
    s = dist.support
    low = s[s <= 0.5]
    high = s[s > 0.5]
    return (float(low[-1]) if low.size else 0.0, float(high[0]) if high.size else 1.0)


def g_value(p, omega: int):
    p = np.asarray(p, dtype=float)
    out = np.where(p <= 0.5, 1.0, -1.0) * (omega - p)
    return float(out) if out.ndim == 0 else out


def expected_g(dist: FiniteDistribution, omega: int) -> float:
    return float(np.dot(dist.weights, g_value(dist.support, omega)))


@dataclass
class DriftReport:
    rounds: int
    violations: int
    first_violation: Optional[int]
    min_margin: float  # min over rounds of E_P(g) - 0.5 (p+ - p-)

    @property
    def ok(self) -> bool:
        return self.violations == 0


def drift_check(trace: GameTrace, n: Optional[int] = None, tol: float = 1e-12) -> DriftReport:
    """Check E_P(g_j) >= 0.5 (p_j+ - p_j-) round by round."""
    n = len(trace) if n is None else n
    violations, first, margin = 0, None, math.inf
    for rec in trace.records[:n]:
        lo, hi = p_plus_minus(rec.distribution)
        m = expected_g(rec.distribution, rec.omega) - 0.5 * (hi - lo)
        margin = min(margin, m)
        if m < -tol:
            violations += 1
            if first is None:
                first = rec.n
    return DriftReport(n, violations, first, margin)


def running_sum(values) -> np.ndarray:
    """Cumulative sum with Neumaier compensation, so that long running sums
    stay within a few ulps of the exact prefix sums."""
    out = np.empty(len(values))
    total = comp = 0.0
    for i, x in enumerate(np.asarray(values, dtype=float).tolist()):
        t = total + x
        if abs(total) >= abs(x):
            comp += (total - t) + x
        else:
            comp += (x - t) + total
        total = t
        out[i] = total + comp
    return out


@dataclass(frozen=True)
class DiagnosticsRow:
    n: int
    theta1: float
    theta2: float
    g_sum: float
    g_drift: float
    half_gap_sum: float
    log_growth: float
    delta_running: float


class Diagnostics:
    """Running per-round statistics for a whole trace, stored column-wise."""

    def __init__(self, trace: GameTrace):
        recs = trace.records
        m = len(recs)
        p, w = _forecasts(trace, None)
        hi = p > 0.5
        self.n = np.arange(1, m + 1)
        self.theta1 = running_sum(np.where(hi, w - p, 0.0))
        self.theta2 = running_sum(np.where(hi, 0.0, w - p))
        self.g_sum = running_sum(np.where(hi, -1.0, 1.0) * (w - p))
        self.g_drift = running_sum([expected_g(r.distribution, r.omega) for r in recs])
        gaps = np.array([hi - lo for lo, hi in (p_plus_minus(r.distribution) for r in recs)])
        self.half_gap_sum = running_sum(0.5 * gaps)
        self.log_K = np.array([r.log_capital_K for r in recs])
        self.log_growth = self.log_K / np.maximum(self.n, 1)
        delta = np.array([r.delta_n for r in recs])
        self.delta_running = np.minimum.accumulate(delta) if m else delta

    def __len__(self) -> int:
        return self.n.size

    def row(self, n: int) -> DiagnosticsRow:
        i = n - 1
        return DiagnosticsRow(
            n=n, theta1=float(self.theta1[i]), theta2=float(self.theta2[i]),
            g_sum=float(self.g_sum[i]), g_drift=float(self.g_drift[i]),
            half_gap_sum=float(self.half_gap_sum[i]), log_growth=float(self.log_growth[i]),
            delta_running=float(self.delta_running[i]),
        )


def trailing_max(values: np.ndarray, window: float = TRAILING_WINDOW) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return math.nan
    start = min(int(math.floor(values.size * (1.0 - window))), values.size - 1)
    return float(values[start:].max())


def corollary_statistic(trace: GameTrace, window: float = TRAILING_WINDOW,
                        diag: Optional[Diagnostics] = None) -> float:
    """Trailing-window max of max_i |theta_{n,i}| / n."""
    d = diag or Diagnostics(trace)
    scaled = np.maximum(np.abs(d.theta1), np.abs(d.theta2)) / d.n
    return trailing_max(scaled, window)


def growth_summary(trace: GameTrace, window: float = TRAILING_WINDOW,
                   diag: Optional[Diagnostics] = None) -> dict:
    """Per-stake-level growth of the betting accounts against the rate bound.

    For each k the rate is (log Q1_k + log Q2_k) / n, compared with
    0.5 eps_k Delta - 2 eps_k**2 where Delta is the running discreteness.
    The bound relies on ln(1 + r) >= r - r**2 for |r| <= 1/2, so k = 1 is
    reported but flagged ``bound_applies=False``.
    """
    d = diag or Diagnostics(trace)
    out = {
        "rounds": len(trace),
        "log_K_final": float(d.log_K[-1]) if len(d) else math.nan,
        "log_K_initial": float(np.logaddexp(trace.log_initial, trace.log_initial))
        if trace.mode == "skeptic-test" else trace.log_initial,
        "log_K_trailing_max": trailing_max(d.log_K, window),
        "log_growth_final": float(d.log_growth[-1]) if len(d) else math.nan,
        "levels": [],
    }
    accounts = [r.accounts for r in trace.records]
    if not accounts or accounts[-1] is None:
        return out
    n = len(trace)
    stack = np.stack(accounts)  # (n, 3, K)
    delta_hat = float(d.delta_running[-1])
    eps = eps_levels(trace.depth)
    q_logs = stack[:, 0, :] + stack[:, 1, :]
    rates = q_logs / d.n[:, None]
    final = stack[-1]
    with np.errstate(divide="ignore"):
        shares = np.log(eps) - math.log(2.0) + np.logaddexp(final[0], final[1])
    shares = np.exp(shares - float(np.logaddexp.reduce(shares)))
    for k in range(trace.depth):
        bound = 0.5 * eps[k] * delta_hat - 2.0 * eps[k] ** 2 if math.isfinite(delta_hat) \
            else math.nan
        out["levels"].append({
            "k": k + 1,
            "eps": float(eps[k]),
            "rate": float(rates[-1, k]),
            "rate_trailing_max": trailing_max(rates[:, k], window),
            "bound": bound,
            "bound_applies": k >= 1,
            "meets_bound": bool(trailing_max(rates[:, k], window) >= bound)
            if math.isfinite(bound) else None,
            "capital_share": float(shares[k]),
            "log_Q1": float(final[0, k]),
            "log_Q2": float(final[1, k]),
            "log_F": float(final[2, k]),
        })
    out["delta_running"] = delta_hat
    return out
