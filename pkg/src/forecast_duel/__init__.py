"""Simulator for a binary forecasting game between a Skeptic, a Forecaster,
Reality and a random number generator, with randomised forecasts."""
from .core import (
    FiniteDistribution,
    GameTrace,
    PayoffFunction,
    RandomSource,
    RoundRecord,
    expectation,
    min_gap,
    sample,
)
from .engine import (
    CapitalLedger,
    GameMode,
    History,
    RestrictionViolation,
    run_game,
    verify_ledger,
)
from .metrics import (
    Diagnostics,
    IntervalSelector,
    calibration_ratio,
    corollary_statistic,
    drift_check,
    growth_summary,
    kf_error,
    theta,
)
from .minimax import TwoByMGame, reality_value_oracle, solve_2xM
from .strategies import (
    MinimaxForecaster,
    OakesReality,
    PointForecaster,
    RoundingForecaster,
    SlackNotMet,
    TheoremTwoSkeptic,
    ZeroSkeptic,
    forecaster_minimax,
    forecaster_uniform_round,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
