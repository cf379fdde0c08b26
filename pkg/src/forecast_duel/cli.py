"""Command-line experiment runner: single games and seed/grid-step sweeps.

Example::

    forecast-duel --rounds 100000 --forecaster uniform:0.2 --reality oakes \\
        --skeptic skeptic_t2:16 --seed 1 --trace trace.csv --summary summary.json

Set FORECAST_DUEL_LOG=INFO (or DEBUG) for progress messages on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import GameTrace, RandomSource
from .engine import GameMode, RestrictionViolation, fingerprint, run_game, verify_ledger
from .metrics import (
    HIGH_CELL,
    LOW_CELL,
    TRAILING_WINDOW,
    Diagnostics,
    calibration_ratio,
    corollary_statistic,
    drift_check,
    growth_summary,
)
from .plotting import write_capital_chart
from .strategies import (
    MinimaxForecaster,
    SlackNotMet,
    parse_forecaster,
    parse_reality,
    parse_skeptic,
)

log = logging.getLogger("forecast_duel")

TRACE_COLUMNS = (
    "n", "omega", "p_sampled", "support_size", "delta_n", "s_at_p", "f_at_p",
    "theta1", "theta2", "g_sum", "g_drift", "log_Q", "log_F", "log_K",
)
AGGREGATE_COLUMNS = (
    "cell", "delta", "seed", "status", "final_log_K", "corollary_statistic",
    "max_drift_violation",
)
REALITY_STREAM = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GameConfig:
    rounds: int
    seed: int = 0
    mode: str = GameMode.SKEPTIC_TEST.value
    forecaster: str = "uniform:0.2"
    reality: str = "oakes"
    skeptic: str = "skeptic_t2:16"
    record_every: int = 1
    trace: Optional[str] = None
    summary: Optional[str] = None
    svg: Optional[str] = None

    def validate(self) -> "GameConfig":
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.record_every < 1:
            raise ConfigError("record_every must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        try:
            GameMode(self.mode)
            parse_forecaster(self.forecaster)
            parse_skeptic(self.skeptic)
            parse_reality(self.reality, RandomSource(self.seed))
        except (ValueError, OSError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def game_fields(self) -> dict:
        """The fields that determine the game (output paths excluded)."""
        d = asdict(self)
        for key in ("record_every", "trace", "summary", "svg"):
            d.pop(key)
        return d


def build_players(config: GameConfig):
    rng = RandomSource(config.seed)
    skeptic = parse_skeptic(config.skeptic)
    forecaster = parse_forecaster(config.forecaster)
    reality = parse_reality(config.reality, rng.derive(REALITY_STREAM))
    return skeptic, forecaster, reality, rng


def play(config: GameConfig) -> GameTrace:
    config.validate()
    skeptic, forecaster, reality, rng = build_players(config)
    mode = GameMode(config.mode)
    mirror = mode is GameMode.FORECASTER_TEST and isinstance(forecaster, MinimaxForecaster)
    log.info("playing %d rounds: %s", config.rounds, config.game_fields())
    return run_game(config.rounds, skeptic, forecaster, reality, rng, mode=mode,
                    config=config.game_fields(), check_mirror=mirror)


def _json_safe(x):
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else ("-inf" if x < 0 else "inf" if x > 0 else "nan")
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def summarize(trace: GameTrace, config: GameConfig,
              diag: Optional[Diagnostics] = None) -> dict:
    """Summary statistics, always from the full in-memory trace."""
    d = diag or Diagnostics(trace)
    n = len(trace)
    ledger = verify_ledger(trace)
    drift = drift_check(trace)
    recs = trace.records
    f_means = np.array([r.f_mean for r in recs])
    exposures = np.array([r.s_exposure for r in recs])
    rounds = np.arange(1, n + 1, dtype=float)
    accounts = [r.accounts for r in recs if r.accounts is not None]
    dead = int(np.isneginf(accounts[-1]).sum()) if accounts else 0
    scaled = np.maximum(np.abs(d.theta1), np.abs(d.theta2)) / d.n
    out = {
        "config": config.game_fields(),
        "fingerprint": trace.fingerprint,
        "rounds": n,
        "final": asdict(d.row(n)),
        "final_log_K": float(d.log_K[-1]),
        "sup_log_K": float(d.log_K.max()),
        "calibration_ratio": {
            str(LOW_CELL): calibration_ratio(trace, LOW_CELL),
            str(HIGH_CELL): calibration_ratio(trace, HIGH_CELL),
        },
        "corollary_statistic": corollary_statistic(trace, diag=d),
        "corollary_statistic_final": float(scaled[-1]),
        "corollary_bound": 0.25 * float(d.delta_running[-1]),
        "growth": growth_summary(trace, diag=d),
        "drift": asdict(drift),
        "restriction": {
            "max_f_expectation": float(f_means.max()),
            "max_exposure": float(exposures.max()),
            "max_exposure_times_n2": float((exposures * rounds ** 2).max()),
        },
        "ledger": {
            "max_log_discrepancy": ledger.max_log_discrepancy,
            "flagged_rounds": ledger.flagged_rounds[:20],
            "revived_accounts": len(ledger.revived_accounts),
            "dead_accounts_final": dead,
            "ok": ledger.ok,
        },
        "trailing_window": TRAILING_WINDOW,
    }
    return _json_safe(out)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_trace_csv(trace: GameTrace, path, record_every: int = 1,
                    diag: Optional[Diagnostics] = None) -> None:
    d = diag or Diagnostics(trace)
    n_total = len(trace)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for i, rec in enumerate(trace.records):
            if rec.n % record_every and rec.n != n_total:
                continue
            writer.writerow([
                rec.n, rec.omega, _fmt(rec.sampled_p), len(rec.distribution),
                _fmt(rec.delta_n), _fmt(rec.s_at_p), _fmt(rec.f_at_p),
                _fmt(rec.theta1), _fmt(rec.theta2), _fmt(d.g_sum[i]), _fmt(d.g_drift[i]),
                _fmt(rec.log_capital_Q), _fmt(rec.log_capital_F), _fmt(rec.log_capital_K),
            ])


def _error_payload(exc: BaseException) -> dict:
    if isinstance(exc, RestrictionViolation):
        return {"error": "RestrictionViolation", "kind": exc.kind, "round": exc.n,
                "message": str(exc)}
    if isinstance(exc, SlackNotMet):
        return {"error": "SlackNotMet", "round": exc.n, "value": exc.value,
                "slack": exc.slack, "message": str(exc)}
    return {"error": type(exc).__name__, "message": str(exc)}


def execute(config: GameConfig) -> dict:
    """Play one configured game, write its outputs and return the summary."""
    trace = play(config)
    diag = Diagnostics(trace)
    summary = summarize(trace, config, diag)
    if config.trace:
        write_trace_csv(trace, config.trace, config.record_every, diag)
    if config.summary:
        Path(config.summary).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if config.svg:
        write_capital_chart(config.svg, diag.n, diag.log_K, diag.theta1, diag.theta2)
    return summary


def run(config: GameConfig) -> int:
    """Single game; 0 on success, 1 on a rule violation, 2 on a bad config."""
    try:
        execute(config)
    except ValueError as exc:
        # includes player combinations that only fail once play starts,
        # such as the deterministic Oakes rule facing a randomised forecast
        print(json.dumps(_error_payload(exc)), file=sys.stderr)
        return 2
    except (RestrictionViolation, SlackNotMet) as exc:
        payload = _error_payload(exc)
        print(json.dumps(payload), file=sys.stderr)
        if config.summary:
            Path(config.summary).write_text(json.dumps(payload, indent=2) + "\n")
        return 1
    return 0


def with_delta(forecaster: str, delta: float) -> str:
    name = forecaster.partition(":")[0]
    if name not in ("uniform", "kf"):
        raise ConfigError(f"cannot sweep the grid step of forecaster {forecaster!r}")
    return f"{name}:{delta!r}"


def sweep_cells(base: GameConfig, deltas: Sequence[float] = (),
                seeds: Sequence[int] = ()) -> list[GameConfig]:
    """One config per axis value.

    A grid-step sweep keeps the base seed and gives cell i the seed
    ``base.seed ^ i``; a seed sweep uses the listed seeds as given.
    """
    if bool(deltas) == bool(seeds):
        raise ConfigError("sweep exactly one axis: grid steps or seeds")
    cells = []
    if deltas:
        for i, delta in enumerate(deltas):
            cells.append(replace(base, forecaster=with_delta(base.forecaster, float(delta)),
                                 seed=base.seed ^ i))
    else:
        for s in seeds:
            cells.append(replace(base, seed=int(s)))
    return cells


def _run_cell(args) -> dict:
    index, config = args
    try:
        summary = execute(config)
        summary["status"] = "ok"
    except Exception as exc:  # per-cell failures are recorded, not fatal
        summary = {"status": "failed", **_error_payload(exc)}
        if config.summary:
            Path(config.summary).write_text(json.dumps(summary, indent=2) + "\n")
    summary["cell"] = index
    return summary


def _cell_delta(config: GameConfig):
    name, _, arg = config.forecaster.partition(":")
    return float(arg) if name in ("uniform", "kf") and arg else ""


def sweep(base: GameConfig, deltas: Sequence[float] = (), seeds: Sequence[int] = (),
          jobs: int = 1, out_dir="sweep") -> int:
    """Run independent games concurrently and write one summary per cell plus
    an aggregate CSV.  Returns nonzero if any cell failed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    for i, cfg in enumerate(sweep_cells(base, deltas, seeds)):
        cells.append(replace(
            cfg,
            summary=str(out / f"cell{i:03d}_summary.json"),
            trace=str(out / f"cell{i:03d}_trace.csv") if base.trace else None,
            svg=str(out / f"cell{i:03d}.svg") if base.svg else None,
        ))
    for cfg in cells:
        cfg.validate()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, enumerate(cells)))
    else:
        results = [_run_cell(item) for item in enumerate(cells)]

    failed = 0
    with open(out / "aggregate.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_COLUMNS)
        for cfg, res in zip(cells, results):
            ok = res["status"] == "ok"
            failed += not ok
            margin = res["drift"]["min_margin"] if ok else None
            writer.writerow([
                res["cell"], _cell_delta(cfg), cfg.seed, res["status"],
                _fmt(res["final_log_K"]) if ok else "",
                _fmt(res["corollary_statistic"]) if ok else "",
                _fmt(max(0.0, -float(margin))) if ok else "",
            ])
    return 1 if failed else 0


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _int_list(text: str) -> list[int]:
    out = []
    for tok in text.replace(",", " ").split():
        if ".." in tok:
            lo, hi = tok.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(tok))
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="forecast-duel",
        description="Play the binary forecasting game with pluggable players.")
    ap.add_argument("--rounds", type=int, required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--mode", choices=[m.value for m in GameMode],
                    default=GameMode.SKEPTIC_TEST.value)
    ap.add_argument("--forecaster", default="uniform:0.2",
                    help="point[:q] | uniform:<step> | kf:<step> | minimax[:<slack0>]")
    ap.add_argument("--reality", default="oakes",
                    help="oakes | oakes2 | bernoulli:<q> | replay:<file>")
    ap.add_argument("--skeptic", default="skeptic_t2:16",
                    help="skeptic_t2[:<K>] | skeptic_zero")
    ap.add_argument("--record-every", type=int, default=1)
    ap.add_argument("--trace", help="trace CSV path")
    ap.add_argument("--summary", help="summary JSON path")
    ap.add_argument("--svg", help="SVG chart path")
    ap.add_argument("--sweep-delta", type=_float_list, help="grid steps, e.g. 0.05,0.1,0.2")
    ap.add_argument("--sweep-seed", type=_int_list, help="seeds, e.g. 1,2,3 or 1..5")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out-dir", default="sweep", help="sweep output directory")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("FORECAST_DUEL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    config = GameConfig(
        rounds=args.rounds, seed=args.seed, mode=args.mode, forecaster=args.forecaster,
        reality=args.reality, skeptic=args.skeptic, record_every=args.record_every,
        trace=args.trace, summary=args.summary, svg=args.svg,
    )
    if args.sweep_delta is not None or args.sweep_seed is not None:
        deltas, seeds = args.sweep_delta or [], args.sweep_seed or []
        try:
            return sweep(config, deltas, seeds, jobs=args.jobs, out_dir=args.out_dir)
        except ConfigError as exc:
            print(json.dumps(_error_payload(exc)), file=sys.stderr)
            return 2
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
