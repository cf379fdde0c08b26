import dataclasses
import math

import numpy as np
import pytest

from forecast_duel.core import FiniteDistribution, PayoffFunction, RandomSource
from forecast_duel.engine import (
    UNIT_WINDOW,
    CapitalLedger,
    GameMode,
    GameState,
    RestrictionViolation,
    play_round,
    run_game,
    verify_ledger,
)
from forecast_duel.strategies import (
    MinimaxForecaster,
    OakesReality,
    PointForecaster,
    ReplayReality,
    RoundingForecaster,
    TheoremTwoSkeptic,
    ZeroSkeptic,
)

TWO = FiniteDistribution([0.4, 0.6], [0.5, 0.5])


class FixedDraw:
    def __init__(self, *draws):
        self.draws = list(draws)

    def uniform(self):
        return self.draws.pop(0)


class FixedForecaster:
    def __init__(self, dist, f=None):
        self.dist = dist
        self.f = f or PayoffFunction.zero()

    def announce_P(self, history):
        return self.dist

    def announce_f(self, history):
        return self.f


class ConstantSkeptic(ZeroSkeptic):
    def __init__(self, s):
        self.s = s

    def announce_S(self, history, ledger):
        return PayoffFunction.constant(self.s)


class Fixed:
    def __init__(self, omega):
        self.omega = omega

    def announce_omega(self, history):
        return self.omega


def test_zero_bets_leave_capital_unchanged():
    state = GameState.start(GameMode.SKEPTIC_TEST, 16, structured=False)
    before = state.ledger
    rec = play_round(state, ZeroSkeptic(), FixedForecaster(TWO), Fixed(1), RandomSource(0))
    assert rec.q_increment == 0.0 and rec.f_increment == 0.0
    assert rec.log_capital_Q == before.log_q_total
    assert rec.log_capital_K == before.log_k_total


def test_unit_bet_increment():
    state = GameState.start(GameMode.SKEPTIC_TEST, 16, structured=False)
    rec = play_round(state, ConstantSkeptic(1.0), FixedForecaster(FiniteDistribution.point_mass(0.5)),
                     Fixed(1), RandomSource(0))
    assert rec.q_increment == 0.5
    q0 = 1 - 2.0 ** -16
    assert math.exp(rec.log_capital_Q) == pytest.approx(q0 + 0.5, rel=1e-15)


def test_theorem_two_first_round():
    state = GameState.start(GameMode.SKEPTIC_TEST, 16, structured=True)
    rec = play_round(state, TheoremTwoSkeptic(16), FixedForecaster(TWO), Fixed(1), FixedDraw(0.2))
    c = (1 - 4.0 ** -16) / 3
    assert rec.sampled_p == 0.4
    assert rec.f_at_p == pytest.approx(-c * 0.5, rel=1e-13)
    assert rec.f_at_p == pytest.approx(-0.1666667, abs=1e-7)
    assert abs(rec.f_mean) <= 1e-15
    assert rec.q_increment == rec.s_at_p * (rec.omega - rec.sampled_p)


class Spy:
    """Records the history each player saw when it moved."""

    def __init__(self, log):
        self.log = log

    def seen(self, who, history):
        self.log.append((who, len(history.past), history.S is not None,
                         history.P is not None, history.omega is not None))


class SpySkeptic(ZeroSkeptic, Spy):
    def __init__(self, log):
        Spy.__init__(self, log)

    def announce_S(self, history, ledger):
        self.seen("S", history)
        return PayoffFunction.zero()

    def announce_f(self, history, ledger):
        self.seen("f", history)
        return PayoffFunction.zero()


class SpyForecaster(Spy):
    def announce_P(self, history):
        self.seen("P", history)
        return TWO

    def announce_f(self, history):
        self.seen("f", history)
        return PayoffFunction.zero()


class SpyReality(Spy):
    def announce_omega(self, history):
        self.seen("omega", history)
        return 1


@pytest.mark.parametrize("mode", list(GameMode))
def test_protocol_order(mode):
    log = []
    run_game(3, SpySkeptic(log), SpyForecaster(log), SpyReality(log), RandomSource(1), mode=mode)
    assert [entry[0] for entry in log] == ["S", "P", "omega", "f"] * 3
    for i, (who, past, S, P, omega) in enumerate(log):
        assert past == i // 4
        assert (S, P, omega) == {
            "S": (False, False, False),
            "P": (True, False, False),
            "omega": (True, True, False),
            "f": (True, True, True),
        }[who]


def test_f_announcer_depends_on_mode():
    calls = []

    class Sk(ZeroSkeptic):
        def announce_f(self, history, ledger):
            calls.append("skeptic")
            return PayoffFunction.zero()

    class Fc(FixedForecaster):
        def announce_f(self, history):
            calls.append("forecaster")
            return PayoffFunction.zero()

    run_game(1, Sk(), Fc(TWO), Fixed(0), RandomSource(0), mode=GameMode.SKEPTIC_TEST)
    run_game(1, Sk(), Fc(TWO), Fixed(0), RandomSource(0), mode=GameMode.FORECASTER_TEST)
    assert calls == ["skeptic", "forecaster"]


def test_horizon_must_be_positive():
    with pytest.raises(ValueError):
        run_game(0, ZeroSkeptic(), PointForecaster(), OakesReality(), RandomSource(0))


def test_three_zero_rounds():
    trace = run_game(3, ZeroSkeptic(), PointForecaster(), OakesReality(), RandomSource(0))
    assert [r.n for r in trace.records] == [1, 2, 3]
    assert len(set(r.log_capital_K for r in trace.records)) == 1
    rep = verify_ledger(trace)
    assert rep.max_log_discrepancy == 0.0 and rep.ok


def test_f_constraint_violation_carries_partial_trace():
    bad = FixedForecaster(TWO, PayoffFunction(lambda p: np.full(p.shape, 1e-6)))
    with pytest.raises(RestrictionViolation) as exc:
        run_game(5, ZeroSkeptic(), bad, Fixed(1), RandomSource(0), mode=GameMode.FORECASTER_TEST)
    assert exc.value.kind == RestrictionViolation.F_CONSTRAINT
    assert exc.value.n == 1
    assert exc.value.trace.complete is False and len(exc.value.trace) == 0


def test_tolerance_admits_rounding():
    ok = FixedForecaster(TWO, PayoffFunction(lambda p: np.full(p.shape, 5e-10)))
    trace = run_game(2, ZeroSkeptic(), ok, Fixed(1), RandomSource(0), mode=GameMode.FORECASTER_TEST)
    assert len(trace) == 2


def test_negative_capital_violation():
    # betting 10 on omega = 0 against p = 0.5 loses 5 > initial capital
    with pytest.raises(RestrictionViolation) as exc:
        run_game(3, ConstantSkeptic(10.0), FixedForecaster(FiniteDistribution.point_mass(0.5)),
                 Fixed(0), RandomSource(0))
    assert exc.value.kind == RestrictionViolation.NEGATIVE_CAPITAL
    assert exc.value.n == 1


def test_capital_can_hit_exactly_zero():
    q0 = 1 - 2.0 ** -16
    trace = run_game(1, ConstantSkeptic(2 * q0), FixedForecaster(FiniteDistribution.point_mass(0.5)),
                     Fixed(0), RandomSource(0), mode=GameMode.FORECASTER_TEST)
    assert trace.records[0].log_capital_Q == -math.inf


def test_capital_split_and_restriction_in_theorem_two_run():
    trace = run_game(3000, TheoremTwoSkeptic(16), RoundingForecaster(0.2), OakesReality(),
                     RandomSource(12))
    for r in trace.records:
        K = math.exp(r.log_capital_K)
        assert abs(K - math.exp(r.log_capital_Q) - math.exp(r.log_capital_F)) <= 1e-9 * K
        assert r.f_mean <= 1e-9
        assert not np.isnan(r.accounts).any()
    rep = verify_ledger(trace)
    assert rep.ok and rep.max_log_discrepancy <= 1e-9


def test_mirror_identity_forecaster_mode():
    trace = run_game(100, TheoremTwoSkeptic(16), MinimaxForecaster(1.0), OakesReality(),
                     RandomSource(4), mode=GameMode.FORECASTER_TEST, check_mirror=True)
    for r in trace.records:
        assert r.f_at_p == pytest.approx(r.q_increment, abs=1e-15)
        assert abs(math.expm1(r.log_capital_F - r.log_capital_K)) <= 1e-12
    assert verify_ledger(trace).ok


def test_corrupted_record_is_flagged():
    trace = run_game(200, TheoremTwoSkeptic(8), RoundingForecaster(0.2), OakesReality(),
                     RandomSource(3))
    assert verify_ledger(trace).ok
    bad = trace.records[57]
    trace.records[57] = dataclasses.replace(bad, q_increment=bad.q_increment + 1e-3)
    rep = verify_ledger(trace)
    assert 58 in rep.flagged_rounds


def test_revived_account_is_reported():
    trace = run_game(20, TheoremTwoSkeptic(4), RoundingForecaster(0.2), OakesReality(),
                     RandomSource(3))
    acc = trace.records[4].accounts.copy()
    acc[2, 0] = -math.inf
    trace.records[4] = dataclasses.replace(trace.records[4], accounts=acc)
    rep = verify_ledger(trace)
    assert rep.revived_accounts and rep.revived_accounts[0][:3] == (6, 2, 0)
    assert not rep.ok


def test_unit_rebasing_keeps_quotes_small():
    led = CapitalLedger.initial(GameMode.SKEPTIC_TEST, 4, structured=True)
    grown = led.multiply_accounts(np.full((3, 4), UNIT_WINDOW[1] + 5.0))
    assert grown.rebased().log_unit == math.floor(grown.log_q_total)
    assert grown.rebased().log_unit_f == math.floor(grown.log_f_total)
    assert led.rebased() is led
    # Q grows while F shrinks: each side gets its own unit
    split = led.multiply_accounts(np.vstack([np.full((2, 4), 50.0), np.full((1, 4), -400.0)]))
    assert split.rebased().log_unit > 0 > split.rebased().log_unit_f
    mirror = CapitalLedger.initial(GameMode.FORECASTER_TEST, 4, structured=True)
    mirror = mirror.multiply_accounts(np.full((3, 4), 50.0)).rebased()
    assert mirror.log_unit == mirror.log_unit_f > 0


def test_long_run_uses_units_and_verifies():
    # fast growth: a deterministic rounding grid with a very coarse step
    trace = run_game(4000, TheoremTwoSkeptic(8), RoundingForecaster(0.5), OakesReality(),
                     RandomSource(9))
    assert max(r.log_unit for r in trace.records) > 0
    rep = verify_ledger(trace)
    assert rep.ok, rep.max_log_discrepancy


def test_replay_reality_game():
    trace = run_game(4, ZeroSkeptic(), PointForecaster(), ReplayReality([1, 0]), RandomSource(0))
    assert [r.omega for r in trace.records] == [1, 0, 1, 0]
