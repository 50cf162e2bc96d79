"""Unit and property tests for the repeated discrete duopoly model."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stackgame.discrete import (
    DuopolyParams,
    best_reply_follower,
    brute_force_oracle,
    discount_schedule,
    min_k_discrete,
    one_shot_defection,
    one_shot_equilibrium,
    theorem1_condition,
)
from stackgame.errors import ParameterError


@st.composite
def valid_params(draw):
    a = draw(st.floats(1.0, 50.0))
    b = draw(st.floats(0.1, 5.0))
    c0 = draw(st.floats(0.0, a / 4.0))
    # Keep both equilibrium outputs strictly positive: c0 <= c1 <= (a + 2 c0)/3.
    hi = (a + 2.0 * c0) / 3.0
    c1 = draw(st.floats(c0, hi))
    return DuopolyParams(a=a, b=b, c0=c0, c1=c1)


class TestOneShot:
    def test_benchmark_equilibrium(self, duopoly):
        eq = one_shot_equilibrium(duopoly)
        assert abs(eq.u0 - 5.0) < 1e-14
        assert abs(eq.u1 - 1.5) < 1e-14
        assert abs(eq.J0 - 12.5) < 1e-14
        assert abs(eq.J1 - 2.25) < 1e-14
        assert not eq.boundary

    def test_benchmark_defection(self, duopoly):
        u0_hat, j_hat, gain = one_shot_defection(duopoly)
        assert abs(u0_hat - 3.75) < 1e-14
        assert abs(j_hat - 14.0625) < 1e-14
        assert abs(gain - 1.5625) < 1e-14

    def test_best_reply_is_consistent_with_equilibrium(self, duopoly):
        eq = one_shot_equilibrium(duopoly)
        assert abs(best_reply_follower(duopoly, eq.u0) - eq.u1) < 1e-14

    def test_best_reply_floors_at_zero(self, duopoly):
        assert best_reply_follower(duopoly, 100.0) == 0.0

    def test_best_reply_rejects_negative_output(self, duopoly):
        with pytest.raises(ParameterError):
            best_reply_follower(duopoly, -1.0)

    @settings(max_examples=60, deadline=None)
    @given(valid_params())
    def test_payoff_ratios_are_exact(self, p):
        eq = one_shot_equilibrium(p)
        _, j_hat, gain = one_shot_defection(p)
        if gain <= 1e-12:
            return
        assert abs(j_hat / gain - 9.0) < 1e-9
        assert abs(eq.J0 / gain - 8.0) < 1e-9

    @settings(max_examples=25, deadline=None)
    @given(valid_params())
    def test_defection_never_loses_money(self, p):
        eq = one_shot_equilibrium(p)
        _, j_hat, gain = one_shot_defection(p)
        assert j_hat >= eq.J0 - 1e-12
        assert abs((j_hat - eq.J0) - gain) < 1e-9 * (1.0 + abs(gain))


class TestOracle:
    def test_equilibrium_grid_search_agrees(self, duopoly):
        eq = one_shot_equilibrium(duopoly)
        oracle = brute_force_oracle(duopoly, grid_resolution=10**5)
        assert abs(oracle.u0 - eq.u0) < 1e-4
        assert abs(oracle.J0 - eq.J0) < 1e-6

    def test_defection_grid_search_agrees(self, duopoly):
        u0_hat, j_hat, _ = one_shot_defection(duopoly)
        oracle = brute_force_oracle(duopoly, grid_resolution=10**5, mode="defection")
        assert abs(oracle.u0 - u0_hat) < 1e-4
        assert abs(oracle.J0 - j_hat) < 1e-6

    def test_rejects_tiny_grids_and_bad_modes(self, duopoly):
        with pytest.raises(ParameterError):
            brute_force_oracle(duopoly, grid_resolution=10)
        with pytest.raises(ParameterError):
            brute_force_oracle(duopoly, mode="nonsense")


class TestDiscountSchedule:
    def test_closed_form_factors(self, duopoly):
        k, m, N = 0.1, 3, 8
        sched = discount_schedule(duopoly, k, m, N)
        x = k * duopoly.defection_gain
        for n in range(1, N + 1):
            expected = 1.0 if n < m else (1.0 - x) ** (n - m)
            assert abs(sched.rho[n - 1] - expected) < 1e-14

    def test_ledger_totals_match_direct_sum(self, duopoly):
        sched = discount_schedule(duopoly, 0.2, 4, 10)
        eq = one_shot_equilibrium(duopoly)
        _, j_hat, _ = one_shot_defection(duopoly)
        direct = 3 * eq.J0 + sum(sched.rho[3:] * j_hat)
        assert abs(sched.total - direct) < 1e-10
        assert not sched.deposit_forfeited

    def test_last_period_defection_is_payoff_neutral(self, duopoly):
        N = 6
        eq = one_shot_equilibrium(duopoly)
        sched = discount_schedule(duopoly, 0.3, N, N)
        assert sched.deposit_forfeited
        # (N-1) honest periods + defection payoff - forfeited deposit = N J0*.
        assert abs(sched.total - N * eq.J0) < 1e-10

    def test_rejects_out_of_range_inputs(self, duopoly):
        with pytest.raises(ParameterError):
            discount_schedule(duopoly, 0.1, 0, 5)
        with pytest.raises(ParameterError):
            discount_schedule(duopoly, 0.0, 1, 5)  # k = 0 needs allow_zero_k
        with pytest.raises(ParameterError):
            discount_schedule(duopoly, 1.0 / duopoly.defection_gain, 1, 5)
        # Explicitly allowed zero rate leaves the defection undiscounted.
        sched = discount_schedule(duopoly, 0.0, 1, 5, allow_zero_k=True)
        assert np.all(sched.rho == 1.0)


class TestDeterrenceCondition:
    def test_small_x_fails_large_x_passes(self):
        assert not theorem1_condition(0.05, 5)
        assert theorem1_condition(0.9, 5)

    def test_input_validation(self):
        with pytest.raises(ParameterError):
            theorem1_condition(0.0, 3)
        with pytest.raises(ParameterError):
            theorem1_condition(0.5, 0)


class TestMinK:
    def test_benchmark_worst_case_threshold(self, duopoly):
        res = min_k_discrete(duopoly, N=10, tol=1e-9)
        # Worst case is the shortest punishable tail (defection in period N-1),
        # whose analytic threshold is (2/9) / defection_gain.
        expected = (2.0 / 9.0) / duopoly.defection_gain
        assert abs(res.k_min - expected) < 1e-6
        assert res.deterred
        totals = res.details["ledger_totals"]
        assert set(totals) == set(range(1, 11))
        for total in totals.values():
            assert total <= res.j_star + 1e-9 * (1.0 + res.j_star)

    def test_fixed_mode_matches_worst_case_at_last_start(self, duopoly):
        worst = min_k_discrete(duopoly, N=10)
        fixed = min_k_discrete(duopoly, N=10, mode="fixed", m=9)
        assert abs(worst.k_min - fixed.k_min) < 1e-7

    def test_earlier_starts_need_weaker_penalties(self, duopoly):
        # A longer punishment tail deters at a lower rate.
        k_early = min_k_discrete(duopoly, N=10, mode="fixed", m=1).k_min
        k_late = min_k_discrete(duopoly, N=10, mode="fixed", m=9).k_min
        assert k_early < k_late

    def test_zero_margin_is_degenerate(self):
        p = DuopolyParams(a=1.0, b=1.0, c0=1.0, c1=1.0)
        res = min_k_discrete(p, N=5)
        assert res.k_min == 0.0
        assert res.deterred
        assert res.details.get("degenerate")

    def test_input_validation(self, duopoly):
        with pytest.raises(ParameterError):
            min_k_discrete(duopoly, N=1)
        with pytest.raises(ParameterError):
            min_k_discrete(duopoly, N=10, mode="fixed")  # missing m
        with pytest.raises(ParameterError):
            min_k_discrete(duopoly, N=10, mode="sideways")


class TestParamValidation:
    def test_rejects_nonpositive_demand_or_slope(self):
        with pytest.raises(ParameterError):
            DuopolyParams(a=0.0, b=1.0, c0=0.0, c1=0.0)
        with pytest.raises(ParameterError):
            DuopolyParams(a=1.0, b=0.0, c0=0.0, c1=0.0)

    def test_rejects_cost_order_violations(self):
        with pytest.raises(ParameterError):
            DuopolyParams(a=10.0, b=1.0, c0=2.0, c1=1.0)
        with pytest.raises(ParameterError):
            DuopolyParams(a=10.0, b=1.0, c0=-1.0, c1=1.0)

    def test_rejects_negative_follower_output(self):
        with pytest.raises(ParameterError):
            DuopolyParams(a=10.0, b=1.0, c0=1.0, c1=5.0)
