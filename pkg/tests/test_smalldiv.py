import math

import numpy as np
import pytest

from kamflow.errors import PreconditionError, ResonanceError
from kamflow.fourier import FourierSeries, directional_derivative, project
from kamflow.smalldiv import (
    commutes_with_projection,
    cutoff_check,
    inversion_bound_check,
    scaled_inversion_check,
    solve_cohomological,
)

from conftest import GOLDEN, random_series

OMEGA = (1.0, GOLDEN)


class TestSolve:
    def test_single_mode(self):
        sol = solve_cohomological(FourierSeries.basis((1, 0)), OMEGA, 1)
        assert abs(sol.get((1, 0)) - (-1j)) < 1e-15

    def test_golden_divisor_magnitude(self):
        sol = solve_cohomological(FourierSeries.basis((2, -1)), OMEGA, 3)
        assert abs(abs(sol.get((2, -1))) - GOLDEN**2) < 1e-12
        assert abs(abs(sol.get((2, -1))) - 2.618034) < 1e-6

    def test_round_trip_exact(self):
        f = random_series(2, 64, 100, seed=42, real=False)
        f = project(f, 64, "oscillatory")
        sol = solve_cohomological(f, OMEGA, 64)
        back = directional_derivative(sol, OMEGA)
        assert back.max_diff(f) <= 1e-12
        assert abs(sol.mean()) == 0.0

    def test_mean_rejected(self):
        f = FourierSeries.from_terms(2, {(0, 0): 1.0, (1, 0): 1.0})
        with pytest.raises(PreconditionError):
            solve_cohomological(f, OMEGA, 4)

    def test_order_cap_enforced(self):
        with pytest.raises(PreconditionError):
            solve_cohomological(FourierSeries.basis((5, 0)), OMEGA, 4)

    def test_resonance_detected(self):
        with pytest.raises(ResonanceError):
            solve_cohomological(FourierSeries.basis((1, -1)), (1.0, 1.0), 4)

    def test_linearity_exact(self):
        f = random_series(2, 8, 15, seed=50, real=False)
        g = random_series(2, 8, 15, seed=51, real=False)
        f = project(f, 8, "oscillatory")
        g = project(g, 8, "oscillatory")
        lhs = solve_cohomological(f * 2.0 + g * (-0.5j), OMEGA, 8)
        rhs = solve_cohomological(f, OMEGA, 8) * 2.0 + solve_cohomological(g, OMEGA, 8) * (-0.5j)
        assert lhs.max_diff(rhs) == 0.0

    def test_commutes_with_projection(self):
        f = project(random_series(2, 12, 30, seed=52, real=False), 12, "oscillatory")
        assert commutes_with_projection(f, OMEGA, 6) == 0.0

    def test_reality_preserved(self):
        f = project(random_series(2, 6, 12, seed=53, real=True), 6, "oscillatory")
        assert solve_cohomological(f, OMEGA, 6).is_real()


class TestInversionBound:
    def test_single_mode_chain(self):
        for k in ((1, 0), (2, -1), (3, 2)):
            f = FourierSeries.basis(k)
            rep = inversion_bound_check(f, OMEGA, 0.3, 6)
            assert rep.passed()

    def test_random_sweep(self):
        rng = np.random.default_rng(3)
        for trial in range(30):
            K = int(rng.choice([4, 8, 16]))
            f = project(random_series(2, K, 25, seed=1000 + trial, real=False), K, "oscillatory")
            if f.is_zero:
                continue
            s = float(rng.uniform(0.02, 1.0 / K)) * 4.0
            rep = inversion_bound_check(f, OMEGA, s, K)
            assert rep.passed()


class TestCutoff:
    def test_alpha_one_saturates(self):
        f = FourierSeries.basis((5, 3))
        rep = cutoff_check(f, 0.4, 1.0, 8)
        assert abs(rep.ratio - 1.0) < 1e-12

    def test_boundary_shell_included(self):
        f = FourierSeries.basis((4, 4))  # |k| = 8 exactly
        rep = cutoff_check(f, 0.5, 0.5, 8)
        assert rep.passed()

    def test_support_violation(self):
        with pytest.raises(PreconditionError):
            cutoff_check(FourierSeries.basis((1, 0)), 0.5, 0.5, 8)

    def test_random_tails(self):
        rng = np.random.default_rng(4)
        for trial in range(30):
            K = int(rng.choice([8, 16]))
            f = project(random_series(2, 2 * K, 40, seed=2000 + trial, real=False), K, "tail")
            if f.is_zero:
                continue
            s = float(rng.uniform(0.2, 2.0)) / K
            rep = cutoff_check(f, s, 0.5, K)
            assert rep.passed()


class TestScaledInversion:
    def test_golden_fixture(self, schedule, golden_freq):
        rng = np.random.default_rng(5)
        for nu in (1, 2):
            K, s, gain = schedule.K[nu], schedule.s[nu], schedule.gain[nu]
            for trial in range(5):
                f = project(
                    random_series(2, K, 20, seed=3000 + 10 * nu + trial, real=False),
                    K,
                    "oscillatory",
                )
                if f.is_zero:
                    continue
                rep = scaled_inversion_check(f, golden_freq.omega, s, K, gain, nu=nu)
                assert rep.passed()
