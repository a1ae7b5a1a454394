import math

import numpy as np
import pytest

from kamflow.diophantine import (
    FrequencyData,
    estimate_alpha_tau,
    fit_alpha,
    half_ball,
    min_divisor,
    omega_max,
    omega_table,
    ruessmann_check,
)
from kamflow.errors import PreconditionError, ResonanceError
from kamflow.numutil import lattice_dot

from conftest import GOLDEN

OMEGA = (1.0, GOLDEN)


class TestEnumeration:
    def test_half_ball_covers_once(self):
        rows = np.vstack(list(half_ball(2, 5)))
        seen = {tuple(r) for r in rows}
        assert len(seen) == len(rows)
        # together with reflections: the full punctured l1 ball
        full = {tuple(r) for r in rows} | {tuple(-r) for r in rows}
        count = sum(
            1
            for a in range(-5, 6)
            for b in range(-5, 6)
            if 0 < abs(a) + abs(b) <= 5
        )
        assert len(full) == count

    def test_k_zero_rejected(self):
        with pytest.raises(PreconditionError):
            list(half_ball(2, 0))


class TestOmegaMax:
    def test_order_one(self):
        assert omega_max(OMEGA, 1) == 1.0

    def test_order_three_golden(self):
        # minimizer k = (2, -1): divisor 2 - phi, Omega = phi^2
        val = omega_max(OMEGA, 3)
        assert abs(val - GOLDEN**2) < 1e-12
        assert abs(val - 2.618034) < 1e-6
        _, argk = min_divisor(OMEGA, 3)
        assert argk in ((2, -1), (-2, 1))

    def test_empty_domain(self):
        with pytest.raises(PreconditionError):
            omega_max(OMEGA, 0)

    def test_nondecreasing_table(self):
        table = omega_table(OMEGA, [1, 2, 4, 8, 16, 32])
        vals = [table[K] for K in sorted(table)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_independent_reversed_enumeration(self):
        # cross-check against a minimum search in a different index order
        K = 12
        best = math.inf
        for a in range(K, -K - 1, -1):
            for b in range(K - abs(a), -(K - abs(a)) - 1, -1):
                if abs(a) + abs(b) == 0:
                    continue
                best = min(best, abs(a * OMEGA[0] + b * OMEGA[1]))
        assert abs(omega_max(OMEGA, K) - 1.0 / best) < 1e-12 * (1.0 / best)


class TestAlphaFit:
    def test_golden_alpha_is_one(self):
        alpha, argk = fit_alpha(OMEGA, 100, 1.0)
        assert alpha == 1.0
        assert argk in ((1, 0), (-1, 0))

    def test_default_tau_is_critical(self):
        alpha, tau = estimate_alpha_tau(OMEGA, 32)
        assert tau == 1.0
        assert alpha == 1.0

    def test_resonant_vector_detected(self):
        with pytest.raises(ResonanceError) as err:
            fit_alpha((1.0, 1.0), 8, 1.0)
        assert err.value.k in ((1, -1), (-1, 1))

    def test_normalized_fit_is_one(self):
        freq = FrequencyData.analyze((0.25, 0.25 * GOLDEN), tau=1.0, K_probe=32)
        assert freq.alpha < 1.0
        scaled = freq.normalized()
        assert abs(scaled.alpha - 1.0) < 1e-12

    def test_normalize_preserves_minimizers(self):
        freq = FrequencyData.analyze((0.25, 0.25 * GOLDEN), tau=1.0, K_probe=16)
        scaled = freq.normalized()
        for K in (1, 3, 8, 16):
            _, k_orig = min_divisor(freq.omega, K)
            _, k_scaled = min_divisor(scaled.omega, K)
            assert k_orig == k_scaled


class TestRuessmann:
    def test_four_term_example(self):
        rep = ruessmann_check(OMEGA, 1)
        expect = 2.0 * (1.0 + 1.0 / GOLDEN**2)
        assert abs(rep.lhs - expect) < 1e-12
        assert abs(rep.lhs - 2.7639) < 1e-4
        assert rep.rhs == 16.0
        assert abs(rep.ratio - 0.1727) < 1e-4

    def test_ratio_bounded_over_orders(self):
        for K in (4, 8, 16, 32):
            assert ruessmann_check(OMEGA, K).passed()

    def test_scaling_invariance(self):
        a = ruessmann_check(OMEGA, 8)
        b = ruessmann_check((2.0, 2.0 * GOLDEN), 8)
        assert abs(a.ratio - b.ratio) < 1e-12
        assert abs(a.lhs - 4.0 * b.lhs) < 1e-9 * a.lhs

    def test_random_diophantine_like_frequencies(self):
        rng = np.random.default_rng(12)
        tested = 0
        for _ in range(40):
            if tested >= 20:
                break
            om = (1.0, float(rng.uniform(1.1, 3.9)))
            try:
                for K in (4, 8, 16, 32):
                    assert ruessmann_check(om, K).passed()
            except ResonanceError:
                continue
            tested += 1
        assert tested >= 20


class TestFrequencyData:
    def test_analyze_shape(self):
        freq = FrequencyData.analyze(OMEGA, tau=1.0, K_probe=16)
        assert freq.n == 2
        assert set(freq.table) == {1, 2, 4, 8, 16}
        d = freq.to_dict()
        assert set(d) == {"omega", "tau", "alpha", "Omega_table"}

    def test_omega_bound_beyond_probe(self):
        freq = FrequencyData.analyze(OMEGA, tau=1.0, K_probe=8)
        assert freq.omega_bound(8) == freq.table[8]
        assert freq.omega_bound(4096) == 4096.0


class TestLatticeDot:
    def test_compensated_matches_exact_rational(self):
        from fractions import Fraction

        rng = np.random.default_rng(8)
        omega = np.array([1.0, GOLDEN, math.sqrt(2.0)])
        ks = rng.integers(-500, 501, size=(200, 3))
        ours = lattice_dot(ks, omega)
        for row, val in zip(ks, ours):
            exact = float(sum(Fraction(int(a)) * Fraction(w) for a, w in zip(row, omega)))
            assert abs(val - exact) <= 4.0 * np.finfo(float).eps * max(abs(exact), 1e-30)

    def test_beats_naive_dot_near_cancellation(self):
        from fractions import Fraction

        omega = np.array([1.0, GOLDEN])
        k = np.array([377, -233])  # deep golden-mean convergent: heavy cancellation
        exact = float(sum(Fraction(int(a)) * Fraction(w) for a, w in zip(k, omega)))
        ours = float(lattice_dot(k, omega))
        assert abs(ours - exact) <= 2.0 * np.finfo(float).eps * abs(exact)
