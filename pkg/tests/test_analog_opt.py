"""Tests for the fully-connected analog updates (G, F, t) and their alternation."""

import unittest

import numpy as np

from modules.analog_opt import (
    AnalogAuxiliary,
    algorithm2,
    align_phases,
    analog_objective,
    correlation,
    delay_grid,
    fit_value,
    search_delays,
    update_F,
    update_G,
    update_T,
)
from modules.beamformer import Architecture, HybridBeamformer
from tests.fixtures import randn_c, random_beam


class UpdateGTestCase(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.rng = rng
        self.P = randn_c(rng, 2, 6, 3)
        self.W = randn_c(rng, 2, 3, 3)
        self.FT = randn_c(rng, 2, 6, 3)

    def test_zero_digital_gives_the_analog_product(self):
        np.testing.assert_allclose(update_G(self.P, np.zeros_like(self.W), self.FT, 10.0), self.FT)

    def test_gradient_vanishes(self):
        rho = 3.0
        G = update_G(self.P, self.W, self.FT, rho)
        W_h = np.conj(np.transpose(self.W, (0, 2, 1)))
        gradient = (G @ self.W - self.P) @ W_h + (G - self.FT) / rho
        np.testing.assert_allclose(gradient, 0, atol=1e-10)

    def test_local_optimality(self):
        rho = 3.0
        G = update_G(self.P, self.W, self.FT, rho)
        best = analog_objective(self.P, G, self.W, self.FT, rho)
        for _ in range(200):
            trial = G + 1e-3 * randn_c(self.rng, *G.shape)
            self.assertGreaterEqual(analog_objective(self.P, trial, self.W, self.FT, rho), best)

    def test_large_rho_tilde_fits_the_digital_equivalent(self):
        G = update_G(self.P, self.W, self.FT, 1e12)
        np.testing.assert_allclose(G @ self.W, self.P, rtol=1e-6, atol=1e-6)

    def test_rejects_non_positive_rho_tilde(self):
        with self.assertRaises(ValueError):
            update_G(self.P, self.W, self.FT, 0.0)


class PhaseUpdateTestCase(unittest.TestCase):
    def test_single_subcarrier_without_delay_aligns_to_the_coefficients(self):
        rng = np.random.default_rng(1)
        coeffs = randn_c(rng, 1, 2, 2, 3)
        phases = align_phases(coeffs, np.zeros((2, 2)), np.array([30e9]))
        np.testing.assert_allclose(phases, np.angle(coeffs[0]))

    def test_real_positive_coefficients_give_zero_phases(self):
        coeffs = np.ones((3, 1, 1, 4), dtype=complex)
        np.testing.assert_allclose(align_phases(coeffs, np.zeros((1, 1)), 30e9 + 1e9 * np.arange(3)), 0.0)

    def test_zero_coefficients_keep_previous_phases(self):
        previous = np.full((1, 2, 2), 0.7)
        phases = align_phases(np.zeros((2, 1, 2, 2), dtype=complex), np.zeros((1, 2)),
                              np.array([29e9, 31e9]), previous)
        np.testing.assert_array_equal(phases, previous)

    def test_global_optimality_against_random_phases(self):
        rng = np.random.default_rng(2)
        freqs = 30e9 + 1e9 * np.arange(3)
        coeffs = randn_c(rng, 3, 1, 1, 4)
        delays = np.array([[3e-11]])
        best = fit_value(coeffs, align_phases(coeffs, delays, freqs), delays, freqs)
        for _ in range(2000):
            trial = rng.uniform(0, 2 * np.pi, (1, 1, 4))
            self.assertGreaterEqual(best + 1e-12, fit_value(coeffs, trial, delays, freqs))

    def test_update_F_reads_groups_from_G(self):
        beam = random_beam(Architecture.FULLY_CONNECTED, N=8, A=2, Q=2, M=1)
        G = beam.analog_response()
        np.testing.assert_allclose(np.exp(1j * update_F(G, beam.delays, beam.frequencies)),
                                   np.exp(1j * beam.phases), atol=1e-12)


class DelayUpdateTestCase(unittest.TestCase):
    def test_grid_contains_both_endpoints(self):
        grid = delay_grid(2e-9, 5)
        np.testing.assert_allclose(grid, [0, 0.5e-9, 1e-9, 1.5e-9, 2e-9])
        with self.assertRaises(ValueError):
            delay_grid(2e-9, 1)

    def test_zero_coefficients_pick_the_first_grid_point(self):
        delays = search_delays(np.zeros((2, 1, 3, 2), dtype=complex), np.zeros((1, 3, 2)),
                               np.array([29e9, 31e9]), 1e-10, 50)
        np.testing.assert_array_equal(delays, 0.0)

    def test_single_tone_recovers_the_phase_delay(self):
        f = 30e9
        theta = 2.0
        S = 1001
        coeffs = np.full((1, 1, 1, 1), np.exp(-1j * theta))   # c = coeff^H f = e^{jθ}
        delays = search_delays(coeffs, np.zeros((1, 1, 1)), np.array([f]), 1 / f, S)
        step = 1 / f / (S - 1)
        self.assertLessEqual(abs(delays[0, 0] - theta / (2 * np.pi * f)), step / 2 + 1e-18)

    def test_returns_the_grid_maximizer(self):
        rng = np.random.default_rng(4)
        freqs = 30e9 + 1e9 * np.arange(4)
        coeffs = randn_c(rng, 4, 2, 2, 3)
        phases = rng.uniform(0, 2 * np.pi, (2, 2, 3))
        t_max, S = 2e-10, 40
        delays = search_delays(coeffs, phases, freqs, t_max, S)
        c = correlation(coeffs, phases)
        grid = delay_grid(t_max, S)
        for a in range(2):
            for q in range(2):
                values = np.array([np.sum((c[:, a, q] * np.exp(-2j * np.pi * freqs * t)).real) for t in grid])
                index = int(round(delays[a, q] / (t_max / (S - 1))))
                self.assertGreaterEqual(values[index], values.max() - 1e-12)

    def test_finer_grid_gains_at_most_the_lipschitz_bound(self):
        rng = np.random.default_rng(5)
        freqs = 25e9 + 1e9 * np.arange(10)
        coeffs = randn_c(rng, 10, 1, 1, 4)
        phases = rng.uniform(0, 2 * np.pi, (1, 1, 4))
        t_max = 2e-9
        coarse = fit_value(coeffs, phases, search_delays(coeffs, phases, freqs, t_max, 1000), freqs)
        fine = fit_value(coeffs, phases, search_delays(coeffs, phases, freqs, t_max, 10000), freqs)
        c = correlation(coeffs, phases)
        bound = 2 * np.pi * freqs.max() * t_max * np.sum(np.abs(c)) / (1000 - 1)
        self.assertLessEqual(fine - coarse, bound)

    def test_update_T_stays_on_the_grid(self):
        beam = random_beam(Architecture.FULLY_CONNECTED, N=8, A=2, Q=2, M=3)
        G = beam.analog_response()
        delays = update_T(G, beam.phases, beam.frequencies, beam.t_max, 21)
        step = beam.t_max / 20
        np.testing.assert_allclose(delays / step, np.round(delays / step), atol=1e-9)
        self.assertTrue(np.all((delays >= 0) & (delays <= beam.t_max)))


class Algorithm2TestCase(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(6)
        self.rng = rng
        freqs = 30e9 + 2e9 * np.arange(3)
        t_max = 8 / (2 * 30e9)
        self.beam = HybridBeamformer(Architecture.FULLY_CONNECTED, 8, rng.uniform(0, 2 * np.pi, (3, 2, 4)),
                                     delay_grid(t_max, 64)[rng.integers(0, 64, (3, 2))],
                                     randn_c(rng, 3, 3, 3), freqs, t_max)

    def test_realizable_target_is_a_fixed_point(self):
        P = np.einsum("mna,mak->mnk", self.beam.analog_response(), self.beam.digital)
        result = algorithm2(P, self.beam, rho_tilde=100.0, alpha=0.5, xi=1e-5, search_points=64)
        self.assertTrue(result.converged)
        self.assertEqual(result.outer_iterations, 1)
        np.testing.assert_allclose(result.beam.analog_response(), self.beam.analog_response(), atol=1e-8)

    def test_inner_objective_never_increases(self):
        P = randn_c(self.rng, 3, 8, 3)
        result = algorithm2(P, self.beam, rho_tilde=100.0, alpha=0.5, xi=1e-5, search_points=64)
        for trace in result.objectives:
            diffs = np.diff(trace)
            self.assertTrue(np.all(diffs <= 1e-9 * max(trace)))

    def test_penalty_closes(self):
        P = randn_c(self.rng, 3, 8, 3)
        result = algorithm2(P, self.beam, rho_tilde=100.0, alpha=0.5, xi=1e-5, search_points=64,
                            outer_max=40)
        self.assertTrue(result.converged)
        gap = np.sum(np.abs(result.auxiliary.G - result.beam.analog_response()) ** 2)
        self.assertLess(gap, 1e-6 * np.sum(np.abs(result.auxiliary.G) ** 2))

    def test_pinned_delays_stay_pinned(self):
        beam = self.beam.copy(delays=np.zeros((3, 2)))
        result = algorithm2(randn_c(self.rng, 3, 8, 3), beam, rho_tilde=100.0, alpha=0.5, xi=1e-5,
                            search_points=64, update_delays=False)
        np.testing.assert_array_equal(result.beam.delays, 0.0)

    def test_rejects_sub_connected_and_bad_alpha(self):
        sub = random_beam(Architecture.SUB_CONNECTED)
        P = np.einsum("mna,mak->mnk", sub.analog_response(), sub.digital)
        with self.assertRaises(ValueError):
            algorithm2(P, sub, rho_tilde=1.0, alpha=0.5, xi=1e-5, search_points=8)
        P = randn_c(self.rng, 3, 8, 3)
        with self.assertRaises(ValueError):
            algorithm2(P, self.beam, rho_tilde=1.0, alpha=1.0, xi=1e-5, search_points=8)

    def test_auxiliary_validation(self):
        aux = AnalogAuxiliary(self.beam.analog_response(), 2.0)
        self.assertEqual(aux.rho_tilde, 2.0)
        with self.assertRaises(ValueError):
            AnalogAuxiliary(aux.G, 0.0)
        with self.assertRaises(ValueError):
            AnalogAuxiliary(np.full((3, 8, 3), np.nan), 1.0)


if __name__ == "__main__":
    unittest.main()
