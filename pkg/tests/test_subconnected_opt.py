"""Tests for the sub-connected analog updates."""

import unittest

import numpy as np

from modules.analog_opt import delay_grid
from modules.beamformer import Architecture
from modules.subconnected_opt import (
    SubArrayMap,
    algorithm4_inner,
    compute_psi,
    decomposed_objective,
    direct_objective,
    update_f_sub,
    update_t_sub,
)
from tests.fixtures import randn_c, random_beam


class SubArrayMapTestCase(unittest.TestCase):
    def test_rows(self):
        sub = SubArrayMap(16, 2, 4)
        self.assertEqual(sub.per_chain, 8)
        self.assertEqual(sub.group_size, 2)
        self.assertEqual(sub.rows(1, 2), slice(12, 14))

    def test_invalid_partitions(self):
        with self.assertRaises(ValueError):
            SubArrayMap(10, 4, 1)
        with self.assertRaises(ValueError):
            SubArrayMap(12, 2, 4)


class DecompositionTestCase(unittest.TestCase):
    def test_decomposed_objective_matches_direct(self):
        for seed in range(50):
            beam = random_beam(Architecture.SUB_CONNECTED, N=8, A=2, Q=2, M=2, K=2, seed=seed)
            P = randn_c(np.random.default_rng(100 + seed), 2, 8, 3)
            direct = direct_objective(P, beam)
            self.assertAlmostEqual(decomposed_objective(P, beam), direct, delta=1e-10 * max(1.0, direct))

    def test_zero_digital_gives_zero_psi(self):
        P = randn_c(np.random.default_rng(0), 2, 8, 3)
        psi = compute_psi(P, np.zeros((2, 2, 3), dtype=complex), SubArrayMap(8, 2, 2))
        np.testing.assert_array_equal(psi, 0)

    def test_single_chain_single_ttd(self):
        rng = np.random.default_rng(1)
        P = randn_c(rng, 3, 4, 2)
        W = randn_c(rng, 3, 1, 2)
        psi = compute_psi(P, W, SubArrayMap(4, 1, 1))
        np.testing.assert_allclose(psi[:, 0, 0, :], np.einsum("mnk,mk->mn", P, W[:, 0, :].conj()))


class SubUpdatesTestCase(unittest.TestCase):
    def test_phase_update_keeps_previous_for_zero_psi(self):
        previous = np.full((2, 2, 2), -1.2)
        phases = update_f_sub(np.zeros((2, 2, 2, 2), dtype=complex), np.zeros((2, 2)),
                              np.array([29e9, 31e9]), previous)
        np.testing.assert_array_equal(phases, previous)

    def test_phase_update_aligns_without_delay(self):
        psi = randn_c(np.random.default_rng(2), 1, 2, 2, 2)
        phases = update_f_sub(psi, np.zeros((2, 2)), np.array([30e9]))
        np.testing.assert_allclose(phases, np.angle(psi[0]))

    def test_delay_update_on_grid(self):
        rng = np.random.default_rng(3)
        psi = randn_c(rng, 3, 2, 2, 2)
        delays = update_t_sub(psi, rng.uniform(0, 2 * np.pi, (2, 2, 2)), 30e9 + 1e9 * np.arange(3), 1e-10, 11)
        np.testing.assert_allclose(delays / 1e-11, np.round(delays / 1e-11), atol=1e-9)


class Algorithm4InnerTestCase(unittest.TestCase):
    def setUp(self):
        beam = random_beam(Architecture.SUB_CONNECTED, N=8, A=2, Q=2, M=3, K=2, seed=4)
        on_grid = np.random.default_rng(4).integers(0, 50, beam.delays.shape)
        self.beam = beam.copy(delays=delay_grid(beam.t_max, 50)[on_grid])
        self.P = randn_c(np.random.default_rng(5), 3, 8, 3)

    def test_objective_never_increases(self):
        result = algorithm4_inner(self.P, self.beam, xi=1e-8, search_points=50)
        diffs = np.diff(result.objectives)
        self.assertTrue(np.all(diffs <= 1e-9 * max(abs(v) for v in result.objectives)))
        self.assertAlmostEqual(result.objectives[-1], direct_objective(self.P, result.beam),
                               delta=1e-9 * max(1.0, result.objectives[-1]))

    def test_restart_from_the_result_continues_downhill(self):
        first = algorithm4_inner(self.P, self.beam, xi=1e-6, search_points=50)
        self.assertTrue(first.converged)
        second = algorithm4_inner(self.P, first.beam, xi=1e-6, search_points=50)
        scale = max(1.0, first.objectives[-1])
        self.assertAlmostEqual(second.objectives[0], first.objectives[-1], delta=1e-12 * scale)
        self.assertLessEqual(second.objectives[-1], first.objectives[-1] + 1e-9 * scale)

    def test_pinned_delays(self):
        beam = self.beam.copy(delays=np.zeros((2, 2)))
        result = algorithm4_inner(self.P, beam, xi=1e-6, search_points=50, update_delays=False)
        np.testing.assert_array_equal(result.beam.delays, 0.0)

    def test_rejects_fully_connected(self):
        beam = random_beam(Architecture.FULLY_CONNECTED, N=8, A=2, Q=2, M=3, K=2)
        with self.assertRaises(ValueError):
            algorithm4_inner(self.P, beam, xi=1e-6, search_points=50)


if __name__ == "__main__":
    unittest.main()
