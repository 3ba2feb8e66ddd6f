"""Tests for the interior-point QCQP core."""

import math
import unittest

import numpy as np
import scipy.sparse as sp

from modules.exceptions import SolverError
from modules.interior_point import QCQP, Certificate, _factorize, solve_qcqp


class SolveQCQPTestCase(unittest.TestCase):
    def test_quadratic_program(self):
        # min ½‖x‖² − x1 − x2  s.t.  x1 + x2 <= 1
        problem = QCQP(objective_linear=[-1.0, -1.0], constraint_linear=[[1.0, 1.0]],
                       constraint_constant=[-1.0], objective_quadratic=np.eye(2))
        result = solve_qcqp(problem, np.zeros(2))
        np.testing.assert_allclose(result.x, [0.5, 0.5], atol=1e-6)
        self.assertTrue(result.certificate.certified)
        self.assertAlmostEqual(result.objective, -0.75, places=6)
        self.assertAlmostEqual(result.multipliers[0], 0.5, places=5)

    def test_linear_objective_on_the_unit_disc(self):
        # min −x1 − x2  s.t.  ½ xᵀ(2I)x − 1 <= 0
        problem = QCQP(objective_linear=[-1.0, -1.0], constraint_linear=np.zeros((1, 2)),
                       constraint_constant=[-1.0], constraint_quadratics=[2 * np.eye(2)])
        for start in (np.zeros(2), np.array([3.0, 3.0])):
            with self.subTest(start=start.tolist()):
                result = solve_qcqp(problem, start)
                np.testing.assert_allclose(result.x, [1 / math.sqrt(2)] * 2, atol=1e-6)
                self.assertTrue(result.certificate.certified)

    def test_linear_program(self):
        # max x  s.t.  x <= 2, −x <= 0
        problem = QCQP(objective_linear=[-1.0], constraint_linear=[[1.0], [-1.0]],
                       constraint_constant=[-2.0, 0.0])
        result = solve_qcqp(problem, np.array([0.5]))
        self.assertAlmostEqual(float(result.x[0]), 2.0, places=6)
        cert = result.certificate
        self.assertLessEqual(max(cert.primal, cert.dual, cert.complementarity), cert.tol)

    def test_sparse_and_mixed_constraints(self):
        # min (x1 − 2)² + (x2 − 2)² over the unit disc intersected with x1 <= 0.5
        problem = QCQP(objective_linear=[-4.0, -4.0], constraint_linear=sp.csr_matrix([[0.0, 0.0], [1.0, 0.0]]),
                       constraint_constant=[-1.0, -0.5], objective_quadratic=2 * sp.eye(2),
                       constraint_quadratics=[2 * sp.eye(2), None])
        result = solve_qcqp(problem, np.zeros(2))
        np.testing.assert_allclose(result.x, [0.5, math.sqrt(0.75)], atol=1e-6)

    def test_tighter_tolerance_is_honoured(self):
        problem = QCQP(objective_linear=[-1.0, -1.0], constraint_linear=[[1.0, 1.0]],
                       constraint_constant=[-1.0], objective_quadratic=np.eye(2))
        result = solve_qcqp(problem, np.zeros(2), tol=1e-10)
        self.assertTrue(result.certificate.certified)
        self.assertLessEqual(result.certificate.worst, 1e-10)

    def test_iteration_cap_returns_best_uncertified_iterate(self):
        problem = QCQP(objective_linear=[-1.0, -1.0], constraint_linear=np.zeros((1, 2)),
                       constraint_constant=[-1.0], constraint_quadratics=[2 * np.eye(2)])
        result = solve_qcqp(problem, np.array([3.0, 3.0]), max_iter=1)
        self.assertFalse(result.certificate.certified)
        self.assertLessEqual(result.certificate.iterations, 1)

    def test_certificate_is_scale_relative(self):
        # same QP with the objective multiplied by 1e6
        problem = QCQP(objective_linear=[-1e6, -1e6], constraint_linear=[[1.0, 1.0]],
                       constraint_constant=[-1.0], objective_quadratic=1e6 * np.eye(2))
        result = solve_qcqp(problem, np.zeros(2), tol=1e-9)
        self.assertTrue(result.certificate.certified)
        np.testing.assert_allclose(result.x, [0.5, 0.5], atol=1e-6)

    def test_infeasible_problem_stops_on_stall(self):
        # x <= -1 and x >= 1
        problem = QCQP(objective_linear=[0.0], constraint_linear=[[1.0], [-1.0]], constraint_constant=[1.0, 1.0])
        result = solve_qcqp(problem, np.zeros(1), max_iter=200)
        self.assertFalse(result.certificate.certified)
        self.assertLess(result.iterations, 200)
        self.assertGreaterEqual(result.certificate.primal, 0.25)

    def test_iterations_run_are_reported(self):
        problem = QCQP(objective_linear=[-1.0], constraint_linear=[[1.0], [-1.0]],
                       constraint_constant=[-2.0, 0.0])
        result = solve_qcqp(problem, np.array([0.5]))
        self.assertGreaterEqual(result.iterations, result.certificate.iterations)

    def test_bad_shapes(self):
        with self.assertRaises(ValueError):
            QCQP(objective_linear=[1.0, 1.0], constraint_linear=[[1.0]], constraint_constant=[0.0])
        with self.assertRaises(ValueError):
            QCQP(objective_linear=[1.0], constraint_linear=[[1.0]], constraint_constant=[0.0],
                 constraint_quadratics=[None, None])
        problem = QCQP(objective_linear=[1.0], constraint_linear=[[1.0]], constraint_constant=[0.0])
        with self.assertRaises(ValueError):
            solve_qcqp(problem, np.zeros(2))


class CertificateTestCase(unittest.TestCase):
    def test_certified_and_worst(self):
        cert = Certificate(primal=1e-9, dual=5e-8, complementarity=2e-9, iterations=4, tol=1e-7)
        self.assertTrue(cert.certified)
        self.assertEqual(cert.worst, 5e-8)
        self.assertFalse(Certificate(0.0, 2e-7, 0.0, 4, 1e-7).certified)
        self.assertIn("iters=4", str(cert))


class FactorizeTestCase(unittest.TestCase):
    def test_non_finite_system_raises(self):
        with self.assertRaises(SolverError):
            _factorize(np.full((2, 2), np.nan))

    def test_semidefinite_system_is_regularized(self):
        factor = _factorize(np.zeros((3, 3)))
        self.assertEqual(factor[0].shape, (3, 3))


if __name__ == "__main__":
    unittest.main()
