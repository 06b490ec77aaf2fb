import unittest

import numpy as np

from app import energy
from app.exceptions import OutsideDomain
from app.utils.sampling_utils import random_rotations


class TestScalarDensities(unittest.TestCase):

    def test_eval_density_examples(self):
        """Test the quadratic, locked and double-well densities at known points."""
        W = energy.quadratic_density()
        self.assertAlmostEqual(energy.eval_density(W, np.eye(3)), 3.0)

        locked = energy.locked(W, 1.0)
        self.assertEqual(energy.eval_density(locked, 2 * np.eye(3) / np.sqrt(3.0)), np.inf)
        self.assertEqual(locked.radius, 1.0)

        E11 = np.zeros((3, 3))
        E11[0, 0] = 1.0
        dw = energy.double_well_density()
        self.assertEqual(energy.eval_density(dw, E11), 0.0)
        self.assertEqual(energy.eval_density(dw, -E11), 0.0)
        self.assertEqual(energy.eval_density(dw, np.zeros((3, 3))), 1.0)

    def test_locked_density_accepts_boundary(self):
        """Test that points on the sphere |F| = rho stay finite."""
        locked = energy.locked(energy.quadratic_density(), 2.0)
        F = np.diag([2.0, 0.0, 0.0])
        self.assertAlmostEqual(energy.eval_density(locked, F), 4.0)

    def test_grad_density(self):
        """Test analytic gradients and the finite-difference fallback."""
        rng = np.random.default_rng(0)
        W = energy.quadratic_density()
        F = rng.standard_normal((3, 3))
        np.testing.assert_array_equal(energy.grad_density(W, F), 2 * F)

        for density in [energy.double_well_density(), energy.stvk_density()]:
            fd_density = energy.ScalarDensity(name="fd", evaluator=density.evaluator)
            for F in rng.standard_normal((20, 3, 3)):
                analytic = energy.grad_density(density, F)
                numeric = energy.grad_density(fd_density, F)
                with self.subTest(density=density.name):
                    self.assertLessEqual(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic), 1e-12), 1e-5)

    def test_grad_density_outside_domain(self):
        """Test that the gradient at an infinite value raises OutsideDomain."""
        locked = energy.locked(energy.quadratic_density(), 1.0)
        with self.assertRaises(OutsideDomain):
            energy.grad_density(locked, 3 * np.eye(3))

    def test_stvk_phi(self):
        """Test StVK energy at rotations and under uniform dilation."""
        C = energy.ElasticTensor.isotropic()
        for Q in random_rotations(10, seed=3):
            self.assertAlmostEqual(energy.stvk_phi(Q, C), 0.0, places=12)
            np.testing.assert_allclose(energy.stvk_gradient(Q, C), np.zeros((3, 3)), atol=1e-12)
        self.assertAlmostEqual(energy.stvk_phi(2 * np.eye(3), energy.ElasticTensor.identity()), 27.0 / 8.0)

    def test_stvk_phi_nonnegative(self):
        """Test phi >= 0 on random matrices."""
        rng = np.random.default_rng(4)
        values = energy.stvk_phi(rng.standard_normal((500, 3, 3)), energy.ElasticTensor.isotropic())
        self.assertGreaterEqual(float(np.min(values)), 0.0)

    def test_elastic_tensor_validation(self):
        """Test that asymmetric or indefinite tensors are rejected."""
        with self.assertRaises(ValueError):
            energy.ElasticTensor.isotropic(lame_lambda=1.0, lame_mu=-1.0)
        broken = energy.ElasticTensor.identity().tensor.copy()
        broken[0, 0, 0, 1] += 1.0
        with self.assertRaises(ValueError):
            energy.ElasticTensor(broken)
        with self.assertRaises(ValueError):
            energy.ElasticTensor(np.zeros((3, 3, 3)))

    def test_lipschitz_modulus(self):
        """Test that the sampled modulus bounds differences on the ball."""
        W = energy.with_lipschitz_modulus(energy.quadratic_density(), 2.0, n_samples=500)
        rng = np.random.default_rng(5)
        for _ in range(50):
            F, G = rng.standard_normal((2, 3, 3))
            F *= 2.0 / max(np.linalg.norm(F), 2.0)
            G *= 2.0 / max(np.linalg.norm(G), 2.0)
            difference = abs(energy.eval_density(W, F) - energy.eval_density(W, G))
            self.assertLessEqual(difference, W.modulus(np.linalg.norm(F - G)) + 1e-12)

    def test_estimate_lipschitz_modulus(self):
        """Test the sampled constant of |F|^2 on a ball against its exact value 2r."""
        for dim, radius in [(3, 2.0), (2, 0.5)]:
            with self.subTest(dim=dim, radius=radius):
                K = energy.estimate_lipschitz_modulus(energy.quadratic_density(dim), radius, n_samples=200)
                self.assertAlmostEqual(K, 1.1 * 2.0 * radius, places=10)

    def test_decreasing_modulus_rejected(self):
        """Test that a decreasing modulus of continuity is rejected."""
        with self.assertRaises(ValueError):
            energy.ScalarDensity(name="bad", evaluator=lambda F: F[..., 0, 0], modulus=lambda t: -t)


class TestGradPolyDensity(unittest.TestCase):

    def setUp(self):
        self.D = energy.stvk_gradpoly_density(alpha=1.0, q=2.0, s=2.0)
        self.zero = np.zeros((3, 3, 3))

    def test_gradpoly_eval_examples(self):
        """Test the barrier, the identity value and homogeneity in delta1."""
        self.assertEqual(energy.gradpoly_eval(self.D, np.diag([-1.0, 1.0, 1.0]), self.zero), np.inf)
        self.assertEqual(energy.gradpoly_eval(self.D, np.diag([1.0, 1.0, 0.0]), self.zero), np.inf)
        self.assertAlmostEqual(energy.gradpoly_eval(self.D, np.eye(3), self.zero), 1.0)

        delta1 = np.random.default_rng(0).standard_normal((3, 3, 3))
        base = energy.gradpoly_eval(self.D, np.eye(3), self.zero)
        once = energy.gradpoly_eval(self.D, np.eye(3), delta1) - base
        twice = energy.gradpoly_eval(self.D, np.eye(3), 2 * delta1) - base
        self.assertAlmostEqual(twice / once, 4.0, places=10)

    def test_barrier_blows_up(self):
        """Test that the energy grows without bound as det F -> 0+."""
        values = [energy.gradpoly_eval(self.D, np.diag([1.0, 1.0, 1.0 / k]), self.zero) for k in (1, 10, 100, 1000)]
        self.assertTrue(all(b > a for a, b in zip(values, values[1:])))
        self.assertGreater(values[-1], 1e5)

    def test_det_gradient_variant(self):
        """Test the optional delta2 term."""
        D = energy.stvk_gradpoly_density(r=2.0, uses_det_gradient=True)
        delta2 = np.array([1.0, 2.0, 2.0])
        without = energy.gradpoly_eval(D, np.eye(3), self.zero)
        with_delta2 = energy.gradpoly_eval(D, np.eye(3), self.zero, delta2)
        self.assertAlmostEqual(with_delta2 - without, 9.0)
        with self.assertRaises(ValueError):
            energy.gradpoly_eval(D, np.eye(3), self.zero, np.zeros(2))

    def test_partials_match_finite_differences(self):
        """Test the partial derivatives against central differences."""
        D = energy.stvk_gradpoly_density(uses_det_gradient=True)
        rng = np.random.default_rng(1)
        F = np.eye(3) + 0.2 * rng.standard_normal((3, 3))
        delta1 = rng.standard_normal((3, 3, 3))
        delta2 = rng.standard_normal(3)
        d_F, d_delta1, d_delta2 = energy.gradpoly_partials(D, F, delta1, delta2)
        h = 1e-6
        for _ in range(10):
            dF, dD1, dD2 = rng.standard_normal((3, 3)), rng.standard_normal((3, 3, 3)), rng.standard_normal(3)
            numeric = (
                energy.gradpoly_eval(D, F + h * dF, delta1 + h * dD1, delta2 + h * dD2)
                - energy.gradpoly_eval(D, F - h * dF, delta1 - h * dD1, delta2 - h * dD2)
            ) / (2 * h)
            analytic = np.sum(d_F * dF) + np.sum(d_delta1 * dD1) + np.sum(d_delta2 * dD2)
            self.assertLessEqual(abs(numeric - analytic) / max(abs(analytic), 1.0), 1e-5)

    def test_partials_outside_domain(self):
        """Test that partials at det F <= 0 raise OutsideDomain."""
        with self.assertRaises(OutsideDomain):
            energy.gradpoly_partials(self.D, -np.eye(3), self.zero)

    def test_invalid_parameters(self):
        """Test parameter validation."""
        cases = [dict(alpha=0.0), dict(q=0.5), dict(s=-1.0), dict(c=0.0)]
        for params in cases:
            with self.subTest(params=params):
                with self.assertRaises(ValueError):
                    energy.stvk_gradpoly_density(**params)

    def test_frame_indifference(self):
        """Test frame indifference of StVK and its failure for a broken density."""
        self.assertLessEqual(energy.check_frame_indifference(self.D, n_samples=100), 1e-8)
        broken = energy.ScalarDensity(name="broken", evaluator=lambda F: F[..., 0, 0], dim=3)
        self.assertGreater(energy.check_frame_indifference(broken, n_samples=100), 0.1)
        self.assertEqual(energy.check_frame_indifference(broken, n_samples=20, rotations=np.eye(3)), 0.0)

    def test_coercivity(self):
        """Test the sampled growth bound for conservative and oversized constants."""
        self.assertGreaterEqual(energy.check_coercivity(self.D, n_samples=10000), 0.0)
        self.assertLess(energy.check_coercivity(self.D, n_samples=1000, c=10.0), 0.0)

    def test_convexity_in_gradient_arguments(self):
        """Test midpoint convexity in (delta1, delta2)."""
        D = energy.stvk_gradpoly_density(uses_det_gradient=True)
        self.assertLessEqual(energy.check_convexity(D, n_samples=200, seed=11), 1e-10)

    def test_determinant_bound_regime(self):
        """Test the parameter regime for a uniform determinant bound."""
        self.assertEqual(energy.determinant_bound_regime(energy.stvk_gradpoly_density(q=4.0, s=30.0)), (True, None))
        ok, reason = energy.determinant_bound_regime(energy.stvk_gradpoly_density(q=2.0, s=2.0))
        self.assertFalse(ok)
        self.assertIn("q > 3", reason)
        ok, _ = energy.determinant_bound_regime(energy.stvk_gradpoly_density(r=4.0, s=13.0, uses_det_gradient=True))
        self.assertTrue(ok)


class TestLockingConstraint(unittest.TestCase):

    def test_locking_eval_examples(self):
        """Test each variant at known points."""
        self.assertAlmostEqual(energy.locking_eval(energy.LockingConstraint.ball(2.0), np.eye(3)), np.sqrt(3.0) - 2.0)
        self.assertAlmostEqual(
            energy.locking_eval(energy.LockingConstraint.determinant(0.1), np.diag([1.0, 1.0, 0.05])), 0.05
        )
        Q = random_rotations(1, seed=0)[0]
        self.assertAlmostEqual(energy.locking_eval(energy.LockingConstraint.ciarlet_necas(0.5), Q), -0.5, places=12)
        self.assertEqual(energy.locking_eval(energy.LockingConstraint.none(), 100 * np.eye(3)), 0.0)

    def test_ball_scale_consistency(self):
        """Test L_ball(tF) <= 0 iff t|F| <= rho."""
        L = energy.LockingConstraint.ball(2.0)
        F = np.random.default_rng(2).standard_normal((3, 3))
        for t in np.linspace(0.0, 3.0, 31):
            with self.subTest(t=t):
                self.assertEqual(energy.locking_eval(L, t * F) <= 0, t * np.linalg.norm(F) <= 2.0)

    def test_frame_indifference_of_variants(self):
        """Test that Ciarlet-Necas is frame-indifferent and Prager is not."""
        self.assertLessEqual(energy.check_frame_indifference(energy.LockingConstraint.ciarlet_necas(1.0)), 1e-10)
        self.assertGreater(energy.check_frame_indifference(energy.LockingConstraint.prager(1.0)), 1e-6)

    def test_locking_gradient(self):
        """Test locking gradients against central differences."""
        rng = np.random.default_rng(3)
        h = 1e-6
        constraints = [
            energy.LockingConstraint.ball(2.0),
            energy.LockingConstraint.determinant(0.1),
            energy.LockingConstraint.ciarlet_necas(1.0),
            energy.LockingConstraint.prager(1.0),
        ]
        for L in constraints:
            F = rng.standard_normal((3, 3))
            G = energy.locking_gradient(L, F)
            for _ in range(5):
                D = rng.standard_normal((3, 3))
                numeric = (energy.locking_eval(L, F + h * D) - energy.locking_eval(L, F - h * D)) / (2 * h)
                with self.subTest(variant=L.variant.value):
                    self.assertAlmostEqual(numeric, np.sum(G * D), delta=1e-5 * max(1.0, abs(numeric)))

    def test_witness_is_admissible(self):
        """Test that every variant has an admissible witness."""
        constraints = [
            energy.LockingConstraint.ball(0.0),
            energy.LockingConstraint.determinant(5.0),
            energy.LockingConstraint.ciarlet_necas(0.0),
            energy.LockingConstraint.prager(0.0),
            energy.LockingConstraint.ball(1.0, dim=2),
        ]
        for L in constraints:
            with self.subTest(variant=L.variant.value):
                self.assertLessEqual(energy.locking_eval(L, L.witness()), 0.0)

    def test_invalid_constraints(self):
        """Test that missing parameters are rejected."""
        with self.assertRaises(ValueError):
            energy.LockingConstraint.ball(-1.0)
        with self.assertRaises(ValueError):
            energy.LockingConstraint("determinant")
        with self.assertRaises(ValueError):
            energy.LockingConstraint("unknown")


class TestGetDensityByName(unittest.TestCase):

    def test_known_names(self):
        """Test the density registry."""
        for name in ["quadratic", "double-well", "stvk", "stvk-gradpoly"]:
            with self.subTest(name=name):
                self.assertEqual(energy.get_density_by_name(name).name, name)
        D = energy.get_density_by_name("stvk-gradpoly", q=4.0, s=30.0, lame_mu=2.0)
        self.assertEqual((D.q, D.s), (4.0, 30.0))

    def test_unknown_name(self):
        """Test that an unknown name raises ValueError."""
        with self.assertRaises(ValueError):
            energy.get_density_by_name("neo-hookean")


if __name__ == '__main__':
    unittest.main()
