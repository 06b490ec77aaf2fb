import math
import unittest

import numpy as np

from app import fem
from app.energy import (
    ElasticTensor,
    LockingConstraint,
    double_well_density,
    quadratic_density,
    stvk_density,
    stvk_gradpoly_density,
)
from app.exceptions import IncompatibleParameters, InfeasibleStart, NonFiniteEnergy, OutsideDomain
from app.mesh import BoxMesh, affine_map, element_gradients, identity_deformation, interpolate
from app.tensor_core import determinant, frobenius
from app.utils.sampling_utils import random_rotations


def perturbed_identity(mesh, scale, seed=0):
    rng = np.random.default_rng(seed)
    y = identity_deformation(mesh)
    return y.with_values(y.values + scale * rng.standard_normal(y.values.shape))


class TestAssembly(unittest.TestCase):

    def assert_gradient_matches(self, p, y, seed=0, directions=20):
        gradient = fem.assemble_gradient(p, y)
        rng = np.random.default_rng(seed)
        h = 1e-6
        for _ in range(directions):
            d = rng.standard_normal(y.values.shape)
            numeric = (
                fem.assemble_energy(p, y.with_values(y.values + h * d))
                - fem.assemble_energy(p, y.with_values(y.values - h * d))
            ) / (2 * h)
            analytic = float(np.sum(gradient * d))
            scale = max(abs(analytic), 1e-3 * np.linalg.norm(gradient) * np.linalg.norm(d))
            self.assertLessEqual(abs(numeric - analytic), 1e-5 * scale)

    def test_gradient_scalar_density(self):
        """Test the exact gradient of a scalar density problem with loads and a device."""
        mesh = BoxMesh.unit(2, 3)
        p = fem.BodyProblem(
            mesh=mesh,
            density=double_well_density(),
            body_force=np.array([0.0, 0.0, -1.0]),
            traction=np.array([0.5, 0.0, 0.0]),
            traction_faces=("x0+",),
            device_faces=("x1-",),
            device_coefficient=0.5,
            device_map=affine_map(0.9 * np.eye(3)),
        )
        self.assert_gradient_matches(p, perturbed_identity(mesh, 0.1))

    def test_gradient_gradpoly_density(self):
        """Test the exact gradient through the recovered cofactor field."""
        mesh = BoxMesh.unit(2, 3)
        p = fem.BodyProblem(mesh=mesh, density=stvk_gradpoly_density())
        self.assert_gradient_matches(p, perturbed_identity(mesh, 0.05, seed=1), seed=1)

    def test_gradient_gradpoly_with_det_gradient(self):
        """Test the exact gradient including the recovered determinant field."""
        mesh = BoxMesh.unit(2, 3)
        p = fem.BodyProblem(mesh=mesh, density=stvk_gradpoly_density(uses_det_gradient=True))
        self.assert_gradient_matches(p, perturbed_identity(mesh, 0.05, seed=2), seed=2)

    def test_gradient_gradpoly_2d(self):
        """Test the exact gradient with the constant two-dimensional cofactor jacobian."""
        mesh = BoxMesh.unit(3, 2)
        density = stvk_gradpoly_density(C=ElasticTensor.isotropic(dim=2), uses_det_gradient=True)
        p = fem.BodyProblem(mesh=mesh, density=density)
        self.assert_gradient_matches(p, perturbed_identity(mesh, 0.05, seed=3), seed=3)

    def test_gradient_with_locking_penalty(self):
        """Test the gradient of the locking penalty."""
        mesh = BoxMesh.unit(2, 3)
        p = fem.BodyProblem(mesh=mesh, density=quadratic_density(), locking=LockingConstraint.ball(1.5), penalty=10.0)
        y = perturbed_identity(mesh, 0.1, seed=4)
        self.assertGreater(float(np.max(frobenius(element_gradients(y), 2))), 1.5)
        constraints = (p.active_locking,)
        _, gradient = fem._evaluate(p, y.values, True, constraints, p.penalty)
        h = 1e-6
        for d in np.random.default_rng(4).standard_normal((5,) + y.values.shape):
            plus, _ = fem._evaluate(p, y.values + h * d, False, constraints, p.penalty)
            minus, _ = fem._evaluate(p, y.values - h * d, False, constraints, p.penalty)
            analytic = float(np.sum(gradient * d))
            self.assertLessEqual(abs((plus - minus) / (2 * h) - analytic), 1e-5 * max(abs(analytic), 1.0))

    def test_energy_infinite_for_inverted_elements(self):
        """Test that inverted elements give +inf and no gradient."""
        mesh = BoxMesh.unit(2, 3)
        p = fem.BodyProblem(mesh=mesh, density=stvk_gradpoly_density())
        reflected = interpolate(mesh, affine_map(np.diag([-1.0, 1.0, 1.0])))
        self.assertEqual(fem.assemble_energy(p, reflected), np.inf)
        with self.assertRaises(OutsideDomain):
            fem.assemble_gradient(p, reflected)

    def test_affine_patch_test(self):
        """Test that affine Dirichlet data gives a stationary affine interpolant."""
        F = np.array([[1.1, 0.2, 0.0], [0.0, 0.9, 0.1], [0.05, 0.0, 1.0]])
        mesh = BoxMesh.unit(3, 3)
        for density in [quadratic_density(), stvk_density(), stvk_gradpoly_density()]:
            p = fem.BodyProblem(mesh=mesh, density=density, dirichlet_faces=("all",), dirichlet_map=affine_map(F))
            y = interpolate(mesh, affine_map(F))
            with self.subTest(density=density.name):
                self.assertLessEqual(float(np.linalg.norm(fem.assemble_gradient(p, y, project=True))), 1e-8)

    def test_load_functional(self):
        """Test exact integration of body force and traction against linear fields."""
        mesh = BoxMesh.unit(3, 3)
        y = identity_deformation(mesh)
        body = fem.BodyProblem(mesh=mesh, density=quadratic_density(), body_force=np.array([0.0, 0.0, -1.0]))
        self.assertAlmostEqual(fem.load_functional(body, y), -0.5, places=12)
        surface = fem.BodyProblem(
            mesh=mesh, density=quadratic_density(), traction=np.array([1.0, 0.0, 0.0]), traction_faces=("x0+",)
        )
        self.assertAlmostEqual(fem.load_functional(surface, y), 1.0, places=12)

    def test_boundary_norm_and_device_penalty(self):
        """Test the L2 boundary norm and the hard-device term."""
        mesh = BoxMesh.unit(2, 3)
        self.assertAlmostEqual(fem.boundary_norm(mesh, np.ones((mesh.num_nodes, 1))), math.sqrt(6.0), places=12)
        p = fem.BodyProblem(mesh=mesh, density=quadratic_density(), device_faces=("x2+",), device_coefficient=2.0)
        y = identity_deformation(mesh)
        self.assertEqual(fem.device_penalty(p, y), 0.0)
        shifted = y.with_values(y.values + np.array([0.0, 0.3, 0.4]))
        self.assertAlmostEqual(fem.device_penalty(p, shifted), 2.0 * 0.5, places=12)
        self.assertAlmostEqual(fem.assemble_energy(p, shifted), 3.0 + 1.0, places=10)

    def test_problem_validation(self):
        """Test rejection of inconsistent problems."""
        mesh = BoxMesh.unit(2, 3)
        cases = [
            dict(density=stvk_density(ElasticTensor.isotropic(dim=2))),
            dict(density=quadratic_density(), dirichlet_faces=("x0-",)),
            dict(density=quadratic_density(), dirichlet_faces=("x0-",), dirichlet_map=affine_map(np.eye(3)),
                 traction=np.ones(3), traction_faces=("x0-",)),
            dict(density=quadratic_density(), body_force=np.ones(2)),
            dict(density=quadratic_density(), device_coefficient=-1.0),
            dict(density=quadratic_density(), locking=LockingConstraint.ball(1.0, dim=2)),
        ]
        for params in cases:
            with self.subTest(params=sorted(params)):
                with self.assertRaises(ValueError):
                    fem.BodyProblem(mesh=mesh, **params)

    def test_rotate_problem(self):
        """Test that rotating data and deformation leaves the energy unchanged."""
        mesh = BoxMesh.unit(2, 3)
        p = fem.BodyProblem(
            mesh=mesh,
            density=stvk_gradpoly_density(),
            body_force=np.array([0.1, 0.0, -0.2]),
            dirichlet_faces=("x0-",),
            dirichlet_map=affine_map(np.eye(3)),
            device_faces=("x2+",),
            device_coefficient=1.0,
        )
        R = random_rotations(1, seed=5)[0]
        y = fem.apply_dirichlet(p, perturbed_identity(mesh, 0.05, seed=5))
        rotated = fem.rotate_problem(p, R)
        Ry = y.with_values(y.values @ R.T)
        self.assertAlmostEqual(fem.assemble_energy(rotated, Ry), fem.assemble_energy(p, y), places=8)
        np.testing.assert_allclose(rotated.dirichlet_values, p.dirichlet_values @ R.T, atol=1e-14)

        _, report = fem.minimize(p, y)
        _, rotated_report = fem.minimize(rotated, Ry)
        self.assertLessEqual(abs(rotated_report.energy - report.energy), 1e-6 * max(1.0, abs(report.energy)))

    def test_minor_fields_of_affine_map(self):
        """Test that affine deformations have constant minors."""
        F = np.diag([1.0, 2.0, 0.5])
        y = interpolate(BoxMesh.unit(2, 3), affine_map(F))
        fields = fem.minor_fields(y)
        np.testing.assert_allclose(fields.determinant, 1.0, atol=1e-13)
        np.testing.assert_allclose(fields.cofactor_gradient, 0.0, atol=1e-12)
        np.testing.assert_allclose(fields.determinant_gradient, 0.0, atol=1e-12)
        value, _ = fem.min_det(y)
        self.assertAlmostEqual(value, 1.0)


class TestMinimize(unittest.TestCase):

    def test_affine_minimizer(self):
        """Test that affine Dirichlet data on the whole boundary gives energy |Omega| W(F)."""
        F = np.array([[1.2, 0.1, 0.0], [0.0, 0.8, 0.0], [0.0, 0.2, 1.0]])
        mesh = BoxMesh.unit(3, 3)
        p = fem.BodyProblem(
            mesh=mesh, density=quadratic_density(), dirichlet_faces=("all",), dirichlet_map=affine_map(F), tolerance=1e-12
        )
        y, report = fem.minimize(p, perturbed_identity(mesh, 0.1, seed=6))
        self.assertAlmostEqual(report.energy, float(np.sum(F * F)), delta=1e-6)
        np.testing.assert_allclose(y.values, interpolate(mesh, affine_map(F)).values, atol=1e-5)
        self.assertTrue(np.all(np.diff(report.energy_history) <= 0))

    def test_determinant_stays_positive(self):
        """Test that every accepted iterate keeps det > 0 for a gradient-polyconvex density."""
        mesh = BoxMesh.unit(2, 3)
        p = fem.BodyProblem(
            mesh=mesh,
            density=stvk_gradpoly_density(q=4.0, s=30.0),
            dirichlet_faces=("x0-", "x0+"),
            dirichlet_map=affine_map(0.8 * np.eye(3)),
            max_iterations=100,
        )
        dets = []
        y, report = fem.minimize(p, interpolate(mesh, affine_map(0.8 * np.eye(3))), callback=lambda z: dets.append(fem.min_det(z)[0]))
        self.assertTrue(dets)
        self.assertTrue(all(d > 0 for d in dets))
        self.assertGreater(report.min_det, 0.0)
        self.assertTrue(np.all(np.diff(report.energy_history) <= 0))
        self.assertLessEqual(report.energy, report.energy_history[0])

    def test_non_finite_start(self):
        """Test that an inverted start raises NonFiniteEnergy."""
        mesh = BoxMesh.unit(2, 3)
        p = fem.BodyProblem(mesh=mesh, density=stvk_gradpoly_density())
        with self.assertRaises(NonFiniteEnergy):
            fem.minimize(p, interpolate(mesh, affine_map(np.diag([-1.0, 1.0, 1.0]))))

    def test_mesh_refinement_consistency(self):
        """Test that minimal energies on h and h/2 differ by at most the recorded estimate."""
        harmonic = lambda x: np.stack([x[:, 0] ** 2 - x[:, 1] ** 2, x[:, 1], x[:, 2]], axis=1)  # noqa: E731
        reports = []
        for k in (2, 4):
            mesh = BoxMesh.unit(k, 3)
            p = fem.BodyProblem(mesh=mesh, density=quadratic_density(), dirichlet_faces=("all",), dirichlet_map=harmonic)
            _, report = fem.minimize(p, identity_deformation(mesh))
            reports.append(report)
        coarse, fine = reports
        self.assertLessEqual(abs(coarse.energy - fine.energy), coarse.interpolation_error_estimate)

    def test_compression_determinant_bound(self):
        """Test a positive and mesh-stable minimal determinant under compression."""
        min_dets = []
        for k in (8, 16):
            mesh = BoxMesh.unit(k, 3)
            p = fem.BodyProblem(
                mesh=mesh,
                density=stvk_gradpoly_density(q=4.0, s=30.0),
                dirichlet_faces=("x0-", "x0+"),
                dirichlet_map=affine_map(0.5 * np.eye(3)),
                # 初期勾配が非常に大きいので相対許容誤差は使わず停滞まで回す
                tolerance=0.0,
                max_iterations=600,
            )
            _, report = fem.minimize(p, interpolate(mesh, affine_map(0.5 * np.eye(3))))
            self.assertGreater(report.min_det, 0.0)
            min_dets.append(report.min_det)
        self.assertLessEqual(abs(min_dets[1] - min_dets[0]), 0.2 * min_dets[0])


class TestConstrainedMinimize(unittest.TestCase):

    def test_ball_and_determinant_constraints(self):
        """Test that the final iterate satisfies both constraints at every element."""
        mesh = BoxMesh.unit(2, 3)
        p = fem.BodyProblem(mesh=mesh, density=quadratic_density(), max_iterations=200)
        y, report = fem.constrained_minimize_ball(p, rho=3.0, eps_det=0.2, y_init=identity_deformation(mesh))
        F = element_gradients(y)
        self.assertGreaterEqual(float(np.min(determinant(F))), 0.2 - 1e-8)
        self.assertLessEqual(float(np.max(frobenius(F, 2))), 3.0 + 1e-8)
        self.assertLess(report.energy, 3.0)

    def test_with_dirichlet_data(self):
        """Test feasibility restoration by bisection when Dirichlet nodes are present."""
        mesh = BoxMesh.unit(2, 3)
        p = fem.BodyProblem(
            mesh=mesh,
            density=quadratic_density(),
            dirichlet_faces=("x0-",),
            dirichlet_map=affine_map(np.eye(3)),
            body_force=np.array([0.0, 0.0, -5.0]),
            max_iterations=200,
        )
        y, _ = fem.constrained_minimize_ball(p, rho=3.0, eps_det=0.2, y_init=identity_deformation(mesh))
        F = element_gradients(y)
        self.assertGreaterEqual(float(np.min(determinant(F))), 0.2 - 1e-8)
        self.assertLessEqual(float(np.max(frobenius(F, 2))), 3.0 + 1e-8)
        np.testing.assert_allclose(y.values[p.dirichlet_nodes], p.dirichlet_values)

    def test_determinant_bound_with_compressed_boundary(self):
        """Test that boundary compression with det = eps keeps both constraints."""
        eps, rho = 0.2, 3.0
        mesh = BoxMesh.unit(2, 3)
        compression = affine_map(eps ** (1.0 / 3.0) * np.eye(3))
        p = fem.BodyProblem(
            mesh=mesh,
            density=quadratic_density(),
            dirichlet_faces=("x0-",),
            dirichlet_map=compression,
            max_iterations=200,
        )
        y, report = fem.constrained_minimize_ball(p, rho=rho, eps_det=eps, y_init=interpolate(mesh, compression))
        self.assertGreaterEqual(report.min_det, eps - 1e-8)
        self.assertLessEqual(report.max_gradient_norm, rho + 1e-8)
        F = element_gradients(y)
        self.assertGreaterEqual(float(np.min(determinant(F))), eps - 1e-8)
        np.testing.assert_allclose(y.values[p.dirichlet_nodes], p.dirichlet_values)

    def test_zero_determinant_bound_matches_locked_problem(self):
        """Test that eps = 0 reproduces the ball-locked minimization."""
        mesh = BoxMesh.unit(3, 2)
        shear = affine_map(np.array([[1.0, 0.3], [0.0, 1.0]]))
        p = fem.BodyProblem(
            mesh=mesh,
            density=quadratic_density(dim=2),
            dirichlet_faces=("all",),
            dirichlet_map=shear,
            max_iterations=200,
        )
        start = interpolate(mesh, shear)
        noise = 0.02 * np.random.default_rng(3).standard_normal(start.values.shape)
        y_init = fem.apply_dirichlet(p, start.with_values(start.values + noise))
        y, report = fem.constrained_minimize_ball(p, rho=3.0, eps_det=0.0, y_init=y_init)
        locked = fem.BodyProblem(
            mesh=mesh,
            density=quadratic_density(dim=2),
            dirichlet_faces=("all",),
            dirichlet_map=shear,
            locking=LockingConstraint.ball(3.0, dim=2),
            max_iterations=200,
        )
        y_locked, locked_report = fem.minimize(locked, y_init)
        self.assertAlmostEqual(report.energy, locked_report.energy, places=6)
        np.testing.assert_allclose(y.values, y_locked.values, atol=1e-4)
        self.assertAlmostEqual(report.energy, 2.09, places=6)

    def test_incompatible_parameters(self):
        """Test rho <= sqrt(n) eps^(1/n)."""
        mesh = BoxMesh.unit(1, 3)
        p = fem.BodyProblem(mesh=mesh, density=quadratic_density())
        with self.assertRaises(IncompatibleParameters):
            fem.constrained_minimize_ball(p, rho=1.0, eps_det=0.2, y_init=identity_deformation(mesh))

    def test_infeasible_start(self):
        """Test that an infeasible start is rejected."""
        mesh = BoxMesh.unit(1, 3)
        p = fem.BodyProblem(mesh=mesh, density=quadratic_density())
        with self.assertRaises(InfeasibleStart):
            fem.constrained_minimize_ball(p, rho=3.0, eps_det=0.2, y_init=interpolate(mesh, affine_map(0.1 * np.eye(3))))


class TestCompactnessDiagnostic(unittest.TestCase):

    def test_bounded_sequence(self):
        """Test the diagnostic on a bounded sequence of deformations."""
        mesh = BoxMesh.unit(2, 3)
        history = [interpolate(mesh, affine_map((1.0 + 0.1 * k) * np.eye(3))) for k in range(5)]
        series = fem.compactness_diagnostic(history)
        self.assertEqual(len(series), 5)
        self.assertTrue(fem.is_bounded_series(series))
        self.assertFalse(fem.is_bounded_series(np.array([1.0, 100.0])))
        self.assertTrue(fem.is_bounded_series(np.array([])))

    def test_affine_closed_form(self):
        """Test the hand-computed terms for an affine map with det F = 1."""
        # ∫|Fx|² = 4/3 + 1/12 + 1/3 = 7/4、|F|² = |Cof F|² = 21/4
        y = interpolate(BoxMesh.unit(2, 3), affine_map(np.diag([2.0, 0.5, 1.0])))
        terms = fem.compactness_terms(y, p=2.0, s=1.0)
        self.assertAlmostEqual(terms["sobolev"], math.sqrt(7.0 / 4.0) + math.sqrt(21.0 / 4.0), places=12)
        self.assertAlmostEqual(terms["cofactor"], math.sqrt(21.0 / 4.0), places=10)
        self.assertAlmostEqual(terms["barrier"], 1.0, places=12)

    def test_lp_term_is_mesh_independent_for_affine_maps(self):
        """Test that the L^4 norm of an affine map is exact on every mesh."""
        # ∫_{[0,1]²} (x² + y²)² = 2/5 + 2/9
        expected = (2.0 / 5.0 + 2.0 / 9.0) ** 0.25 + 4.0 ** 0.25
        for k in (1, 2, 5):
            with self.subTest(subdivisions=k):
                y = identity_deformation(BoxMesh.unit(k, 2))
                self.assertAlmostEqual(fem.compactness_terms(y, p=4.0)["sobolev"], expected, places=12)

    def test_constant_history(self):
        """Test that a constant history gives a constant series."""
        y = interpolate(BoxMesh.unit(2, 3), affine_map(np.diag([2.0, 0.5, 1.0])))
        series = fem.compactness_diagnostic([y] * 4)
        np.testing.assert_allclose(series, np.full(4, series[0]), rtol=0, atol=0)
        self.assertTrue(fem.is_bounded_series(series))

    def test_barrier_term_infinite_for_inverted_fields(self):
        """Test that inverted elements make the barrier term infinite."""
        y = interpolate(BoxMesh.unit(1, 3), affine_map(np.diag([-1.0, 1.0, 1.0])))
        self.assertEqual(fem.compactness_terms(y)["barrier"], np.inf)


if __name__ == '__main__':
    unittest.main()
