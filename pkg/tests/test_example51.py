import tempfile
import unittest
from pathlib import Path

import numpy as np

from app.exceptions import DomainError
from app.example51 import (
    Example51Fields,
    example51_divergence,
    example51_eval,
    example51_gradient_integral,
    example51_interpolation_study,
    example51_inverse_det_integral,
    example51_sobolev_exponent,
    figure1_export,
)
from app.tensor_core import cofactor, determinant
from app.vtk_writer import read_counts

DELTAS = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8]


class TestExample51Fields(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(7)
        self.points = rng.uniform(0.0, 1.0, size=(100, 3))
        self.points[:, 0] = 1.0 - self.points[:, 0]  # x1 ∈ (0, 1]

    def test_cofactor_closed_form(self):
        """Test the closed-form cofactor against the 2x2 minor computation."""
        for t in [1.0, 10.0, 100.0]:
            with self.subTest(t=t):
                fields = Example51Fields(t)
                expected = cofactor(fields.gradient(self.points))
                np.testing.assert_allclose(fields.cofactor(self.points), expected, rtol=0, atol=1e-12)

    def test_determinant_closed_form(self):
        """Test the closed-form determinant against the numerical determinant."""
        for t in [1.0, 100.0]:
            with self.subTest(t=t):
                fields = Example51Fields(t)
                expected = determinant(fields.gradient(self.points))
                np.testing.assert_allclose(fields.determinant(self.points), expected, rtol=0, atol=1e-12)
                self.assertTrue(np.all(fields.determinant(self.points) > 0))

    def test_gradient_matches_finite_differences(self):
        """Test the gradient table against central differences of the deformation."""
        fields = Example51Fields(2.0)
        x = np.array([0.4, 0.7, 0.3])
        h = 1e-6
        numerical = np.stack(
            [(fields.deformation(x + h * e) - fields.deformation(x - h * e)) / (2 * h) for e in np.eye(3)],
            axis=-1,
        )
        np.testing.assert_allclose(fields.gradient(x), numerical, rtol=1e-7, atol=1e-8)

    def test_eval(self):
        """Test that example51_eval returns consistent fields at a point."""
        y, F, C, d = example51_eval(1.0, [0.25, 0.5, 1.0])
        np.testing.assert_allclose(y, [0.0625, 0.25, 0.0625])
        np.testing.assert_allclose(C, cofactor(F), atol=1e-14)
        self.assertAlmostEqual(d, 2.0 * 0.25**3.5)
        self.assertAlmostEqual(C[1, 1], 2.0 * 0.25**3)
        for t in [1.0, 7.0]:
            with self.subTest(t=t):
                y, _, _, d = example51_eval(t, [1.0, 1.0, 1.0])
                np.testing.assert_allclose(y, [1.0, 1.0, 1.0])
                self.assertAlmostEqual(d, 2.0)

    def test_domain_error_at_singular_face(self):
        """Test that gradients are rejected on the face x1 = 0."""
        fields = Example51Fields(1.0)
        with self.assertRaises(DomainError):
            fields.gradient([0.0, 0.5, 0.5])
        with self.assertRaises(DomainError):
            example51_eval(1.0, [[0.5, 0.5, 0.5], [-0.1, 0.5, 0.5]])
        # 変形そのものは x1 = 0 でも定義される
        np.testing.assert_allclose(fields.deformation([0.0, 0.5, 0.5]), [0.0, 0.0, 0.0])

    def test_invalid_parameter(self):
        """Test rejection of t < 1."""
        for t in [0.5, 0.0, -1.0]:
            with self.subTest(t=t):
                with self.assertRaises(ValueError):
                    Example51Fields(t)


class TestDivergence(unittest.TestCase):

    def test_divergence_rate(self):
        """Test that the fitted slope matches -1/(t+1) while W^{1,inf} norms stay fixed."""
        for t in [1.0, 10.0, 100.0]:
            with self.subTest(t=t):
                result = example51_divergence(t, DELTAS)
                self.assertAlmostEqual(result.expected, -1.0 / (t + 1.0))
                self.assertLessEqual(result.relative_error, 0.1)
                self.assertLess(result.sup_variation, 0.01)
                self.assertTrue(np.all(np.diff(result.integrals) > 0))

    def test_invalid_deltas(self):
        """Test rejection of short or non-decreasing delta lists."""
        cases = [[1e-2, 1e-3], [1e-2, 1e-2, 1e-3], [1e-3, 1e-2, 1e-4], [1.0, 1e-2, 1e-3], [1e-2, 1e-3, 0.0]]
        for deltas in cases:
            with self.subTest(deltas=deltas):
                with self.assertRaises(ValueError):
                    example51_divergence(1.0, deltas)

    def test_inverse_det_integral_converges(self):
        """Test that the negative power of the determinant stays integrable."""
        for t in [1.0, 10.0]:
            with self.subTest(t=t):
                limit = 2.0 ** (-1.0 / (4 * t + 3)) * (t + 1) / t
                values = [example51_inverse_det_integral(t, delta) for delta in [1e-2, 1e-4, 1e-8]]
                self.assertTrue(np.all(np.diff(values) > 0))
                self.assertLess(values[-1], limit)
                self.assertAlmostEqual(values[-1], limit, delta=1e-3)
        with self.assertRaises(ValueError):
            example51_inverse_det_integral(1.0, 0.0)

    def test_sobolev_exponent(self):
        """Test the integrability threshold 1 + t."""
        self.assertEqual(example51_sobolev_exponent(1.0), 2.0)
        self.assertEqual(example51_sobolev_exponent(100.0), 101.0)
        with self.assertRaises(ValueError):
            example51_sobolev_exponent(0.5)

    def test_gradient_integral(self):
        """Test that |grad y|^p stays bounded below the threshold and blows up above it."""
        below = [example51_gradient_integral(1.0, 1.5, delta) for delta in [1e-6, 1e-8]]
        self.assertTrue(np.isfinite(below[-1]))
        self.assertLess(below[1] - below[0], 0.05)
        coarse = example51_gradient_integral(1.0, 3.0, 1e-2)
        fine = example51_gradient_integral(1.0, 3.0, 1e-6)
        self.assertGreater(fine, 5.0 * coarse)
        with self.assertRaises(ValueError):
            example51_gradient_integral(1.0, 1.5, 1.0)


class TestInterpolation(unittest.TestCase):

    def test_interpolation_error_decreases(self):
        """Test that recovered determinant errors shrink under refinement."""
        study = example51_interpolation_study(100.0, [4, 8, 16])
        self.assertEqual(study.subdivisions, [4, 8, 16])
        self.assertTrue(np.all(np.diff(study.mesh_sizes) < 0))
        for factor in study.reduction_factors:
            self.assertGreaterEqual(factor, 1.5)

    def test_figure1_export(self):
        """Test that the deformed and reference meshes are written with the expected counts."""
        with tempfile.TemporaryDirectory() as directory:
            path = figure1_export(1.0, 3, Path(directory) / "figure1.vtk")
            self.assertTrue(path.exists())
            self.assertEqual(read_counts(path), (64, 162))
            reference = Path(directory) / "figure1_reference.vtk"
            self.assertEqual(read_counts(reference), (64, 162))


if __name__ == '__main__':
    unittest.main()
