import unittest

import numpy as np

from app.input_parser import build_map, parse_faces, parse_map_type, parse_matrix, parse_slice_matrix, parse_vector


class TestInputParser(unittest.TestCase):

    def test_parse_vector(self):
        """Test that comma separated numbers are accepted."""
        test_cases = [
            ("0.5, 0, 0", [0.5, 0.0, 0.0]),
            ("-1e-3,2", [-1e-3, 2.0]),
            ("   .5  ,  +3.   ", [0.5, 3.0]),
            ("7", [7.0]),
        ]
        for text, expected in test_cases:
            with self.subTest(text=text):
                np.testing.assert_array_equal(parse_vector(text), expected)

    def test_parse_vector_invalid(self):
        """Test that malformed number lists are rejected."""
        for text in ["", "1,,2", "a, b", "1; 2", "1, 2,"]:
            with self.subTest(text=text):
                with self.assertRaises(ValueError):
                    parse_vector(text)

    def test_parse_matrix(self):
        """Test semicolon separated rows."""
        np.testing.assert_array_equal(parse_matrix("1, 2; 3, 4"), [[1.0, 2.0], [3.0, 4.0]])
        with self.assertRaises(ValueError):
            parse_matrix("1, 2; 3")
        with self.assertRaises(ValueError):
            parse_matrix("1, 2, 3; 4, 5, 6")

    def test_parse_faces(self):
        """Test face lists including 'all' and the empty list."""
        self.assertEqual(parse_faces("x0-, x1+"), ("x0-", "x1+"))
        self.assertEqual(parse_faces("all"), ("all",))
        self.assertEqual(parse_faces(""), ())
        for text in ["x3-", "left", "x0"]:
            with self.subTest(text=text):
                with self.assertRaises(ValueError):
                    parse_faces(text)

    def test_parse_map_type(self):
        """Test that boundary map kinds and arguments are split."""
        test_cases = [
            ("identity", ("identity", "")),
            ("scale: 0.5", ("scale", "0.5")),
            ("affine: 1,0; 0,1 | 0.5, 0", ("affine", "1,0; 0,1 | 0.5, 0")),
            ("example51: 10", ("example51", "10")),
        ]
        for text, expected in test_cases:
            with self.subTest(text=text):
                self.assertEqual(parse_map_type(text), expected)
        with self.assertRaises(ValueError):
            parse_map_type("rotate: 90")

    def test_build_map(self):
        """Test evaluation of the boundary maps on nodal coordinates."""
        x = np.array([[1.0, 2.0], [0.0, -1.0]])
        np.testing.assert_allclose(build_map("identity", 2)(x), x)
        np.testing.assert_allclose(build_map("scale: 0.5", 2)(x), 0.5 * x)
        np.testing.assert_allclose(build_map("affine: 0,1; 1,0 | 1, 0", 2)(x), [[3.0, 1.0], [0.0, 0.0]])
        y = build_map("example51: 1", 3)(np.array([[0.25, 0.5, 1.0]]))
        np.testing.assert_allclose(y, [[0.0625, 0.25, 0.0625]])

    def test_build_map_invalid(self):
        """Test dimension mismatches in boundary maps."""
        for text, dim in [("affine: 1,0; 0,1", 3), ("affine: 1,0; 0,1 | 1,2,3", 2), ("example51: 2", 2)]:
            with self.subTest(text=text, dim=dim):
                with self.assertRaises(ValueError):
                    build_map(text, dim)

    def test_parse_slice_matrix(self):
        """Test zero, unit and explicit slice matrices."""
        np.testing.assert_array_equal(parse_slice_matrix("0", 2), np.zeros((2, 2)))
        expected = np.zeros((3, 3))
        expected[0, 1] = 1.0
        np.testing.assert_array_equal(parse_slice_matrix("e12", 3), expected)
        np.testing.assert_array_equal(parse_slice_matrix("1,0; 0,-1", 2), np.diag([1.0, -1.0]))
        for text, dim in [("e33", 2), ("1,0; 0,1", 3), ("e1", 2)]:
            with self.subTest(text=text, dim=dim):
                with self.assertRaises(ValueError):
                    parse_slice_matrix(text, dim)


if __name__ == '__main__':
    unittest.main()
