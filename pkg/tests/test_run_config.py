import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

from app.config.run_config import (
    RunConfig,
    apply_overrides,
    ensure_valid,
    load_run_config,
    parse_run_config,
    validate_run_config,
)
from app.exceptions import ConfigError

SAMPLE = """\
# 2次元の圧縮試験
[run]
subcommand = minimize
seed = 3

[density]
name = stvk-gradpoly
dim = 2
q = 4
s = 30  # 障壁指数
uses_det_gradient = yes

[mesh]
subdivisions = 4, 2

[boundary]
dirichlet_faces = x0-, x0+
dirichlet_map = scale: 0.5

[envelope]
directions = e11 | e22
range = -0.5, 0.5
"""


class TestParseRunConfig(unittest.TestCase):

    def test_sample(self):
        """Test that sections and keys map to config fields."""
        config = parse_run_config(SAMPLE)
        self.assertEqual(config.subcommand, "minimize")
        self.assertEqual(config.seed, 3)
        self.assertEqual(config.density, "stvk-gradpoly")
        self.assertEqual(config.dim, 2)
        self.assertEqual((config.q, config.s), (4.0, 30.0))
        self.assertTrue(config.uses_det_gradient)
        self.assertEqual(config.subdivisions, (4, 2))
        self.assertEqual(config.dirichlet_faces, ("x0-", "x0+"))
        self.assertEqual(config.dirichlet_map, "scale: 0.5")
        self.assertEqual(config.slice_directions, ("e11", "e22"))
        self.assertEqual(config.slice_range, (-0.5, 0.5))
        self.assertEqual(validate_run_config(config), (True, None))

    def test_line_numbers(self):
        """Test that keys remember their line in the file."""
        config = parse_run_config(SAMPLE)
        self.assertEqual(config.line_of("run.subcommand"), 3)
        self.assertEqual(config.line_of("density.s"), 10)
        self.assertIsNone(config.line_of("locking.rho"))

    def test_defaults(self):
        """Test that an empty file yields the defaults."""
        self.assertEqual(parse_run_config(""), RunConfig())
        self.assertEqual(validate_run_config(RunConfig()), (True, None))

    def test_unknown_section_and_key(self):
        """Test that unknown sections and keys are reported with their line."""
        with self.assertRaises(ConfigError) as context:
            parse_run_config("[run]\nseed = 1\n[solver]\nx = 1\n")
        self.assertEqual(context.exception.line, 3)
        with self.assertRaises(ConfigError) as context:
            parse_run_config("[run]\nseed = 1\nsubcomand = minimize\n")
        self.assertEqual(context.exception.key, "run.subcomand")
        self.assertEqual(context.exception.line, 3)

    def test_invalid_values(self):
        """Test that conversion failures become ConfigError."""
        cases = [
            "[run]\nseed = three\n",
            "[mesh]\nsubdivisions = 2.5\n",
            "[density]\nuses_det_gradient = maybe\n",
            "[boundary]\ndirichlet_faces = top\n",
            "[boundary]\ndirichlet_map = rotate: 90\n",
            "[envelope]\nrange = 0.5\n",
            "[run]\nseed\n",
        ]
        for text in cases:
            with self.subTest(text=text):
                with self.assertRaises(ConfigError):
                    parse_run_config(text)


class TestValidateRunConfig(unittest.TestCase):

    def test_violations(self):
        """Test that each rule reports the offending key."""
        cases = [
            (dict(subcommand="solve"), "run.subcommand"),
            (dict(dim=4), "density.dim"),
            (dict(density="neo-hooke"), "density.name"),
            (dict(density="stvk-gradpoly", q=1.2), "density.q"),
            (dict(density="stvk-gradpoly", r=1.0), "density.r"),
            (dict(density="stvk-gradpoly", s=0.0), "density.s"),
            (dict(locking="cube"), "locking.variant"),
            (dict(locking="ball", rho=0.0), "locking.rho"),
            (dict(subcommand="constrained-minimize", rho=1.0, eps=0.2), "locking.rho"),
            (dict(subdivisions=(2, 2)), "mesh.subdivisions"),
            (dict(lower=(0.0, 0.0, 0.0), upper=(1.0, 0.0, 1.0)), "mesh.upper"),
            (dict(body_force=(1.0, 0.0)), "load.body_force"),
            (dict(tolerance=0.0), "optimizer.tolerance"),
            (dict(initial="random"), "optimizer.initial"),
            (dict(slice_directions=("e11", "e22", "e33")), "envelope.directions"),
            (dict(cell_boundary="neumann"), "envelope.cell_boundary"),
            (dict(t=0.5), "example51.t"),
            (dict(deltas=(1e-2, 1e-1, 1e-3)), "example51.deltas"),
        ]
        for changes, key in cases:
            with self.subTest(changes=changes):
                is_valid, message = validate_run_config(replace(RunConfig(), **changes))
                self.assertFalse(is_valid)
                self.assertTrue(message.startswith(key), message)

    def test_constrained_threshold(self):
        """Test the feasibility threshold rho > sqrt(n) eps^(1/n)."""
        ok = replace(RunConfig(), subcommand="constrained-minimize", rho=3.0, eps=0.2)
        self.assertEqual(validate_run_config(ok), (True, None))
        unlocked_det = replace(ok, eps=0.0)
        self.assertEqual(validate_run_config(unlocked_det), (True, None))
        is_valid, message = validate_run_config(replace(ok, eps=-0.1))
        self.assertFalse(is_valid)
        self.assertTrue(message.startswith("locking.eps"), message)

    def test_ensure_valid_reports_line(self):
        """Test that ensure_valid raises with the key and line of the bad value."""
        config = parse_run_config("[run]\nseed = 1\n\n[example51]\nt = 0.5\n")
        with self.assertRaises(ConfigError) as context:
            ensure_valid(config)
        self.assertEqual(context.exception.key, "example51.t")
        self.assertEqual(context.exception.line, 5)
        self.assertIn("[line: 5]", str(context.exception))


class TestLoadRunConfig(unittest.TestCase):

    def test_load_and_override(self):
        """Test loading from disk and applying command line overrides."""
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "run.ini"
            path.write_text(SAMPLE, encoding="utf-8")
            config = load_run_config(path)
        self.assertEqual(config.dim, 2)
        config = apply_overrides(config, {"seed": 11, "rho": None, "output_dir": "out"})
        self.assertEqual(config.seed, 11)
        self.assertEqual(config.rho, RunConfig().rho)
        self.assertEqual(config.output_dir, "out")
        with self.assertRaises(ConfigError):
            apply_overrides(config, {"radius": 1.0})

    def test_missing_file(self):
        """Test that an unreadable file is a ConfigError."""
        with self.assertRaises(ConfigError):
            load_run_config("/nonexistent/run.ini")


if __name__ == '__main__':
    unittest.main()
