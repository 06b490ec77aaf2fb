import argparse
import logging
import sys

from app.config.run_config import SUBCOMMANDS, RunConfig, apply_overrides, ensure_valid, load_run_config
from app.exceptions import ConfigError
from app.runner import EXIT_CONFIG_ERROR, run

logger = logging.getLogger(__name__)

# CLI フラグ -> RunConfig のフィールド
OVERRIDE_FLAGS = {
    "seed": int,
    "samples": int,
    "density": str,
    "dim": int,
    "locking": str,
    "rho": float,
    "eps": float,
    "grid": int,
    "region": str,
    "depth": int,
    "cell_subdivisions": int,
    "cell_boundary": str,
    "t": float,
    "figure_subdivisions": int,
    "max_iterations": int,
    "tolerance": float,
    "output_dir": str,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Nonlinear elasticity with locking constraints")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ERROR")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument("--config", default=None, help="key = value config file")
        for flag, kind in OVERRIDE_FLAGS.items():
            sub.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=kind, default=None)
        sub.add_argument("--subdivisions", type=int, default=None)
    return parser


def configure_logging(level: str):
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def main(argv=None) -> int:
    """
    CLI のエントリポイント

    Returns:
        int: 0 成功 / 1 検証失敗 / 2 設定エラー
    """
    args = build_parser().parse_args(argv)
    try:
        config = load_run_config(args.config) if args.config else RunConfig()
        overrides = {flag: getattr(args, flag) for flag in OVERRIDE_FLAGS}
        overrides["subcommand"] = args.subcommand
        overrides["log_level"] = args.log_level
        if args.subdivisions is not None:
            overrides["subdivisions"] = (args.subdivisions,)
        config = apply_overrides(config, overrides)
        configure_logging(config.log_level)
        ensure_valid(config)
    except ConfigError as e:
        configure_logging(args.log_level or "INFO")
        logger.error(f"Config error: {e}")
        return EXIT_CONFIG_ERROR

    result = run(config)
    for path in result.artifacts:
        print(f"Wrote {path}")
    return result.status


if __name__ == "__main__":
    sys.exit(main())
