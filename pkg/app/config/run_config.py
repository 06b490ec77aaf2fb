"""
実行設定モジュール
セクション付きの key = value 形式の設定ファイル（configparser）を読み込み、検証する
"""
import configparser
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from app.config.constants import (
    CELL_DEFAULT_SUBDIVISIONS,
    DEFAULT_ALPHA_COEF,
    DEFAULT_COERCIVITY_C,
    DEFAULT_LAME_LAMBDA,
    DEFAULT_LAME_MU,
    DEFAULT_PENALTY,
    DEFAULT_Q,
    DEFAULT_R,
    DEFAULT_S,
    EXAMPLE51_DEFAULT_T,
    LAMINATE_DEFAULT_DEPTH,
    LBFGS_MAX_ITERATIONS,
    LBFGS_TOLERANCE,
    SUPPORTED_DIMENSIONS,
)
from app.exceptions import ConfigError
from app.input_parser import parse_faces, parse_map_type, parse_vector

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("identities", "envelope", "minimize", "constrained-minimize", "example51", "figure1")
DENSITIES = ("quadratic", "double-well", "stvk", "stvk-gradpoly")
LOCKING_VARIANTS = ("none", "ball", "determinant", "ciarlet-necas", "prager")
REGIONS = ("ball", "box")
CELL_BOUNDARY_CONDITIONS = ("dirichlet", "periodic")


@dataclass(frozen=True)
class RunConfig:
    # [run]
    subcommand: str = "identities"
    seed: int = 0
    log_level: str = "INFO"
    # [density]
    density: str = "quadratic"
    dim: int = 3
    lame_lambda: float = DEFAULT_LAME_LAMBDA
    lame_mu: float = DEFAULT_LAME_MU
    alpha_coef: float = DEFAULT_ALPHA_COEF
    p: float = 4.0
    q: float = DEFAULT_Q
    r: float = DEFAULT_R
    s: float = DEFAULT_S
    c: float = DEFAULT_COERCIVITY_C
    uses_det_gradient: bool = False
    # [locking]
    locking: str = "none"
    rho: float = 2.0
    eps: float = 0.2
    penalty: float = DEFAULT_PENALTY
    # [mesh]
    subdivisions: tuple[int, ...] = (4,)
    lower: tuple[float, ...] | None = None
    upper: tuple[float, ...] | None = None
    # [boundary]
    dirichlet_faces: tuple[str, ...] = ()
    dirichlet_map: str = "identity"
    device_faces: tuple[str, ...] = ()
    device_coefficient: float = 0.0
    device_map: str | None = None
    # [load]
    body_force: tuple[float, ...] | None = None
    traction: tuple[float, ...] | None = None
    traction_faces: tuple[str, ...] = ()
    # [optimizer]
    tolerance: float = LBFGS_TOLERANCE
    max_iterations: int = LBFGS_MAX_ITERATIONS
    initial: str = "identity"
    # [identities]
    samples: int = 1000
    # [envelope]
    grid: int = 41
    region: str = "ball"
    slice_base: str = "0"
    slice_directions: tuple[str, ...] = ("e11",)
    slice_range: tuple[float, float] | None = None
    cell_subdivisions: int = CELL_DEFAULT_SUBDIVISIONS
    cell_boundary: str = "periodic"
    depth: int = LAMINATE_DEFAULT_DEPTH
    # [example51]
    t: float = EXAMPLE51_DEFAULT_T
    deltas: tuple[float, ...] = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
    interpolation_subdivisions: tuple[int, ...] = (4, 8, 16)
    figure_subdivisions: int = 8
    # [output]
    output_dir: str = "output"
    # "section.key" -> 設定ファイルの行番号
    lines: dict = field(default_factory=dict, compare=False)

    def line_of(self, key: str) -> int | None:
        return self.lines.get(key)


def _ints(text: str) -> tuple[int, ...]:
    values = parse_vector(text)
    if any(v != int(v) for v in values):
        raise ValueError(f"Expected integers: {text!r}")
    return tuple(int(v) for v in values)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in parse_vector(text))


def _boolean(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"Not a boolean: {text!r}")


def _matrices(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split('|') if part.strip())


def _map(text: str) -> str:
    parse_map_type(text)
    return text.strip()


def _range(text: str) -> tuple[float, float]:
    values = _floats(text)
    if len(values) != 2:
        raise ValueError(f"A range needs two numbers: {text!r}")
    return values


# セクション -> キー -> (フィールド名, 変換関数)
SCHEMA = {
    "run": {"subcommand": ("subcommand", str.strip), "seed": ("seed", int), "log_level": ("log_level", str.strip)},
    "density": {
        "name": ("density", str.strip),
        "dim": ("dim", int),
        "lame_lambda": ("lame_lambda", float),
        "lame_mu": ("lame_mu", float),
        "alpha": ("alpha_coef", float),
        "p": ("p", float),
        "q": ("q", float),
        "r": ("r", float),
        "s": ("s", float),
        "c": ("c", float),
        "uses_det_gradient": ("uses_det_gradient", _boolean),
    },
    "locking": {
        "variant": ("locking", str.strip),
        "rho": ("rho", float),
        "eps": ("eps", float),
        "penalty": ("penalty", float),
    },
    "mesh": {"subdivisions": ("subdivisions", _ints), "lower": ("lower", _floats), "upper": ("upper", _floats)},
    "boundary": {
        "dirichlet_faces": ("dirichlet_faces", parse_faces),
        "dirichlet_map": ("dirichlet_map", _map),
        "device_faces": ("device_faces", parse_faces),
        "alpha": ("device_coefficient", float),
        "device_map": ("device_map", _map),
    },
    "load": {
        "body_force": ("body_force", _floats),
        "traction": ("traction", _floats),
        "traction_faces": ("traction_faces", parse_faces),
    },
    "optimizer": {
        "tolerance": ("tolerance", float),
        "max_iterations": ("max_iterations", int),
        "initial": ("initial", str.strip),
    },
    "identities": {"samples": ("samples", int)},
    "envelope": {
        "grid": ("grid", int),
        "region": ("region", str.strip),
        "base": ("slice_base", str.strip),
        "directions": ("slice_directions", _matrices),
        "range": ("slice_range", _range),
        "cell_subdivisions": ("cell_subdivisions", int),
        "cell_boundary": ("cell_boundary", str.strip),
        "depth": ("depth", int),
    },
    "example51": {
        "t": ("t", float),
        "deltas": ("deltas", _floats),
        "interpolation_subdivisions": ("interpolation_subdivisions", _ints),
        "figure_subdivisions": ("figure_subdivisions", int),
    },
    "output": {"directory": ("output_dir", str.strip)},
}

FIELD_KEYS = {name: f"{section}.{key}" for section, keys in SCHEMA.items() for key, (name, _) in keys.items()}


def _line_numbers(text: str) -> dict[str, int]:
    """"section.key" -> 行番号（1始まり）"""
    numbers = {}
    section = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            numbers.setdefault(section, number)
            continue
        for separator in ("=", ":"):
            if separator in line and section is not None:
                key = line.split(separator, 1)[0].strip().lower()
                numbers.setdefault(f"{section}.{key}", number)
                break
    return numbers


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    """
    設定テキストを RunConfig に変換する（検証は行わない）

    Raises:
        ConfigError: 構文エラー、未知のセクション・キー、型変換の失敗
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"Malformed config {source}: {e}", line=getattr(e, "lineno", None)) from e

    lines = _line_numbers(text)
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"Unknown section [{section}]", key=section, line=lines.get(section))
        for key, raw in parser.items(section):
            location = f"{section}.{key}"
            if key not in SCHEMA[section]:
                raise ConfigError(f"Unknown key {location}", key=location, line=lines.get(location))
            name, convert = SCHEMA[section][key]
            try:
                values[name] = convert(raw)
            except ValueError as e:
                raise ConfigError(f"Invalid value for {location}: {e}", key=location, line=lines.get(location)) from e
    return RunConfig(**values, lines=lines)


def load_run_config(path: str | Path) -> RunConfig:
    """
    設定ファイルを読み込んで検証する

    Raises:
        ConfigError: 読み込み・解析・検証に失敗した場合
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    config = parse_run_config(text, source=str(path))
    ensure_valid(config)
    logger.info(f"Config loaded: {path} (subcommand={config.subcommand})")
    return config


def apply_overrides(config: RunConfig, overrides: dict) -> RunConfig:
    """None でない値でフィールドを上書きする"""
    names = {f.name for f in fields(RunConfig)}
    changes = {}
    for name, value in overrides.items():
        if value is None:
            continue
        if name not in names:
            raise ConfigError(f"Unknown override: {name}", key=name)
        changes[name] = value
    return replace(config, **changes)


def _violation(config: RunConfig) -> tuple[str, str] | None:
    """最初に見つかった違反の (フィールド名, メッセージ)"""
    if config.subcommand not in SUBCOMMANDS:
        return "subcommand", f"subcommand must be one of {', '.join(SUBCOMMANDS)}"
    if config.dim not in SUPPORTED_DIMENSIONS:
        return "dim", f"dimension must be one of {SUPPORTED_DIMENSIONS}"
    if config.density not in DENSITIES:
        return "density", f"density must be one of {', '.join(DENSITIES)}"
    if config.density == "stvk-gradpoly":
        if not config.p >= 2:
            return "p", "p must satisfy p >= 2"
        if not config.q >= config.p / (config.p - 1):
            return "q", f"q must satisfy q >= p/(p-1) = {config.p / (config.p - 1):.6g}"
        if not config.r > 1:
            return "r", "r must satisfy r > 1"
        if not config.s > 0:
            return "s", "s must satisfy s > 0"
        if not config.alpha_coef > 0:
            return "alpha_coef", "alpha must be positive"
    if config.locking not in LOCKING_VARIANTS:
        return "locking", f"locking variant must be one of {', '.join(LOCKING_VARIANTS)}"
    if config.locking in ("ball", "ciarlet-necas", "prager") and not config.rho > 0:
        return "rho", "rho must be positive"
    if config.locking == "determinant" and not config.eps > 0:
        return "eps", "eps must be positive"
    if config.subcommand == "constrained-minimize":
        if not config.eps >= 0:
            return "eps", "eps must be nonnegative"
        threshold = math.sqrt(config.dim) * config.eps ** (1.0 / config.dim)
        if not config.rho > threshold:
            return "rho", f"rho must exceed sqrt(n)*eps^(1/n) = {threshold:.6g}"
    if config.penalty <= 0:
        return "penalty", "penalty must be positive"
    if len(config.subdivisions) not in (1, config.dim) or any(k < 1 for k in config.subdivisions):
        return "subdivisions", "subdivisions must be one positive integer or one per axis"
    for name in ("lower", "upper"):
        value = getattr(config, name)
        if value is not None and len(value) != config.dim:
            return name, f"{name} must have {config.dim} entries"
    if config.lower is not None and config.upper is not None and any(
        lo >= hi for lo, hi in zip(config.lower, config.upper)
    ):
        return "upper", "upper corner must exceed lower corner"
    if config.device_coefficient < 0:
        return "device_coefficient", "alpha must be nonnegative"
    for name in ("body_force", "traction"):
        value = getattr(config, name)
        if value is not None and len(value) != config.dim:
            return name, f"{name} must have {config.dim} entries"
    if config.tolerance <= 0:
        return "tolerance", "tolerance must be positive"
    if config.max_iterations < 1:
        return "max_iterations", "max_iterations must be positive"
    if config.initial not in ("identity", "dirichlet"):
        return "initial", "initial must be 'identity' or 'dirichlet'"
    if config.samples < 1:
        return "samples", "samples must be positive"
    if config.grid < 1:
        return "grid", "grid must be positive"
    if config.region not in REGIONS:
        return "region", f"region must be one of {', '.join(REGIONS)}"
    if config.subcommand == "envelope" and not config.rho > 0:
        return "rho", "rho must be positive"
    if len(config.slice_directions) not in (1, 2):
        return "slice_directions", "one or two slice directions are required"
    if config.slice_range is not None and not config.slice_range[0] < config.slice_range[1]:
        return "slice_range", "slice range must be increasing"
    if config.cell_subdivisions < 1:
        return "cell_subdivisions", "cell_subdivisions must be positive"
    if config.cell_boundary not in CELL_BOUNDARY_CONDITIONS:
        return "cell_boundary", f"cell_boundary must be one of {', '.join(CELL_BOUNDARY_CONDITIONS)}"
    if config.depth < 0:
        return "depth", "depth must be nonnegative"
    if not config.t >= 1:
        return "t", "t must satisfy t >= 1"
    deltas = config.deltas
    if len(deltas) < 3 or any(not 0 < d < 1 for d in deltas) or any(b >= a for a, b in zip(deltas, deltas[1:])):
        return "deltas", "deltas must be at least three strictly decreasing values in (0, 1)"
    if any(k < 1 for k in config.interpolation_subdivisions):
        return "interpolation_subdivisions", "interpolation_subdivisions must be positive"
    if config.figure_subdivisions < 1:
        return "figure_subdivisions", "figure_subdivisions must be positive"
    return None


def validate_run_config(config: RunConfig) -> tuple[bool, str | None]:
    """
    設定値の妥当性を検証する

    Returns:
        (bool, str | None): 妥当性と、不正な場合のメッセージ
    """
    violation = _violation(config)
    if violation is None:
        return True, None
    name, message = violation
    return False, f"{FIELD_KEYS.get(name, name)}: {message}"


def ensure_valid(config: RunConfig):
    """
    Raises:
        ConfigError: 検証に失敗した場合（キーと行番号付き）
    """
    violation = _violation(config)
    if violation is None:
        return
    name, message = violation
    key = FIELD_KEYS.get(name, name)
    raise ConfigError(message, key=key, line=config.line_of(key))
