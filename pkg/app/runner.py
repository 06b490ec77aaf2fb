"""
実行モジュール
RunConfig から各サブコマンドの計算を組み立てて実行し、CSV / VTK を書き出す
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from app.config.constants import EXAMPLE51_DEFAULT_T
from app.config.run_config import RunConfig
from app.energy import (
    GradPolyDensity,
    LockingConstraint,
    get_density_by_name,
)
from app.example51 import (
    Example51Fields,
    example51_divergence,
    example51_interpolation_study,
    example51_inverse_det_integral,
    figure1_export,
)
from app.exceptions import ConfigError, ElasticityError, LineSearchFailure
from app.fem import (
    BodyProblem,
    compactness_diagnostic,
    compactness_terms,
    constrained_minimize_ball,
    is_bounded_series,
    minimize,
)
from app.input_parser import build_map, parse_slice_matrix
from app.mesh import BoxMesh, identity_deformation, interpolate
from app.relaxation import BallRegion, BoxRegion, EnvelopeTable, envelope_table, matrix_slice
from app.tensor_core import cofactor, frobenius, identity_report
from app.utils.csv_utils import write_rows
from app.utils.sampling_utils import random_matrices_with_determinant
from app.vtk_writer import read_counts, write_deformation

logger = logging.getLogger(__name__)

# 終了コード
EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG_ERROR = 2


@dataclass
class RunResult:
    status: int
    artifacts: list[Path] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# 恒等式
# ---------------------------------------------------------------------------

def identity_suite(seed: int = 0, samples: int = 1000) -> tuple[list[dict], bool]:
    """
    det ∈ [0.1, 10] の 3×3 ランダム行列で代数的恒等式を検証する

    判定: |det Cof F - (det F)²| <= 1e-9(1+|F|⁶)、|F Cof Fᵀ - det F·Id| <= 1e-10(1+|F|³)、
    Hadamard・余因子のスラック >= 0

    Returns:
        tuple: (行ごとの残差, 全行が合格したか)
    """
    rng = np.random.default_rng(seed)
    matrices = random_matrices_with_determinant(rng, samples, (0.1, 10.0), 3)
    others = matrices + 1e-3 * rng.standard_normal(matrices.shape)
    rows = []
    passed = True
    for index, (F, G) in enumerate(zip(matrices, others)):
        report = identity_report(F, G)
        norm = float(frobenius(F))
        ok = (
            abs(report.det_cof_residual) <= 1e-9 * (1.0 + norm**6)
            and report.cramer_residual <= 1e-10 * (1.0 + norm**3)
            and report.hadamard_slack >= 0
            and report.hcof_slack >= 0
        )
        passed = passed and ok
        rows.append({"index": index, "norm": norm, **report.as_row(), "passed": ok})
    logger.info(f"Identity suite: {samples} samples, passed={passed}")
    return rows, passed


# ---------------------------------------------------------------------------
# 組み立て
# ---------------------------------------------------------------------------

def build_density(config: RunConfig):
    params = {"dim": config.dim, "lame_lambda": config.lame_lambda, "lame_mu": config.lame_mu}
    if config.density == "stvk-gradpoly":
        params.update(
            alpha=config.alpha_coef,
            q=config.q,
            s=config.s,
            r=config.r,
            uses_det_gradient=config.uses_det_gradient,
            c=config.c,
            p=config.p,
        )
    try:
        return get_density_by_name(config.density, **params)
    except ValueError as e:
        raise ConfigError(str(e), key="density.name", line=config.line_of("density.name")) from e


def build_mesh(config: RunConfig) -> BoxMesh:
    subdivisions = config.subdivisions * config.dim if len(config.subdivisions) == 1 else config.subdivisions
    return BoxMesh(subdivisions, config.lower, config.upper)


def build_problem(config: RunConfig) -> BodyProblem:
    """
    Raises:
        ConfigError: 境界写像やロッキング制約が組み立てられない場合
    """
    mesh = build_mesh(config)
    try:
        dirichlet_map = build_map(config.dirichlet_map, config.dim) if config.dirichlet_faces else None
        device_map = build_map(config.device_map, config.dim) if config.device_map else None
    except ValueError as e:
        raise ConfigError(str(e), key="boundary.dirichlet_map", line=config.line_of("boundary.dirichlet_map")) from e
    try:
        locking = None if config.locking == "none" else LockingConstraint(
            config.locking, rho=config.rho, eps=config.eps, dim=config.dim
        )
    except ValueError as e:
        raise ConfigError(str(e), key="locking.variant", line=config.line_of("locking.variant")) from e
    return BodyProblem(
        mesh=mesh,
        density=build_density(config),
        locking=locking,
        body_force=None if config.body_force is None else np.array(config.body_force),
        traction=None if config.traction is None else np.array(config.traction),
        traction_faces=config.traction_faces,
        dirichlet_faces=config.dirichlet_faces,
        dirichlet_map=dirichlet_map,
        device_faces=config.device_faces,
        device_coefficient=config.device_coefficient,
        device_map=device_map,
        penalty=config.penalty,
        tolerance=config.tolerance,
        max_iterations=config.max_iterations,
    )


def initial_deformation(config: RunConfig, p: BodyProblem):
    if config.initial == "dirichlet" and p.dirichlet_map is not None:
        return interpolate(p.mesh, p.dirichlet_map)
    return identity_deformation(p.mesh)


# ---------------------------------------------------------------------------
# サブコマンド
# ---------------------------------------------------------------------------

def run_identities(config: RunConfig) -> RunResult:
    rows, passed = identity_suite(config.seed, config.samples)
    path = write_rows(Path(config.output_dir) / "identities.csv", rows)
    return RunResult(EXIT_OK if passed else EXIT_FAILED, [path], {"passed": passed, "samples": len(rows)})


def envelope_sweep(config: RunConfig) -> tuple[EnvelopeTable, Path]:
    """
    1 または 2 パラメータの行列スライスに沿って W, W^rel, 積層値の表を作り CSV に書く

    範囲を指定しない場合、各方向について基準行列から領域の境界までを格子で覆う。

    Raises:
        ConfigError: 密度がスカラーでない、またはスライスが解釈できない場合
    """
    W = build_density(config)
    if isinstance(W, GradPolyDensity):
        raise ConfigError("Envelope sweeps need a scalar density", key="density.name", line=config.line_of("density.name"))
    region = BallRegion(config.rho) if config.region == "ball" else BoxRegion(config.rho)
    try:
        base = parse_slice_matrix(config.slice_base, config.dim)
        directions = [parse_slice_matrix(text, config.dim) for text in config.slice_directions]
    except ValueError as e:
        raise ConfigError(str(e), key="envelope.directions", line=config.line_of("envelope.directions")) from e
    if not region.contains(base):
        raise ConfigError("Slice base lies outside the locking region", key="envelope.base", line=config.line_of("envelope.base"))

    grids = []
    for D in directions:
        if config.slice_range is not None:
            low, high = config.slice_range
        else:
            low, high = -region.max_step(base, -D), region.max_step(base, D)
        grids.append(np.linspace(low, high, config.grid))
    params, matrices = matrix_slice(base, directions, grids)

    table = envelope_table(
        W,
        params,
        matrices,
        region,
        subdivisions=config.cell_subdivisions,
        depth=config.depth,
        boundary_condition=config.cell_boundary,
        seed=config.seed,
    )
    path = write_rows(Path(config.output_dir) / "envelope.csv", table.rows(), table.columns)
    return table, path


def run_envelope(config: RunConfig) -> RunResult:
    table, path = envelope_sweep(config)
    violation = table.ordering_violation()
    failed = int(np.sum(np.isnan(table.winf)))
    status = EXIT_OK if violation == 0 and failed == 0 else EXIT_FAILED
    return RunResult(status, [path], {"ordering_violation": violation, "failed_points": failed})


def _write_minimize_outputs(config: RunConfig, name: str, y, report) -> list[Path]:
    directory = Path(config.output_dir)
    csv_path = write_rows(directory / f"{name}.csv", [report.as_row()])
    vtk_path = write_deformation(directory / f"{name}.vtk", y, title=name)
    return [csv_path, vtk_path]


def run_minimize(config: RunConfig) -> RunResult:
    p = build_problem(config)
    history = []
    try:
        y, report = minimize(p, initial_deformation(config, p), callback=history.append)
    except LineSearchFailure as e:
        logger.warning(f"Minimization stopped: {e}")
        return RunResult(EXIT_FAILED, [], {"message": str(e)})
    artifacts = _write_minimize_outputs(config, "minimize", y, report)
    terms = compactness_terms(y, config.p, config.s)
    series = compactness_diagnostic(history, config.p, config.s)
    summary = {
        **report.as_row(),
        **{f"compactness_{k}": v for k, v in terms.items()},
        "compactness_bounded": is_bounded_series(series),
    }
    status = EXIT_OK if np.isfinite(report.energy) else EXIT_FAILED
    return RunResult(status, artifacts, summary)


def run_constrained(config: RunConfig) -> RunResult:
    p = build_problem(config)
    y, report = constrained_minimize_ball(p, config.rho, config.eps, initial_deformation(config, p))
    artifacts = _write_minimize_outputs(config, "constrained", y, report)
    feasible = (
        report.min_det >= config.eps - 1e-8 and report.max_gradient_norm <= config.rho + 1e-8
    )
    return RunResult(EXIT_OK if feasible else EXIT_FAILED, artifacts, report.as_row())


def run_example51(config: RunConfig) -> RunResult:
    """閉形式の余因子との一致、発散率、補間誤差の減少を検証する"""
    rows = []
    passed = True
    rng = np.random.default_rng(config.seed)
    points = rng.uniform(0.05, 1.0, size=(100, 3))
    ts = sorted({1.0, 10.0, EXAMPLE51_DEFAULT_T, float(config.t)})
    for t in ts:
        fields = Example51Fields(t)
        cofactor_error = float(np.max(np.abs(cofactor(fields.gradient(points)) - fields.cofactor(points))))
        divergence = example51_divergence(t, config.deltas)
        ok = cofactor_error <= 1e-12 and divergence.relative_error <= 0.1 and divergence.sup_variation < 0.01
        passed = passed and ok
        rows.append({
            "t": t,
            "cofactor_error": cofactor_error,
            "slope": divergence.slope,
            "expected_slope": divergence.expected,
            "sup_variation": divergence.sup_variation,
            "inverse_det_integral": example51_inverse_det_integral(t, float(config.deltas[-1])),
            "passed": ok,
        })

    study = example51_interpolation_study(config.t, config.interpolation_subdivisions)
    reductions = study.reduction_factors
    passed = passed and all(factor >= 1.5 for factor in reductions)
    directory = Path(config.output_dir)
    artifacts = [write_rows(directory / "example51.csv", rows)]
    artifacts.append(
        write_rows(
            directory / "example51_interpolation.csv",
            [
                {"subdivisions": k, "mesh_size": h, "max_det_error": error}
                for k, h, error in zip(study.subdivisions, study.mesh_sizes, study.errors)
            ],
        )
    )
    return RunResult(EXIT_OK if passed else EXIT_FAILED, artifacts, {"passed": passed, "reductions": reductions})


def run_figure1(config: RunConfig) -> RunResult:
    path = figure1_export(config.t, config.figure_subdivisions, Path(config.output_dir) / "figure1.vtk")
    points, cells = read_counts(path)
    expected_points = (config.figure_subdivisions + 1) ** 3
    expected_cells = 6 * config.figure_subdivisions**3
    ok = points == expected_points and cells == expected_cells
    return RunResult(EXIT_OK if ok else EXIT_FAILED, [path], {"points": points, "cells": cells})


HANDLERS = {
    "identities": run_identities,
    "envelope": run_envelope,
    "minimize": run_minimize,
    "constrained-minimize": run_constrained,
    "example51": run_example51,
    "figure1": run_figure1,
}


def run(config: RunConfig) -> RunResult:
    """
    サブコマンドを実行する

    Returns:
        RunResult: 0 成功 / 1 検証失敗 / 2 設定エラー
    """
    handler = HANDLERS.get(config.subcommand)
    if handler is None:
        return RunResult(EXIT_CONFIG_ERROR, [], {"message": f"Unknown subcommand: {config.subcommand}"})
    try:
        result = handler(config)
    except ConfigError as e:
        logger.error(f"Config error: {e}")
        return RunResult(EXIT_CONFIG_ERROR, [], {"message": str(e)})
    except ElasticityError as e:
        logger.error(f"{config.subcommand} failed: {e}")
        return RunResult(EXIT_FAILED, [], {"message": str(e)})
    logger.info(f"{config.subcommand} finished with status {result.status}: {result.summary}")
    return result
