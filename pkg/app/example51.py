"""
特異な立方体変形モジュール
Ω = (0,1)^3 上の y = (x1², x2 x1^{t/(t+1)}, x3 x1²) を閉形式で評価する

det ∇y と Cof ∇y は W^{1,∞} に入るが ∇²y は L¹ に入らない（y ∉ W^{2,1}）。
各成分を単項式 c·x1^e1·x2^e2·x3^e3 として持ち、微分も閉形式で行う。
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from app.config.constants import EXAMPLE51_GAUSS_POINTS, EXAMPLE51_SUP_SAMPLES
from app.exceptions import DomainError
from app.mesh import BoxMesh, element_gradients, interpolate
from app.tensor_core import determinant, frobenius
from app.vtk_writer import write_deformation, write_mesh

logger = logging.getLogger(__name__)

Monomial = tuple[float, float, float, float]  # (係数, x1 の指数, x2 の指数, x3 の指数)


def _evaluate_monomial(monomial: Monomial, x: np.ndarray) -> np.ndarray:
    coefficient, *exponents = monomial
    if coefficient == 0:
        return np.zeros(x.shape[:-1])
    value = np.full(x.shape[:-1], coefficient, dtype=float)
    for axis, exponent in enumerate(exponents):
        if exponent != 0:
            value = value * x[..., axis] ** exponent
    return value


def _differentiate(monomial: Monomial, axis: int) -> Monomial:
    coefficient, *exponents = monomial
    if coefficient == 0 or exponents[axis] == 0:
        return (0.0, 0.0, 0.0, 0.0)
    coefficient *= exponents[axis]
    exponents[axis] -= 1
    return (coefficient, *exponents)


def _evaluate_table(table, x: np.ndarray) -> np.ndarray:
    table = np.asarray(table, dtype=object)
    out = np.zeros(x.shape[:-1] + table.shape[:-1])
    for index in np.ndindex(table.shape[:-1]):
        out[(...,) + index] = _evaluate_monomial(tuple(table[index]), x)
    return out


@dataclass(frozen=True)
class Example51Fields:
    """
    パラメータ t >= 1 の特異変形 y とその微分・小行列式の閉形式

    Attributes:
        t: 指数パラメータ
    """
    t: float

    def __post_init__(self):
        if not self.t >= 1:
            raise ValueError(f"Parameter t must be at least 1: {self.t}")

    @property
    def a(self) -> float:
        """x2 成分の x1 指数 t/(t+1)"""
        return self.t / (self.t + 1.0)

    @cached_property
    def deformation_table(self) -> list[Monomial]:
        return [(1.0, 2.0, 0.0, 0.0), (1.0, self.a, 1.0, 0.0), (1.0, 2.0, 0.0, 1.0)]

    @cached_property
    def gradient_table(self) -> list[list[Monomial]]:
        return [[_differentiate(m, axis) for axis in range(3)] for m in self.deformation_table]

    @cached_property
    def cofactor_table(self) -> list[list[Monomial]]:
        a = self.a
        zero = (0.0, 0.0, 0.0, 0.0)
        return [
            [(1.0, a + 2.0, 0.0, 0.0), (-a, a + 1.0, 1.0, 0.0), (-2.0, a + 1.0, 0.0, 1.0)],
            [zero, (2.0, 3.0, 0.0, 0.0), zero],
            [zero, zero, (2.0, a + 1.0, 0.0, 0.0)],
        ]

    @cached_property
    def determinant_monomial(self) -> Monomial:
        """det ∇y = 2 x1^{(4t+3)/(t+1)}"""
        return (2.0, (4.0 * self.t + 3.0) / (self.t + 1.0), 0.0, 0.0)

    def deformation(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack([_evaluate_monomial(m, x) for m in self.deformation_table], axis=-1)

    def gradient(self, x) -> np.ndarray:
        """
        ∇y（(..., 3, 3)）

        Raises:
            DomainError: x1 <= 0 の点を含む場合（∂y2/∂x1 の指数が負）
        """
        x = np.asarray(x, dtype=float)
        _check_domain(x)
        return _evaluate_table(self.gradient_table, x)

    def cofactor(self, x) -> np.ndarray:
        return _evaluate_table(self.cofactor_table, np.asarray(x, dtype=float))

    def determinant(self, x) -> np.ndarray | float:
        value = _evaluate_monomial(self.determinant_monomial, np.asarray(x, dtype=float))
        return float(value) if np.ndim(value) == 0 else value

    def cofactor_derivatives(self, x) -> np.ndarray:
        """∂_m (Cof ∇y)_jk（(..., 3, 3, 3)）"""
        table = [[[_differentiate(m, axis) for axis in range(3)] for m in row] for row in self.cofactor_table]
        return _evaluate_table(table, np.asarray(x, dtype=float))

    def determinant_derivatives(self, x) -> np.ndarray:
        table = [_differentiate(self.determinant_monomial, axis) for axis in range(3)]
        return _evaluate_table(table, np.asarray(x, dtype=float))

    def second_derivative_y2(self, x) -> np.ndarray:
        """∂²y2/∂x1² = a(a-1) x2 x1^{a-2}"""
        x = np.asarray(x, dtype=float)
        _check_domain(x)
        return _evaluate_monomial(_differentiate(self.gradient_table[1][0], 0), x)


def _check_domain(x: np.ndarray):
    if np.any(x[..., 0] <= 0):
        raise DomainError("Gradient of the singular deformation is undefined at x1 <= 0")


def example51_eval(t: float, x) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray | float]:
    """
    y, ∇y, Cof ∇y, det ∇y を閉形式で評価する

    Args:
        t: パラメータ（t >= 1）
        x: (..., 3) の点（x ∈ (0,1]^3）

    Returns:
        tuple: (y, ∇y, Cof ∇y, det ∇y)

    Raises:
        DomainError: x1 <= 0 の場合
    """
    fields = Example51Fields(t)
    gradient = fields.gradient(x)
    return fields.deformation(x), gradient, fields.cofactor(x), fields.determinant(x)


# ---------------------------------------------------------------------------
# 求積
# ---------------------------------------------------------------------------

def _gauss_panels(breaks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """区間列ごとの Gauss 点と重み（(panels, points)）"""
    nodes, weights = np.polynomial.legendre.leggauss(EXAMPLE51_GAUSS_POINTS)
    left, right = breaks[:-1], breaks[1:]
    half = 0.5 * (right - left)
    points = 0.5 * (left + right)[:, None] + half[:, None] * nodes[None, :]
    return points, half[:, None] * weights[None, :]


def _panel_integrals(integrand, breaks: np.ndarray) -> np.ndarray:
    """x1 ∈ [breaks_i, breaks_{i+1}]、(x2, x3) ∈ (0,1)² の各パネル上のテンソル積 Gauss 積分"""
    x1, w1 = _gauss_panels(breaks)
    unit, w_unit = _gauss_panels(np.array([0.0, 1.0]))
    unit, w_unit = unit[0], w_unit[0]
    X1, X2, X3 = np.meshgrid(x1.ravel(), unit, unit, indexing="ij")
    values = integrand(np.stack([X1, X2, X3], axis=-1))
    weights = w1.ravel()[:, None, None] * w_unit[None, :, None] * w_unit[None, None, :]
    per_point = np.sum(values * weights, axis=(1, 2))
    return per_point.reshape(x1.shape).sum(axis=1)


def _geometric_breaks(low: float, high: float, per_decade: int = 4) -> np.ndarray:
    decades = max(np.log10(high / low), 0.0)
    count = max(int(np.ceil(decades * per_decade)), 1)
    return np.geomspace(low, high, count + 1)


def _integral_over_shell(integrand, low: float, high: float) -> float:
    return float(np.sum(_panel_integrals(integrand, _geometric_breaks(low, high))))


@dataclass
class DivergenceResult:
    """
    Attributes:
        slope: log(殻ごとの積分増分) と log δ の最小二乗の傾き
        expected: -1/(t+1)
        integrals: 各 δ での ∫_{x1>δ} |∂²y2/∂x1²|
        cofactor_norms: 各 δ での ‖Cof ∇y‖_{W^{1,∞}({x1>δ})}
        determinant_norms: 各 δ での ‖det ∇y‖_{W^{1,∞}({x1>δ})}
    """
    t: float
    slope: float
    expected: float
    deltas: np.ndarray
    integrals: np.ndarray
    cofactor_norms: np.ndarray
    determinant_norms: np.ndarray

    @property
    def relative_error(self) -> float:
        return abs(self.slope - self.expected) / abs(self.expected)

    @property
    def sup_variation(self) -> float:
        """W^{1,∞} ノルムの δ に対する最大相対変動"""
        variations = []
        for norms in (self.cofactor_norms, self.determinant_norms):
            variations.append((np.max(norms) - np.min(norms)) / np.max(norms))
        return float(max(variations))


def _sup_norms(fields: Example51Fields, delta: float) -> tuple[float, float]:
    grid = np.linspace(0.0, 1.0, EXAMPLE51_SUP_SAMPLES)
    x1 = np.linspace(delta, 1.0, EXAMPLE51_SUP_SAMPLES)
    points = np.stack(np.meshgrid(x1, grid, grid, indexing="ij"), axis=-1).reshape(-1, 3)
    cofactor_norm = float(np.max(frobenius(fields.cofactor(points), 2))) + float(
        np.max(frobenius(fields.cofactor_derivatives(points), 3))
    )
    determinant_norm = float(np.max(np.abs(fields.determinant(points)))) + float(
        np.max(frobenius(fields.determinant_derivatives(points), 1))
    )
    return cofactor_norm, determinant_norm


def example51_divergence(t: float, delta_list) -> DivergenceResult:
    """
    ∫_{x1>δ} |∂²y2/∂x1²| の δ -> 0 での発散率を推定する

    隣り合う δ の間の殻の積分増分を log-log で直線当てはめする。δ が等比列なら増分は
    δ^{-1/(t+1)} に厳密に比例するので、傾きは -1/(t+1) になる。

    Args:
        t: パラメータ（t >= 1）
        delta_list: (0,1) 内の狭義単調減少列（3点以上）

    Returns:
        DivergenceResult
    """
    fields = Example51Fields(t)
    deltas = np.asarray(delta_list, dtype=float)
    if len(deltas) < 3:
        raise ValueError("At least three delta values are required")
    if np.any(deltas <= 0) or np.any(deltas >= 1) or np.any(np.diff(deltas) >= 0):
        raise ValueError("delta_list must be strictly decreasing in (0, 1)")

    def integrand(x):
        return np.abs(fields.second_derivative_y2(x))

    shells = [_integral_over_shell(integrand, deltas[0], 1.0)]
    for upper, lower in zip(deltas[:-1], deltas[1:]):
        shells.append(_integral_over_shell(integrand, lower, upper))
    integrals = np.cumsum(shells)

    increments = np.array(shells[1:])
    slope, _ = np.polyfit(np.log(deltas[1:]), np.log(increments), 1)

    norms = np.array([_sup_norms(fields, delta) for delta in deltas])
    result = DivergenceResult(
        t=float(t),
        slope=float(slope),
        expected=-1.0 / (t + 1.0),
        deltas=deltas,
        integrals=integrals,
        cofactor_norms=norms[:, 0],
        determinant_norms=norms[:, 1],
    )
    logger.info(f"Divergence rate for t={t}: slope={result.slope:.6g}, expected={result.expected:.6g}")
    return result


def example51_inverse_det_integral(t: float, delta: float) -> float:
    """∫_{x1>δ} (det ∇y)^{-1/(4t+3)}（δ -> 0 で有限な極限を持つ）"""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1): {delta}")
    fields = Example51Fields(t)
    exponent = -1.0 / (4.0 * t + 3.0)
    return _integral_over_shell(lambda x: fields.determinant(x) ** exponent, delta, 1.0)


def example51_sobolev_exponent(t: float) -> float:
    """y ∈ W^{1,p} となる p の上限 1 + t（p < 1 + t で可積分）"""
    Example51Fields(t)
    return 1.0 + t


def example51_gradient_integral(t: float, p: float, delta: float) -> float:
    """∫_{x1>δ} |∇y|^p（p < 1 + t なら δ -> 0 で有界）"""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1): {delta}")
    fields = Example51Fields(t)
    return _integral_over_shell(lambda x: frobenius(fields.gradient(x), 2) ** p, delta, 1.0)


# ---------------------------------------------------------------------------
# 補間と出力
# ---------------------------------------------------------------------------

@dataclass
class InterpolationStudy:
    subdivisions: list[int]
    mesh_sizes: list[float]
    errors: list[float]

    @property
    def reduction_factors(self) -> list[float]:
        return [coarse / fine for coarse, fine in zip(self.errors[:-1], self.errors[1:])]


def example51_interpolation_study(t: float, subdivisions_list) -> InterpolationStudy:
    """
    P1 補間から回復した det 場の内部節点での最大誤差をメッシュごとに求める

    Args:
        t: パラメータ
        subdivisions_list: 1軸あたりの分割数の列（細かくなる順）
    """
    fields = Example51Fields(t)
    errors, sizes = [], []
    for k in subdivisions_list:
        mesh = BoxMesh.unit(int(k), 3)
        y = interpolate(mesh, fields.deformation)
        recovered = mesh.recover(np.asarray(determinant(element_gradients(y))))
        interior = np.setdiff1d(np.arange(mesh.num_nodes), mesh.boundary_nodes())
        exact = fields.determinant(mesh.node_coordinates[interior])
        errors.append(float(np.max(np.abs(recovered[interior] - exact))))
        sizes.append(mesh.mesh_size)
        logger.debug(f"Interpolation study k={k}: max det error={errors[-1]:.6g}")
    return InterpolationStudy(list(map(int, subdivisions_list)), sizes, errors)


def figure1_export(t: float, subdivisions: int, path: str | Path) -> Path:
    """
    参照立方体を特異変形で写した P1 メッシュを VTK に書き出す

    path に変形後のメッシュ（節点データに参照座標と変位、要素データに det と |∇y|）、
    同じディレクトリの <stem>_reference.vtk に参照立方体を書く。

    Raises:
        IoError: 書き込みに失敗した場合
    """
    fields = Example51Fields(t)
    path = Path(path)
    mesh = BoxMesh.unit(subdivisions, 3)
    y = interpolate(mesh, fields.deformation)
    write_mesh(path.with_name(f"{path.stem}_reference{path.suffix or '.vtk'}"), mesh, title=f"reference cube t={t:g}")
    return write_deformation(path, y, title=f"deformed cube t={t:g}")
