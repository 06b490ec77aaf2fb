"""
有限要素モジュール
P1 変形に対するエネルギー J(y) = ∫ W(∇y) - ℓ(y) + α‖y - y0‖_{L²(Γ)} の組み立て・厳密勾配・最小化

勾配多凸密度では ∇[Cof ∇y]、∇[det ∇y] を体積加重回復した節点場の要素勾配で表す。
勾配は回復作用素の転置と余因子の微分 𝓛 を通した連鎖律で厳密に計算する。
"""
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np

from app.config.constants import (
    CONSTRAINED_FEASIBILITY_TOL,
    CONSTRAINED_INNER_TOLERANCE,
    CONSTRAINED_PENALTY_FACTOR,
    CONSTRAINED_PENALTY_LOOPS,
    CONSTRAINED_PENALTY_START,
    CONSTRAINED_TOLERANCE_FACTOR,
    DEFAULT_PENALTY,
    DET_SAFEGUARD_RATIO,
    LBFGS_MAX_ITERATIONS,
    LBFGS_TOLERANCE,
    RESTORATION_BISECTION_STEPS,
)
from app.energy import (
    GradPolyDensity,
    LockingConstraint,
    LockingVariant,
    ScalarDensity,
    eval_density,
    grad_density,
    gradpoly_eval,
    gradpoly_partials,
    locking_eval,
    locking_gradient,
)
from app.exceptions import (
    IncompatibleParameters,
    InfeasibleStart,
    LineSearchFailure,
    NonFiniteEnergy,
    OutsideDomain,
)
from app.mesh import ALL_FACES, BoxMesh, DiscreteDeformation, element_gradients, simplex_quadrature
from app.optimizer import lbfgs_minimize
from app.tensor_core import cofactor, cofactor_derivative, determinant, frobenius

logger = logging.getLogger(__name__)


def _cofactor_jacobian(F: np.ndarray) -> np.ndarray:
    """∂(Cof F)_jk/∂F_lm（n=2 では定数）"""
    if F.shape[-1] == 3:
        return cofactor_derivative(F)
    jacobian = np.zeros((2, 2, 2, 2))
    jacobian[0, 0, 1, 1] = jacobian[1, 1, 0, 0] = 1.0
    jacobian[0, 1, 1, 0] = jacobian[1, 0, 0, 1] = -1.0
    return np.broadcast_to(jacobian, F.shape[:-2] + (2, 2, 2, 2))


@dataclass(frozen=True, eq=False)
class BodyProblem:
    """
    弾性体の境界値問題

    Attributes:
        mesh: 直方体メッシュ
        density: W または Ŵ
        locking: ロッキング制約（minimize で二次ペナルティとして課す）
        body_force: 体積力 b
        traction: 表面力 t（traction_faces = Γ1 上）
        dirichlet_faces: Γ0
        dirichlet_map: Γ0 上の y0
        device_faces: 弾性ハードデバイスの境界 Γ
        device_coefficient: α
        device_map: Γ 上の目標変形（省略時は dirichlet_map、それもなければ恒等写像）
        penalty: ロッキング制約のペナルティ係数 β
    """
    mesh: BoxMesh
    density: ScalarDensity | GradPolyDensity
    locking: LockingConstraint | None = None
    body_force: np.ndarray | None = None
    traction: np.ndarray | None = None
    traction_faces: tuple[str, ...] = ()
    dirichlet_faces: tuple[str, ...] = ()
    dirichlet_map: Callable[[np.ndarray], np.ndarray] | None = None
    device_faces: tuple[str, ...] = ()
    device_coefficient: float = 0.0
    device_map: Callable[[np.ndarray], np.ndarray] | None = None
    penalty: float = DEFAULT_PENALTY
    tolerance: float = LBFGS_TOLERANCE
    max_iterations: int = LBFGS_MAX_ITERATIONS

    def __post_init__(self):
        dim = self.mesh.dim
        density_dim = self.density.dim
        if density_dim is not None and density_dim != dim:
            raise ValueError(f"Density dimension {density_dim} does not match mesh dimension {dim}")
        if self.locking is not None and self.locking.dim != dim:
            raise ValueError(f"Locking dimension {self.locking.dim} does not match mesh dimension {dim}")
        if self.device_coefficient < 0:
            raise ValueError(f"Device coefficient must be nonnegative: {self.device_coefficient}")
        if (self.dirichlet_map is None) != (not self.dirichlet_faces):
            raise ValueError("Dirichlet faces and Dirichlet data must be given together")
        if self.dirichlet_faces and self.mesh.boundary_measure(self.dirichlet_faces) <= 0:
            raise ValueError("Dirichlet boundary has zero measure")
        dirichlet = set(self.mesh.resolve_faces(self.dirichlet_faces))
        free = set(self.mesh.resolve_faces(self.traction_faces))
        if dirichlet & free:
            raise ValueError(f"Dirichlet and traction faces overlap: {sorted(dirichlet & free)}")
        for name in ("body_force", "traction"):
            value = getattr(self, name)
            if value is not None:
                value = np.asarray(value, dtype=float)
                if value.shape != (dim,):
                    raise ValueError(f"{name} must have shape {(dim,)}, got {value.shape}")
                object.__setattr__(self, name, value)

    @cached_property
    def dirichlet_nodes(self) -> np.ndarray:
        if not self.dirichlet_faces:
            return np.zeros(0, dtype=int)
        return self.mesh.boundary_nodes(self.dirichlet_faces)

    @cached_property
    def dirichlet_values(self) -> np.ndarray:
        if self.dirichlet_map is None:
            return np.zeros((0, self.mesh.dim))
        return np.asarray(self.dirichlet_map(self.mesh.node_coordinates[self.dirichlet_nodes]), dtype=float)

    @cached_property
    def free_mask(self) -> np.ndarray:
        mask = np.ones(self.mesh.num_nodes, dtype=bool)
        mask[self.dirichlet_nodes] = False
        return mask

    @cached_property
    def load_vector(self) -> np.ndarray:
        """ℓ(y) = Σ_nodes f_node·y_node となる節点荷重（頂点への集中化）"""
        mesh = self.mesh
        n = mesh.dim
        loads = np.zeros((mesh.num_nodes, n))
        if self.body_force is not None:
            share = mesh.element_volumes / (n + 1)
            contributions = np.broadcast_to(share[:, None, None] * self.body_force, (mesh.num_elements, n + 1, n))
            loads += mesh.scatter(np.ascontiguousarray(contributions))
        if self.traction is not None and self.traction_faces:
            facets = mesh.boundary_facets(self.traction_faces)
            share = mesh.facet_areas(facets) / n
            np.add.at(loads, facets.ravel(), np.repeat(share, n)[:, None] * self.traction)
        return loads

    @cached_property
    def device_mass(self):
        if self.device_coefficient == 0 or not self.device_faces:
            return None
        return self.mesh.boundary_mass(self.device_faces)

    @cached_property
    def device_target(self) -> np.ndarray:
        mapping = self.device_map or self.dirichlet_map or (lambda x: x)
        return np.asarray(mapping(self.mesh.node_coordinates), dtype=float)

    @property
    def active_locking(self) -> LockingConstraint | None:
        if self.locking is None or self.locking.variant == LockingVariant.NONE:
            return None
        return self.locking


@dataclass
class MinimizeReport:
    energy: float
    gradient_norm: float
    iterations: int
    min_det: float
    min_det_element: int
    max_det: float
    max_gradient_norm: float
    constraint_violation: float
    converged: bool
    message: str = ""
    energy_history: list[float] = field(default_factory=list)
    interpolation_error_estimate: float = float("nan")
    penalty: float = float("nan")

    def as_row(self) -> dict:
        return {
            "energy": self.energy,
            "gradient_norm": self.gradient_norm,
            "iterations": self.iterations,
            "min_det": self.min_det,
            "min_det_element": self.min_det_element,
            "max_det": self.max_det,
            "max_gradient_norm": self.max_gradient_norm,
            "constraint_violation": self.constraint_violation,
            "converged": self.converged,
            "interpolation_error_estimate": self.interpolation_error_estimate,
        }


@dataclass(frozen=True)
class MinorFields:
    """要素ごとの Cof ∇y, det ∇y と、その回復節点場および要素勾配"""
    cofactor: np.ndarray
    determinant: np.ndarray
    recovered_cofactor: np.ndarray
    recovered_determinant: np.ndarray
    cofactor_gradient: np.ndarray
    determinant_gradient: np.ndarray


# ---------------------------------------------------------------------------
# 場の計算
# ---------------------------------------------------------------------------

def _minor_fields_from_gradients(mesh: BoxMesh, F: np.ndarray) -> MinorFields:
    cof = cofactor(F)
    det = np.asarray(determinant(F))
    recovered_cof = mesh.recover(cof)
    recovered_det = mesh.recover(det)
    return MinorFields(
        cofactor=cof,
        determinant=det,
        recovered_cofactor=recovered_cof,
        recovered_determinant=recovered_det,
        cofactor_gradient=mesh.nodal_gradient(recovered_cof),
        determinant_gradient=mesh.nodal_gradient(recovered_det),
    )


def minor_fields(y: DiscreteDeformation) -> MinorFields:
    """
    Cof ∇y, det ∇y とその回復場の勾配

    cofactor_gradient[e, j, k, m] = ∂_m (Cof ∇y)_jk、determinant_gradient[e, m] = ∂_m det ∇y。
    """
    return _minor_fields_from_gradients(y.mesh, element_gradients(y))


def min_det(y: DiscreteDeformation) -> tuple[float, int]:
    """全要素の det ∇y の最小値とその要素番号"""
    det = np.asarray(determinant(element_gradients(y)))
    index = int(np.argmin(det))
    return float(det[index]), index


def _gradients_from_values(mesh: BoxMesh, values: np.ndarray) -> np.ndarray:
    return np.einsum("eai,eaj->eij", values[mesh.elements], mesh.shape_gradients)


# ---------------------------------------------------------------------------
# エネルギーと勾配
# ---------------------------------------------------------------------------

def _penalty_terms(constraints, F: np.ndarray, volumes: np.ndarray, beta: float, need_gradient: bool):
    """β Σ_e |e| max(0, L(F_e))^2 とその F_e 微分"""
    energy = 0.0
    grad_F = np.zeros_like(F) if need_gradient else None
    for constraint in constraints:
        violation = np.maximum(0.0, np.asarray(locking_eval(constraint, F)))
        energy += beta * float(volumes @ violation**2)
        if need_gradient:
            grad_F += (2.0 * beta * volumes * violation)[:, None, None] * locking_gradient(constraint, F)
    return energy, grad_F


def _evaluate(p: BodyProblem, values: np.ndarray, need_gradient: bool, constraints=(), beta: float = 0.0):
    """
    節点配列に対する J（+ ペナルティ）と節点勾配

    Returns:
        tuple: (energy, gradient or None)。energy が +∞ の場合 gradient は None
    """
    mesh = p.mesh
    volumes = mesh.element_volumes
    F = _gradients_from_values(mesh, values)
    density = p.density

    if isinstance(density, GradPolyDensity):
        fields = _minor_fields_from_gradients(mesh, F)
        delta2 = fields.determinant_gradient if density.uses_det_gradient else None
        densities = np.asarray(gradpoly_eval(density, F, fields.cofactor_gradient, delta2))
    else:
        densities = np.asarray(eval_density(density, F))
    if not np.all(np.isfinite(densities)):
        return float("inf"), None
    energy = float(volumes @ densities)

    penalty, penalty_grad = _penalty_terms(constraints, F, volumes, beta, need_gradient)
    energy += penalty
    energy -= float(np.sum(p.load_vector * values))

    device_residual = None
    if p.device_mass is not None:
        device_residual = values - p.device_target
        squared = float(np.sum(device_residual * (p.device_mass @ device_residual)))
        device_norm = math.sqrt(max(squared, 0.0))
        energy += p.device_coefficient * device_norm

    if not need_gradient:
        return energy, None

    if isinstance(density, GradPolyDensity):
        d_F, d_delta1, d_delta2 = gradpoly_partials(density, F, fields.cofactor_gradient, delta2)
        grad_F = volumes[:, None, None] * d_F
        B = mesh.shape_gradients
        # ∂/∂(回復 Cof 節点値) -> Rᵀ -> ∂/∂Cof_e -> 𝓛
        nodal_cof = mesh.scatter(volumes[:, None, None, None] * np.einsum("ejkm,eam->eajk", d_delta1, B))
        element_cof = np.asarray(mesh.recovery_operator.T @ nodal_cof.reshape(mesh.num_nodes, -1)).reshape(F.shape)
        grad_F += np.einsum("ejk,ejklm->elm", element_cof, _cofactor_jacobian(F))
        if d_delta2 is not None:
            nodal_det = mesh.scatter(volumes[:, None] * np.einsum("em,eam->ea", d_delta2, B))
            element_det = mesh.recovery_operator.T @ nodal_det
            grad_F += element_det[:, None, None] * fields.cofactor
    else:
        grad_F = volumes[:, None, None] * grad_density(density, F)

    if penalty_grad is not None:
        grad_F += penalty_grad
    gradient = mesh.scatter(np.einsum("eij,eaj->eai", grad_F, mesh.shape_gradients))
    gradient -= p.load_vector
    if device_residual is not None and device_norm > 0:
        gradient += p.device_coefficient * (p.device_mass @ device_residual) / device_norm
    return energy, gradient


def assemble_energy(p: BodyProblem, y: DiscreteDeformation) -> float:
    """
    J(y) を重心1点求積で評価する（勾配多凸密度で det <= 0 の要素があれば +∞）
    """
    energy, _ = _evaluate(p, y.values, need_gradient=False)
    return energy


def assemble_gradient(p: BodyProblem, y: DiscreteDeformation, project: bool = False) -> np.ndarray:
    """
    離散エネルギー J の節点値に関する厳密勾配 (N, n)

    Args:
        project: True なら Dirichlet 節点の成分を 0 にする

    Raises:
        OutsideDomain: J(y) = +∞ の場合
    """
    energy, gradient = _evaluate(p, y.values, need_gradient=True)
    if gradient is None:
        raise OutsideDomain(f"Energy is infinite ({energy}); gradient undefined")
    if project:
        gradient[p.dirichlet_nodes] = 0.0
    return gradient


def load_functional(p: BodyProblem, y: DiscreteDeformation) -> float:
    """ℓ(y) = ∫ b·y + ∫_{Γ1} t·y（頂点集中化で厳密に線形）"""
    return float(np.sum(p.load_vector * y.values))


def boundary_norm(mesh: BoxMesh, values: np.ndarray, faces=ALL_FACES) -> float:
    """‖v‖_{L²(Γ)}（P1 境界質量行列による厳密値）"""
    mass = mesh.boundary_mass(faces)
    return math.sqrt(max(float(np.sum(values * (mass @ values))), 0.0))


def device_penalty(p: BodyProblem, y: DiscreteDeformation) -> float:
    """α‖y - y0‖_{L²(Γ)}"""
    if p.device_mass is None:
        return 0.0
    residual = y.values - p.device_target
    return p.device_coefficient * math.sqrt(max(float(np.sum(residual * (p.device_mass @ residual))), 0.0))


def apply_dirichlet(p: BodyProblem, y: DiscreteDeformation) -> DiscreteDeformation:
    values = y.values.copy()
    values[p.dirichlet_nodes] = p.dirichlet_values
    return y.with_values(values)


def rotate_problem(p: BodyProblem, R: np.ndarray) -> BodyProblem:
    """境界データ y0 -> R y0 と荷重 b, t -> R b, R t に置き換えた問題"""
    R = np.asarray(R, dtype=float)

    def rotated(mapping):
        if mapping is None:
            return None
        return lambda x: mapping(x) @ R.T

    device_map = p.device_map
    if device_map is None and p.dirichlet_map is None and p.device_mass is not None:
        device_map = lambda x: x  # noqa: E731
    return replace(
        p,
        dirichlet_map=rotated(p.dirichlet_map),
        device_map=rotated(device_map),
        body_force=None if p.body_force is None else R @ p.body_force,
        traction=None if p.traction is None else R @ p.traction,
    )


# ---------------------------------------------------------------------------
# 最小化
# ---------------------------------------------------------------------------

def _interpolation_error_estimate(mesh: BoxMesh, F: np.ndarray) -> float:
    """h × 回復した変形勾配の勾配の L¹ ノルム"""
    gradient = mesh.nodal_gradient(mesh.recover(F))
    return mesh.mesh_size * float(mesh.element_volumes @ frobenius(gradient, 3))


def _build_report(p: BodyProblem, values: np.ndarray, result, constraints=(), penalty=float("nan")) -> MinimizeReport:
    mesh = p.mesh
    F = _gradients_from_values(mesh, values)
    det = np.asarray(determinant(F))
    violation = 0.0
    for constraint in constraints:
        violation = max(violation, float(np.max(locking_eval(constraint, F))))
    min_index = int(np.argmin(det))
    return MinimizeReport(
        energy=_evaluate(p, values, need_gradient=False)[0],
        gradient_norm=result.gradient_norm,
        iterations=result.iterations,
        min_det=float(det[min_index]),
        min_det_element=min_index,
        max_det=float(np.max(det)),
        max_gradient_norm=float(np.max(frobenius(F, 2))),
        constraint_violation=max(violation, 0.0),
        converged=result.converged,
        message=result.message,
        energy_history=list(result.energy_history),
        interpolation_error_estimate=_interpolation_error_estimate(mesh, F),
        penalty=penalty,
    )


def _run_lbfgs(p: BodyProblem, values: np.ndarray, constraints, beta, tolerance, max_iterations, safeguard, callback=None):
    free = p.free_mask
    base = values.copy()
    shape = base[free].shape

    def unpack(x):
        full = base.copy()
        full[free] = x.reshape(shape)
        return full

    def fun(x):
        energy, gradient = _evaluate(p, unpack(x), True, constraints, beta)
        if gradient is None:
            return energy, np.zeros_like(x)
        return energy, gradient[free].ravel()

    accept = None
    if safeguard:
        def accept(trial, current):
            current_min = float(np.min(determinant(_gradients_from_values(p.mesh, unpack(current)))))
            trial_min = float(np.min(determinant(_gradients_from_values(p.mesh, unpack(trial)))))
            return trial_min > DET_SAFEGUARD_RATIO * current_min

    wrapped_callback = None if callback is None else (lambda x: callback(unpack(x)))
    try:
        result = lbfgs_minimize(
            fun,
            base[free].ravel(),
            tolerance=tolerance,
            max_iterations=max_iterations,
            accept=accept,
            callback=wrapped_callback,
        )
    except LineSearchFailure as e:
        e.values = unpack(e.result.x)
        raise
    return unpack(result.x), result


def minimize(
    p: BodyProblem,
    y_init: DiscreteDeformation,
    callback: Callable[[DiscreteDeformation], None] | None = None,
) -> tuple[DiscreteDeformation, MinimizeReport]:
    """
    J の L-BFGS 最小化（Dirichlet 節点は消去、ロッキング制約は二次ペナルティ）

    勾配多凸密度では試行点の det が現在の min det の 1e-3 倍以下なら評価前に棄却する。

    Raises:
        NonFiniteEnergy: 初期エネルギーが有限でない場合
        LineSearchFailure: ステップ幅がアンダーフローした場合
    """
    y0 = apply_dirichlet(p, y_init)
    constraints = (p.active_locking,) if p.active_locking is not None else ()
    initial, _ = _evaluate(p, y0.values, False, constraints, p.penalty)
    if not np.isfinite(initial):
        raise NonFiniteEnergy(f"Initial energy is not finite: {initial}")

    safeguard = isinstance(p.density, GradPolyDensity)
    wrapped = None if callback is None else (lambda values: callback(y0.with_values(values)))
    values, result = _run_lbfgs(p, y0.values, constraints, p.penalty, p.tolerance, p.max_iterations, safeguard, wrapped)
    report = _build_report(p, values, result, constraints, p.penalty)
    logger.info(
        f"minimize finished: energy={report.energy:.12g}, iterations={report.iterations}, "
        f"min_det={report.min_det:.6g}, converged={report.converged}"
    )
    return y0.with_values(values), report


def constrained_minimize_ball(
    p: BodyProblem,
    rho: float,
    eps_det: float,
    y_init: DiscreteDeformation,
) -> tuple[DiscreteDeformation, MinimizeReport]:
    """
    ∇y ∈ {det >= ε} ∩ B̄(0, ϱ) の下での J の最小化

    二次ペナルティ継続（β0 = 10, ×10, 5 回、内側許容誤差 ×0.1）の各段の後、
    球制約は可能なら縮小写像で、残りは直前の実行可能点への二分法で実行可能性を回復する。

    Raises:
        IncompatibleParameters: ε < 0 または ϱ <= √n ε^{1/n} の場合
        InfeasibleStart: 初期値が制約を満たさない場合
    """
    n = p.mesh.dim
    if eps_det < 0:
        raise IncompatibleParameters(f"eps must be nonnegative: {eps_det}")
    threshold = math.sqrt(n) * eps_det ** (1.0 / n)
    if rho <= threshold:
        raise IncompatibleParameters(f"rho={rho} must exceed sqrt(n)*eps^(1/n)={threshold:.6g}")

    constraints = (LockingConstraint.ball(rho, n), LockingConstraint.determinant(eps_det, n))
    base_problem = replace(p, locking=None)

    def feasible(values: np.ndarray) -> bool:
        F = _gradients_from_values(p.mesh, values)
        return bool(
            np.max(frobenius(F, 2)) <= rho + CONSTRAINED_FEASIBILITY_TOL
            and np.min(determinant(F)) >= eps_det - CONSTRAINED_FEASIBILITY_TOL
        )

    current = apply_dirichlet(p, y_init).values
    if not feasible(current):
        raise InfeasibleStart("Initial deformation violates the ball or determinant constraint")

    beta = CONSTRAINED_PENALTY_START
    tolerance = CONSTRAINED_INNER_TOLERANCE
    result = None
    for loop in range(CONSTRAINED_PENALTY_LOOPS):
        try:
            candidate, result = _run_lbfgs(
                base_problem, current, constraints, beta, tolerance, p.max_iterations, safeguard=False
            )
        except LineSearchFailure as e:
            logger.warning(f"Penalty loop {loop} stopped early: {e}")
            candidate, result = e.values, e.result
        current = _restore_feasibility(p, current, candidate, rho, feasible)
        logger.debug(f"Penalty loop {loop}: beta={beta:g}, energy={result.energy:.12g}")
        beta *= CONSTRAINED_PENALTY_FACTOR
        tolerance *= CONSTRAINED_TOLERANCE_FACTOR

    report = _build_report(base_problem, current, result, constraints, beta / CONSTRAINED_PENALTY_FACTOR)
    logger.info(
        f"constrained minimize finished: energy={report.energy:.12g}, min_det={report.min_det:.6g}, "
        f"max|F|={report.max_gradient_norm:.6g}"
    )
    return y_init.with_values(current), report


def _restore_feasibility(p: BodyProblem, previous: np.ndarray, candidate: np.ndarray, rho: float, feasible) -> np.ndarray:
    if feasible(candidate):
        return candidate

    if len(p.dirichlet_nodes) == 0:
        # Dirichlet 条件がなければ球への縮小写像を試す
        from app.relaxation import rescale_to_ball

        overshoot = float(np.max(frobenius(_gradients_from_values(p.mesh, candidate), 2))) - rho
        if overshoot > 0:
            scaled = rescale_to_ball(DiscreteDeformation(p.mesh, candidate), rho, overshoot).values
            if feasible(scaled):
                return scaled

    low, high = 0.0, 1.0
    direction = candidate - previous
    for _ in range(RESTORATION_BISECTION_STEPS):
        middle = 0.5 * (low + high)
        if feasible(previous + middle * direction):
            low = middle
        else:
            high = middle
    logger.debug(f"Feasibility restored by bisection at s={low:.6g}")
    return previous + low * direction


# ---------------------------------------------------------------------------
# 診断
# ---------------------------------------------------------------------------

def compactness_terms(y: DiscreteDeformation, p: float = 2.0, s: float = 1.0) -> dict:
    """
    ‖y‖_{W^{1,p}}、回復余因子場の W^{1,1} ノルム（BV ノルムの代用）、‖(det ∇y)^{-s}‖_{L¹}

    ‖y‖_{L^p} は次数 ⌈p⌉ の単体求積で評価する（偶数の p では P1 場に対して厳密）。
    """
    mesh = y.mesh
    volumes = mesh.element_volumes
    F = element_gradients(y)
    barycentric, weights = simplex_quadrature(mesh.dim, math.ceil(p))
    points = np.einsum("qa,eai->eqi", barycentric, y.values[mesh.elements])
    sobolev = (
        float(volumes @ (frobenius(points, 1) ** p @ weights)) ** (1.0 / p)
        + float(volumes @ frobenius(F, 2) ** p) ** (1.0 / p)
    )
    fields = _minor_fields_from_gradients(mesh, F)
    cofactor_norm = float(volumes @ frobenius(fields.cofactor, 2)) + float(
        volumes @ frobenius(fields.cofactor_gradient, 3)
    )
    det = fields.determinant
    if np.any(det <= 0):
        barrier = float("inf")
    else:
        barrier = float(volumes @ det ** (-s))
    return {"sobolev": sobolev, "cofactor": cofactor_norm, "barrier": barrier}


def compactness_diagnostic(history: list[DiscreteDeformation], p: float = 2.0, s: float = 1.0) -> np.ndarray:
    """反復列の ‖y‖_{W^{1,p}} + ‖Cof ∇y‖ + ‖(det ∇y)^{-s}‖_{L¹} の系列"""
    series = []
    for y in history:
        terms = compactness_terms(y, p, s)
        series.append(terms["sobolev"] + terms["cofactor"] + terms["barrier"])
    return np.array(series)


def is_bounded_series(series: np.ndarray, factor: float = 10.0) -> bool:
    """系列が初項の factor 倍以内に収まっているか（経験的な目安）"""
    if len(series) == 0:
        return True
    return bool(np.all(series <= factor * series[0]))
