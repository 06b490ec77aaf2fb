"""
緩和モジュール
斉次離散勾配 Young 測度、セル問題による W^inf、積層による内側近似、
一般の凸ロッキング領域での放射極限、緩和汎関数 J̄ の評価を提供する
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, sparse
from scipy.cluster.vq import kmeans2

from app.config.constants import (
    BARYCENTER_TOLERANCE,
    CELL_DEFAULT_SUBDIVISIONS,
    CELL_INNER_TOLERANCE,
    CELL_MAX_ITERATIONS,
    CELL_PENALTY_FACTOR,
    CELL_PENALTY_LOOPS,
    CELL_PENALTY_START,
    CELL_SEED_NOISE,
    FEASIBILITY_MARGIN,
    JENSEN_RANDOM_SHIFTS,
    LAMINATE_AMPLITUDE_POINTS,
    LAMINATE_BEAM_WIDTH,
    LAMINATE_DEFAULT_DEPTH,
    LAMINATE_DIRECTIONS,
    LAMINATE_IMPROVEMENT_TOL,
    LAMINATE_LAMBDA_POINTS,
    MAX_WORKERS_THREAD_POOL,
    RADIAL_LIMIT_EPS0,
    RADIAL_LIMIT_FIT_POINTS,
    RADIAL_LIMIT_STEPS,
    WEIGHT_SUM_TOLERANCE,
)
from app.energy import ScalarDensity, estimate_lipschitz_modulus, eval_density, grad_density
from app.exceptions import (
    BarycenterMismatch,
    InfeasibleBase,
    InfiniteAtomValue,
    OutsideRegion,
    PreconditionViolated,
    SupportViolation,
)
from app.fem import BodyProblem, boundary_norm, device_penalty, load_functional
from app.mesh import ALL_FACES, BoxMesh, DiscreteDeformation, element_gradients
from app.tensor_core import as_matrix, frobenius
from app.utils.parallel_utils import evaluate_parallel
from app.utils.sampling_utils import get_directions

logger = logging.getLogger(__name__)

# 境界判定の相対許容誤差
_BOUNDARY_RTOL = 1e-12


# ---------------------------------------------------------------------------
# ロッキング領域
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BallRegion:
    """狭義凸な領域 B̄(0, ϱ)"""
    rho: float
    strictly_convex = True

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"Ball radius must be positive: {self.rho}")

    def gauge(self, F) -> np.ndarray | float:
        return frobenius(as_matrix(F), 2) / self.rho

    def contains(self, F, tol: float = 0.0) -> bool:
        return bool(np.all(frobenius(as_matrix(F), 2) <= self.rho * (1.0 + _BOUNDARY_RTOL) + tol))

    def on_boundary(self, F) -> bool:
        return bool(np.isclose(frobenius(as_matrix(F), 2), self.rho, rtol=_BOUNDARY_RTOL, atol=0.0))

    def max_step(self, A, D) -> np.ndarray | float:
        """|A + tD| <= ϱ となる最大の t >= 0（D = 0 なら +∞）"""
        A = as_matrix(A)
        D = as_matrix(D)
        a = np.einsum("...ij,...ij->...", D, D)
        b = np.einsum("...ij,...ij->...", A, D)
        c = np.einsum("...ij,...ij->...", A, A) - self.rho**2
        discriminant = np.maximum(b * b - a * c, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(a > 0, (-b + np.sqrt(discriminant)) / np.where(a > 0, a, 1.0), np.inf)
        step = np.maximum(step, 0.0)
        return float(step) if np.ndim(step) == 0 else step

    def penalty(self, F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """max(0, |F| - ϱ)^2 とその F 微分"""
        norms = frobenius(F, 2)
        excess = np.maximum(norms - self.rho, 0.0)
        safe = np.where(norms > 0, norms, 1.0)
        return excess**2, (2.0 * excess / safe)[..., None, None] * F


@dataclass(frozen=True)
class BoxRegion:
    """{|F_ij| <= b}（凸だが狭義凸ではない）"""
    bound: float
    strictly_convex = False

    def __post_init__(self):
        if not self.bound > 0:
            raise ValueError(f"Box bound must be positive: {self.bound}")

    def gauge(self, F) -> np.ndarray | float:
        value = np.max(np.abs(as_matrix(F)), axis=(-2, -1)) / self.bound
        return float(value) if np.ndim(value) == 0 else value

    def contains(self, F, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(as_matrix(F)) <= self.bound * (1.0 + _BOUNDARY_RTOL) + tol))

    def on_boundary(self, F) -> bool:
        return bool(np.isclose(self.gauge(F), 1.0, rtol=_BOUNDARY_RTOL, atol=0.0))

    def max_step(self, A, D) -> np.ndarray | float:
        A = as_matrix(A)
        D = as_matrix(D)
        with np.errstate(divide="ignore", invalid="ignore"):
            upper = np.where(D > 0, (self.bound - A) / D, np.inf)
            lower = np.where(D < 0, (-self.bound - A) / D, np.inf)
        step = np.maximum(np.minimum(upper, lower).min(axis=(-2, -1)), 0.0)
        return float(step) if np.ndim(step) == 0 else step

    def penalty(self, F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        excess = np.maximum(np.abs(F) - self.bound, 0.0)
        return np.sum(excess**2, axis=(-2, -1)), 2.0 * excess * np.sign(F)


Region = BallRegion | BoxRegion


def as_region(region) -> Region:
    """数値は半径 ϱ の球とみなす"""
    if isinstance(region, (BallRegion, BoxRegion)):
        return region
    return BallRegion(float(region))


# ---------------------------------------------------------------------------
# 離散 Young 測度
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiscreteYoungMeasure:
    """
    斉次離散 Young 測度 ν = Σ λ_i δ_{F_i}

    Attributes:
        atoms: (k, n, n) の原子
        weights: (k,) の重み（非負で和が 1）
    """
    atoms: np.ndarray
    weights: np.ndarray
    homogeneous: bool = True

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        weights = np.asarray(self.weights, dtype=float).ravel()
        if atoms.ndim == 2:
            atoms = atoms[None]
        if atoms.ndim != 3 or atoms.shape[-1] != atoms.shape[-2]:
            raise ValueError(f"Atoms must have shape (k, n, n), got {atoms.shape}")
        if len(weights) != len(atoms) or len(atoms) == 0:
            raise ValueError(f"Expected {len(atoms)} weights, got {len(weights)}")
        if np.any(weights < 0):
            raise ValueError("Weights must be nonnegative")
        if abs(float(np.sum(weights)) - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise ValueError(f"Weights must sum to 1, got {np.sum(weights):.17g}")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def dirac(cls, F) -> "DiscreteYoungMeasure":
        return cls(as_matrix(F)[None], np.ones(1))

    @property
    def dim(self) -> int:
        return self.atoms.shape[-1]

    @property
    def support_radius(self) -> float:
        active = self.atoms[self.weights > 0]
        return float(np.max(frobenius(active, 2)))


def barycenter(nu: DiscreteYoungMeasure) -> np.ndarray:
    """ν̄ = Σ λ_i F_i"""
    return np.einsum("k,kij->ij", nu.weights, nu.atoms)


def pairing(nu: DiscreteYoungMeasure, f: Callable[[np.ndarray], np.ndarray]) -> float:
    """
    ⟨ν, f⟩ = Σ λ_i f(F_i)

    Raises:
        InfiniteAtomValue: 正の重みを持つ原子で f = +∞ の場合
    """
    active = nu.weights > 0
    values = np.asarray(f(nu.atoms[active]), dtype=float).reshape(-1)
    if not np.all(np.isfinite(values)):
        raise InfiniteAtomValue(f"Test function is infinite on {int(np.sum(~np.isfinite(values)))} atom(s)")
    return float(nu.weights[active] @ values)


@dataclass
class GymReport:
    """Young 測度の検証結果（各条件の最悪値）"""
    support_violation: float
    barycenter: np.ndarray
    barycenter_error: float
    jensen_violation: float
    jensen_details: dict = field(default_factory=dict)
    passed: bool = True


def _default_test_functions(dim: int, seed: int) -> dict[str, Callable]:
    rng = np.random.default_rng(seed)
    functions = {
        "norm": lambda F: frobenius(F, 2),
        "norm_squared": lambda F: np.einsum("...ij,...ij->...", F, F),
    }
    for k in range(JENSEN_RANDOM_SHIFTS):
        B = rng.standard_normal((dim, dim))
        functions[f"shifted_norm_{k}"] = lambda F, B=B: frobenius(F - B, 2)
    G = rng.standard_normal((dim, dim))
    functions["linear_plus"] = lambda F: np.einsum("...ij,ij->...", F, G)
    functions["linear_minus"] = lambda F: -np.einsum("...ij,ij->...", F, G)
    return functions


def validate_gym(
    nu: DiscreteYoungMeasure,
    region,
    convex_test_functions: dict[str, Callable] | None = None,
    expected_barycenter=None,
    seed: int = 0,
) -> GymReport:
    """
    勾配 Young 測度の必要条件を検証する

    (i) 台が領域に含まれること、(ii) 重心、(iii) 凸な試験関数 f に対する
    Jensen 不等式 f(ν̄) <= ⟨ν, f⟩。(iii) は準凸関数全体の代わりに凸関数の固定集合で調べる。

    Args:
        nu: 検証する測度
        region: ϱ または BallRegion / BoxRegion
        convex_test_functions: 名前 -> 凸関数。None なら |·|, |·|², |· - B|, ±線形
        expected_barycenter: 期待する重心（誤差を報告する）

    Returns:
        GymReport
    """
    region = as_region(region)
    active = nu.atoms[nu.weights > 0]
    gauges = np.atleast_1d(region.gauge(active))
    if isinstance(region, BallRegion):
        support_violation = max(0.0, float(np.max(gauges)) * region.rho - region.rho)
    else:
        support_violation = max(0.0, (float(np.max(gauges)) - 1.0) * region.bound)
    support_ok = region.contains(active)

    center = barycenter(nu)
    if expected_barycenter is None:
        barycenter_error = float("nan")
    else:
        barycenter_error = float(np.max(np.abs(center - as_matrix(expected_barycenter))))

    functions = convex_test_functions or _default_test_functions(nu.dim, seed)
    details = {}
    worst = 0.0
    for name, f in functions.items():
        lhs = float(np.asarray(f(center)))
        rhs = pairing(nu, f)
        violation = max(0.0, lhs - rhs - 1e-12 * (1.0 + abs(lhs) + abs(rhs)))
        details[name] = violation
        worst = max(worst, violation)

    passed = support_ok and worst == 0.0 and not barycenter_error > BARYCENTER_TOLERANCE
    if not passed:
        logger.debug(f"Young measure check failed: support={support_violation:.3e}, jensen={worst:.3e}")
    return GymReport(
        support_violation=support_violation if not support_ok else 0.0,
        barycenter=center,
        barycenter_error=barycenter_error,
        jensen_violation=worst,
        jensen_details=details,
        passed=passed,
    )


def homogenize(measure_field: Sequence[tuple[float, DiscreteYoungMeasure]]) -> DiscreteYoungMeasure:
    """
    セルごとの測度を体積分率 ω_e で平均した斉次測度

    Raises:
        ValueError: Σ ω_e が 1 でない場合
    """
    fractions = np.array([omega for omega, _ in measure_field], dtype=float)
    if len(fractions) == 0 or abs(float(np.sum(fractions)) - 1.0) > WEIGHT_SUM_TOLERANCE:
        raise ValueError(f"Volume fractions must sum to 1, got {np.sum(fractions):.17g}")
    atoms = np.concatenate([nu.atoms for _, nu in measure_field], axis=0)
    weights = np.concatenate([omega * nu.weights for omega, nu in measure_field])
    return DiscreteYoungMeasure(atoms, weights / np.sum(weights))


def empirical_measure(
    gradient_samples,
    n_atoms: int,
    sample_weights=None,
    seed: int = 0,
) -> DiscreteYoungMeasure:
    """
    変形勾配のサンプルを n_atoms 個以下の原子にまとめた経験測度

    異なる値の数が n_atoms 以下なら頻度そのもの、そうでなければ k-means で
    クラスタリングし、各原子をクラスタ内の（重み付き）平均とする。重心はサンプル平均に一致する。
    """
    samples = np.asarray(gradient_samples, dtype=float)
    if samples.ndim == 2:
        samples = samples[None]
    if len(samples) == 0:
        raise ValueError("At least one gradient sample is required")
    if n_atoms < 1:
        raise ValueError(f"n_atoms must be positive: {n_atoms}")
    count, n, _ = samples.shape
    flat = samples.reshape(count, n * n)
    weights = np.full(count, 1.0 / count) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    weights = weights / np.sum(weights)

    unique, labels = np.unique(flat, axis=0, return_inverse=True)
    labels = labels.ravel()
    if len(unique) > n_atoms:
        _, labels = kmeans2(flat, n_atoms, minit="++", seed=np.random.default_rng(seed))

    used = np.unique(labels)
    atoms = []
    atom_weights = []
    for label in used:
        members = labels == label
        mass = float(np.sum(weights[members]))
        atoms.append((weights[members] @ flat[members]) / mass)
        atom_weights.append(mass)
    atom_weights = np.array(atom_weights)
    return DiscreteYoungMeasure(np.array(atoms).reshape(-1, n, n), atom_weights / np.sum(atom_weights))


def dirac_field(y: DiscreteDeformation) -> list[DiscreteYoungMeasure]:
    """要素ごとの δ_{∇y}"""
    return [DiscreteYoungMeasure.dirac(F) for F in element_gradients(y)]


# ---------------------------------------------------------------------------
# セル問題
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CellProblem:
    """
    参照セル (0,1)^n 上の W^inf(A) = inf (1/|Ω|)∫ W(A + ∇φ)

    Attributes:
        base: 基準行列 A
        region: ロッキング領域（ϱ を渡すと球）
        subdivisions: 1軸あたりの分割数
        boundary_condition: "dirichlet"（φ = 0 on ∂Ω）または "periodic"
    """
    base: np.ndarray
    region: Region | float
    subdivisions: int = CELL_DEFAULT_SUBDIVISIONS
    boundary_condition: str = "dirichlet"
    tolerance: float = CELL_INNER_TOLERANCE
    max_iterations: int = CELL_MAX_ITERATIONS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "base", as_matrix(self.base).copy())
        object.__setattr__(self, "region", as_region(self.region))
        if self.boundary_condition not in ("dirichlet", "periodic"):
            raise ValueError(f"Unknown boundary condition: {self.boundary_condition}")
        if self.subdivisions < 1:
            raise ValueError(f"Subdivisions must be positive: {self.subdivisions}")

    @property
    def dim(self) -> int:
        return self.base.shape[-1]


def _cell_dofs(mesh: BoxMesh, boundary_condition: str) -> tuple[sparse.csr_matrix, np.ndarray]:
    """自由度 -> 節点値の展開行列 P（N × m）と各自由度の代表節点"""
    N = mesh.num_nodes
    if boundary_condition == "periodic":
        dof_nodes, columns = np.unique(mesh.periodic_node_map(), return_inverse=True)
        columns = columns.ravel()
    else:
        dof_nodes = np.setdiff1d(np.arange(N), mesh.boundary_nodes())
        columns = np.full(N, -1)
        columns[dof_nodes] = np.arange(len(dof_nodes))
    rows = np.flatnonzero(columns >= 0)
    P = sparse.csr_matrix((np.ones(len(rows)), (rows, columns[rows])), shape=(N, len(dof_nodes)))
    return P, dof_nodes


def _cell_seeds(cp: CellProblem, mesh: BoxMesh, rng: np.random.Generator) -> list[np.ndarray]:
    """φ = 0 と、各軸方向の e_k⊗e_k 積層を模した鋸歯状の初期場"""
    A = cp.base
    n = cp.dim
    h = 1.0 / cp.subdivisions
    multi = np.stack(np.unravel_index(np.arange(mesh.num_nodes), mesh.node_shape, order="F"), axis=1)
    seeds = [np.zeros((mesh.num_nodes, n))]
    for k in range(n):
        D = np.zeros((n, n))
        D[k, k] = 1.0
        amplitude = min(1.0, 0.5 * min(cp.region.max_step(A, D), cp.region.max_step(A, -D)))
        if amplitude <= 0:
            continue
        seed = np.zeros((mesh.num_nodes, n))
        seed[:, k] = amplitude * h * (multi[:, k] % 2)
        seeds.append(seed)
    noise = CELL_SEED_NOISE * h
    return [seed + noise * rng.standard_normal(seed.shape) for seed in seeds]


def winf_cell(W: ScalarDensity, cp: CellProblem) -> tuple[float, DiscreteDeformation]:
    """
    セル問題の最小値 W^inf(A) と最小化場 φ

    制約 A + ∇φ ∈ 領域 は二次ペナルティ継続で課し、最後に φ を縮小して厳密に満たす
    （A を中心とする縮小なので A の実行可能性だけで十分）。φ = 0 は常に許容なので値は W(A) 以下。

    Args:
        W: 領域全体で有限な連続密度
        cp: セル問題

    Returns:
        tuple: (値, 最小化場 φ の DiscreteDeformation)

    Raises:
        InfeasibleBase: A が領域の外にある場合
    """
    A = cp.base
    region = cp.region
    n = cp.dim
    if not region.contains(A):
        raise InfeasibleBase(f"Base matrix with |A|={frobenius(A, 2):.6g} lies outside the locking region")

    mesh = BoxMesh.unit(cp.subdivisions, n)
    volumes = mesh.element_volumes
    B = mesh.shape_gradients
    P, dof_nodes = _cell_dofs(mesh, cp.boundary_condition)
    m = P.shape[1]
    w_base = float(eval_density(W, A))
    best_value = w_base
    best_phi = np.zeros((mesh.num_nodes, n))
    if m == 0:
        return best_value, DiscreteDeformation(mesh, best_phi)

    def expand(x: np.ndarray) -> np.ndarray:
        return np.asarray(P @ x.reshape(m, n))

    def objective(x: np.ndarray, beta: float):
        F = A + mesh.nodal_gradient(expand(x))
        values = np.asarray(eval_density(W, F))
        if not np.all(np.isfinite(values)):
            return float("inf"), np.zeros_like(x)
        penalty, penalty_grad = region.penalty(F)
        energy = float(volumes @ (values + beta * penalty))
        grad_F = volumes[:, None, None] * (grad_density(W, F) + beta * penalty_grad)
        nodal = mesh.scatter(np.einsum("eij,eaj->eai", grad_F, B))
        return energy, np.asarray(P.T @ nodal).ravel()

    rng = np.random.default_rng(cp.seed)
    for start, seed in enumerate(_cell_seeds(cp, mesh, rng)):
        x = seed[dof_nodes].ravel()
        beta = CELL_PENALTY_START
        for _ in range(CELL_PENALTY_LOOPS):
            result = optimize.minimize(
                objective,
                x,
                args=(beta,),
                jac=True,
                method="L-BFGS-B",
                options={"maxiter": cp.max_iterations, "gtol": cp.tolerance, "ftol": 1e-15},
            )
            if np.all(np.isfinite(result.x)):
                x = result.x
            beta *= CELL_PENALTY_FACTOR

        phi = expand(x)
        D = mesh.nodal_gradient(phi)
        scale = min(1.0, float(np.min(region.max_step(A, D))))
        if scale < 1.0:
            scale *= 1.0 - FEASIBILITY_MARGIN
        phi = scale * phi
        value = float(volumes @ np.asarray(eval_density(W, A + scale * D))) / mesh.volume
        logger.debug(f"Cell start {start}: value={value:.12g}, projection scale={scale:.6g}")
        if value < best_value:
            best_value, best_phi = value, phi

    return best_value, DiscreteDeformation(mesh, best_phi)


# ---------------------------------------------------------------------------
# 積層
# ---------------------------------------------------------------------------

def _rank_one_directions(n: int, count: int) -> np.ndarray:
    directions = get_directions(n, count)
    return np.einsum("ai,bj->abij", directions, directions).reshape(-1, n, n)


def _best_split(W: ScalarDensity, F: np.ndarray, region: Region, directions: np.ndarray):
    """1段の階数1分割 λ δ_{F+(1-λ)tD} + (1-λ) δ_{F-λtD} のうち最良のもの"""
    lambdas = np.linspace(0.0, 1.0, LAMINATE_LAMBDA_POINTS + 2)[1:-1]
    fractions = np.linspace(0.0, 1.0, LAMINATE_AMPLITUDE_POINTS + 1)[1:]
    candidates = []
    for lam in lambdas:
        tmax = np.minimum(region.max_step(F, (1 - lam) * directions), region.max_step(F, -lam * directions))
        tmax = np.where(np.isfinite(tmax), tmax, 0.0) * (1.0 - _BOUNDARY_RTOL)
        amplitudes = tmax[:, None] * fractions[None, :]
        first = F + (1 - lam) * amplitudes[..., None, None] * directions[:, None]
        second = F - lam * amplitudes[..., None, None] * directions[:, None]
        values = lam * np.asarray(eval_density(W, first)) + (1 - lam) * np.asarray(eval_density(W, second))
        values = np.where(np.isfinite(values), values, np.inf)
        flat = values.ravel()
        top = np.argsort(flat, kind="stable")[:LAMINATE_BEAM_WIDTH]
        for index in top:
            pair, column = divmod(int(index), len(fractions))
            candidates.append((float(flat[index]), float(lam), pair, float(amplitudes[pair, column]), float(tmax[pair])))

    candidates.sort(key=lambda c: c[0])
    best = candidates[0]
    for value, lam, pair, amplitude, tmax in candidates[:LAMINATE_BEAM_WIDTH]:
        if tmax <= 0:
            continue
        D = directions[pair]

        def split_value(t, lam=lam, D=D):
            return lam * float(eval_density(W, F + (1 - lam) * t * D)) + (1 - lam) * float(eval_density(W, F - lam * t * D))

        refined = optimize.minimize_scalar(split_value, bounds=(0.0, tmax), method="bounded", options={"xatol": 1e-12})
        if refined.success and refined.fun < best[0]:
            best = (float(refined.fun), lam, pair, float(refined.x), tmax)
        if value < best[0]:
            best = (value, lam, pair, amplitude, tmax)
    return best


def _laminate(W, F, region, depth, directions) -> tuple[float, np.ndarray, np.ndarray]:
    own = float(eval_density(W, F))
    if depth <= 0:
        return own, F[None], np.ones(1)
    value, lam, pair, amplitude, _ = _best_split(W, F, region, directions)
    if not value < own - LAMINATE_IMPROVEMENT_TOL * max(1.0, abs(own)):
        return own, F[None], np.ones(1)

    D = directions[pair]
    first = F + (1 - lam) * amplitude * D
    second = F - lam * amplitude * D
    v1, atoms1, weights1 = _laminate(W, first, region, depth - 1, directions)
    v2, atoms2, weights2 = _laminate(W, second, region, depth - 1, directions)
    total = lam * v1 + (1 - lam) * v2
    if not total < own:
        return own, F[None], np.ones(1)
    return (
        total,
        np.concatenate([atoms1, atoms2], axis=0),
        np.concatenate([lam * weights1, (1 - lam) * weights2]),
    )


def laminate_envelope(
    W: ScalarDensity,
    A,
    region,
    depth: int = LAMINATE_DEFAULT_DEPTH,
    n_directions: int = LAMINATE_DIRECTIONS,
) -> tuple[float, DiscreteYoungMeasure]:
    """
    階数1分割を depth 段まで貪欲に再帰した積層による W^rel(A) の上界

    Args:
        W: 密度
        A: 重心
        region: ϱ または領域。全ての原子はこの領域内に保たれる
        depth: 再帰の深さ（0 なら W(A) と δ_A）
        n_directions: a, b それぞれの方向数

    Returns:
        tuple: (値, 重心 A の離散 Young 測度)

    Raises:
        InfeasibleBase: A が領域の外にある場合
    """
    A = as_matrix(A)
    region = as_region(region)
    if not region.contains(A):
        raise InfeasibleBase(f"Base matrix with |A|={frobenius(A, 2):.6g} lies outside the locking region")
    directions = _rank_one_directions(A.shape[-1], n_directions)
    value, atoms, weights = _laminate(W, A, region, depth, directions)
    weights = weights / np.sum(weights)
    return value, DiscreteYoungMeasure(atoms, weights)


# ---------------------------------------------------------------------------
# W^rel の評価
# ---------------------------------------------------------------------------

@dataclass
class RelaxedValue:
    """
    Attributes:
        value: W^rel(A) の近似値
        method: "boundary"（狭義凸な境界で W(A)）、"cell"、"radial-limit"
        uncertainty: 外挿の残差（それ以外は 0）
        samples: 放射極限で用いた (ε_j, W^inf) の組
    """
    value: float
    method: str
    uncertainty: float = 0.0
    samples: list[tuple[float, float]] = field(default_factory=list)


def wrel(
    W: ScalarDensity,
    A,
    region,
    subdivisions: int = CELL_DEFAULT_SUBDIVISIONS,
    boundary_condition: str = "dirichlet",
    seed: int = 0,
) -> RelaxedValue:
    """
    緩和密度 W^rel(A)

    内部では W^inf(A)、球の境界 |A| = ϱ では W(A) そのもの。狭義凸でない領域の境界では
    A_j = (|A| - ε_j)/|A|·A（ε_j = 2^{-j} ε0）での W^inf の列を ε の1次式で外挿する。

    Raises:
        OutsideRegion: A が閉領域の外にある場合
    """
    A = as_matrix(A)
    region = as_region(region)
    if not region.contains(A):
        raise OutsideRegion(f"Matrix with |A|={frobenius(A, 2):.6g} lies outside the locking region")

    def cell(matrix):
        return winf_cell(W, CellProblem(matrix, region, subdivisions, boundary_condition, seed=seed))[0]

    if not region.on_boundary(A):
        return RelaxedValue(cell(A), "cell")
    w_base = float(eval_density(W, A))
    if region.strictly_convex:
        return RelaxedValue(w_base, "boundary")

    norm = float(frobenius(A, 2))
    epsilons = [RADIAL_LIMIT_EPS0 * 2.0**-j for j in range(RADIAL_LIMIT_STEPS)]
    epsilons = [eps for eps in epsilons if eps < norm]
    samples = [(eps, cell((norm - eps) / norm * A)) for eps in epsilons]
    tail = samples[-RADIAL_LIMIT_FIT_POINTS:]
    if len(tail) >= 2:
        slope, intercept = np.polyfit([e for e, _ in tail], [v for _, v in tail], 1)
        residual = max(abs(intercept + slope * e - v) for e, v in tail)
        uncertainty = max(abs(float(intercept) - tail[-1][1]), residual)
        limit = float(intercept)
    else:
        limit = tail[-1][1] if tail else w_base
        uncertainty = float("nan")
    logger.debug(f"Radial limit: samples={samples}, extrapolated={limit:.12g}")
    return RelaxedValue(min(limit, w_base), "radial-limit", float(uncertainty), samples)


# ---------------------------------------------------------------------------
# 緩和汎関数と縮小写像
# ---------------------------------------------------------------------------

def relaxed_energy(
    measure_field: Sequence[DiscreteYoungMeasure],
    y: DiscreteDeformation,
    p: BodyProblem,
    rho: float | None = None,
) -> float:
    """
    J̄(ν, y) = Σ_e |e|⟨ν_e, W⟩ - ℓ(y) + α‖y - y0‖_{L²(Γ)}

    Args:
        measure_field: 要素ごとの測度
        y: 重心が ∇y に一致する変形
        p: 問題データ（スカラー密度）
        rho: 台の半径の上限（None なら密度の radius、それもなければ検査しない）

    Raises:
        BarycenterMismatch: 重心と ∇y の差が 1e-8 を超える場合
        SupportViolation: 台が B̄(0, ϱ) に含まれない場合
    """
    if not isinstance(p.density, ScalarDensity):
        raise ValueError("Relaxed energy requires a scalar density")
    mesh = y.mesh
    if len(measure_field) != mesh.num_elements:
        raise ValueError(f"Expected {mesh.num_elements} measures, got {len(measure_field)}")

    gradients = element_gradients(y)
    centers = np.array([barycenter(nu) for nu in measure_field])
    mismatch = float(np.max(np.abs(centers - gradients)))
    if mismatch > BARYCENTER_TOLERANCE:
        raise BarycenterMismatch(f"Barycenters differ from element gradients by {mismatch:.3e}")

    rho = rho if rho is not None else p.density.radius
    if rho is not None:
        radius = max(nu.support_radius for nu in measure_field)
        if radius > rho * (1.0 + _BOUNDARY_RTOL):
            raise SupportViolation(f"Support radius {radius:.6g} exceeds rho={rho}")

    atoms = np.concatenate([nu.atoms for nu in measure_field], axis=0)
    weights = np.concatenate([nu.weights for nu in measure_field])
    owners = np.repeat(np.arange(len(measure_field)), [len(nu.weights) for nu in measure_field])
    values = np.asarray(eval_density(p.density, atoms), dtype=float).reshape(-1)
    if np.any(~np.isfinite(values) & (weights > 0)):
        raise InfiniteAtomValue("Density is infinite on an atom with positive weight")
    cell_pairings = np.zeros(mesh.num_elements)
    np.add.at(cell_pairings, owners, np.where(weights > 0, weights * values, 0.0))
    return float(mesh.element_volumes @ cell_pairings) - load_functional(p, y) + device_penalty(p, y)


def rescale_to_ball(y: DiscreteDeformation, rho: float, eps: float) -> DiscreteDeformation:
    """
    y を ϱ/(ϱ+ε) 倍して |∇y| <= ϱ を満たす変形にする

    Raises:
        PreconditionViolated: max|∇y| > ϱ + ε の場合
    """
    if eps < 0:
        raise ValueError(f"Overshoot must be nonnegative: {eps}")
    largest = float(np.max(frobenius(element_gradients(y), 2)))
    if largest > (rho + eps) * (1.0 + _BOUNDARY_RTOL):
        raise PreconditionViolated(f"max|grad y|={largest:.12g} exceeds rho+eps={rho + eps:.12g}")
    return y.with_values(y.values * (rho / (rho + eps)))


def load_bound_constant(p: BodyProblem) -> float:
    """|ℓ(z)| <= C_ℓ‖z‖_{L∞} となる C_ℓ = |b||Ω| + |t||Γ1|"""
    constant = 0.0
    if p.body_force is not None:
        constant += float(np.linalg.norm(p.body_force)) * p.mesh.volume
    if p.traction is not None and p.traction_faces:
        constant += float(np.linalg.norm(p.traction)) * p.mesh.boundary_measure(p.traction_faces)
    return constant


def rescaling_bound(
    p: BodyProblem,
    y: DiscreteDeformation,
    rho: float,
    eps: float,
    modulus: Callable[[float], float] | None = None,
    load_constant: float | None = None,
) -> float:
    """
    縮小写像によるエネルギー変化の上界
    |Ω|ϑ(ε) + (C_ℓ + α)ε/(ϱ+ε)·(‖y‖_{L²(Γ)} + ‖y‖_{L∞} + 2)

    Args:
        modulus: W の B̄(0, ϱ+ε) 上の一様連続度 ϑ。None なら密度の modulus、
            それもなければ Lipschitz 定数を推定する
        load_constant: C_ℓ（None なら load_bound_constant）
    """
    if modulus is None:
        modulus = p.density.modulus
    if modulus is None:
        K = estimate_lipschitz_modulus(p.density, rho + eps)
        modulus = lambda t: K * t  # noqa: E731
    if load_constant is None:
        load_constant = load_bound_constant(p)
    mesh = y.mesh
    faces = p.device_faces or ALL_FACES
    boundary = boundary_norm(mesh, y.values, faces)
    sup = float(np.max(frobenius(y.values, 1)))
    factor = (load_constant + p.device_coefficient) * eps / (rho + eps)
    return mesh.volume * float(modulus(eps)) + factor * (boundary + sup + 2.0)


# ---------------------------------------------------------------------------
# 包絡線表
# ---------------------------------------------------------------------------

def convexify_slice(values, params) -> np.ndarray:
    """1パラメータのスライスに沿った下側凸包（有限値の点のみ用いる）"""
    values = np.asarray(values, dtype=float)
    params = np.asarray(params, dtype=float)
    order = np.argsort(params, kind="stable")
    points = [(params[i], values[i]) for i in order if np.isfinite(values[i])]
    if not points:
        return np.full_like(values, np.nan)
    hull: list[tuple[float, float]] = []
    for point in points:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (point[1] - y1) - (y2 - y1) * (point[0] - x1) <= 0:
                hull.pop()
            else:
                break
        hull.append(point)
    xs, ys = zip(*hull)
    return np.interp(params, xs, ys)


def matrix_slice(base, directions, grids) -> tuple[np.ndarray, np.ndarray]:
    """
    A(t) = base + Σ_k t_k D_k の格子

    Args:
        base: 基準行列
        directions: 1 個または 2 個の方向行列
        grids: 各方向のパラメータ列

    Returns:
        tuple: (params (m, k), matrices (m, n, n))。2パラメータでは第1パラメータが最も遅く変化する
    """
    base = as_matrix(base)
    directions = [as_matrix(D) for D in directions]
    if len(directions) not in (1, 2) or len(grids) != len(directions):
        raise ValueError("A matrix slice needs one or two directions with matching grids")
    grid = np.meshgrid(*[np.asarray(g, dtype=float) for g in grids], indexing="ij")
    params = np.stack([axis.ravel() for axis in grid], axis=1)
    matrices = base + np.einsum("mk,kij->mij", params, np.array(directions))
    return params, matrices


@dataclass
class EnvelopeTable:
    params: np.ndarray
    matrices: np.ndarray
    w: np.ndarray
    winf: np.ndarray
    laminate: np.ndarray
    lower_bound: np.ndarray
    methods: list[str]
    uncertainty: np.ndarray
    subdivisions: int
    depth: int
    boundary_condition: str = "dirichlet"

    @property
    def columns(self) -> list[str]:
        return [f"t{k}" for k in range(self.params.shape[1])] + [
            "W", "winf", "laminate", "lower_bound", "method", "uncertainty", "mesh", "depth",
        ]

    def rows(self) -> list[dict]:
        rows = []
        for i in range(len(self.params)):
            row = {f"t{k}": float(self.params[i, k]) for k in range(self.params.shape[1])}
            row.update({
                "W": float(self.w[i]),
                "winf": float(self.winf[i]),
                "laminate": float(self.laminate[i]),
                "lower_bound": float(self.lower_bound[i]),
                "method": self.methods[i],
                "uncertainty": float(self.uncertainty[i]),
                "mesh": self.subdivisions,
                "depth": self.depth,
            })
            rows.append(row)
        return rows

    def ordering_violation(self, tol: float = 1e-9) -> float:
        """lower <= winf, winf <= W + tol, laminate <= W + tol の最大違反量（NaN の行は除く）"""
        violations = [
            self.winf - (self.w + tol),
            self.laminate - (self.w + tol),
            self.lower_bound - (self.winf + tol),
        ]
        stacked = np.concatenate(violations)
        stacked = stacked[np.isfinite(stacked)]
        return float(max(0.0, np.max(stacked))) if len(stacked) else 0.0


def envelope_table(
    W: ScalarDensity,
    params,
    matrices,
    region,
    subdivisions: int = CELL_DEFAULT_SUBDIVISIONS,
    depth: int = LAMINATE_DEFAULT_DEPTH,
    boundary_condition: str = "dirichlet",
    n_directions: int = LAMINATE_DIRECTIONS,
    seed: int = 0,
    max_workers: int = MAX_WORKERS_THREAD_POOL,
) -> EnvelopeTable:
    """
    スライス上の各格子点で W, W^rel, 積層値を評価した表

    格子点はスレッドプールで並列に評価し、添字順に集約する。失敗した格子点は NaN とする。
    下界列は1パラメータのスライスでのみ min(W^inf, 積層値) の下側凸包として記録する。
    """
    region = as_region(region)
    params = np.asarray(params, dtype=float)
    if params.ndim == 1:
        params = params[:, None]
    matrices = as_matrix(matrices)
    if matrices.ndim == 2:
        matrices = matrices[None]

    def evaluate_row(A):
        relaxed = wrel(W, A, region, subdivisions, boundary_condition, seed)
        laminate_value, _ = laminate_envelope(W, A, region, depth, n_directions)
        return float(eval_density(W, A)), relaxed, laminate_value

    results = evaluate_parallel(evaluate_row, list(matrices), max_workers)
    count = len(matrices)
    w = np.full(count, np.nan)
    winf = np.full(count, np.nan)
    laminate = np.full(count, np.nan)
    uncertainty = np.full(count, np.nan)
    methods = ["failed"] * count
    for i, result in enumerate(results):
        if result is None:
            logger.warning(f"Envelope grid point {i} failed; recorded as NaN")
            continue
        w[i], relaxed, laminate[i] = result
        winf[i] = relaxed.value
        uncertainty[i] = relaxed.uncertainty
        methods[i] = relaxed.method

    if params.shape[1] == 1:
        lower_bound = convexify_slice(np.fmin(winf, laminate), params[:, 0])
    else:
        lower_bound = np.full(count, np.nan)
    logger.info(f"Envelope table computed: {count} grid points, {sum(r is None for r in results)} failed")
    return EnvelopeTable(
        params=params,
        matrices=matrices,
        w=w,
        winf=winf,
        laminate=laminate,
        lower_bound=lower_bound,
        methods=methods,
        uncertainty=uncertainty,
        subdivisions=subdivisions,
        depth=depth,
        boundary_condition=boundary_condition,
    )
