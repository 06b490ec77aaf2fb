"""
エネルギー密度・ロッキング制約モジュール
スカラー密度 W(F)、勾配多凸密度 Ŵ(F, Δ1[, Δ2])、弾性テンソル、ロッキング制約 L(F) を提供する

+∞ は numpy.inf として値で返す。入力は末尾2軸を行列とみなすバッチ (..., n, n) を受け付ける。
"""
import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable

import numpy as np

from app.config.constants import (
    CONVEXITY_CHECK_SAMPLES,
    DEFAULT_ALPHA_COEF,
    DEFAULT_COERCIVITY_C,
    DEFAULT_LAME_LAMBDA,
    DEFAULT_LAME_MU,
    DEFAULT_P,
    DEFAULT_Q,
    DEFAULT_R,
    DEFAULT_S,
    FD_RELATIVE_STEP,
    LIPSCHITZ_SAFETY_FACTOR,
)
from app.exceptions import OutsideDomain
from app.tensor_core import as_matrix, cofactor, determinant, frobenius
from app.utils.sampling_utils import (
    random_matrices_with_determinant,
    random_near_identity,
    random_rotation_2d,
    random_rotations,
)

logger = logging.getLogger(__name__)

# 球の境界上の点を内側と判定するための相対余裕
_BALL_BOUNDARY_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class ScalarDensity:
    """
    スカラー蓄積エネルギー密度 W: R^{n×n} -> R ∪ {+∞}

    Attributes:
        name: 密度名
        evaluator: (..., n, n) -> (...) のベクトル化された評価関数
        gradient: 解析的勾配（None の場合は中心差分）
        radius: 定義域 B̄(0, ϱ) の半径（ロッキングされた密度のみ）
        modulus: 一様連続度 ϑ(t)
        dim: 行列の次元（None は次元を問わない）
    """
    name: str
    evaluator: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray] | None = None
    radius: float | None = None
    modulus: Callable[[float], float] | None = None
    dim: int | None = None

    def __post_init__(self):
        if self.radius is not None and self.radius <= 0:
            raise ValueError(f"Density radius must be positive: {self.radius}")
        if self.modulus is not None:
            grid = np.linspace(0.0, 10.0, 101)
            values = np.array([self.modulus(t) for t in grid])
            if np.any(np.diff(values) < -1e-14):
                raise ValueError(f"Modulus of continuity of {self.name} is not nondecreasing")


@dataclass(frozen=True, eq=False)
class ElasticTensor:
    """主・副対称性と対称行列上の正定値性を持つ4階弾性テンソル 𝒞"""
    tensor: np.ndarray

    def __post_init__(self):
        tensor = np.asarray(self.tensor, dtype=float)
        n = tensor.shape[0]
        if tensor.shape != (n, n, n, n) or n not in (2, 3):
            raise ValueError(f"Elastic tensor must be n×n×n×n with n in (2, 3): {tensor.shape}")
        if not np.all(np.isfinite(tensor)):
            raise ValueError("Elastic tensor entries must be finite")
        if not np.allclose(tensor, tensor.transpose(2, 3, 0, 1)):
            raise ValueError("Elastic tensor lacks major symmetry")
        if not (np.allclose(tensor, tensor.transpose(1, 0, 2, 3)) and np.allclose(tensor, tensor.transpose(0, 1, 3, 2))):
            raise ValueError("Elastic tensor lacks minor symmetry")
        if self.min_eigenvalue(tensor) <= 0:
            raise ValueError("Elastic tensor is not positive definite on symmetric matrices")
        object.__setattr__(self, "tensor", tensor)

    @property
    def dim(self) -> int:
        return self.tensor.shape[0]

    @staticmethod
    def min_eigenvalue(tensor: np.ndarray) -> float:
        """対称行列の正規直交基底に関するグラム行列の最小固有値"""
        n = tensor.shape[0]
        basis = []
        for i in range(n):
            for j in range(i, n):
                E = np.zeros((n, n))
                if i == j:
                    E[i, i] = 1.0
                else:
                    E[i, j] = E[j, i] = 1.0 / np.sqrt(2.0)
                basis.append(E)
        basis = np.array(basis)
        gram = np.einsum("aij,ijkl,bkl->ab", basis, tensor, basis)
        return float(np.linalg.eigvalsh(gram).min())

    @classmethod
    def isotropic(cls, lame_lambda: float = DEFAULT_LAME_LAMBDA, lame_mu: float = DEFAULT_LAME_MU, dim: int = 3) -> "ElasticTensor":
        """等方テンソル λ δ_ij δ_kl + μ (δ_ik δ_jl + δ_il δ_jk)"""
        d = np.eye(dim)
        tensor = (
            lame_lambda * np.einsum("ij,kl->ijkl", d, d)
            + lame_mu * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d))
        )
        return cls(tensor)

    @classmethod
    def identity(cls, dim: int = 3) -> "ElasticTensor":
        """対称行列上の恒等写像（𝒞E = E）"""
        d = np.eye(dim)
        tensor = 0.5 * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d))
        return cls(tensor)

    def contract(self, E: np.ndarray) -> np.ndarray:
        """𝒞E（バッチ可）"""
        return np.einsum("ijkl,...kl->...ij", self.tensor, E)


@dataclass(frozen=True, eq=False)
class GradPolyDensity:
    """
    勾配多凸密度 Ŵ(F, Δ1[, Δ2]) = φ(F) + α(|Δ1|^q + (det F)^{-s}) [+ α|Δ2|^r]、det F <= 0 で +∞

    Δ1 は ∇[Cof ∇y]（成分 [Δ1]_{jkm} = ∂_m (Cof ∇y)_{jk}）、Δ2 は ∇[det ∇y]。
    (c, p, q, r, s) は下からの増大条件の宣言値で、check_coercivity で検証する。
    """
    name: str
    base: ScalarDensity
    alpha: float = DEFAULT_ALPHA_COEF
    q: float = DEFAULT_Q
    s: float = DEFAULT_S
    r: float = DEFAULT_R
    p: float = DEFAULT_P
    c: float = DEFAULT_COERCIVITY_C
    uses_det_gradient: bool = False
    dim: int = 3

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive: {self.alpha}")
        if self.q < 1 or self.r < 1 or self.p < 1:
            raise ValueError(f"Exponents p, q, r must be >= 1: p={self.p}, q={self.q}, r={self.r}")
        if self.s <= 0:
            raise ValueError(f"s must be positive: {self.s}")
        if self.c <= 0:
            raise ValueError(f"Coercivity constant must be positive: {self.c}")
        violation = check_convexity(self, CONVEXITY_CHECK_SAMPLES)
        if violation > 1e-10:
            raise ValueError(f"{self.name} is not convex in the gradient arguments (violation {violation:.3e})")


class LockingVariant(str, Enum):
    BALL = "ball"
    DETERMINANT = "determinant"
    CIARLET_NECAS = "ciarlet-necas"
    PRAGER = "prager"
    NONE = "none"


@dataclass(frozen=True)
class LockingConstraint:
    """
    ロッキング制約 L(F) <= 0

    Attributes:
        variant: 制約の種類
        rho: ϱ（BALL, CIARLET_NECAS, PRAGER）
        eps: ε（DETERMINANT）
        dim: 行列の次元
    """
    variant: LockingVariant
    rho: float | None = None
    eps: float | None = None
    dim: int = 3

    def __post_init__(self):
        object.__setattr__(self, "variant", LockingVariant(self.variant))
        if self.variant in (LockingVariant.BALL, LockingVariant.CIARLET_NECAS, LockingVariant.PRAGER):
            if self.rho is None or self.rho < 0:
                raise ValueError(f"{self.variant.value} locking requires rho >= 0, got {self.rho}")
        if self.variant == LockingVariant.DETERMINANT and self.eps is None:
            raise ValueError("determinant locking requires eps")
        # 許容集合が空でないことを証拠行列で確認する
        value = locking_eval(self, self.witness())
        if value > 0:
            raise ValueError(f"Admissible set of {self.variant.value} locking is empty (witness gives {value})")

    @classmethod
    def ball(cls, rho: float, dim: int = 3) -> "LockingConstraint":
        return cls(LockingVariant.BALL, rho=rho, dim=dim)

    @classmethod
    def determinant(cls, eps: float, dim: int = 3) -> "LockingConstraint":
        return cls(LockingVariant.DETERMINANT, eps=eps, dim=dim)

    @classmethod
    def ciarlet_necas(cls, rho: float, dim: int = 3) -> "LockingConstraint":
        return cls(LockingVariant.CIARLET_NECAS, rho=rho, dim=dim)

    @classmethod
    def prager(cls, rho: float, dim: int = 3) -> "LockingConstraint":
        return cls(LockingVariant.PRAGER, rho=rho, dim=dim)

    @classmethod
    def none(cls, dim: int = 3) -> "LockingConstraint":
        return cls(LockingVariant.NONE, dim=dim)

    def witness(self) -> np.ndarray:
        """L(witness) <= 0 となる行列"""
        n = self.dim
        if self.variant == LockingVariant.BALL:
            return np.zeros((n, n))
        if self.variant == LockingVariant.DETERMINANT:
            return max(self.eps, 1.0) ** (1.0 / n) * np.eye(n)
        if self.variant == LockingVariant.PRAGER:
            # c Id で対称部 + (1 - 2/3 tr) Id が 0 になる c
            return np.eye(n) / (2.0 * n / 3.0 - 1.0)
        return np.eye(n)


# ---------------------------------------------------------------------------
# スカラー密度
# ---------------------------------------------------------------------------

def eval_density(W: ScalarDensity, F) -> np.ndarray | float:
    """W(F) を評価する。定義域外は +∞"""
    F = as_matrix(F)
    values = np.asarray(W.evaluator(F), dtype=float)
    if values.ndim == 0:
        return float(values)
    return values


def grad_density(W: ScalarDensity, F) -> np.ndarray:
    """
    ∂W/∂F。解析的勾配がなければ中心差分（ステップ 1e-6·(1+|F|)）

    Raises:
        OutsideDomain: W(F) = +∞ の場合
    """
    F = as_matrix(F)
    values = np.asarray(eval_density(W, F))
    if not np.all(np.isfinite(values)):
        raise OutsideDomain(f"{W.name} is infinite at the requested point; gradient undefined")
    if W.gradient is not None:
        return np.asarray(W.gradient(F), dtype=float)

    n = F.shape[-1]
    step = FD_RELATIVE_STEP * (1.0 + frobenius(F, 2))
    step = np.asarray(step)[..., None, None]
    grad = np.zeros_like(F)
    for i in range(n):
        for j in range(n):
            E = np.zeros((n, n))
            E[i, j] = 1.0
            plus = np.asarray(W.evaluator(F + step * E))
            minus = np.asarray(W.evaluator(F - step * E))
            grad[..., i, j] = (plus - minus) / (2.0 * step[..., 0, 0])
    return grad


def quadratic_density(dim: int | None = None) -> ScalarDensity:
    """W(F) = |F|^2"""
    return ScalarDensity(
        name="quadratic",
        evaluator=lambda F: np.einsum("...ij,...ij->...", F, F),
        gradient=lambda F: 2.0 * F,
        dim=dim,
    )


def _double_well(F: np.ndarray) -> np.ndarray:
    rest = np.einsum("...ij,...ij->...", F, F) - F[..., 0, 0] ** 2
    return (F[..., 0, 0] ** 2 - 1.0) ** 2 + rest


def _double_well_gradient(F: np.ndarray) -> np.ndarray:
    grad = 2.0 * F
    grad[..., 0, 0] = 4.0 * F[..., 0, 0] * (F[..., 0, 0] ** 2 - 1.0)
    return grad


def double_well_density(dim: int | None = None) -> ScalarDensity:
    """
    W(F) = (F11^2 - 1)^2 + Σ_{(i,j)≠(1,1)} F_ij^2

    井戸 ±e1⊗e1 は e1⊗e1 方向に階数1で結ばれ、緩和 W^rel は既知（A=0 で 0）。
    """
    return ScalarDensity(name="double-well", evaluator=_double_well, gradient=_double_well_gradient, dim=dim)


def stvk_phi(F, C: ElasticTensor) -> np.ndarray | float:
    """
    Saint Venant-Kirchhoff 密度 φ(F) = 1/8 𝒞(FᵀF - Id):(FᵀF - Id) >= 0

    回転 Q で φ(Q) = 0。
    """
    F = as_matrix(F)
    if F.shape[-1] != C.dim:
        raise ValueError(f"Matrix dimension {F.shape[-1]} does not match elastic tensor dimension {C.dim}")
    strain = np.swapaxes(F, -1, -2) @ F - np.eye(C.dim)
    value = 0.125 * np.einsum("...ij,...ij->...", C.contract(strain), strain)
    return float(value) if np.ndim(value) == 0 else value


def stvk_gradient(F, C: ElasticTensor) -> np.ndarray:
    """∂φ/∂F = ½ F 𝒞(FᵀF - Id)"""
    F = as_matrix(F)
    strain = np.swapaxes(F, -1, -2) @ F - np.eye(C.dim)
    return 0.5 * F @ C.contract(strain)


def stvk_density(C: ElasticTensor | None = None) -> ScalarDensity:
    C = C or ElasticTensor.isotropic()
    return ScalarDensity(
        name="stvk",
        evaluator=lambda F: stvk_phi(F, C),
        gradient=lambda F: stvk_gradient(F, C),
        dim=C.dim,
    )


def locked(W: ScalarDensity, rho: float) -> ScalarDensity:
    """|F| > ϱ で +∞ となるロッキング密度"""
    limit = rho * (1.0 + _BALL_BOUNDARY_RTOL)

    def evaluator(F):
        values = np.asarray(W.evaluator(F), dtype=float)
        return np.where(frobenius(F, 2) > limit, np.inf, values)

    return replace(W, name=f"{W.name}-locked", evaluator=evaluator, radius=rho)


def estimate_lipschitz_modulus(W: ScalarDensity, radius: float, n_samples: int = 2000, seed: int = 0) -> float:
    """
    B̄(0, radius) 上の Lipschitz 定数 K をサンプリングした勾配ノルムの最大値 × 安全係数で推定する

    球面上の点も必ず含める。ϑ(t) = K t が一様連続度になる。
    """
    n = W.dim or 3
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((n_samples, n, n))
    directions /= frobenius(directions, 2)[:, None, None]
    radii = radius * rng.uniform(0.0, 1.0, n_samples) ** (1.0 / (n * n))
    # 半数は球面上
    radii[: n_samples // 2] = radius
    samples = directions * radii[:, None, None]
    norms = frobenius(grad_density(W, samples), 2)
    K = LIPSCHITZ_SAFETY_FACTOR * float(np.max(norms))
    logger.debug(f"Estimated Lipschitz constant of {W.name} on radius {radius}: {K:.6g}")
    return K


def with_lipschitz_modulus(W: ScalarDensity, radius: float, n_samples: int = 2000, seed: int = 0) -> ScalarDensity:
    """ϑ(t) = K t を付加した密度を返す"""
    K = estimate_lipschitz_modulus(W, radius, n_samples, seed)
    return replace(W, modulus=lambda t: K * t)


# ---------------------------------------------------------------------------
# 勾配多凸密度
# ---------------------------------------------------------------------------

def stvk_gradpoly_density(
    C: ElasticTensor | None = None,
    alpha: float = DEFAULT_ALPHA_COEF,
    q: float = DEFAULT_Q,
    s: float = DEFAULT_S,
    r: float = DEFAULT_R,
    uses_det_gradient: bool = False,
    c: float = DEFAULT_COERCIVITY_C,
    p: float = 4.0,
) -> GradPolyDensity:
    """StVK を基礎とする勾配多凸密度（φ は |F|^4 で増大するので既定の増大指数は p = 4）"""
    C = C or ElasticTensor.isotropic()
    return GradPolyDensity(
        name="stvk-gradpoly",
        base=stvk_density(C),
        alpha=alpha,
        q=q,
        s=s,
        r=r,
        p=p,
        c=c,
        uses_det_gradient=uses_det_gradient,
        dim=C.dim,
    )


def _gradient_arguments(D: GradPolyDensity, F: np.ndarray, delta1, delta2):
    n = F.shape[-1]
    delta1 = np.asarray(delta1, dtype=float)
    if delta1.shape[-3:] != (n, n, n):
        raise ValueError(f"Δ1 must have trailing shape {(n, n, n)}, got {delta1.shape}")
    if D.uses_det_gradient:
        if delta2 is None:
            delta2 = np.zeros(F.shape[:-1])
        delta2 = np.asarray(delta2, dtype=float)
        if delta2.shape[-1:] != (n,):
            raise ValueError(f"Δ2 must have trailing shape {(n,)}, got {delta2.shape}")
    else:
        delta2 = None
    return delta1, delta2


def gradpoly_eval(D: GradPolyDensity, F, delta1, delta2=None) -> np.ndarray | float:
    """Ŵ(F, Δ1[, Δ2])。det F <= 0 なら +∞"""
    F = as_matrix(F)
    delta1, delta2 = _gradient_arguments(D, F, delta1, delta2)
    det = np.asarray(determinant(F))
    positive = det > 0
    safe_det = np.where(positive, det, 1.0)

    value = np.asarray(eval_density(D.base, F)) + D.alpha * (
        frobenius(delta1, 3) ** D.q + safe_det ** (-D.s)
    )
    if delta2 is not None:
        value = value + D.alpha * frobenius(delta2, 1) ** D.r
    value = np.where(positive, value, np.inf)
    return float(value) if value.ndim == 0 else value


def _power_gradient(x: np.ndarray, exponent: float, axes: int) -> np.ndarray:
    # ∂|x|^e/∂x = e |x|^{e-2} x（|x| = 0 では 0）
    norm = frobenius(x, axes)
    safe = np.where(norm > 0, norm, 1.0)
    factor = np.where(norm > 0, exponent * safe ** (exponent - 2.0), 0.0)
    return factor[(...,) + (None,) * axes] * x


def gradpoly_partials(D: GradPolyDensity, F, delta1, delta2=None):
    """
    Ŵ の偏微分 (∂_F Ŵ, ∂_Δ1 Ŵ, ∂_Δ2 Ŵ)。Δ2 を使わない密度では3番目は None

    Raises:
        OutsideDomain: det F <= 0 の場合
    """
    F = as_matrix(F)
    delta1, delta2 = _gradient_arguments(D, F, delta1, delta2)
    det = np.asarray(determinant(F))
    if np.any(det <= 0):
        raise OutsideDomain("Ŵ is infinite where det F <= 0; gradient undefined")

    d_F = grad_density(D.base, F) - D.alpha * D.s * (det ** (-D.s - 1.0))[..., None, None] * cofactor(F)
    d_delta1 = D.alpha * _power_gradient(delta1, D.q, 3)
    d_delta2 = None if delta2 is None else D.alpha * _power_gradient(delta2, D.r, 1)
    return d_F, d_delta1, d_delta2


def determinant_bound_regime(D: GradPolyDensity) -> tuple[bool, str | None]:
    """
    最小化元の det に一様な正の下界が保証されるパラメータ域か判定する

    Returns:
        tuple: (判定結果, 満たさない場合の理由)
    """
    if D.uses_det_gradient:
        if D.r > 3 and D.s > 3 * D.r / (D.r - 3):
            return True, None
        return False, f"Requires r > 3 and s > 3r/(r-3); got r={D.r}, s={D.s}"
    if D.q > 3 and D.s > 6 * D.q / (D.q - 3):
        return True, None
    return False, f"Requires q > 3 and s > 6q/(q-3); got q={D.q}, s={D.s}"


# ---------------------------------------------------------------------------
# ロッキング制約
# ---------------------------------------------------------------------------

def _prager_tensor(F: np.ndarray) -> np.ndarray:
    n = F.shape[-1]
    trace = np.trace(F, axis1=-2, axis2=-1)
    return 0.5 * (F + np.swapaxes(F, -1, -2)) + (1.0 - 2.0 / 3.0 * trace)[..., None, None] * np.eye(n)


def _ciarlet_necas_tensor(F: np.ndarray) -> np.ndarray:
    n = F.shape[-1]
    squared = np.einsum("...ij,...ij->...", F, F)
    return np.swapaxes(F, -1, -2) @ F - (squared / 3.0)[..., None, None] * np.eye(n)


def locking_eval(L: LockingConstraint, F) -> np.ndarray | float:
    """L(F)。L(F) <= 0 で許容"""
    F = as_matrix(F)
    if L.variant == LockingVariant.BALL:
        value = frobenius(F, 2) - L.rho
    elif L.variant == LockingVariant.DETERMINANT:
        value = L.eps - np.asarray(determinant(F))
    elif L.variant == LockingVariant.CIARLET_NECAS:
        value = 0.25 * frobenius(_ciarlet_necas_tensor(F), 2) ** 2 - L.rho
    elif L.variant == LockingVariant.PRAGER:
        value = frobenius(_prager_tensor(F), 2) ** 2 - L.rho
    else:
        value = np.zeros(F.shape[:-2])
    value = np.asarray(value, dtype=float)
    return float(value) if value.ndim == 0 else value


def locking_gradient(L: LockingConstraint, F) -> np.ndarray:
    """∂L/∂F（BALL は F = 0 で劣勾配 0）"""
    F = as_matrix(F)
    n = F.shape[-1]
    if L.variant == LockingVariant.BALL:
        norm = frobenius(F, 2)
        safe = np.where(norm > 0, norm, 1.0)
        return np.where((norm > 0)[..., None, None], F / safe[..., None, None], 0.0)
    if L.variant == LockingVariant.DETERMINANT:
        return -cofactor(F)
    if L.variant == LockingVariant.CIARLET_NECAS:
        G = _ciarlet_necas_tensor(F)
        trace = np.trace(G, axis1=-2, axis2=-1)
        return F @ G - (trace / 3.0)[..., None, None] * F
    if L.variant == LockingVariant.PRAGER:
        S = _prager_tensor(F)
        trace = np.trace(S, axis1=-2, axis2=-1)
        return 2.0 * S - (4.0 / 3.0 * trace)[..., None, None] * np.eye(n)
    return np.zeros_like(F)


# ---------------------------------------------------------------------------
# 標本検査
# ---------------------------------------------------------------------------

def _rotations(dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    if dim == 3:
        return random_rotations(count, seed=int(rng.integers(2**31)))
    return random_rotation_2d(count, rng)


def check_frame_indifference(
    D: GradPolyDensity | ScalarDensity | LockingConstraint,
    n_samples: int = 100,
    seed: int = 0,
    rotations: np.ndarray | None = None,
) -> float:
    """
    枠無差別性 Ŵ(RF, RΔ1, Δ2) = Ŵ(F, Δ1, Δ2) の最大相対誤差

    [RΔ1]_{ijk} = Σ_m R_im [Δ1]_{mjk}。rotations を与えた場合はそれを使う。
    """
    rng = np.random.default_rng(seed)
    dim = D.dim or 3
    F = random_near_identity(rng, n_samples, dim)
    R = _rotations(dim, n_samples, rng) if rotations is None else np.broadcast_to(rotations, (n_samples, dim, dim))
    RF = R @ F

    if isinstance(D, GradPolyDensity):
        delta1 = rng.standard_normal((n_samples, dim, dim, dim))
        delta2 = rng.standard_normal((n_samples, dim))
        rotated_delta1 = np.einsum("...im,...mjk->...ijk", R, delta1)
        before = gradpoly_eval(D, F, delta1, delta2)
        after = gradpoly_eval(D, RF, rotated_delta1, delta2)
    elif isinstance(D, LockingConstraint):
        before = locking_eval(D, F)
        after = locking_eval(D, RF)
    else:
        before = eval_density(D, F)
        after = eval_density(D, RF)

    before, after = np.asarray(before), np.asarray(after)
    finite = np.isfinite(before) & np.isfinite(after)
    if not np.any(finite):
        return 0.0
    discrepancy = np.abs(after[finite] - before[finite]) / np.maximum(1.0, np.abs(before[finite]))
    return float(np.max(discrepancy))


def check_coercivity(D: GradPolyDensity, n_samples: int = 10000, c: float | None = None, seed: int = 0) -> float:
    """
    Ŵ - c(|F|^p + |Cof F|^q + (det F)^r + (det F)^{-s} + |Δ1|^q [+ |Δ2|^r]) の標本最小値

    非負なら宣言した定数が標本上で増大条件を満たす。det F <= 0 の標本は除外する。
    """
    c = D.c if c is None else c
    rng = np.random.default_rng(seed)
    F = random_matrices_with_determinant(rng, n_samples, (0.1, 10.0), D.dim)
    # 一部は向きを反転させる（Ŵ = +∞ となり除外される）
    flipped = rng.uniform(size=n_samples) < 0.1
    F[flipped, 0, :] *= -1.0
    delta1 = rng.standard_normal((n_samples, D.dim, D.dim, D.dim))
    delta2 = rng.standard_normal((n_samples, D.dim))

    values = np.asarray(gradpoly_eval(D, F, delta1, delta2))
    det = np.asarray(determinant(F))
    keep = np.isfinite(values) & (det > 0)
    if not np.any(keep):
        return float("inf")

    F, det, delta1, delta2, values = F[keep], det[keep], delta1[keep], delta2[keep], values[keep]
    bound = (
        frobenius(F, 2) ** D.p
        + frobenius(cofactor(F), 2) ** D.q
        + det ** D.r
        + det ** (-D.s)
        + frobenius(delta1, 3) ** D.q
    )
    if D.uses_det_gradient:
        bound = bound + frobenius(delta2, 1) ** D.r
    return float(np.min(values - c * bound))


def check_convexity(D: GradPolyDensity, n_samples: int = 100, seed: int = 0) -> float:
    """固定した F に対する (Δ1, Δ2) 方向の中点凸性違反の最大値"""
    rng = np.random.default_rng(seed)
    n = D.dim
    F = random_near_identity(rng, n_samples, n)
    first = rng.standard_normal((n_samples, n, n, n))
    second = rng.standard_normal((n_samples, n, n, n))
    first2 = rng.standard_normal((n_samples, n))
    second2 = rng.standard_normal((n_samples, n))
    lam = rng.uniform(size=n_samples)

    mixed = gradpoly_eval(
        D,
        F,
        lam[:, None, None, None] * first + (1 - lam)[:, None, None, None] * second,
        lam[:, None] * first2 + (1 - lam)[:, None] * second2,
    )
    combined = lam * gradpoly_eval(D, F, first, first2) + (1 - lam) * gradpoly_eval(D, F, second, second2)
    return float(np.max(mixed - combined))


def get_density_by_name(name: str, **params) -> ScalarDensity | GradPolyDensity:
    """
    密度名から密度を生成する

    Args:
        name: "quadratic", "double-well", "stvk", "stvk-gradpoly"
        params: 各生成関数の引数（lame_lambda, lame_mu は弾性テンソルに渡す）

    Raises:
        ValueError: 存在しない密度名が指定された場合
    """
    dim = params.pop("dim", None)
    lame_lambda = params.pop("lame_lambda", DEFAULT_LAME_LAMBDA)
    lame_mu = params.pop("lame_mu", DEFAULT_LAME_MU)

    if name == "quadratic":
        return quadratic_density(dim)
    if name == "double-well":
        return double_well_density(dim)
    if name == "stvk":
        return stvk_density(ElasticTensor.isotropic(lame_lambda, lame_mu, dim or 3))
    if name == "stvk-gradpoly":
        return stvk_gradpoly_density(ElasticTensor.isotropic(lame_lambda, lame_mu, dim or 3), **params)
    raise ValueError(f"Unknown density: {name}")
