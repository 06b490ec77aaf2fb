"""
テンソル演算モジュール
変形勾配 F に対する行列式・余因子・逆行列・ノルム・階数1行列と、
解析で用いる代数的恒等式の検証を提供する。

すべての関数は純粋関数で、末尾2軸を行列とみなすバッチ入力（..., n, n）を受け付ける。
"""
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from app.config.constants import (
    LIPSCHITZ_CONSTANT_D,
    SINGULAR_DETERMINANT_THRESHOLD,
    SUPPORTED_DIMENSIONS,
)
from app.exceptions import SingularMatrix

# 3x3 余因子の巡回添字
_NEXT = [1, 2, 0]
_NEXT2 = [2, 0, 1]


def as_matrix(values) -> np.ndarray:
    """
    入力を (..., n, n) の float 配列に変換し、次元と有限性を検証する。

    Raises:
        ValueError: n が 2, 3 以外、または NaN/Inf を含む場合
    """
    array = np.asarray(values, dtype=float)
    if array.ndim < 2 or array.shape[-1] != array.shape[-2]:
        raise ValueError(f"Expected square matrices, got shape {array.shape}")
    if array.shape[-1] not in SUPPORTED_DIMENSIONS:
        raise ValueError(f"Unsupported matrix dimension: {array.shape[-1]}")
    if not np.all(np.isfinite(array)):
        raise ValueError("Matrix entries must be finite")
    return array


def as_third_order(values) -> np.ndarray:
    """(..., 3, 3, 3) の有限な3階テンソルに変換する。"""
    array = np.asarray(values, dtype=float)
    if array.ndim < 3 or array.shape[-3:] != (3, 3, 3):
        raise ValueError(f"Expected 3x3x3 tensors, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError("Tensor entries must be finite")
    return array


def determinant(M) -> np.ndarray | float:
    """
    余因子展開による行列式。符号を保持する。

    Args:
        M: (..., n, n) 行列
    """
    M = as_matrix(M)
    if M.shape[-1] == 2:
        return M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    return (
        M[..., 0, 0] * (M[..., 1, 1] * M[..., 2, 2] - M[..., 1, 2] * M[..., 2, 1])
        - M[..., 0, 1] * (M[..., 1, 0] * M[..., 2, 2] - M[..., 1, 2] * M[..., 2, 0])
        + M[..., 0, 2] * (M[..., 1, 0] * M[..., 2, 1] - M[..., 1, 1] * M[..., 2, 0])
    )


def cofactor(M) -> np.ndarray:
    """
    2x2 小行列式から直接組み立てた余因子行列。特異行列でも定義される。

    正則な M に対しては Cof M = det(M) M^{-T} と一致する。
    """
    M = as_matrix(M)
    if M.shape[-1] == 2:
        result = np.empty_like(M)
        result[..., 0, 0] = M[..., 1, 1]
        result[..., 0, 1] = -M[..., 1, 0]
        result[..., 1, 0] = -M[..., 0, 1]
        result[..., 1, 1] = M[..., 0, 0]
        return result
    rows1 = M[..., _NEXT, :]
    rows2 = M[..., _NEXT2, :]
    return (
        rows1[..., :, _NEXT] * rows2[..., :, _NEXT2]
        - rows1[..., :, _NEXT2] * rows2[..., :, _NEXT]
    )


def inverse_cramer(M, singular_threshold: float = SINGULAR_DETERMINANT_THRESHOLD) -> np.ndarray:
    """
    Cramer の公式 M^{-1} = (Cof M)^T / det M による逆行列。

    Raises:
        SingularMatrix: |det M| <= singular_threshold の場合
    """
    M = as_matrix(M)
    det = np.asarray(determinant(M))
    if np.any(np.abs(det) <= singular_threshold):
        raise SingularMatrix(f"|det M| <= {singular_threshold}; matrix is numerically singular")
    return np.swapaxes(cofactor(M), -1, -2) / det[..., None, None]


def inverse_transpose_from_cofactor(F, singular_threshold: float = SINGULAR_DETERMINANT_THRESHOLD) -> np.ndarray:
    """
    det F > 0 のとき F^{-T} = Cof F / sqrt(det Cof F)。Cof F だけで F が決まることに対応する。
    """
    F = as_matrix(F)
    det = np.asarray(determinant(F))
    if np.any(det <= singular_threshold):
        raise SingularMatrix("det F must be positive to recover F^{-T} from Cof F")
    cof = cofactor(F)
    n = F.shape[-1]
    # det Cof F = (det F)^{n-1}
    scale = np.asarray(determinant(cof)) ** (1.0 / (n - 1))
    return cof / scale[..., None, None]


def frobenius(value, tensor_order: int | None = None) -> np.ndarray | float:
    """
    Frobenius ノルム（全成分二乗和の平方根）。

    Args:
        value: 行列または3階テンソル（バッチ可）
        tensor_order: 末尾何軸をテンソルとみなすか。None なら全軸の和
    """
    array = np.asarray(value, dtype=float)
    if tensor_order is None:
        return float(np.sqrt(np.sum(array * array)))
    axes = tuple(range(array.ndim - tensor_order, array.ndim))
    return np.sqrt(np.sum(array * array, axis=axes))


def rank_one(a, b) -> np.ndarray:
    """a ⊗ b（成分 a_i b_j）"""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"Vectors must have matching dimension: {a.shape} vs {b.shape}")
    return np.outer(a, b)


def levi_civita(n: int = 3) -> np.ndarray:
    """置換テンソル ε（n=2 または 3）"""
    if n == 2:
        return np.array([[0.0, 1.0], [-1.0, 0.0]])
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
    eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1.0
    return eps


_EPS3 = levi_civita(3)


def cofactor_derivative(F) -> np.ndarray:
    """
    𝓛_{jklm}(F) = ∂(Cof F)_{jk} / ∂F_{lm} = Σ_{b,d} ε_{jlb} ε_{kmd} F_{bd}

    F について線形なので 𝓛(0) = 0、𝓛(2F) = 2𝓛(F) が厳密に成り立つ。
    """
    F = as_matrix(F)
    if F.shape[-1] != 3:
        raise ValueError("cofactor_derivative is defined for 3x3 matrices")
    return np.einsum("jlb,kmd,...bd->...jklm", _EPS3, _EPS3, F)


def _hadamard_slack_2x2(a, b, c, d) -> np.ndarray:
    # |A|^2/2 - |det A| を二乗和の形で計算する（丸めても負にならない）
    det = a * d - b * c
    positive = 0.5 * ((a - d) ** 2 + (b + c) ** 2)
    negative = 0.5 * ((a + d) ** 2 + (b - c) ** 2)
    return np.where(det >= 0, positive, negative)


def hadamard_slack(F) -> float:
    """F の全 2x2 小行列 A について |A|^2/2 - |det A| の最小値（>= 0）"""
    F = as_matrix(F)
    n = F.shape[-1]
    slacks = []
    for i1, i2 in combinations(range(n), 2):
        for j1, j2 in combinations(range(n), 2):
            slacks.append(_hadamard_slack_2x2(F[i1, j1], F[i1, j2], F[i2, j1], F[i2, j2]))
    return float(np.min(slacks))


@dataclass(frozen=True)
class IdentityReport:
    """
    代数的恒等式・不等式の残差。不等式はスラック（>= 0 で成立）として格納する。
    逆行列を使う項目は det ≈ 0 のとき NaN とし、singular フラグを立てる。
    """
    det_cof_residual: float
    cramer_residual: float
    hadamard_slack: float
    hcof_slack: float
    singular: bool
    cof_inverse_residual: float = float("nan")
    inverse_slack: float = float("nan")
    inverse_transpose_residual: float = float("nan")
    lipschitz_slack: float | None = None
    notes: list[str] = field(default_factory=list)

    def as_row(self) -> dict:
        return {
            "det_cof_residual": self.det_cof_residual,
            "cramer_residual": self.cramer_residual,
            "hadamard_slack": self.hadamard_slack,
            "hcof_slack": self.hcof_slack,
            "cof_inverse_residual": self.cof_inverse_residual,
            "inverse_slack": self.inverse_slack,
            "inverse_transpose_residual": self.inverse_transpose_residual,
            "lipschitz_slack": self.lipschitz_slack if self.lipschitz_slack is not None else float("nan"),
            "singular": int(self.singular),
        }


def identity_report(
    F,
    other=None,
    singular_threshold: float = SINGULAR_DETERMINANT_THRESHOLD,
    lipschitz_d: float = LIPSCHITZ_CONSTANT_D,
) -> IdentityReport:
    """
    単一の行列 F について恒等式の残差を計算する。

    Args:
        F: n x n 行列
        other: 指定した場合、det の局所 Lipschitz 評価 d(1+|F|^2+|G|^2)|F-G| - |det F - det G| も計算
        singular_threshold: 逆行列を使う項目をスキップする |det| の閾値
        lipschitz_d: Lipschitz 評価の定数 d

    Returns:
        IdentityReport
    """
    F = as_matrix(F)
    n = F.shape[-1]
    det = float(determinant(F))
    cof = cofactor(F)
    identity = np.eye(n)

    det_cof_residual = float(determinant(cof)) - det ** (n - 1)
    cramer_residual = frobenius(F @ cof.T - det * identity)
    notes = []
    # |Cof F| <= 3/2 |F|^2 は余因子が2次となる n=3 の評価
    hcof_slack = 1.5 * frobenius(F) ** 2 - frobenius(cof) if n == 3 else float("nan")

    singular = abs(det) <= singular_threshold
    cof_inverse_residual = float("nan")
    inverse_slack = float("nan")
    inverse_transpose_residual = float("nan")
    if singular:
        notes.append("det F is numerically zero; inverse-based identities skipped")
    else:
        F_inv = inverse_cramer(F, singular_threshold)
        cof_inv = inverse_cramer(cof, singular_threshold ** (n - 1))
        cof_inverse_residual = frobenius(cofactor(F_inv) - cof_inv)
        inverse_slack = 1.5 * frobenius(F_inv) ** 2 - frobenius(cof_inv)
        if det > 0:
            inverse_transpose_residual = frobenius(inverse_transpose_from_cofactor(F, singular_threshold) - F_inv.T)

    lipschitz_slack = None
    if other is not None:
        G = as_matrix(other)
        lipschitz_slack = float(
            lipschitz_d * (1.0 + frobenius(F) ** 2 + frobenius(G) ** 2) * frobenius(F - G)
            - abs(det - float(determinant(G)))
        )

    return IdentityReport(
        det_cof_residual=det_cof_residual,
        cramer_residual=cramer_residual,
        hadamard_slack=hadamard_slack(F),
        hcof_slack=hcof_slack,
        singular=singular,
        cof_inverse_residual=cof_inverse_residual,
        inverse_slack=inverse_slack,
        inverse_transpose_residual=inverse_transpose_residual,
        lipschitz_slack=lipschitz_slack,
        notes=notes,
    )
