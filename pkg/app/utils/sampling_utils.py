"""
サンプリングユーティリティモジュール
方向格子・回転行列・ランダム行列の生成など、各検証処理の共通部分
"""
import math

import numpy as np
from scipy.spatial.transform import Rotation


def get_directions(dim: int, num_points: int) -> np.ndarray:
    """
    単位球面（dim=2 なら単位円）上の方向格子を生成する。

    dim=2 は円周上の等間隔配置（角度 0 を含むので e1 が必ず入る）。
    dim=3 は Fibonacci 球面に座標軸 ±e_k を加えた配置。

    Returns:
        (m, dim) の単位ベクトル配列
    """
    if dim == 2:
        angles = [2 * math.pi * i / num_points for i in range(num_points)]
        return np.array([[math.cos(a), math.sin(a)] for a in angles])

    if dim != 3:
        raise ValueError(f"Unsupported dimension: {dim}")

    # 座標軸を先頭に置き、残りを Fibonacci 球面で埋める
    axes = np.vstack([np.eye(3), -np.eye(3)])
    golden = math.pi * (3.0 - math.sqrt(5.0))
    points = []
    count = max(num_points - len(axes), 0)
    for i in range(count):
        z = 1.0 - 2.0 * (i + 0.5) / count
        radius = math.sqrt(max(0.0, 1.0 - z * z))
        theta = golden * i
        points.append([radius * math.cos(theta), radius * math.sin(theta), z])
    if not points:
        return axes
    return np.vstack([axes, np.array(points)])


def random_rotations(count: int, seed: int | None = None) -> np.ndarray:
    """SO(3) 上の一様ランダム回転 (count, 3, 3)"""
    return Rotation.random(count, random_state=seed).as_matrix().reshape(count, 3, 3)


def random_rotation_2d(count: int, rng: np.random.Generator) -> np.ndarray:
    """SO(2) 上の一様ランダム回転 (count, 2, 2)"""
    angles = rng.uniform(0.0, 2 * math.pi, size=count)
    c, s = np.cos(angles), np.sin(angles)
    return np.stack([np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)], axis=-2)


def random_matrices_with_determinant(
    rng: np.random.Generator,
    count: int,
    det_range: tuple[float, float] = (0.1, 10.0),
    dim: int = 3,
) -> np.ndarray:
    """
    行列式が det_range に入るランダム行列を生成する。

    正規乱数行列の符号を揃えたあと、対数一様に選んだ目標値へスケーリングする。
    """
    matrices = rng.standard_normal((count, dim, dim))
    dets = np.linalg.det(matrices)
    # det < 0 は1行目の符号反転で向きを揃える（det = 0 はほぼ起きないが再生成する）
    for i in np.flatnonzero(np.abs(dets) < 1e-8):
        while abs(np.linalg.det(matrices[i])) < 1e-8:
            matrices[i] = rng.standard_normal((dim, dim))
    dets = np.linalg.det(matrices)
    matrices[dets < 0, 0, :] *= -1.0
    dets = np.abs(dets)

    low, high = det_range
    targets = np.exp(rng.uniform(math.log(low), math.log(high), size=count))
    scales = (targets / dets) ** (1.0 / dim)
    return matrices * scales[:, None, None]


def random_near_identity(
    rng: np.random.Generator, count: int, dim: int = 3, spread: float = 0.3
) -> np.ndarray:
    """det > 0 となる恒等写像近傍の行列（枠無差別性・凸性チェック用）"""
    matrices = np.eye(dim) + spread * rng.standard_normal((count, dim, dim))
    dets = np.linalg.det(matrices)
    matrices[dets < 0, 0, :] *= -1.0
    return matrices
