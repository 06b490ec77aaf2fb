"""
構造化単体メッシュモジュール
直方体領域を Kuhn 分割（正方形は三角形2個、立方体は四面体6個）した P1 メッシュと、
節点変形場・要素勾配・体積加重による節点回復・境界質量行列を提供する
"""
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from itertools import permutations
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.special import roots_jacobi

from app.config.constants import SUPPORTED_DIMENSIONS

# 境界面タグ: "x0-" は x0 = 下端、"x0+" は x0 = 上端
ALL_FACES = "all"


def face_tags(dim: int) -> list[str]:
    return [f"x{axis}{side}" for axis in range(dim) for side in ("-", "+")]


class BoxMesh:
    """
    直方体 Π[lower_k, upper_k] の構造化単体メッシュ

    節点番号は x0 が最も速く変化する辞書式順序。要素はすべて正の向きに揃えてある。
    """

    def __init__(
        self,
        subdivisions: tuple[int, ...],
        lower: tuple[float, ...] | None = None,
        upper: tuple[float, ...] | None = None,
    ):
        self.dim = len(subdivisions)
        if self.dim not in SUPPORTED_DIMENSIONS:
            raise ValueError(f"Unsupported mesh dimension: {self.dim}")
        if any(int(k) < 1 for k in subdivisions):
            raise ValueError(f"Subdivisions must be positive: {subdivisions}")
        self.subdivisions = tuple(int(k) for k in subdivisions)
        self.lower = tuple(float(v) for v in (lower or (0.0,) * self.dim))
        self.upper = tuple(float(v) for v in (upper or (1.0,) * self.dim))
        if len(self.lower) != self.dim or len(self.upper) != self.dim:
            raise ValueError("Box extents must match the mesh dimension")
        if any(hi <= lo for lo, hi in zip(self.lower, self.upper)):
            raise ValueError(f"Empty box: lower={self.lower}, upper={self.upper}")

        self.node_coordinates = self._build_nodes()
        self.elements = self._build_elements()

    @classmethod
    def unit(cls, subdivisions: int, dim: int = 3) -> "BoxMesh":
        return cls((subdivisions,) * dim)

    # ------------------------------------------------------------------
    # 構築
    # ------------------------------------------------------------------

    @property
    def node_shape(self) -> tuple[int, ...]:
        return tuple(k + 1 for k in self.subdivisions)

    @property
    def num_nodes(self) -> int:
        return math.prod(self.node_shape)

    @property
    def num_elements(self) -> int:
        return len(self.elements)

    def node_index(self, multi_index: np.ndarray) -> np.ndarray:
        """格子添字 (..., dim) から節点番号"""
        strides = np.cumprod((1,) + self.node_shape[:-1])
        return np.asarray(multi_index) @ strides

    def _build_nodes(self) -> np.ndarray:
        axes = [np.linspace(lo, hi, k + 1) for lo, hi, k in zip(self.lower, self.upper, self.subdivisions)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel(order="F") for g in grids], axis=1)

    def _build_elements(self) -> np.ndarray:
        dim = self.dim
        corners = np.stack(
            np.meshgrid(*[np.arange(k) for k in self.subdivisions], indexing="ij"), axis=-1
        ).reshape(-1, dim)
        unit = np.eye(dim, dtype=int)
        simplices = []
        for order in permutations(range(dim)):
            # 頂点 v0 = c, v_{k+1} = v_k + e_{order[k]}
            path = [np.zeros(dim, dtype=int)]
            for axis in order:
                path.append(path[-1] + unit[axis])
            local = self.node_index(corners[:, None, :] + np.array(path)[None, :, :])
            simplices.append(local)
        elements = np.concatenate(simplices, axis=0)

        # 負の向きの単体は最後の2頂点を入れ替える
        X = self.node_coordinates[elements]
        edges = np.swapaxes(X[:, 1:, :] - X[:, :1, :], -1, -2)
        negative = np.linalg.det(edges) < 0
        elements[negative, -2], elements[negative, -1] = elements[negative, -1], elements[negative, -2].copy()
        return elements

    # ------------------------------------------------------------------
    # 要素量
    # ------------------------------------------------------------------

    @cached_property
    def edge_matrices(self) -> np.ndarray:
        """D_e = [X1 - X0, ..., Xn - X0]（列ベクトル）"""
        X = self.node_coordinates[self.elements]
        return np.swapaxes(X[:, 1:, :] - X[:, :1, :], -1, -2)

    @cached_property
    def element_volumes(self) -> np.ndarray:
        return np.linalg.det(self.edge_matrices) / math.factorial(self.dim)

    @cached_property
    def shape_gradients(self) -> np.ndarray:
        """B_e[a, :] = ∇λ_a（(E, n+1, n)）"""
        reference = np.vstack([-np.ones((1, self.dim)), np.eye(self.dim)])
        return np.einsum("ak,ekj->eaj", reference, np.linalg.inv(self.edge_matrices))

    @cached_property
    def element_centroids(self) -> np.ndarray:
        return self.node_coordinates[self.elements].mean(axis=1)

    @property
    def volume(self) -> float:
        return math.prod(hi - lo for lo, hi in zip(self.lower, self.upper))

    @property
    def mesh_size(self) -> float:
        """要素直径の最大値（セルの対角線長）"""
        widths = [(hi - lo) / k for lo, hi, k in zip(self.lower, self.upper, self.subdivisions)]
        return math.sqrt(sum(w * w for w in widths))

    @cached_property
    def scatter_operator(self) -> sparse.csr_matrix:
        """要素頂点ごとの寄与 (E·(n+1), ...) を節点へ加算する疎行列"""
        rows = self.elements.ravel()
        cols = np.arange(rows.size)
        data = np.ones(rows.size)
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.num_nodes, rows.size))

    def scatter(self, contributions: np.ndarray) -> np.ndarray:
        """(E, n+1, ...) の要素寄与を節点配列 (N, ...) に加算する"""
        tail = contributions.shape[2:]
        flat = contributions.reshape(contributions.shape[0] * contributions.shape[1], -1)
        return np.asarray(self.scatter_operator @ flat).reshape((self.num_nodes,) + tail)

    @cached_property
    def recovery_operator(self) -> sparse.csr_matrix:
        """
        体積加重平均による回復作用素 R（N × E）

        各行の和は 1 なので定数場は定数に回復される。
        """
        rows = self.elements.ravel()
        cols = np.repeat(np.arange(self.num_elements), self.dim + 1)
        data = np.repeat(self.element_volumes, self.dim + 1)
        weights = sparse.csr_matrix((data, (rows, cols)), shape=(self.num_nodes, self.num_elements))
        totals = np.asarray(weights.sum(axis=1)).ravel()
        return sparse.diags(1.0 / totals) @ weights

    def recover(self, element_values: np.ndarray) -> np.ndarray:
        """要素定数場 (E, ...) を節点場 (N, ...) に回復する"""
        tail = element_values.shape[1:]
        flat = element_values.reshape(self.num_elements, -1)
        return np.asarray(self.recovery_operator @ flat).reshape((self.num_nodes,) + tail)

    def nodal_gradient(self, nodal_values: np.ndarray) -> np.ndarray:
        """P1 節点場 (N, ...) の要素勾配 (E, ..., n)"""
        return np.einsum("ea...,eam->e...m", nodal_values[self.elements], self.shape_gradients)

    # ------------------------------------------------------------------
    # 境界
    # ------------------------------------------------------------------

    def resolve_faces(self, faces) -> list[str]:
        if faces is None:
            return []
        if isinstance(faces, str):
            faces = [faces]
        tags = face_tags(self.dim)
        resolved = []
        for face in faces:
            if face == ALL_FACES:
                resolved.extend(tags)
            elif face in tags:
                resolved.append(face)
            else:
                raise ValueError(f"Unknown boundary face: {face}")
        return list(dict.fromkeys(resolved))

    @cached_property
    def _facets_by_tag(self) -> dict[str, np.ndarray]:
        coordinates = self.node_coordinates
        candidates = []
        for omitted in range(self.dim + 1):
            keep = [a for a in range(self.dim + 1) if a != omitted]
            candidates.append(self.elements[:, keep])
        candidates = np.concatenate(candidates, axis=0)

        facets = {}
        for axis in range(self.dim):
            for side, value in (("-", self.lower[axis]), ("+", self.upper[axis])):
                on_plane = np.all(np.isclose(coordinates[candidates, axis], value), axis=1)
                facets[f"x{axis}{side}"] = candidates[on_plane]
        return facets

    def boundary_facets(self, faces=ALL_FACES) -> np.ndarray:
        """指定した境界面上の (n-1) 次元単体 (F, n)"""
        tags = self.resolve_faces(faces)
        if not tags:
            return np.zeros((0, self.dim), dtype=int)
        return np.concatenate([self._facets_by_tag[tag] for tag in tags], axis=0)

    def boundary_nodes(self, faces=ALL_FACES) -> np.ndarray:
        return np.unique(self.boundary_facets(faces))

    def facet_areas(self, facets: np.ndarray) -> np.ndarray:
        """(n-1) 次元測度 sqrt(det GᵀG)/(n-1)!"""
        X = self.node_coordinates[facets]
        G = np.swapaxes(X[:, 1:, :] - X[:, :1, :], -1, -2)
        gram = np.swapaxes(G, -1, -2) @ G
        return np.sqrt(np.linalg.det(gram)) / math.factorial(self.dim - 1)

    def boundary_measure(self, faces=ALL_FACES) -> float:
        return float(np.sum(self.facet_areas(self.boundary_facets(faces))))

    def boundary_mass(self, faces=ALL_FACES) -> sparse.csr_matrix:
        """境界上の厳密な P1 質量行列 M_ab = |f|/(n(n+1))·(1 + δ_ab)"""
        facets = self.boundary_facets(faces)
        n = self.dim
        if len(facets) == 0:
            return sparse.csr_matrix((self.num_nodes, self.num_nodes))
        local = (np.ones((n, n)) + np.eye(n)) / (n * (n + 1))
        areas = self.facet_areas(facets)
        rows = np.repeat(facets, n, axis=1).ravel()
        cols = np.tile(facets, (1, n)).ravel()
        data = (areas[:, None, None] * local[None, :, :]).ravel()
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.num_nodes, self.num_nodes))

    def periodic_node_map(self) -> np.ndarray:
        """各節点を周期同一視した代表節点（上端の節点を下端へ写す）"""
        shape = self.node_shape
        multi = np.stack(np.unravel_index(np.arange(self.num_nodes), shape, order="F"), axis=1)
        wrapped = multi % np.array(self.subdivisions)
        return self.node_index(wrapped)


@dataclass(frozen=True, eq=False)
class DiscreteDeformation:
    """P1 節点変形場 y（(N, n)）"""
    mesh: BoxMesh
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.mesh.num_nodes, self.mesh.dim):
            raise ValueError(f"Nodal values must have shape {(self.mesh.num_nodes, self.mesh.dim)}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("Nodal values must be finite")
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray) -> "DiscreteDeformation":
        return DiscreteDeformation(self.mesh, values)


def interpolate(mesh: BoxMesh, mapping: Callable[[np.ndarray], np.ndarray]) -> DiscreteDeformation:
    """写像 x -> y(x)（(N, n) -> (N, n) のベクトル化関数）の節点補間"""
    return DiscreteDeformation(mesh, np.asarray(mapping(mesh.node_coordinates), dtype=float))


def affine_map(F, b=None) -> Callable[[np.ndarray], np.ndarray]:
    """x -> F x + b"""
    F = np.asarray(F, dtype=float)
    b = np.zeros(F.shape[0]) if b is None else np.asarray(b, dtype=float)
    return lambda x: x @ F.T + b


def identity_deformation(mesh: BoxMesh) -> DiscreteDeformation:
    return DiscreteDeformation(mesh, mesh.node_coordinates.copy())


def element_gradients(y: DiscreteDeformation) -> np.ndarray:
    """要素ごとの厳密な P1 勾配 F_e（(E, n, n)）"""
    mesh = y.mesh
    return np.einsum("eai,eaj->eij", y.values[mesh.elements], mesh.shape_gradients)


@lru_cache(maxsize=None)
def simplex_quadrature(dim: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """
    参照単体上の次数 degree までの多項式を厳密に積分する求積則（Gauss-Jacobi の錐積）

    Args:
        dim: 単体の次元
        degree: 厳密に積分する多項式の次数

    Returns:
        tuple: 重心座標 (Q, dim+1) と和が 1 の重み (Q,)
    """
    m = max(1, math.ceil((degree + 1) / 2))
    rules = []
    for axis in range(dim):
        # 軸 axis の Jacobian 因子 (1 - u)^(dim-1-axis) を重みに含める
        exponent = dim - 1 - axis
        nodes, weights = roots_jacobi(m, exponent, 0)
        rules.append(((1.0 + nodes) / 2.0, weights / 2.0 ** (exponent + 1)))

    grids = np.meshgrid(*[u for u, _ in rules], indexing="ij")
    weights = np.prod(np.meshgrid(*[w for _, w in rules], indexing="ij"), axis=0).ravel()
    remaining = np.ones(weights.shape)
    coordinates = []
    for u in grids:
        coordinates.append(remaining * u.ravel())
        remaining = remaining * (1.0 - u.ravel())
    barycentric = np.column_stack([remaining, *coordinates])
    weights = weights / weights.sum()
    barycentric.setflags(write=False)
    weights.setflags(write=False)
    return barycentric, weights
