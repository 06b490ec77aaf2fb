"""
VTK 出力モジュール
レガシー VTK（ASCII, DATASET UNSTRUCTURED_GRID）で単体メッシュと節点・要素データを書き出す
"""
import logging
from pathlib import Path

import numpy as np

from app.config.constants import CSV_FLOAT_FORMAT, VTK_MAGIC_LINE
from app.exceptions import IoError
from app.mesh import BoxMesh, DiscreteDeformation, element_gradients
from app.tensor_core import determinant, frobenius

logger = logging.getLogger(__name__)

# 2次元は三角形、3次元は四面体
CELL_TYPES = {2: 5, 3: 10}


def _format(value: float) -> str:
    return CSV_FLOAT_FORMAT.format(float(value))


def _data_block(lines: list[str], name: str, values: np.ndarray):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_format(v) for v in values)
    elif values.ndim == 2 and values.shape[1] in (2, 3):
        if values.shape[1] == 2:
            values = np.hstack([values, np.zeros((len(values), 1))])
        lines.append(f"VECTORS {name} double")
        lines.extend(" ".join(_format(v) for v in row) for row in values)
    else:
        raise ValueError(f"Unsupported data shape for {name}: {values.shape}")


def write_unstructured_grid(
    path: str | Path,
    points: np.ndarray,
    cells: np.ndarray,
    point_data: dict[str, np.ndarray] | None = None,
    cell_data: dict[str, np.ndarray] | None = None,
    title: str = "elasticity",
) -> Path:
    """
    単体メッシュをレガシー VTK ファイルに書き出す

    Args:
        path: 出力先
        points: (N, 2) または (N, 3) の節点座標（2次元は z = 0 を補う）
        cells: (E, n+1) の単体
        point_data: 名前 -> (N,) スカラーまたは (N, n) ベクトル
        cell_data: 名前 -> (E,) スカラーまたは (E, n) ベクトル

    Returns:
        Path: 書き出したファイルのパス

    Raises:
        IoError: 書き込みに失敗した場合
    """
    path = Path(path)
    points = np.asarray(points, dtype=float)
    cells = np.asarray(cells, dtype=int)
    dim = cells.shape[1] - 1
    if dim not in CELL_TYPES:
        raise ValueError(f"Unsupported simplex size: {cells.shape[1]}")
    if points.shape[1] == 2:
        points = np.hstack([points, np.zeros((len(points), 1))])

    lines = [VTK_MAGIC_LINE, title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {len(points)} double")
    lines.extend(" ".join(_format(v) for v in row) for row in points)
    lines.append(f"CELLS {len(cells)} {len(cells) * (dim + 2)}")
    lines.extend(f"{dim + 1} " + " ".join(str(i) for i in cell) for cell in cells)
    lines.append(f"CELL_TYPES {len(cells)}")
    lines.extend([str(CELL_TYPES[dim])] * len(cells))

    if point_data:
        lines.append(f"POINT_DATA {len(points)}")
        for name, values in point_data.items():
            _data_block(lines, name, values)
    if cell_data:
        lines.append(f"CELL_DATA {len(cells)}")
        for name, values in cell_data.items():
            _data_block(lines, name, values)

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoError(f"Failed to write VTK file {path}: {e}") from e
    logger.info(f"VTK file written: {path} ({len(points)} points, {len(cells)} cells)")
    return path


def write_deformation(path: str | Path, y: DiscreteDeformation, title: str = "deformation") -> Path:
    """変形後の配置に、節点変位と要素の det ∇y, |∇y| を付けて書き出す"""
    mesh = y.mesh
    F = element_gradients(y)
    return write_unstructured_grid(
        path,
        y.values,
        mesh.elements,
        point_data={
            "reference_position": mesh.node_coordinates,
            "displacement": y.values - mesh.node_coordinates,
        },
        cell_data={
            "det": np.asarray(determinant(F)),
            "gradient_norm": np.asarray(frobenius(F, 2)),
        },
        title=title,
    )


def write_mesh(path: str | Path, mesh: BoxMesh, title: str = "reference") -> Path:
    return write_unstructured_grid(path, mesh.node_coordinates, mesh.elements, title=title)


def read_counts(path: str | Path) -> tuple[int, int]:
    """
    VTK ファイルの節点数と要素数を読む

    Raises:
        IoError: 読み込みに失敗した場合、または POINTS / CELLS 行がない場合
    """
    points = cells = None
    try:
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.startswith("POINTS "):
                    points = int(line.split()[1])
                elif line.startswith("CELLS "):
                    cells = int(line.split()[1])
    except OSError as e:
        raise IoError(f"Failed to read VTK file {path}: {e}") from e
    if points is None or cells is None:
        raise IoError(f"VTK file {path} has no POINTS or CELLS section")
    return points, cells
