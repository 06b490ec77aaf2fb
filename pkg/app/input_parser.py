import re

import numpy as np

from app.example51 import Example51Fields
from app.mesh import affine_map

# 数値の並び（例: 0.5, 0, 0）
NUMBER_LIST_PATTERN = re.compile(r'^\s*[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?(\s*,\s*[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?)*\s*$')

# 境界写像の種類（例: affine: 1,0,0; 0,1,0; 0,0,1 | 0,0,0）
MAP_PATTERN = re.compile(r'^\s*(identity|scale|affine|example51)\s*(:\s*(.*))?$', re.DOTALL)

# 境界面（例: x0-, x0+ または all）
FACE_PATTERN = re.compile(r'^(all|x[0-2][-+])$')


def parse_vector(text: str) -> np.ndarray:
    """
    カンマ区切りの数値列をベクトルに変換する。

    Raises:
        ValueError: 数値列として解釈できない場合
    """
    if not NUMBER_LIST_PATTERN.match(text):
        raise ValueError(f"Not a comma separated list of numbers: {text!r}")
    return np.array([float(v) for v in text.split(',')])


def parse_matrix(text: str) -> np.ndarray:
    """
    行をセミコロンで区切った行列（例: 1,0; 0,1）を変換する。

    Raises:
        ValueError: 正方行列として解釈できない場合
    """
    rows = [parse_vector(row) for row in text.split(';')]
    size = len(rows)
    if any(len(row) != size for row in rows):
        raise ValueError(f"Matrix must be square: {text!r}")
    return np.array(rows)


def parse_faces(text: str) -> tuple[str, ...]:
    """
    カンマ区切りの境界面名を解析する（空文字列は空のタプル）。

    Raises:
        ValueError: 不明な境界面名が含まれる場合
    """
    faces = tuple(face.strip() for face in text.split(',') if face.strip())
    for face in faces:
        if not FACE_PATTERN.match(face):
            raise ValueError(f"Unknown boundary face: {face!r}")
    return faces


def parse_map_type(text: str) -> tuple[str, str]:
    """
    境界写像の指定を解析し、種類と引数の文字列を返す。

    Args:
        text: 'identity', 'scale: 0.5', 'affine: <行列> [| <ベクトル>]', 'example51: <t>'

    Returns:
        (str, str): 種類と引数（引数がない場合は空文字列）のタプル。

    Raises:
        ValueError: どの種類にも当てはまらない場合
    """
    match = MAP_PATTERN.match(text)
    if not match:
        raise ValueError(f"Unknown boundary map: {text!r}")
    return match.group(1), (match.group(3) or '').strip()


def build_map(text: str, dim: int):
    """
    境界写像の指定から (N, n) -> (N, n) の関数を作る。

    Raises:
        ValueError: 指定が不正、または次元が合わない場合
    """
    kind, argument = parse_map_type(text)
    if kind == 'identity':
        return affine_map(np.eye(dim))
    if kind == 'scale':
        return affine_map(float(argument) * np.eye(dim))
    if kind == 'affine':
        matrix_text, _, translation_text = argument.partition('|')
        matrix = parse_matrix(matrix_text)
        translation = parse_vector(translation_text) if translation_text.strip() else None
        if matrix.shape != (dim, dim) or (translation is not None and translation.shape != (dim,)):
            raise ValueError(f"Affine map does not match dimension {dim}: {text!r}")
        return affine_map(matrix, translation)

    if dim != 3:
        raise ValueError("The example51 map is only defined in three dimensions")
    return Example51Fields(float(argument or 1.0)).deformation


def parse_slice_matrix(text: str, dim: int) -> np.ndarray:
    """
    スライスの基準・方向行列を解析する。'0' は零行列、'eij' は e_i⊗e_j（1始まり）。

    Raises:
        ValueError: 解釈できない場合
    """
    text = text.strip()
    if text == '0':
        return np.zeros((dim, dim))
    if re.match(r'^e\d\d$', text):
        i, j = int(text[1]) - 1, int(text[2]) - 1
        if not (0 <= i < dim and 0 <= j < dim):
            raise ValueError(f"Unit matrix index out of range: {text!r}")
        matrix = np.zeros((dim, dim))
        matrix[i, j] = 1.0
        return matrix
    matrix = parse_matrix(text)
    if matrix.shape != (dim, dim):
        raise ValueError(f"Matrix {text!r} does not have shape {(dim, dim)}")
    return matrix
