"""
CSV 出力ユーティリティモジュール
ヘッダ付き・倍精度17桁で書き出し、同じ入力からバイト単位で同じファイルを生成する
"""
import csv
import math
from pathlib import Path

from app.config.constants import CSV_FLOAT_FORMAT
from app.exceptions import IoError


def format_value(value) -> str:
    """数値を CSV 用の文字列に変換する（float は17桁、inf/nan は固定表記）"""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float) or hasattr(value, "dtype"):
        number = float(value)
        if math.isnan(number):
            return "nan"
        if math.isinf(number):
            return "inf" if number > 0 else "-inf"
        return CSV_FLOAT_FORMAT.format(number)
    return str(value)


def write_rows(path: str | Path, rows: list[dict], columns: list[str] | None = None) -> Path:
    """
    辞書のリストを CSV に書き出す

    Args:
        path: 出力先
        rows: 各行の辞書
        columns: 列順。None の場合は最初の行のキー順

    Returns:
        Path: 書き出したファイルのパス

    Raises:
        IoError: 書き込みに失敗した場合
    """
    path = Path(path)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([format_value(row.get(column, "")) for column in columns])
    except OSError as e:
        raise IoError(f"Failed to write CSV {path}: {e}") from e
    return path
