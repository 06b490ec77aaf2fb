"""
例外定義モジュール
+∞ は値（numpy.inf）として扱い、例外にはしない
"""


class ElasticityError(Exception):
    """本パッケージの全例外の基底クラス"""


class SingularMatrix(ElasticityError):
    """|det M| が閾値以下で逆行列を計算できない"""


class OutsideDomain(ElasticityError):
    """密度が +∞ となる点で勾配が要求された"""


class InfiniteAtomValue(ElasticityError):
    """正の重みを持つ原子で被積分関数が +∞"""


class InfeasibleBase(ElasticityError):
    """セル問題の基準行列 A がロッキング領域の外にある"""


class OutsideRegion(ElasticityError):
    """行列が閉領域の外にある"""


class BarycenterMismatch(ElasticityError):
    """Young 測度の重心が要素勾配と一致しない"""


class SupportViolation(ElasticityError):
    """Young 測度の台が B̄(0,ϱ) に含まれない"""


class PreconditionViolated(ElasticityError):
    """操作の事前条件が満たされていない"""


class LineSearchFailure(ElasticityError):
    """直線探索のステップ幅がアンダーフローした"""


class NonFiniteEnergy(ElasticityError):
    """初期エネルギーが有限でない"""


class InfeasibleStart(ElasticityError):
    """制約付き最小化の初期値が実行可能でない"""


class IncompatibleParameters(ElasticityError):
    """ϱ <= √n ε^{1/n} で実行可能集合が空になり得る"""


class DomainError(ElasticityError):
    """閉形式の評価点が定義域外（x1 = 0 で負べきの成分など）"""


class IoError(ElasticityError, OSError):
    """出力ファイルの書き込みに失敗した"""


class ConfigError(ElasticityError):
    """
    設定ファイル・コマンドライン引数の誤り

    Args:
        message: エラー内容
        key: 問題のあるキー（section.key 形式）
        line: 設定ファイル中の行番号（不明な場合は None）
    """

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        location = ""
        if key is not None:
            location += f" [key: {key}]"
        if line is not None:
            location += f" [line: {line}]"
        super().__init__(f"{message}{location}")
