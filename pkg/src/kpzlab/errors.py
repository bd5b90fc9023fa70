"""
例外定義

kpzlab 全体で使用する例外クラスを提供する。
"""

from typing import Optional


class KpzLabError(Exception):
    """kpzlab の基底例外クラス"""


class ConfigError(KpzLabError, ValueError):
    """設定ファイルや引数の不備"""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class WindowCapError(KpzLabError, ValueError):
    """局所汎関数の窓幅が上限を超えた"""

    def __init__(self, width: int, cap: int):
        super().__init__(f"窓幅 {width} が上限 {cap} を超えています")
        self.width = width
        self.cap = cap


class GradientConditionError(KpzLabError, ValueError):
    """勾配条件を満たす汎関数 w が見つからない"""

    def __init__(self, residual: float):
        super().__init__(f"勾配条件を満たしません（最大残差 {residual:.3e}）")
        self.residual = residual


class RatePositivityError(KpzLabError, ValueError):
    """ジャンプレートが負になる"""

    def __init__(self, n: int, d_max: float):
        super().__init__(
            f"N={n} では max|d|={d_max:.4g} に対してレートが非負になりません"
            f"（N^(1/2) >= 1 + N^(-1/2) max|d| が必要）"
        )
        self.n = n
        self.d_max = d_max


class EmptyHyperplaneError(KpzLabError, ValueError):
    """カノニカル測度の超平面が空"""

    def __init__(self, window: int, plus_count: int):
        super().__init__(f"窓 {window} サイトに + を {plus_count} 個置く配置は存在しません")
        self.window = window
        self.plus_count = plus_count


class DisjointnessError(KpzLabError, ValueError):
    """空間平均の平行移動の台が重なる"""

    def __init__(self, stride: int, width: int):
        super().__init__(f"ストライド {stride} は台の幅 {width} より小さく、台が重なります")
        self.stride = stride
        self.width = width


class HorizonError(KpzLabError, ValueError):
    """記録された時間範囲の外を要求した"""

    def __init__(self, requested: float, horizon: float):
        super().__init__(f"時刻 {requested:.6g} は記録範囲 {horizon:.6g} を超えています")
        self.requested = requested
        self.horizon = horizon


class StabilityError(KpzLabError, ValueError):
    """SHE ソルバーの時間刻みが安定条件を満たさない"""

    def __init__(self, dt: float, limit: float):
        super().__init__(f"時間刻み {dt:.3e} が安定条件の上限 {limit:.3e} を超えています")
        self.dt = dt
        self.limit = limit


class PositivityError(KpzLabError, ValueError):
    """正値性が失われた"""

    def __init__(self, message: str = "正値性が失われました"):
        super().__init__(message)


class ExperimentError(KpzLabError):
    """実験実行中に構成要素の前提条件が破れた"""

    def __init__(self, experiment: str, cause: Exception):
        super().__init__(f"実験 {experiment} でエラーが発生しました: {cause}")
        self.experiment = experiment
        self.cause = cause
