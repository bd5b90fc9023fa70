"""
実験チェッカーモジュール

E1..E9 の実験を系統ごとのチェッカークラスで提供する。
"""

from typing import Dict, List, Optional, Type

from ..errors import ExperimentError, KpzLabError
from ..reader import ExperimentConfig
from .base import BaseChecker
from .equilibrium_checks import EquilibriumChecker
from .exact_checks import ExactChecker
from .scaling_checks import ScalingChecker

FAMILIES: Dict[str, Type[BaseChecker]] = {
    "exact": ExactChecker,
    "equilibrium": EquilibriumChecker,
    "scaling": ScalingChecker,
}


def run_experiment(cfg: ExperimentConfig, progress: bool = True, library_path: Optional[str] = None) -> List[Dict]:
    """
    設定の系統に対応するチェッカーで実験を実行

    構成要素の前提条件違反は実験 ID 付きの ExperimentError になる。

    Args:
        cfg: 実験設定
        progress: 進捗バーを表示するか
        library_path: d ライブラリのパス

    Returns:
        結果行のリスト
    """
    if cfg.family not in FAMILIES:
        raise ExperimentError(cfg.id, ValueError(f"未知の実験系統: {cfg.family}"))
    checker = FAMILIES[cfg.family](library_path, progress=progress)
    try:
        return checker.run(cfg)
    except ExperimentError:
        raise
    except (KpzLabError, ValueError, ArithmeticError) as e:
        raise ExperimentError(cfg.id, e) from e


__all__ = ["BaseChecker", "ExactChecker", "EquilibriumChecker", "ScalingChecker", "FAMILIES", "run_experiment"]
