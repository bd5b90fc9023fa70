"""
実験チェッカーの共通部分

d ライブラリの読み込み、モデル構築、結果行の組み立てを提供する。
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

from ..ensembles import ModelFunctionals, build_model
from ..lattice import LocalFunctional
from ..reader import ExperimentConfig, load_library, resolve_functional

logger = logging.getLogger(__name__)


class BaseChecker:
    """実験チェッカーの基底クラス"""

    family = ""

    def __init__(self, library_path: Optional[Union[str, Path]] = None, progress: bool = True):
        """
        チェッカーを初期化

        Args:
            library_path: d ライブラリのパス（指定しない場合は同梱のものを使用）
            progress: 進捗バーを表示するか
        """
        self.library: Dict[str, LocalFunctional] = load_library(library_path)
        self.progress = progress
        self._models: Dict[str, ModelFunctionals] = {}

    def model_for(self, cfg: ExperimentConfig) -> ModelFunctionals:
        """設定の d からモデル汎関数を組み立てる（キーごとにキャッシュ）"""
        key = cfg.model if cfg.functional is None else repr(cfg.functional)
        if key not in self._models:
            self._models[key] = build_model(resolve_functional(cfg, self.library))
        return self._models[key]

    def model_named(self, name: str) -> ModelFunctionals:
        if name not in self._models:
            self._models[name] = build_model(self.library[name])
        return self._models[name]

    def run(self, cfg: ExperimentConfig) -> List[Dict]:
        method = getattr(self, f"run_{cfg.id.lower()}", None)
        if method is None:
            raise ValueError(f"{type(self).__name__} は実験 {cfg.id} を扱いません")
        print(f"実験 {cfg.id} を実行中...")
        rows = method(cfg)
        logger.info("実験 %s: %d 件の結果", cfg.id, len(rows))
        return rows


def row(
    cfg: ExperimentConfig,
    statistic: str,
    value: float,
    threshold: Optional[float] = None,
    passed: Optional[bool] = None,
    n: Optional[int] = None,
    se: Optional[float] = None,
    size: Optional[int] = None,
) -> Dict:
    """Reporter に渡す結果行"""
    return {
        "experiment": cfg.id,
        "statistic": statistic,
        "N": n,
        "value": float(value),
        "se": None if se is None else float(se),
        "threshold": threshold,
        "n": size,
        "passed": passed,
        "seed": cfg.seed,
    }
