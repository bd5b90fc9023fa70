"""
弱非対称な環境依存排他過程の KPZ 検証ラボ

スピン系の連続時間シミュレーション、ガートナー変換、離散熱核、
SHE ソルバーと、スケーリング極限を検証する実験群を提供する。
"""

__version__ = "0.1.0"
__author__ = "kpzlab developers"

from .dynamics import SimParams, Trajectory, sample_initial, simulate
from .ensembles import EnsembleSpec, ModelFunctionals, build_model, expect
from .errors import KpzLabError
from .heat import HeatKernel
from .lattice import Configuration, LocalFunctional
from .main import KpzLab
from .reader import ConfigReader, ExperimentConfig
from .reporter import Reporter
from .she import SheGrid, solve_she

__all__ = [
    "Configuration",
    "LocalFunctional",
    "EnsembleSpec",
    "ModelFunctionals",
    "build_model",
    "expect",
    "SimParams",
    "Trajectory",
    "sample_initial",
    "simulate",
    "HeatKernel",
    "SheGrid",
    "solve_she",
    "KpzLabError",
    "ConfigReader",
    "ExperimentConfig",
    "Reporter",
    "KpzLab",
]
