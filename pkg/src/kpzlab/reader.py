"""
設定・ライブラリ・成果物の読み込み

TOML の実行設定、.env の環境変数、d ライブラリと実験既定値の JSON、
書き出した軌道ファイルとレポートディレクトリを読み込む。
"""

import json
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import pyarrow as pa
from dotenv import load_dotenv

from .dynamics import Trajectory
from .errors import ConfigError
from .lattice import LocalFunctional
from .observables import MonitorConfig

logger = logging.getLogger(__name__)

LIBRARY_DIR = Path(__file__).parent / "library"
EXPERIMENT_IDS = tuple(f"E{i}" for i in range(1, 10))
OUT_ENV = "KPZLAB_OUT"
DEFAULT_OUT = "results"

SCHEMA: Dict[str, Tuple[str, ...]] = {
    "run": ("experiment", "seed", "replicas", "out_dir", "threads"),
    "model": ("name", "functional"),
    "grid": ("n", "t_end", "snapshot_step"),
    "monitor": ("eps_ap", "eps_rn"),
    "she": ("m", "dt", "t_end", "dbar", "replicas"),
}


@dataclass
class ExperimentConfig:
    """
    1 つの実験の設定

    Attributes:
        id: E1..E9
        family: "exact" / "equilibrium" / "scaling"
        n_values: N のグリッド
        replicas: レプリカ数 M
        model: d ライブラリのキー
        functional: ライブラリを使わない場合の d
        seed: 親シード
        t_end: 終端時刻
        snapshot_step: スナップショット間隔（None なら既定）
        monitor: 停止時刻モニターの設定
        thresholds: 合否の閾値
        params: 実験固有のパラメータ
        out_dir: 出力ディレクトリ
        threads: スレッド数
    """

    id: str
    family: str
    n_values: List[int]
    replicas: int
    model: str = "two_site"
    functional: Optional[Dict] = None
    seed: int = 0
    t_end: float = 1.0
    snapshot_step: Optional[float] = None
    monitor: MonitorConfig = field(default_factory=MonitorConfig)
    thresholds: Dict[str, float] = field(default_factory=dict)
    params: Dict[str, Any] = field(default_factory=dict)
    out_dir: str = DEFAULT_OUT
    threads: Optional[int] = None

    def to_dict(self) -> Dict:
        return {
            "id": self.id,
            "family": self.family,
            "n_values": list(self.n_values),
            "replicas": self.replicas,
            "model": self.model,
            "functional": self.functional,
            "seed": self.seed,
            "t_end": self.t_end,
            "snapshot_step": self.snapshot_step,
            "monitor": {"eps_ap": self.monitor.eps_ap, "eps_rn": self.monitor.eps_rn},
            "thresholds": dict(self.thresholds),
            "params": dict(self.params),
            "out_dir": self.out_dir,
        }


@dataclass
class SheConfig:
    """kpzlab she サブコマンドの設定"""

    m: int = 64
    dt: Optional[float] = None
    t_end: float = 0.5
    dbar: float = 0.0
    replicas: int = 100
    seed: int = 0
    out_dir: str = DEFAULT_OUT

    def resolved_dt(self) -> float:
        return self.dt if self.dt is not None else 0.4 / self.m**2


def load_library(path: Optional[Union[str, Path]] = None) -> Dict[str, LocalFunctional]:
    """
    d ライブラリを読み込み

    Args:
        path: ライブラリファイルのパス（指定しない場合は同梱のものを使用）

    Returns:
        キーから LocalFunctional への辞書
    """
    path = Path(path) if path is not None else LIBRARY_DIR / "d_library.json"
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    return {key: LocalFunctional.from_dict(entry["functional"]) for key, entry in data.items()}


def load_experiment_defaults(path: Optional[Union[str, Path]] = None) -> Dict[str, ExperimentConfig]:
    """実験の既定値を読み込み"""
    path = Path(path) if path is not None else LIBRARY_DIR / "experiments.json"
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    configs = {}
    for exp_id, entry in data.items():
        entry = dict(entry)
        entry.pop("description", None)
        monitor = MonitorConfig(**entry.pop("monitor", {}))
        configs[exp_id] = ExperimentConfig(id=exp_id, monitor=monitor, **entry)
    return configs


def resolve_functional(cfg: ExperimentConfig, library: Optional[Dict[str, LocalFunctional]] = None) -> LocalFunctional:
    """設定の d を LocalFunctional にする"""
    if cfg.functional is not None:
        return LocalFunctional.from_dict(cfg.functional)
    library = library if library is not None else load_library()
    if cfg.model not in library:
        raise ConfigError(f"d ライブラリにキー '{cfg.model}' がありません", key="model.name")
    return library[cfg.model]


class ConfigReader:
    """TOML の実行設定と環境変数を読み込むクラス"""

    def __init__(self, env_path: Optional[Union[str, Path]] = None):
        """
        ConfigReader を初期化

        Args:
            env_path: .env ファイルのパス（指定しない場合はカレントから探す）
        """
        load_dotenv(dotenv_path=env_path, override=False)
        self.current_file_path: Optional[Path] = None
        self.raw: Dict[str, Dict] = {}

    def read_file(self, file_path: Optional[Union[str, Path]]) -> Dict[str, Dict]:
        """
        TOML を読み込んでスキーマを検査

        Args:
            file_path: 設定ファイルのパス。None なら空設定

        Returns:
            セクションごとの辞書
        """
        if file_path is None:
            self.raw = {}
            return self.raw
        file_path = Path(file_path)
        if not file_path.exists():
            raise ConfigError(f"設定ファイルが見つかりません: {file_path}")
        try:
            with open(file_path, "rb") as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"設定ファイルを解析できません: {e}") from e
        self.validate(data)
        self.current_file_path = file_path
        self.raw = data
        return data

    @staticmethod
    def validate(data: Dict) -> None:
        """未知のセクションやキーを ConfigError にする"""
        for section, values in data.items():
            if section not in SCHEMA:
                raise ConfigError(f"未知のセクション [{section}]", key=section)
            if not isinstance(values, dict):
                raise ConfigError(f"[{section}] はテーブルでなければなりません", key=section)
            for key in values:
                if key not in SCHEMA[section]:
                    raise ConfigError(f"[{section}] に未知のキー '{key}' があります", key=f"{section}.{key}")

    def default_out_dir(self) -> str:
        return os.environ.get(OUT_ENV, DEFAULT_OUT)

    def experiment_config(
        self,
        exp_id: str,
        overrides: Optional[Dict[str, Any]] = None,
        defaults: Optional[Dict[str, ExperimentConfig]] = None,
    ) -> ExperimentConfig:
        """
        既定値 < 環境変数 < TOML < CLI の順に重ねて ExperimentConfig を作る

        Args:
            exp_id: 実験 ID
            overrides: CLI で指定された値
            defaults: 実験の既定値

        Returns:
            ExperimentConfig
        """
        if exp_id not in EXPERIMENT_IDS:
            raise ConfigError(f"未知の実験: {exp_id}", key="run.experiment")
        defaults = defaults if defaults is not None else load_experiment_defaults()
        cfg = replace(defaults[exp_id], out_dir=self.default_out_dir())
        run = self.raw.get("run", {})
        model = self.raw.get("model", {})
        grid = self.raw.get("grid", {})
        monitor = self.raw.get("monitor", {})
        changes: Dict[str, Any] = {}
        if "seed" in run:
            changes["seed"] = int(run["seed"])
        if "replicas" in run:
            changes["replicas"] = int(run["replicas"])
        if "out_dir" in run:
            changes["out_dir"] = str(run["out_dir"])
        if "threads" in run:
            changes["threads"] = int(run["threads"])
        if "name" in model:
            changes["model"] = str(model["name"])
        if "functional" in model:
            changes["functional"] = model["functional"]
        if "n" in grid:
            values = grid["n"]
            changes["n_values"] = [int(v) for v in (values if isinstance(values, list) else [values])]
        if "t_end" in grid:
            changes["t_end"] = float(grid["t_end"])
        if "snapshot_step" in grid:
            changes["snapshot_step"] = float(grid["snapshot_step"])
        if monitor:
            changes["monitor"] = replace(cfg.monitor, **{k: float(v) for k, v in monitor.items()})
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            if not hasattr(cfg, key):
                raise ConfigError(f"未知の設定項目: {key}", key=key)
            changes[key] = value
        cfg = replace(cfg, **changes)
        self._check(cfg)
        return cfg

    def she_config(self, overrides: Optional[Dict[str, Any]] = None) -> SheConfig:
        """[she] セクションから SheConfig を作る"""
        section = dict(self.raw.get("she", {}))
        run = self.raw.get("run", {})
        cfg = SheConfig(out_dir=self.default_out_dir())
        changes = {key: section[key] for key in ("m", "dt", "t_end", "dbar", "replicas") if key in section}
        if "seed" in run:
            changes["seed"] = int(run["seed"])
        if "out_dir" in run:
            changes["out_dir"] = str(run["out_dir"])
        changes.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return replace(cfg, **changes)

    @staticmethod
    def _check(cfg: ExperimentConfig) -> None:
        if cfg.replicas < 1:
            raise ConfigError(f"レプリカ数は正でなければなりません: {cfg.replicas}", key="run.replicas")
        for n in cfg.n_values:
            if n < 4 or n % 2:
                raise ConfigError(f"N は 4 以上の偶数でなければなりません: {n}", key="grid.n")
        if cfg.t_end <= 0:
            raise ConfigError(f"t_end は正でなければなりません: {cfg.t_end}", key="grid.t_end")


# 成果物の読み込み


def read_trajectory(path: Union[str, Path]) -> Trajectory:
    """
    export_trajectory で書き出した軌道を読み込む

    Args:
        path: .arrow または .csv のパス

    Returns:
        スナップショット・時刻・流束・ヘッダーを復元した Trajectory
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"ファイルが見つかりません: {path}")
    if path.suffix.lower() == ".csv":
        return _read_trajectory_csv(path)
    with pa.OSFile(str(path), "rb") as source:
        table = pa.ipc.open_file(source).read_all()
    metadata = table.schema.metadata or {}
    header = json.loads(metadata.get(b"kpzlab", b"{}").decode("utf-8"))
    n = int(header["n"])
    times = table.column("time").to_numpy()
    packed = [np.frombuffer(row, dtype=np.uint8) for row in table.column("spins").to_pylist()]
    bits = np.unpackbits(np.stack(packed), axis=1, count=n)
    snapshots = np.where(bits == 1, 1, -1).astype(np.int8)
    flux = np.array(table.column("flux").to_pylist(), dtype=np.int64)
    return Trajectory(
        n=n,
        times=times,
        snapshots=snapshots,
        flux=flux,
        anchor_only=bool(header.get("anchor_only", False)),
        seed=header.get("seed"),
        stats=header.get("stats", {}),
    )


def _read_trajectory_csv(path: Path) -> Trajectory:
    frame = pd.read_csv(path)
    frame = frame.sort_values(["time", "site"], kind="stable")
    times = frame["time"].drop_duplicates().to_numpy()
    n = int(frame["site"].max()) + 1
    snapshots = frame["spin"].to_numpy().reshape(times.size, n).astype(np.int8)
    flux = frame["flux"].to_numpy().reshape(times.size, n).astype(np.int64)
    return Trajectory(n=n, times=times, snapshots=snapshots, flux=flux)


def read_report_dir(directory: Union[str, Path]) -> Tuple[List[Dict], Dict]:
    """
    レポートディレクトリのマニフェストを読み込み

    Returns:
        (結果の行, 設定と来歴)
    """
    directory = Path(directory)
    manifests = sorted(directory.rglob("manifest.json"))
    if not manifests:
        raise FileNotFoundError(f"manifest.json が見つかりません: {directory}")
    rows: List[Dict] = []
    provenance: Dict = {}
    for manifest in manifests:
        with open(manifest, "r", encoding="utf-8") as f:
            data = json.load(f)
        rows.extend(data.get("rows", []))
        provenance[str(manifest.parent)] = {
            "config": data.get("config", {}),
            "version": data.get("version"),
            "created": data.get("created"),
        }
    return rows, provenance
