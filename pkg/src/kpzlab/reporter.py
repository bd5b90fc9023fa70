"""
レポート生成機能

実験結果の行を蓄積し、CSV・JSON マニフェスト・Excel ワークブック・
コンソールサマリーに出力する。軌道や SHE サンプルの書き出しもここで行う。
"""

import json
import platform
from collections import Counter
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd
import pyarrow as pa

from . import __version__

ROW_COLUMNS = ["experiment", "statistic", "N", "value", "se", "threshold", "n", "passed", "seed"]
MANIFEST_NAME = "manifest.json"
TRAJECTORY_FORMAT = "kpzlab-trajectory/1"


class Reporter:
    """実験結果レポートを生成するクラス"""

    def __init__(self):
        self.results: List[Dict] = []
        self.statistics: Dict = {}
        self.metadata: Dict = {}

    def add_results(self, results: Iterable[Dict], metadata: Optional[Dict] = None):
        """
        結果の行を追加

        Args:
            results: experiment, statistic, N, value, se, threshold, n, passed, seed を持つ辞書の列
            metadata: 設定やシードなどの来歴
        """
        for row in results:
            entry = {key: row.get(key) for key in ROW_COLUMNS}
            if entry["passed"] is not None:
                entry["passed"] = bool(entry["passed"])
            self.results.append(entry)
        if metadata:
            self.metadata.update(metadata)
        self._update_statistics()

    def _update_statistics(self):
        if not self.results:
            return
        experiments = Counter(r["experiment"] for r in self.results)
        failed = Counter(r["experiment"] for r in self.results if r["passed"] is False)
        self.statistics = {
            "total_checks": len(self.results),
            "failed_checks": sum(failed.values()),
            "experiments": dict(experiments),
            "failures": dict(failed),
        }

    @property
    def all_passed(self) -> bool:
        return all(r["passed"] is not False for r in self.results)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.results, columns=ROW_COLUMNS)

    def write_csv(self, output_dir: Union[str, Path]) -> List[str]:
        """実験ごとの CSV を書き出す"""
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        frame = self.to_frame()
        paths = []
        for experiment, group in frame.groupby("experiment", sort=True):
            path = output_dir / f"{experiment}.csv"
            group.to_csv(path, index=False)
            paths.append(str(path))
        return paths

    def write_manifest(self, output_dir: Union[str, Path], config: Optional[Dict] = None) -> str:
        """行・設定・バージョン・タイムスタンプを JSON マニフェストに書き出す"""
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "created": datetime.now().isoformat(timespec="seconds"),
            "config": config or {},
            "metadata": self.metadata,
            "rows": self.results,
            "all_passed": self.all_passed,
        }
        path = output_dir / MANIFEST_NAME
        with open(path, "w", encoding="utf-8") as f:
            json.dump(manifest, f, ensure_ascii=False, indent=2, default=_json_default)
        return str(path)

    def generate_excel_report(self, output_path: Union[str, Path]) -> str:
        """
        Excel 形式のレポートを生成

        Args:
            output_path: 出力ファイルパス

        Returns:
            生成されたファイルのパス
        """
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        with pd.ExcelWriter(output_path, engine="openpyxl") as writer:
            self._create_summary_sheet(writer)
            self._create_experiment_sheets(writer)
        return str(output_path)

    def _create_summary_sheet(self, writer):
        frame = self.to_frame()
        if frame.empty:
            pd.DataFrame({"メッセージ": ["結果がありません"]}).to_excel(writer, sheet_name="サマリー", index=False)
            return
        summary = (
            frame.assign(ok=frame["passed"].fillna(True).astype(bool))
            .groupby("experiment")
            .agg(checks=("statistic", "size"), passed=("ok", "sum"))
            .reset_index()
        )
        summary["all_passed"] = summary["checks"] == summary["passed"]
        summary.to_excel(writer, sheet_name="サマリー", index=False)
        worksheet = writer.sheets["サマリー"]
        for column, width in {"A": 14, "B": 10, "C": 10, "D": 12}.items():
            worksheet.column_dimensions[column].width = width
        self._apply_pass_colors(worksheet, summary["all_passed"].tolist(), len(summary.columns))

    def _create_experiment_sheets(self, writer):
        frame = self.to_frame()
        for experiment, group in frame.groupby("experiment", sort=True):
            sheet_name = self._create_valid_sheet_name(str(experiment))
            group.to_excel(writer, sheet_name=sheet_name, index=False)
            worksheet = writer.sheets[sheet_name]
            worksheet.column_dimensions["B"].width = 28
            self._apply_pass_colors(worksheet, group["passed"].tolist(), len(group.columns))

    def _apply_pass_colors(self, worksheet, flags: List, width: int):
        """合否に応じて行に色を付ける"""
        from openpyxl.styles import PatternFill

        colors = {
            True: PatternFill(start_color="E0FFE0", end_color="E0FFE0", fill_type="solid"),
            False: PatternFill(start_color="FFCCCB", end_color="FFCCCB", fill_type="solid"),
        }
        for row_idx, flag in enumerate(flags, start=2):
            if flag is None or (isinstance(flag, float) and np.isnan(flag)):
                continue
            fill = colors[bool(flag)]
            for col_idx in range(1, width + 1):
                worksheet.cell(row=row_idx, column=col_idx).fill = fill

    def _create_valid_sheet_name(self, name: str) -> str:
        for char in ["\\", "/", "*", "?", ":", "[", "]"]:
            name = name.replace(char, "_")
        return name[:31]

    def get_summary(self) -> Dict:
        """
        結果のサマリーを取得

        Returns:
            サマリー情報の辞書
        """
        if not self.results:
            return {"message": "結果がありません"}
        return {
            "total_checks": self.statistics.get("total_checks", 0),
            "failed_checks": self.statistics.get("failed_checks", 0),
            "experiments": self.statistics.get("experiments", {}),
            "failures": self.statistics.get("failures", {}),
            "all_passed": self.all_passed,
        }

    def print_summary(self):
        """サマリーをコンソールに出力"""
        summary = self.get_summary()
        if "message" in summary:
            print(summary["message"])
            return
        print("=== 検証結果サマリー ===")
        print(f"総チェック数: {summary['total_checks']} 件")
        print(f"不合格: {summary['failed_checks']} 件")
        print()
        print("実験別:")
        for experiment, count in summary["experiments"].items():
            failed = summary["failures"].get(experiment, 0)
            mark = "OK" if failed == 0 else "NG"
            print(f"  {experiment}: {count} 件 ({mark})")
        for row in self.results:
            if row["passed"] is False:
                print(
                    f"  ✗ {row['experiment']} {row['statistic']} N={row['N']}: "
                    f"値 {row['value']} / 閾値 {row['threshold']} (n={row['n']})"
                )

    def clear_results(self):
        """結果をクリア"""
        self.results = []
        self.statistics = {}
        self.metadata = {}


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    return str(obj)


# 軌道・サンプルの書き出し


def _trajectory_header(traj) -> Dict[bytes, bytes]:
    header = {
        "format": TRAJECTORY_FORMAT,
        "n": traj.n,
        "anchor_only": traj.anchor_only,
        "seed": traj.seed,
        "stats": traj.stats,
    }
    return {b"kpzlab": json.dumps(header, default=_json_default).encode("utf-8")}


def write_trajectory_arrow(traj, path: Union[str, Path]) -> str:
    """
    軌道を Arrow IPC のフレームファイルに書き出す

    各フレームはビット圧縮したスピン（+1 を 1）と流束カウンタを持ち、
    N・シード・統計はスキーマのメタデータに入る。
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    bits = np.packbits(np.asarray(traj.snapshots) > 0, axis=1)
    flux = np.asarray(traj.flux, dtype=np.int64)
    table = pa.table(
        {
            "time": pa.array(np.asarray(traj.times, dtype=np.float64)),
            "spins": pa.array([row.tobytes() for row in bits], type=pa.binary()),
            "flux": pa.array(list(flux), type=pa.list_(pa.int64())),
        }
    )
    table = table.replace_schema_metadata(_trajectory_header(traj))
    with pa.OSFile(str(path), "wb") as sink:
        with pa.ipc.new_file(sink, table.schema) as writer:
            writer.write_table(table)
    return str(path)


def write_trajectory_csv(traj, path: Union[str, Path]) -> str:
    """軌道を (time, site, spin, flux) の縦長 CSV に書き出す"""
    if traj.anchor_only:
        raise ValueError("CSV 形式は全ボンドの流束を持つ軌道に限ります")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    steps, n = np.asarray(traj.snapshots).shape
    frame = pd.DataFrame(
        {
            "time": np.repeat(np.asarray(traj.times, dtype=float), n),
            "site": np.tile(np.arange(n), steps),
            "spin": np.asarray(traj.snapshots).reshape(-1).astype(int),
            "flux": np.asarray(traj.flux, dtype=np.int64).reshape(-1),
        }
    )
    frame.to_csv(path, index=False, float_format="%.17g")
    return str(path)


def write_she_samples_csv(field, path: Union[str, Path]) -> str:
    """SHE サンプルを (replica, t, x, Z) の CSV に書き出す"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.asarray(field.values)
    steps, replicas, cells = values.shape
    frame = pd.DataFrame(
        {
            "replica": np.tile(np.repeat(np.arange(replicas), cells), steps),
            "t": np.repeat(np.asarray(field.times, dtype=float), replicas * cells),
            "x": np.tile(np.arange(cells) / cells, steps * replicas),
            "Z": values.reshape(-1),
        }
    )
    frame.to_csv(path, index=False, float_format="%.17g")
    return str(path)


def write_model_json(model, path: Union[str, Path]) -> str:
    """モデル定数 (d̄, R21, R22, R23, σ 多項式) を JSON に書き出す"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model.to_dict(), f, ensure_ascii=False, indent=2, default=_json_default)
    return str(path)
