"""
レポート生成機能のテスト
"""

import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

# 親ディレクトリをパスに追加
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from kpzlab.reporter import MANIFEST_NAME, ROW_COLUMNS, Reporter, write_she_samples_csv
from kpzlab.she import SheGrid, solve_she

ROWS = [
    {"experiment": "E3", "statistic": "slope_vs_N", "N": None, "value": -0.4, "threshold": -0.2, "passed": np.True_},
    {"experiment": "E3", "statistic": "hnorm", "N": 64, "value": 0.8, "se": 0.05, "n": 20},
    {"experiment": "E6", "statistic": "fraction", "N": 64, "value": 0.7, "threshold": 0.9, "passed": False},
]


@pytest.fixture
def reporter():
    rep = Reporter()
    rep.add_results(ROWS, {"E3": {"seed": 0}})
    return rep


def test_add_results_normalizes_rows(reporter):
    assert len(reporter.results) == 3
    assert set(reporter.results[1]) == set(ROW_COLUMNS)
    assert reporter.results[0]["passed"] is True
    assert reporter.results[1]["passed"] is None
    assert not reporter.all_passed


def test_summary(reporter, capsys):
    summary = reporter.get_summary()
    assert summary["total_checks"] == 3
    assert summary["failed_checks"] == 1
    assert summary["failures"] == {"E6": 1}
    assert summary["experiments"] == {"E3": 2, "E6": 1}
    reporter.print_summary()
    out = capsys.readouterr().out
    assert "E6: 1 件 (NG)" in out
    assert "fraction" in out


def test_clear_results(reporter):
    reporter.clear_results()
    assert reporter.get_summary() == {"message": "結果がありません"}
    assert reporter.all_passed


def test_write_csv_per_experiment(reporter, tmp_path):
    paths = reporter.write_csv(tmp_path)
    assert sorted(Path(p).name for p in paths) == ["E3.csv", "E6.csv"]
    frame = pd.read_csv(tmp_path / "E3.csv")
    assert list(frame.columns) == ROW_COLUMNS
    assert len(frame) == 2


def test_manifest(reporter, tmp_path):
    path = reporter.write_manifest(tmp_path, {"id": "E3", "n_values": [64]})
    assert Path(path).name == MANIFEST_NAME
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    assert data["config"]["n_values"] == [64]
    assert data["all_passed"] is False
    assert len(data["rows"]) == 3
    assert "version" in data and "created" in data


def test_excel_report_sheets(reporter, tmp_path):
    path = reporter.generate_excel_report(tmp_path / "report.xlsx")
    sheets = pd.read_excel(path, sheet_name=None)
    assert list(sheets) == ["サマリー", "E3", "E6"]
    summary = sheets["サマリー"]
    assert list(summary["experiment"]) == ["E3", "E6"]
    assert list(summary["all_passed"]) == [True, False]


def test_excel_report_without_results(tmp_path):
    path = Reporter().generate_excel_report(tmp_path / "empty.xlsx")
    assert list(pd.read_excel(path, sheet_name=None)) == ["サマリー"]


def test_she_samples_csv(tmp_path):
    field = solve_she(0.0, np.ones_like, SheGrid(4, 0.4 / 16, t_end=0.05, seed=0), replicas=2, records=2)
    frame = pd.read_csv(write_she_samples_csv(field, tmp_path / "she.csv"))
    assert list(frame.columns) == ["replica", "t", "x", "Z"]
    assert len(frame) == field.values.size
    assert (frame["Z"] > 0).all()
