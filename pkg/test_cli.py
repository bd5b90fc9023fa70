#!/usr/bin/env python3
"""
CLI のテストスクリプト

サブコマンドの引数解析と、小さな設定での実行・終了コードを確認します。
"""

import json
import sys
from pathlib import Path

import pytest

# srcディレクトリをパスに追加
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root / "src"))

from kpzlab.main import REPORT_NAME, create_cli_parser, main
from kpzlab.reporter import Reporter


def run_cli(argv):
    """main を実行して終了コードを返す"""
    with pytest.raises(SystemExit) as info:
        main(argv)
    return info.value.code


def test_parser_verify_options():
    parser = create_cli_parser()
    args = parser.parse_args(["verify", "E2", "E3", "--n", "32", "64", "--seed", "5", "--no-report"])
    assert args.command == "verify"
    assert args.experiments == ["E2", "E3"]
    assert args.n == [32, 64]
    assert args.seed == 5
    assert args.no_report


def test_parser_simulate_defaults():
    args = create_cli_parser().parse_args(["simulate"])
    assert args.initial == "stationary_zero_sum"
    assert args.format == "arrow"
    assert not args.log_events


def test_unknown_experiment_is_usage_error():
    assert run_cli(["verify", "E11"]) == 2


def test_missing_config_exits_with_error(tmp_path, capsys):
    assert run_cli(["-q", "verify", "E1", "--config", str(tmp_path / "none.toml")]) == 1
    assert "エラー" in capsys.readouterr().out


def test_failing_precondition_exits_with_error(tmp_path):
    config = tmp_path / "run.toml"
    config.write_text('[model]\nname = "single_spin"\n', encoding="utf-8")
    code = run_cli(["-q", "verify", "E3", "--config", str(config), "--n", "16", "--replicas", "1", "-o", str(tmp_path)])
    assert code == 1


def test_simulate_writes_trajectory(tmp_path):
    code = run_cli(
        ["-q", "simulate", "--n", "16", "--t-end", "0.002", "--seed", "3", "--format", "csv", "-o", str(tmp_path)]
    )
    assert code == 0
    assert (tmp_path / "trajectory_N16_seed3.csv").exists()
    model = json.loads((tmp_path / "trajectory_N16_seed3_model.json").read_text(encoding="utf-8"))
    assert "dbar" in model


def test_she_writes_samples(tmp_path):
    code = run_cli(["-q", "she", "--m", "8", "--replicas", "2", "--seed", "1", "--records", "3", "-o", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "she_M8_seed1.csv").exists()


def test_report_regenerates_workbook(tmp_path):
    reporter = Reporter()
    reporter.add_results([{"experiment": "E9", "statistic": "monotone_decreasing", "value": 1.0, "passed": True}])
    reporter.write_manifest(tmp_path / "E9", {"id": "E9"})
    assert run_cli(["report", str(tmp_path)]) == 0
    assert (tmp_path / REPORT_NAME).exists()


def test_report_with_failures_exits_one(tmp_path):
    reporter = Reporter()
    reporter.add_results([{"experiment": "E4", "statistic": "slope_vs_L", "value": -0.2, "passed": False}])
    reporter.write_manifest(tmp_path / "E4")
    assert run_cli(["report", str(tmp_path), "-o", str(tmp_path / "out.xlsx")]) == 1
    assert (tmp_path / "out.xlsx").exists()
