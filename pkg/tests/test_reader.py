"""
設定・ライブラリ・成果物の読み込みのテスト
"""

import json
import sys
from pathlib import Path

import numpy as np
import pytest

# 親ディレクトリをパスに追加
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from kpzlab.dynamics import SimParams, export_trajectory, sample_initial, simulate
from kpzlab.ensembles import build_model
from kpzlab.errors import ConfigError
from kpzlab.reader import (
    OUT_ENV,
    ConfigReader,
    load_experiment_defaults,
    load_library,
    read_report_dir,
    read_trajectory,
    resolve_functional,
)
from kpzlab.reporter import Reporter

SAMPLE_CONFIG = Path(__file__).parent / "sample_config.toml"


@pytest.fixture
def reader(monkeypatch):
    monkeypatch.delenv(OUT_ENV, raising=False)
    return ConfigReader()


@pytest.fixture(scope="module")
def trajectory():
    model = build_model(load_library()["two_site"])
    return simulate(SimParams(16, model, 0.005, seed=2), sample_initial("stationary_zero_sum", 16, 2))


def test_library_keys():
    library = load_library()
    assert {"zero", "constant", "two_site", "single_spin"} <= set(library)
    assert library["two_site"].support == (-1, 2)


def test_experiment_defaults_cover_all_ids():
    defaults = load_experiment_defaults()
    assert sorted(defaults) == [f"E{i}" for i in range(1, 10)]
    assert defaults["E8"].model == "constant"
    assert defaults["E3"].family == "scaling"


def test_sample_config_values(reader):
    reader.read_file(SAMPLE_CONFIG)
    cfg = reader.experiment_config("E3")
    assert cfg.seed == 42
    assert cfg.replicas == 8
    assert cfg.n_values == [16, 32]
    assert cfg.t_end == pytest.approx(0.01)
    assert cfg.out_dir == "sample_results"
    assert cfg.threads == 2
    assert cfg.monitor.eps_ap == pytest.approx(0.6)


def test_cli_overrides_toml(reader):
    reader.read_file(SAMPLE_CONFIG)
    cfg = reader.experiment_config("E3", {"seed": 7, "n_values": [64], "replicas": None})
    assert cfg.seed == 7
    assert cfg.n_values == [64]
    assert cfg.replicas == 8


def test_env_below_toml(monkeypatch, tmp_path):
    monkeypatch.setenv(OUT_ENV, "from_env")
    reader = ConfigReader()
    reader.read_file(None)
    assert reader.experiment_config("E1").out_dir == "from_env"
    reader.read_file(SAMPLE_CONFIG)
    assert reader.experiment_config("E1").out_dir == "sample_results"


def test_unknown_section_and_key(reader, tmp_path):
    bad_section = tmp_path / "section.toml"
    bad_section.write_text("[plot]\ncolor = 1\n", encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        reader.read_file(bad_section)
    assert info.value.key == "plot"
    bad_key = tmp_path / "key.toml"
    bad_key.write_text("[run]\nseeds = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        reader.read_file(bad_key)
    assert info.value.key == "run.seeds"


def test_missing_and_malformed_file(reader, tmp_path):
    with pytest.raises(ConfigError):
        reader.read_file(tmp_path / "none.toml")
    broken = tmp_path / "broken.toml"
    broken.write_text("[run\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        reader.read_file(broken)


def test_config_value_checks(reader):
    with pytest.raises(ConfigError):
        reader.experiment_config("E10")
    with pytest.raises(ConfigError):
        reader.experiment_config("E3", {"n_values": [15]})
    with pytest.raises(ConfigError):
        reader.experiment_config("E3", {"replicas": 0})
    with pytest.raises(ConfigError):
        reader.experiment_config("E3", {"colour": "red"})


def test_resolve_functional(reader):
    cfg = reader.experiment_config("E3")
    assert resolve_functional(cfg) == load_library()["two_site"]
    inline = reader.experiment_config("E3", {"functional": {"coeffs": [{"sites": [], "c": 2.0}]}})
    assert resolve_functional(inline).constant_term == pytest.approx(2.0)
    with pytest.raises(ConfigError):
        resolve_functional(reader.experiment_config("E3", {"model": "missing"}))


def test_she_config(reader):
    reader.read_file(SAMPLE_CONFIG)
    cfg = reader.she_config({"replicas": 3})
    assert cfg.m == 16
    assert cfg.dbar == pytest.approx(0.5)
    assert cfg.replicas == 3
    assert cfg.seed == 42
    assert cfg.resolved_dt() == pytest.approx(0.4 / 256)


@pytest.mark.parametrize("fmt", ["arrow", "csv"])
def test_trajectory_export_and_read(trajectory, tmp_path, fmt):
    path = export_trajectory(trajectory, tmp_path / f"traj.{fmt}", fmt=fmt)
    loaded = read_trajectory(path)
    assert loaded.n == trajectory.n
    assert np.array_equal(loaded.snapshots, trajectory.snapshots)
    assert np.array_equal(loaded.flux, trajectory.flux)
    assert loaded.times == pytest.approx(trajectory.times)


def test_anchor_only_trajectory_formats(tmp_path):
    model = build_model(load_library()["two_site"])
    traj = simulate(SimParams(16, model, 0.002, seed=1, anchor_only=True), sample_initial("flat", 16))
    with pytest.raises(ValueError):
        export_trajectory(traj, tmp_path / "anchor.csv", fmt="csv")
    loaded = read_trajectory(export_trajectory(traj, tmp_path / "anchor.arrow"))
    assert loaded.anchor_only
    assert np.array_equal(loaded.anchor_flux, traj.anchor_flux)
    with pytest.raises(ValueError):
        export_trajectory(traj, tmp_path / "anchor.bin", fmt="bin")


def test_read_report_dir(tmp_path):
    reporter = Reporter()
    reporter.add_results([{"experiment": "E9", "statistic": "slope", "N": 64, "value": -1.0, "passed": True}])
    reporter.write_manifest(tmp_path / "E9", {"id": "E9"})
    rows, provenance = read_report_dir(tmp_path)
    assert rows[0]["statistic"] == "slope"
    assert json.dumps(provenance)
    assert list(provenance.values())[0]["config"] == {"id": "E9"}
    with pytest.raises(FileNotFoundError):
        read_report_dir(tmp_path / "empty")
