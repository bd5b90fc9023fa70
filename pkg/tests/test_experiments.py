"""
実験チェッカーのテスト

重い実験は小さなレプリカ数で結果行の形だけを確認し、slow マーカーを付ける。
"""

import sys
from dataclasses import replace
from pathlib import Path

import pytest

# 親ディレクトリをパスに追加
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from kpzlab.errors import ExperimentError
from kpzlab.experiments import FAMILIES, ExactChecker, run_experiment
from kpzlab.reader import ExperimentConfig, load_experiment_defaults
from kpzlab.reporter import ROW_COLUMNS


@pytest.fixture(scope="module")
def defaults():
    return load_experiment_defaults()


@pytest.fixture(scope="module")
def exact_rows():
    cfg = ExperimentConfig(id="E2", family="exact", n_values=[32], replicas=1, params={"heat_n_values": [32, 64]})
    return ExactChecker(progress=False).exact_suite(cfg)


def assert_rows(rows, exp_id):
    assert rows
    for r in rows:
        assert set(r) == set(ROW_COLUMNS)
        assert r["experiment"] == exp_id


def test_families_cover_defaults(defaults):
    assert {cfg.family for cfg in defaults.values()} == set(FAMILIES)


def test_exact_suite_passes(exact_rows):
    assert_rows(exact_rows, "E2")
    exact = [r for r in exact_rows if not r["statistic"].startswith("heat:")]
    failed = [r["statistic"] for r in exact if r["passed"] is False]
    assert failed == []
    names = {r["statistic"] for r in exact_rows}
    assert "gradient:single_spin:rejected" in names
    assert {"dbar:two_site", "R21:constant", "R23:two_site"} <= names
    assert "canonical_moment_vs_enumeration" in names


def test_heat_rows_carry_n(exact_rows):
    heat = [r for r in exact_rows if r["statistic"].startswith("heat:")]
    assert {r["N"] for r in heat if r["N"] is not None} == {32, 64}


def test_unknown_family_raises(defaults):
    cfg = replace(defaults["E1"], family="optics")
    with pytest.raises(ExperimentError) as info:
        run_experiment(cfg, progress=False)
    assert info.value.experiment == "E1"


def test_mismatched_family_is_wrapped(defaults):
    cfg = replace(defaults["E1"], family="exact")
    with pytest.raises(ExperimentError) as info:
        run_experiment(cfg, progress=False)
    assert isinstance(info.value.cause, ValueError)


def test_component_error_is_wrapped(defaults):
    cfg = replace(defaults["E3"], model="single_spin", n_values=[16], replicas=1, t_end=0.001)
    with pytest.raises(ExperimentError) as info:
        run_experiment(cfg, progress=False)
    assert info.value.experiment == "E3"


@pytest.mark.slow
def test_e1_small(defaults):
    cfg = replace(defaults["E1"], n_values=[32], replicas=8, t_end=0.02, params={"lags": [1, 2]})
    rows = run_experiment(cfg, progress=False)
    assert_rows(rows, "E1")
    assert [r["statistic"] for r in rows] == ["eta0", "pair_k1", "pair_k2"]
    assert rows[1]["threshold"] == pytest.approx(-1.0 / 31)
    assert all(r["se"] > 0 for r in rows)
    assert all(abs(r["value"]) <= 1.0 for r in rows)


@pytest.mark.slow
def test_e2_small(defaults):
    cfg = replace(
        defaults["E2"],
        n_values=[16, 32, 64],
        replicas=2,
        t_end=0.001,
        params={"bruteforce_max_n": 32, "delta": 0.5, "replay_n": 16, "heat_n_values": [16, 32]},
    )
    rows = run_experiment(cfg, progress=False)
    assert_rows(rows, "E2")
    by_name = {}
    for r in rows:
        by_name.setdefault(r["statistic"], []).append(r)
    assert {r["N"] for r in by_name["generator_bruteforce"]} == {16, 32}
    assert all(r["passed"] for r in by_name["generator_bruteforce"])
    assert all(r["passed"] for r in by_name["height_flux_consistency"])
    assert all(r["passed"] for r in by_name["density_identity"])
    assert by_name["jump_replay"][0]["passed"]
    ratios = [name for name in by_name if name.startswith("residual_ratio:")]
    assert ratios
    assert all(by_name[name][0]["value"] >= 1.0 for name in ratios)


@pytest.mark.slow
def test_e3_small(defaults):
    cfg = replace(defaults["E3"], n_values=[16, 32, 64], replicas=3, t_end=0.002)
    rows = run_experiment(cfg, progress=False)
    assert_rows(rows, "E3")
    assert [r["statistic"] for r in rows] == ["bg_sup_mean"] * 3 + ["slope_vs_N", "slope_ci_high"]
    assert all(r["value"] > 0 for r in rows[:3])
    assert isinstance(rows[3]["passed"], bool)


@pytest.mark.slow
def test_e4_small(defaults):
    cfg = replace(defaults["E4"], n_values=[256], replicas=6, params={"lengths": [8, 16, 32], "sites": 4})
    rows = run_experiment(cfg, progress=False)
    assert_rows(rows, "E4")
    assert rows[-1]["statistic"] == "slope_vs_L"


@pytest.mark.slow
def test_e7_small(defaults):
    cfg = replace(
        defaults["E7"],
        n_values=[32],
        replicas=40,
        params={"points": [0.5], "stable_n_values": [16, 32], "p": 2, "u": 0.25},
    )
    rows = run_experiment(cfg, progress=False)
    assert_rows(rows, "E7")
    names = {r["statistic"] for r in rows}
    assert "bridge_variance:u0.5" in names
    assert "height_moment_ratio:flat" in names


@pytest.mark.slow
def test_e9_small(defaults):
    cfg = replace(defaults["E9"], n_values=[64], replicas=4, t_end=0.001, params={"gammas": [0.05, 0.1]})
    rows = run_experiment(cfg, progress=False)
    assert_rows(rows, "E9")
    probs = [r for r in rows if r["statistic"].startswith("hit_probability")]
    assert len(probs) == 2
    assert all(0.0 <= r["value"] <= 1.0 for r in probs)


@pytest.mark.slow
def test_e5_small(defaults):
    cfg = replace(defaults["E5"], n_values=[16], replicas=20, t_end=0.05, params={"she_m": 8, "refine_m": 4})
    rows = run_experiment(cfg, progress=False)
    assert_rows(rows, "E5")
    values = {r["statistic"]: r["value"] for r in rows}
    assert {"ks_micro_vs_she", "ks_micro_vs_she_pvalue", "ks_refinement", "ks_refinement_pvalue"} <= set(values)
    assert 0.0 <= values["ks_micro_vs_she"] <= 1.0
    assert 0.0 <= values["ks_refinement"] <= 1.0
    assert values["micro_mean"] > 0
    assert values["she_mean"] > 0


@pytest.mark.slow
def test_e6_small(defaults):
    cfg = replace(defaults["E6"], n_values=[16, 32, 64], replicas=4, t_end=0.002)
    rows = run_experiment(cfg, progress=False)
    assert_rows(rows, "E6")
    fractions = [r for r in rows if r["statistic"] == "no_passage_fraction"]
    assert [r["N"] for r in fractions] == [16, 32, 64]
    assert all(0.0 <= r["value"] <= 1.0 for r in fractions)
    assert rows[-2]["statistic"] == "fraction_at_largest_N"
    assert rows[-1]["statistic"] == "nondecreasing_excess"


@pytest.mark.slow
def test_e8_small(defaults):
    cfg = replace(
        defaults["E8"],
        n_values=[32],
        replicas=6,
        params={"t_multiples": [10, 20, 40], "ells": [2, 4, 8], "fixed_ell": 2, "fixed_t_multiple": 10,
                "step_fraction": 0.25},
    )
    rows = run_experiment(cfg, progress=False)
    assert_rows(rows, "E8")
    names = [r["statistic"] for r in rows]
    assert "slope_vs_t" in names and "slope_vs_ell" in names
    assert sum(name.startswith("kv_variance:") for name in names) == 6
    assert all(r["value"] >= 0 for r in rows if r["statistic"].startswith("kv_variance:"))
