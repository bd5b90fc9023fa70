"""
統計処理のテスト
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# 親ディレクトリをパスに追加
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from kpzlab.stats import fit_power_law, ks_distance, mean_se, wilson_interval, within_se


def test_exact_power_law():
    scales = [64, 128, 256, 512]
    fit = fit_power_law(scales, [1.0 / s for s in scales])
    assert fit.exponent == pytest.approx(-1.0, abs=1e-12)
    assert fit.ci[0] == pytest.approx(-1.0, abs=1e-9)
    assert fit.ci[1] == pytest.approx(-1.0, abs=1e-9)
    assert not fit.weighted


def test_constant_data_has_zero_exponent():
    fit = fit_power_law([1, 2, 4, 8], [3.0, 3.0, 3.0, 3.0], se=[0.1, 0.1, 0.1, 0.1])
    assert fit.exponent == pytest.approx(0.0, abs=1e-12)
    assert fit.weighted
    assert fit.as_dict()["n"] == 4


def test_noisy_power_law_within_band():
    rng = np.random.default_rng(2024)
    scales = np.array([8, 16, 32, 64, 128, 256])
    values = scales**-1.0 * (1 + 0.05 * rng.standard_normal(scales.size))
    se = 0.05 * scales**-1.0
    fit = fit_power_law(scales, values, se)
    assert -1.15 <= fit.exponent <= -0.85
    assert fit.excludes_zero
    assert fit.ci[0] <= fit.exponent <= fit.ci[1]


def test_zero_standard_error_falls_back_to_ols():
    fit = fit_power_law([1, 2, 4], [1.0, 0.5, 0.25], se=[0.1, 0.0, 0.1])
    assert not fit.weighted
    assert fit.exponent == pytest.approx(-1.0)


def test_fit_validation():
    with pytest.raises(ValueError):
        fit_power_law([1, 2], [1.0, 2.0])
    with pytest.raises(ValueError):
        fit_power_law([1, 2, 4], [1.0, -2.0, 3.0])
    with pytest.raises(ValueError):
        fit_power_law([1, 2, 4], [1.0, 2.0])


def test_mean_se():
    value, se = mean_se([1.0, 2.0, 3.0, 4.0])
    assert value == pytest.approx(2.5)
    assert se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert mean_se([5.0]) == (5.0, 0.0)


def test_wilson_interval():
    low, high = wilson_interval(90, 100)
    assert low < 0.9 < high
    assert 0.82 < low < 0.84
    low, high = wilson_interval(0, 50)
    assert low == pytest.approx(0.0, abs=1e-12)
    assert high > 0
    with pytest.raises(ValueError):
        wilson_interval(1, 0)


def test_ks_distance():
    rng = np.random.default_rng(1)
    a = rng.standard_normal(2000)
    b = rng.standard_normal(2000)
    stat, pvalue = ks_distance(a, b)
    assert stat < 0.06
    assert 0.0 <= pvalue <= 1.0
    stat, _ = ks_distance(a, a + 10)
    assert stat == pytest.approx(1.0)


def test_within_se():
    assert within_se(1.1, 1.0, 0.05, k=4)
    assert not within_se(1.3, 1.0, 0.05, k=4)
    assert within_se(0.0, 0.0, 0.0)
    assert not within_se(1e-6, 0.0, 0.0)
