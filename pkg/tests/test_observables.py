"""
高さ関数・ガートナー変換・停止時刻モニターのテスト
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# 親ディレクトリをパスに追加
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from kpzlab.dynamics import SimParams, sample_initial, simulate
from kpzlab.ensembles import build_model
from kpzlab.errors import PositivityError
from kpzlab.lattice import Configuration, LocalFunctional
from kpzlab.observables import (
    MonitorConfig,
    PathObservable,
    bridge_variance,
    c1_norm,
    density_identity_check,
    density_identity_residuals,
    drift_remainder,
    gartner_field,
    generator_action,
    generator_action_bruteforce,
    height_field,
    height_flux_consistency,
    height_units,
    jump_replay_check,
    kpz_height,
    monitor_lags,
    rescale,
    stable_data_moments,
    stopping_monitors,
    time_average,
    time_averaged_moments,
    transfer_diff,
)


@pytest.fixture(scope="module")
def model():
    return build_model(LocalFunctional({(-1,): 0.5, (2,): 0.5}))


@pytest.fixture(scope="module")
def trajectory(model):
    n = 32
    params = SimParams(n, model, 0.01, seed=21, log_events=True)
    return simulate(params, sample_initial("stationary_zero_sum", n, 21))


def test_height_units_from_spins():
    assert list(height_units(np.array([1, -1, 1, -1]), 0)) == [0, -1, 0, -1]
    assert list(height_units(np.array([1, -1, 1, -1]), 2)) == [4, 3, 4, 3]


def test_height_flux_consistency(trajectory):
    """基準ボンド方式とボンドごとの方式が整数単位で一致する"""
    assert height_flux_consistency(trajectory) == 0
    h = height_field(trajectory)
    assert h.values.shape == trajectory.snapshots.shape


def test_gartner_field_definition(trajectory, model):
    gartner = gartner_field(trajectory, model)
    h = height_field(trajectory).values
    expected = -h + model.renormalization(trajectory.n) * trajectory.times[:, None]
    assert gartner.log_z == pytest.approx(expected)
    assert np.all(gartner.values > 0)
    assert kpz_height(trajectory, model) == pytest.approx(-expected)


def test_density_identity(trajectory, model):
    """A^X_{δ,x} = N^{1/2}(1+L)^{-1} ∇^X_{-L-1} log Z_x"""
    gartner = gartner_field(trajectory, model)
    assert density_identity_residuals(trajectory, gartner, 0.5) <= 1e-9
    value, wrapped = density_identity_check(trajectory.snapshots[-1], gartner.log_z[-1], 0.5, 7)
    assert not wrapped
    assert abs(value) <= 1e-9
    assert math.isnan(density_identity_check(np.array([1, -1, 1, -1]), np.zeros(4), 1.0, 0)[0])


def test_generator_action_matches_bruteforce(model):
    for seed in range(3):
        cfg = sample_initial("stationary_zero_sum", 16, seed)
        action, z = generator_action(cfg, model, anchor_flux=3, t=0.01)
        brute = generator_action_bruteforce(cfg, model, anchor_flux=3, t=0.01)
        assert np.max(np.abs(action - brute)) <= 1e-10 * max(1.0, np.max(np.abs(action)))
        assert np.all(z > 0)


def test_drift_remainder_is_lower_order(model):
    """残差の大きさは N Z 程度で、N^2 Z より十分小さい"""
    n = 256
    cfg = sample_initial("stationary_zero_sum", n, 5)
    remainder, z = drift_remainder(cfg, model)
    assert np.max(np.abs(remainder)) / np.max(z) < 0.1 * n**2


def test_drift_needs_environment_sign():
    """d ≡ c では d の項の符号を反転させると残差の空間平均が -c N^{1/2} 程度になる"""
    c = 1.0
    constant = build_model(LocalFunctional.constant(c))
    flipped_means = []
    for n in (64, 1024):
        cfg = sample_initial("stationary_zero_sum", n, 8)
        remainder, z = drift_remainder(cfg, constant)
        flipped, z_flipped = drift_remainder(cfg, constant, env_sign=-1.0)
        assert np.allclose(z, z_flipped)
        assert abs(np.mean(remainder / z)) < 0.25 * c * math.sqrt(n)
        flipped_mean = np.mean(flipped / z)
        assert flipped_mean < -0.5 * c * math.sqrt(n)
        flipped_means.append(flipped_mean)
    assert 2.5 < flipped_means[1] / flipped_means[0] < 6.0


def test_jump_replay(trajectory, model):
    report = jump_replay_check(trajectory, model)
    assert report["passed"] == 1.0
    assert report["events"] == trajectory.stats["jumps"]
    assert report["z_ratio_error"] <= 1e-12


def test_jump_replay_requires_events(model):
    traj = simulate(SimParams(16, model, 0.001, seed=0), sample_initial("flat", 16))
    with pytest.raises(ValueError):
        jump_replay_check(traj, model)


def test_monitor_scales():
    cfg = MonitorConfig()
    assert cfg.base_scales(16) == pytest.approx([16**-2.0, 16**-1.4])
    assert cfg.spatial_range(64) == math.ceil(64**0.52)
    scales = cfg.time_scales(16)
    assert np.all(np.diff(scales) > 0)
    assert scales[0] == pytest.approx(16**-2.0)


def test_monitor_lags_merge_scales_below_grid_spacing():
    n = 64
    scales = MonitorConfig().time_scales(n)
    dt = 8 / n**2
    lags, weights = monitor_lags(scales, dt)
    assert lags[0] == 1
    assert np.all(np.diff(lags) > 0)
    assert lags.size < scales.size
    assert np.allclose(weights, (lags * dt) ** -0.25)
    fine_lags, _ = monitor_lags(scales, n**-2.0 / 4)
    assert fine_lags.size == np.unique(np.rint(scales * 4 * n**2)).size


def test_stopping_monitors_quiet_field():
    n = 16
    times = np.arange(0, 41) / n**2
    z = np.ones((times.size, n))
    report = stopping_monitors(times, z, MonitorConfig())
    assert report.t_st == 1.0
    assert np.array_equal(report.y, z)


def test_stopping_monitors_detect_spike():
    n = 16
    times = np.arange(0, 41) / n**2
    z = np.ones((times.size, n))
    z[5, 3] = 10.0
    report = stopping_monitors(times, z, MonitorConfig())
    assert report.t_ap == pytest.approx(times[5])
    assert report.t_st <= times[5]
    assert np.all(report.y[6:] == 0)
    assert np.all(report.ap_stat[5:] >= 11.0 - 1e-12)


def test_small_eps_ap_fires_at_time_zero():
    """‖Z‖ + ‖Z^{-1}‖ >= 2 なので、N^{eps_ap} < 2 の閾値は t = 0 で必ず発火する"""
    n = 64
    times = np.arange(0, 41) / n**2
    z = np.ones((times.size, n))
    assert stopping_monitors(times, z, MonitorConfig(eps_ap=0.1)).t_ap == 0.0
    assert stopping_monitors(times, z, MonitorConfig()).t_ap == 1.0
    assert MonitorConfig().threshold(8) > 1.0 + math.exp(8**-0.5)


def test_stopping_monitors_reject_nonpositive():
    with pytest.raises(PositivityError):
        stopping_monitors(np.array([0.0, 0.1]), np.array([[1.0, 0.0], [1.0, 1.0]]))


def test_time_average_of_constant_path():
    times = np.linspace(0.0, 1.0, 11)
    path = PathObservable(times, np.ones((11, 4)))
    averaged = time_average(path, 0.3)
    assert averaged.values == pytest.approx(np.ones((11, 4)))
    assert averaged.truncated.sum() == 3
    diff = transfer_diff(path, 0.3, 0.1)
    assert np.allclose(diff.values, 0.0)


def test_time_averaged_moments_weight_holding_times():
    snapshots = np.array([[1, -1, 1, -1], [-1, 1, 1, -1], [-1, -1, 1, 1]], dtype=np.int8)
    times = np.array([0.0, 1.0, 3.0])
    moments = time_averaged_moments(snapshots, times, [1, 2])
    assert moments == pytest.approx([-1 / 3, -1 / 3, -1 / 3])
    assert time_averaged_moments(snapshots[:1], times[:1], [1]) == pytest.approx([1.0, -1.0])


def test_rescale_interpolates_nodes():
    values = np.arange(8, dtype=float)
    assert rescale(values, np.arange(8) / 8, kind="spatial") == pytest.approx(values)
    assert rescale(values, [1 / 16])[0] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        rescale(values, [0.1], kind="temporal")


def test_c1_norm():
    assert c1_norm(lambda u: np.sin(2 * np.pi * u)) == pytest.approx(1 + 2 * np.pi, rel=1e-3)


def test_bridge_variance_matches_hypergeometric():
    n = 64
    configs = [sample_initial("stationary_zero_sum", n, seed) for seed in range(300)]
    for result in bridge_variance(configs, [0.25, 0.5]):
        assert result.expected == pytest.approx(result.u * (1 - result.u) * n / (n - 1))
        assert abs(result.value / result.expected - 1) < 0.1


def test_stable_data_moments_flat():
    cfg = Configuration(np.tile([1, -1], 32), zero_sum=True)
    moments = stable_data_moments([cfg], p=2, u=0.25)
    assert moments["n"] == 64
    assert moments["height_moment"] <= 1.0 / 64**2 + 1e-12
    assert moments["holder_moment"] > 0
