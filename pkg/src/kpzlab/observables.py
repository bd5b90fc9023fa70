"""
高さ関数とガートナー変換

軌道から高さ関数 h^N とガートナー変換 Z^N を組み立て、再スケーリング、
経路上の時間平均、停止時刻のモニター、微視的 SHE の厳密な残差検査を行う。
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numba import njit

from .dynamics import Trajectory, bond_rates
from .ensembles import ModelFunctionals, block_length, piecewise_integral
from .errors import PositivityError
from .lattice import Configuration, swap_bond

logger = logging.getLogger(__name__)


@dataclass
class HeightField:
    """グリッド時刻 × サイトの高さ関数。units = N^{1/2} h は整数"""

    n: int
    times: np.ndarray
    units: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.units / math.sqrt(self.n)


@dataclass
class GartnerField:
    """Z^N = exp(-h^N + R T)。オーバーフローを避けるため log Z で保持する"""

    n: int
    times: np.ndarray
    log_z: np.ndarray
    R: float

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_z)


@dataclass
class PathObservable:
    """スナップショットグリッド上の区分定数な経路観測量"""

    times: np.ndarray
    values: np.ndarray
    truncated: Optional[np.ndarray] = None

    def __sub__(self, other: "PathObservable") -> "PathObservable":
        truncated = None
        if self.truncated is not None or other.truncated is not None:
            zeros = np.zeros(self.times.size, dtype=bool)
            left = zeros if self.truncated is None else self.truncated
            right = zeros if other.truncated is None else other.truncated
            truncated = left | right
        return PathObservable(self.times, self.values - other.values, truncated)


@dataclass(frozen=True)
class MonitorConfig:
    """
    停止時刻モニターの設定

    ‖Z‖ + ‖Z^{-1}‖ は常に 2 以上なので、閾値 N^{eps_ap} は卓上規模の N で 2 を
    十分に上回る必要がある。
    """

    eps_ap: float = 0.6
    eps_rn: float = 0.02

    def threshold(self, n: int) -> float:
        return n**self.eps_ap

    def spatial_range(self, n: int) -> int:
        """ℓ_N = ⌈N^{1/2 + ε_RN}⌉"""
        return int(math.ceil(n ** (0.5 + self.eps_rn)))

    def base_scales(self, n: int) -> np.ndarray:
        """I^{T,1} = {N^{-2 + j ε_ap}} ∩ [0, N^{-1}]"""
        scales = []
        j = 0
        while True:
            s = n ** (-2.0 + j * self.eps_ap)
            if s > 1.0 / n + 1e-15:
                break
            scales.append(s)
            j += 1
        return np.array(scales)

    def time_scales(self, n: int) -> np.ndarray:
        """I^T = {k N^{-2 + j ε_ap} : 1 <= k <= N^{ε_ap}}"""
        k_max = int(math.floor(n**self.eps_ap))
        scales = {k * s for s in self.base_scales(n) for k in range(1, k_max + 1)}
        return np.array(sorted(scales))


@dataclass
class StoppingReport:
    """停止時刻と停止されたガートナー変換 Y^N"""

    t_ap: float
    t_rn_t: float
    t_rn_x: float
    t_st: float
    ap_stat: np.ndarray
    rn_t_stat: np.ndarray
    rn_x_stat: np.ndarray
    y: np.ndarray

    def as_dict(self) -> Dict[str, float]:
        return {"t_ap": self.t_ap, "t_rn_t": self.t_rn_t, "t_rn_x": self.t_rn_x, "t_st": self.t_st}


# 高さ関数とガートナー変換


def height_units(spins: np.ndarray, anchor_flux) -> np.ndarray:
    """N^{1/2} h_x = 2 flux_0 + sum_{y=1}^{x} η_y (最終軸がサイト)"""
    spins = np.asarray(spins, dtype=np.int64)
    units = np.zeros(spins.shape, dtype=np.int64)
    units[..., 1:] = np.cumsum(spins[..., 1:], axis=-1)
    return units + 2 * np.asarray(anchor_flux, dtype=np.int64)[..., None]


def height_field(traj: Trajectory) -> HeightField:
    """ボンド (0, 1) の流束を基準にした高さ関数"""
    return HeightField(traj.n, traj.times, height_units(traj.snapshots, traj.anchor_flux))


def height_from_bond_flux(traj: Trajectory) -> np.ndarray:
    """各ボンドの流束から独立に組み立てた高さ (整数単位)"""
    if traj.anchor_only:
        raise ValueError("全ボンドの流束が記録されていません")
    start = height_units(traj.snapshots[0], 0)
    return start[None, :] + 2 * traj.flux


def height_flux_consistency(traj: Trajectory) -> int:
    """基準ボンド方式とボンドごとの方式の高さの差の最大値 (0 なら一致)"""
    anchored = height_field(traj).units
    return int(np.max(np.abs(anchored - height_from_bond_flux(traj))))


def gartner_field(traj: Trajectory, model: ModelFunctionals) -> GartnerField:
    """Z = exp(-h + R T)"""
    h = height_field(traj)
    R = model.renormalization(traj.n)
    log_z = -h.values + R * traj.times[:, None]
    return GartnerField(traj.n, traj.times, log_z, R)


def kpz_height(traj: Trajectory, model: ModelFunctionals) -> np.ndarray:
    """微視的 KPZ 高さ -log Z^N = h^N - R T"""
    return -gartner_field(traj, model).log_z


def rescale(values: np.ndarray, points: Sequence[float], kind: str = "space_time") -> np.ndarray:
    """
    Γ^N: 格子の値を T^1 上に線形補間する

    Args:
        values: (時刻, サイト) または (サイト,) の配列
        points: [0, 1) 上の評価点
        kind: "space_time" (Γ^N) または "spatial" (Γ^{N,X}、時刻 0 のみ)

    Returns:
        補間値
    """
    values = np.asarray(values, dtype=float)
    points = np.asarray(points, dtype=float)
    if kind == "spatial" and values.ndim == 2:
        values = values[0]
    elif kind not in ("spatial", "space_time"):
        raise ValueError(f"未知の種類: {kind}")
    n = values.shape[-1]
    nodes = np.arange(n)
    if values.ndim == 1:
        return np.interp(points * n, nodes, values, period=n)
    return np.stack([np.interp(points * n, nodes, row, period=n) for row in values])


# 時間平均


def time_average(g: PathObservable, t_av: float) -> PathObservable:
    """𝔦^T_{t_av}(g)(S) = t_av^{-1} ∫_0^{t_av} g(S + r) dr。記録範囲を超える分は切り詰める"""
    if t_av <= 0:
        return PathObservable(g.times, np.array(g.values, dtype=float), np.zeros(g.times.size, dtype=bool))
    times = np.asarray(g.times, dtype=float)
    values = np.asarray(g.values, dtype=float)
    horizon = times[-1]
    lengths = np.diff(times)
    increments = values[:-1] * lengths.reshape((-1,) + (1,) * (values.ndim - 1))
    cumulative = np.concatenate([np.zeros((1,) + values.shape[1:]), np.cumsum(increments, axis=0)])
    ends = np.minimum(times + t_av, horizon)
    truncated = times + t_av > horizon + 1e-12
    flat = cumulative.reshape(times.size, -1)
    at_end = np.stack([np.interp(ends, times, flat[:, j]) for j in range(flat.shape[1])], axis=1)
    positive = ends > times
    averaged = values.reshape(times.size, -1).copy()
    averaged[positive] = (at_end[positive] - flat[positive]) / (ends - times)[positive][:, None]
    if truncated.any():
        logger.debug("時間平均が記録範囲を超えたため %d 点で切り詰めました", int(truncated.sum()))
    return PathObservable(times, averaged.reshape(values.shape), truncated)


def transfer_diff(g: PathObservable, t: float, t_prime: float) -> PathObservable:
    """D^T_{t,t'} = 𝔦^T_t - 𝔦^T_{t'}"""
    return time_average(g, t) - time_average(g, t_prime)


# 停止時刻モニター


@njit(cache=True, nogil=True)
def _running_monitors(z, lags, lag_weights, offsets, offset_weights):
    g_count, n = z.shape
    ap = np.zeros(g_count)
    sup_z = np.zeros(g_count)
    rn_t = np.zeros(g_count)
    rn_x = np.zeros(g_count)
    run_inv = 0.0
    run_sup = 0.0
    run_t = 0.0
    run_x = 0.0
    for k in range(g_count):
        top = 0.0
        inv = 0.0
        for x in range(n):
            v = z[k, x]
            if v > top:
                top = v
            if 1.0 / v > inv:
                inv = 1.0 / v
        if top > run_sup:
            run_sup = top
        if inv > run_inv:
            run_inv = inv
        for i in range(lags.size):
            back = k - lags[i]
            if back < 0:
                back = 0
            worst = 0.0
            for x in range(n):
                diff = abs(z[back, x] - z[k, x])
                if diff > worst:
                    worst = diff
            stat = lag_weights[i] * worst
            if stat > run_t:
                run_t = stat
        for i in range(offsets.size):
            worst = 0.0
            for x in range(n):
                diff = abs(z[k, (x + offsets[i]) % n] - z[k, x])
                if diff > worst:
                    worst = diff
            stat = offset_weights[i] * worst
            if stat > run_x:
                run_x = stat
        ap[k] = run_sup + run_inv
        sup_z[k] = run_sup
        rn_t[k] = run_t
        rn_x[k] = run_x
    return ap, sup_z, rn_t, rn_x


def _first_passage(times: np.ndarray, exceeded: np.ndarray) -> float:
    hits = np.flatnonzero(exceeded)
    return min(float(times[hits[0]]), 1.0) if hits.size else 1.0


def monitor_lags(scales: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    時間スケールをグリッドのラグに丸める

    同じラグに丸められたスケールは 1 つにまとめ、重みは実際のラグ幅 (lag dt)^{-1/4}
    で付ける。dt より細かいスケールはすべてラグ 1 になる。

    Args:
        scales: 時間スケール
        dt: グリッド間隔

    Returns:
        (ラグ, 重み)
    """
    rounded = np.maximum(1, np.rint(np.asarray(scales, dtype=float) / dt).astype(np.int64))
    lags = np.unique(rounded)
    if lags.size < rounded.size:
        logger.debug("%d 個の時間スケールを %d 個のラグにまとめました", rounded.size, lags.size)
    return lags, (lags * dt) ** -0.25


def stopping_monitors(times: np.ndarray, z: np.ndarray, cfg: MonitorConfig = MonitorConfig()) -> StoppingReport:
    """
    停止時刻 t_ap, t_RN^T, t_RN^X, t_st と Y^N を計算する

    Args:
        times: グリッド時刻 (ほぼ等間隔)
        z: (時刻, サイト) の Z
        cfg: モニター設定

    Returns:
        StoppingReport
    """
    times = np.asarray(times, dtype=float)
    z = np.ascontiguousarray(z, dtype=float)
    n = z.shape[1]
    if np.any(z <= 0):
        raise PositivityError("Z が正でない点があります")
    dt = float(times[1] - times[0]) if times.size > 1 else 1.0
    if dt > n**-2.0 * (1 + 1e-9):
        logger.debug("グリッド間隔 %.3e が最小スケール N^-2 = %.3e より粗いです", dt, n**-2.0)

    lags, lag_weights = monitor_lags(cfg.time_scales(n), dt)
    ell_n = cfg.spatial_range(n)
    offsets = np.array([o for o in range(-ell_n, ell_n + 1) if o != 0], dtype=np.int64)
    offset_weights = math.sqrt(n) * np.abs(offsets) ** -0.5

    ap, sup_z, rn_t, rn_x = _running_monitors(z, lags, lag_weights, offsets, offset_weights)
    threshold = cfg.threshold(n)
    regularity = threshold * (1.0 + sup_z**2)
    t_ap = _first_passage(times, ap >= threshold)
    t_rn_t = _first_passage(times, rn_t > regularity)
    t_rn_x = _first_passage(times, rn_x > regularity)
    t_st = min(t_ap, t_rn_t, t_rn_x, 1.0)
    y = z * (times <= t_st)[:, None]
    return StoppingReport(t_ap, t_rn_t, t_rn_x, t_st, ap, rn_t, rn_x, y)


# 厳密な恒等式の検査


def density_identity_check(spins: np.ndarray, log_z: np.ndarray, delta: float, x: int) -> Tuple[float, bool]:
    """
    A^X_{δ,x} - N^{1/2} (1+L)^{-1} ∇^X_{-L-1} log Z_x を返す

    ブロックがトーラスを一周する場合は (nan, True)。
    """
    spins = np.asarray(spins)
    n = spins.size
    L = block_length(n, delta)
    if L + 1 >= n:
        return math.nan, True
    density = spins[(x - np.arange(L + 1)) % n].sum() / (L + 1)
    gradient = log_z[(x - L - 1) % n] - log_z[x % n]
    return float(density - math.sqrt(n) / (1 + L) * gradient), False


def density_identity_residuals(traj: Trajectory, gartner: GartnerField, delta: float) -> float:
    """全時刻・全サイトでの恒等式の残差の最大値"""
    n = traj.n
    L = block_length(n, delta)
    if L + 1 >= n:
        return math.nan
    spins = traj.snapshots.astype(float)
    density = np.zeros(spins.shape)
    for w in range(L + 1):
        density += np.roll(spins, w, axis=1)
    density /= L + 1
    gradient = np.roll(gartner.log_z, L + 1, axis=1) - gartner.log_z
    return float(np.max(np.abs(density - math.sqrt(n) / (1 + L) * gradient)))


def _z_of_state(spins: np.ndarray, anchor_flux: int, n: int, R: float, t: float) -> np.ndarray:
    return np.exp(-height_units(spins, anchor_flux) / math.sqrt(n) + R * t)


def generator_action(
    cfg: Configuration,
    model: ModelFunctionals,
    anchor_flux: int = 0,
    t: float = 0.0,
    env_sign: float = 1.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    (R + 𝖫_N) Z_x の厳密な値

    Z_x を動かすのはボンド x のジャンプだけで、左向きなら e^{-2N^{-1/2}}、
    右向きなら e^{2N^{-1/2}} 倍になる。env_sign = -1 ではレートの d の項の
    符号を反転させる (右向き N^2/2 - N^{3/2}/2 - N d_x/2)。

    Returns:
        (作用の値, Z)
    """
    n = cfg.n
    spins = cfg.spins.astype(np.int64)
    R = model.renormalization(n)
    z = _z_of_state(spins, anchor_flux, n, R, t)
    step = 2.0 / math.sqrt(n)
    d_x = model.d.evaluate_all(cfg)
    right_spin = np.roll(spins, -1)
    plus_minus = (spins > 0) & (right_spin < 0)
    minus_plus = (spins < 0) & (right_spin > 0)
    half_sq, half_32, half_n = n**2 / 2.0, n**1.5 / 2.0, n / 2.0
    env = env_sign * half_n * d_x
    rate_right = np.where(plus_minus, half_sq - half_32 + env, 0.0)
    rate_left = np.where(minus_plus, half_sq + half_32 - env, 0.0)
    action = R * z + rate_right * math.expm1(step) * z + rate_left * math.expm1(-step) * z
    return action, z


def generator_action_bruteforce(
    cfg: Configuration, model: ModelFunctionals, anchor_flux: int = 0, t: float = 0.0
) -> np.ndarray:
    """全ボンドで仮想ジャンプを行い、Z を毎回最初から計算し直す"""
    n = cfg.n
    R = model.renormalization(n)
    z = _z_of_state(cfg.spins, anchor_flux, n, R, t)
    action = R * z
    for bond in range(n):
        rate_right, rate_left = bond_rates(cfg, bond, n, model)
        rate = rate_right + rate_left
        if rate == 0.0:
            continue
        direction = 1 if rate_left > 0 else -1
        jumped = swap_bond(cfg, bond)
        flux_after = anchor_flux + (direction if bond == 0 else 0)
        action = action + rate * (_z_of_state(jumped.spins, flux_after, n, R, t) - z)
    return action


def heat_generator(z: np.ndarray, n: int, dbar: float) -> np.ndarray:
    """ℒ_N = ½ Δ^{!!} + d̄ ∇^!_{-1}"""
    laplace = np.roll(z, -1) + np.roll(z, 1) - 2.0 * z
    backward = np.roll(z, 1) - z
    return 0.5 * n**2 * laplace + dbar * n * backward


def drift_remainder(
    cfg: Configuration,
    model: ModelFunctionals,
    anchor_flux: int = 0,
    t: float = 0.0,
    env_sign: float = 1.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """(R + 𝖫_N) Z - [ℒ_N Z + N^{1/2} q̄ Z - 𝔰 Z] のサイトごとの値と Z"""
    n = cfg.n
    action, z = generator_action(cfg, model, anchor_flux, t, env_sign)
    qbar = model.qbar.evaluate_all(cfg)
    s = model.s.evaluate_all(cfg)
    drift = heat_generator(z, n, model.dbar) + math.sqrt(n) * qbar * z - s * z
    return action - drift, z


def drift_residual(
    cfg: Configuration,
    model: ModelFunctionals,
    phi: Callable[[np.ndarray], np.ndarray],
    anchor_flux: int = 0,
    t: float = 0.0,
) -> float:
    """r(φ) = sum_x φ(x/N) remainder_x"""
    remainder, _ = drift_remainder(cfg, model, anchor_flux, t)
    return float(np.sum(phi(np.arange(cfg.n) / cfg.n) * remainder))


def c1_norm(phi: Callable[[np.ndarray], np.ndarray], samples: int = 4096) -> float:
    """‖φ‖_{C^1} = sup|φ| + sup|φ'| を細かい格子上で数値的に求める"""
    u = np.arange(samples) / samples
    values = phi(u)
    derivative = np.gradient(np.append(values, values[0]), 1.0 / samples)[:-1]
    return float(np.max(np.abs(values)) + np.max(np.abs(derivative)))


def normalized_residual(
    cfg: Configuration, model: ModelFunctionals, phi: Callable[[np.ndarray], np.ndarray], phi_norm: float
) -> float:
    """N^{1/2} |r(φ)| / (N ‖φ‖_{C^1} max|Z|)"""
    n = cfg.n
    remainder, z = drift_remainder(cfg, model)
    r = float(np.sum(phi(np.arange(n) / n) * remainder))
    return math.sqrt(n) * abs(r) / (n * phi_norm * float(np.max(z)))


def jump_replay_check(traj: Trajectory, model: ModelFunctionals) -> Dict[str, float]:
    """
    ログのイベントを初期配置から再生し、イベントごとに検査する

    スナップショットとの一致、高さ変化の局所性と大きさ、
    Z の乗法性 e^{∓2N^{-1/2}} を確かめる。
    """
    if traj.events is None:
        raise ValueError("イベントログがありません")
    n = traj.n
    root = math.sqrt(n)
    R = model.renormalization(n)
    spins = traj.snapshots[0].astype(np.int64).copy()
    anchor = int(traj.anchor_flux[0])
    units = height_units(spins, anchor)
    nonlocal_moves = 0
    wrong_size = 0
    z_error = 0.0
    mismatches = 0
    grid_index = 1
    events = traj.events
    for t, bond, direction in zip(events.times, events.bonds, events.dirs):
        while grid_index < traj.times.size and traj.times[grid_index] <= t:
            mismatches += int(not np.array_equal(spins, traj.snapshots[grid_index]))
            grid_index += 1
        bond = int(bond)
        nxt = (bond + 1) % n
        spins[bond], spins[nxt] = spins[nxt], spins[bond]
        if bond == 0:
            anchor += int(direction)
        after = height_units(spins, anchor)
        moved = np.flatnonzero(after != units)
        nonlocal_moves += int(np.any(moved != bond))
        wrong_size += int(after[bond] - units[bond] != 2 * int(direction))
        z_before = math.exp(-units[bond] / root + R * t)
        z_after = math.exp(-after[bond] / root + R * t)
        z_error = max(z_error, abs(z_after / z_before - math.exp(-2.0 * int(direction) / root)))
        units = after
    while grid_index < traj.times.size:
        mismatches += int(not np.array_equal(spins, traj.snapshots[grid_index]))
        grid_index += 1
    return {
        "events": float(len(events)),
        "nonlocal_moves": float(nonlocal_moves),
        "wrong_size": float(wrong_size),
        "z_ratio_error": z_error,
        "snapshot_mismatches": float(mismatches),
        "passed": float(nonlocal_moves == 0 and wrong_size == 0 and mismatches == 0 and z_error <= 1e-12),
    }



def time_averaged_moments(snapshots: np.ndarray, times: np.ndarray, lags: Sequence[int]) -> np.ndarray:
    """
    η_0 と η_x η_{x+k} (サイト平均) を [0, times[-1]] で時間平均する

    スナップショットの値は次のグリッド時刻まで保持されるとみなす。

    Returns:
        [η_0, pair_{k_1}, pair_{k_2}, ...]
    """
    spins = np.asarray(snapshots, dtype=float)
    times = np.asarray(times, dtype=float)
    columns = [spins[:, 0]] + [np.mean(spins * np.roll(spins, -k, axis=1), axis=1) for k in lags]
    values = np.stack(columns, axis=1)
    horizon = float(times[-1])
    if horizon <= 0:
        return values[0]
    return piecewise_integral(times, values, 0.0, horizon) / horizon


# 安定な初期配置


def stable_data_moments(
    configs: Sequence[Configuration], p: int = 2, u: float = 0.25, lags: Optional[Sequence[int]] = None
) -> Dict[str, float]:
    """
    初期配置の一群について高さのモーメントを測る

    sup_x E|h_{0,x}|^{2p} と sup_{ℓ} sup_x E|∇^X_ℓ h_0|^{2p} N^{2pu} |ℓ|^{-2pu}。
    """
    n = configs[0].n
    h = np.stack([height_units(cfg.spins, 0) for cfg in configs]) / math.sqrt(n)
    sup_moment = float(np.max(np.mean(np.abs(h) ** (2 * p), axis=0)))
    if lags is None:
        lags = [2**k for k in range(int(math.log2(n)))]
    holder = 0.0
    for ell in lags:
        grad = np.roll(h, -ell, axis=1) - h
        moment = np.mean(np.abs(grad) ** (2 * p), axis=0) * n ** (2 * p * u) * ell ** (-2 * p * u)
        holder = max(holder, float(np.max(moment)))
    return {"n": float(n), "height_moment": sup_moment, "holder_moment": holder}


def stable_data_table(samplers: Dict[int, List[Configuration]], p: int = 2, u: float = 0.25) -> pd.DataFrame:
    """N ごとの stable_data_moments を表にする"""
    rows = [stable_data_moments(configs, p=p, u=u) for _, configs in sorted(samplers.items())]
    return pd.DataFrame(rows)


class BridgeVariance(NamedTuple):
    u: float
    value: float
    se: float
    expected: float


def bridge_variance(configs: Sequence[Configuration], points: Sequence[float]) -> List[BridgeVariance]:
    """
    Var(h_0(⌊uN⌋)) の回転平均推定

    配置の回転 τ_k について h(x+k) - h(k) を集め、ゼロ和の非復元抽出の
    分散 u(1-u) N/(N-1) と比べる。
    """
    n = configs[0].n
    out = []
    for u in points:
        x = int(math.floor(u * n))
        per_config = []
        for cfg in configs:
            spins = cfg.spins.astype(np.int64)
            prefix = np.concatenate([[0], np.cumsum(np.concatenate([spins, spins]))])
            increments = (prefix[np.arange(n) + x + 1] - prefix[np.arange(n) + 1]) / math.sqrt(n)
            per_config.append(np.mean(increments**2))
        per_config = np.asarray(per_config)
        se = float(per_config.std(ddof=1) / math.sqrt(per_config.size))
        expected = (x / n) * (1 - x / n) * n / (n - 1)
        out.append(BridgeVariance(u, float(per_config.mean()), se, expected))
    return out
