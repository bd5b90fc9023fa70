"""
微視的ダイナミクスのシミュレーション

生成作用素 L_N = L_{N,S} + L_{N,A} の連続時間マルコフ連鎖を
イベント駆動で厳密にシミュレートする。2 種の結合シミュレーション、
局所化写像、初期配置の生成もここにある。

レートは不一致ボンドごとの上界 B による間引き (thinning) で選ぶ。
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
from numba import njit

from .ensembles import ModelFunctionals, check_rate_positivity
from .lattice import Configuration, swap_bond

logger = logging.getLogger(__name__)

DONE = 0
LOG_FULL = 1
HIT = 2

LOG_CHUNK = 1 << 16

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]


def as_generator(seed: SeedLike) -> np.random.Generator:
    """整数、SeedSequence、Generator のいずれからも PCG64 の Generator を作る"""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def seed_entropy(seed: SeedLike):
    if isinstance(seed, np.random.SeedSequence):
        return {"entropy": seed.entropy, "spawn_key": list(seed.spawn_key)}
    if isinstance(seed, np.random.Generator):
        return None
    return seed


def default_snapshot_step(n: int) -> float:
    """スナップショット間隔の既定値 N^{-2} ⌈N^{1/2}⌉"""
    return math.ceil(math.sqrt(n)) / n**2


def make_grid(t_end: float, step: float) -> np.ndarray:
    """0 から t_end までの等間隔グリッド。t_end は必ず含む"""
    if step <= 0:
        raise ValueError(f"グリッド間隔は正でなければなりません: {step}")
    count = int(math.floor(t_end / step + 1e-9))
    times = step * np.arange(count + 1)
    if times[-1] < t_end - 1e-12:
        times = np.append(times, t_end)
    return times


@dataclass(frozen=True)
class SimParams:
    """シミュレーションのパラメータ"""

    n: int
    model: ModelFunctionals
    t_end: float
    snapshot_step: Optional[float] = None
    seed: SeedLike = 0
    log_events: bool = False
    anchor_only: bool = False

    def __post_init__(self):
        if self.n % 2:
            raise ValueError(f"N は偶数でなければなりません: {self.n}")
        if self.t_end < 0:
            raise ValueError(f"t_end は非負でなければなりません: {self.t_end}")
        check_rate_positivity(self.n, self.model.d_max)

    @property
    def step(self) -> float:
        return self.snapshot_step or default_snapshot_step(self.n)

    @property
    def grid(self) -> np.ndarray:
        return make_grid(self.t_end, self.step)

    def rate_constants(self) -> Tuple[float, float, float, float]:
        """(N^2/2, N^{3/2}/2, N/2, 間引きの上界 B)"""
        n = float(self.n)
        sym, asym, env = n**2 / 2.0, n**1.5 / 2.0, n / 2.0
        return sym, asym, env, sym + asym + env * self.model.d_max


@dataclass
class EventLog:
    """ジャンプの記録。dirs は左向き +1、右向き -1"""

    times: np.ndarray
    bonds: np.ndarray
    dirs: np.ndarray

    def __len__(self) -> int:
        return int(self.times.size)


@dataclass
class Trajectory:
    """スナップショットグリッド上の軌道と各ボンドの流束カウンタ"""

    n: int
    times: np.ndarray
    snapshots: np.ndarray
    flux: np.ndarray
    events: Optional[EventLog] = None
    anchor_only: bool = False
    seed: object = None
    stats: Dict[str, int] = field(default_factory=dict)

    @property
    def initial(self) -> Configuration:
        return Configuration(self.snapshots[0])

    def configuration(self, k: int) -> Configuration:
        return Configuration(self.snapshots[k])

    @property
    def anchor_flux(self) -> np.ndarray:
        """ボンド (0, 1) の流束"""
        return self.flux[:, 0]

    def spin_sums(self) -> np.ndarray:
        return self.snapshots.sum(axis=1, dtype=np.int64)

    def export(self, path: Union[str, Path], fmt: str = "arrow") -> str:
        return export_trajectory(self, path, fmt)


@dataclass
class CoupledTrajectory:
    """対称部分のクロックを共有する 2 種の軌道"""

    a: Trajectory
    b: Trajectory
    uncoupled: np.ndarray

    @property
    def discrepancy(self) -> np.ndarray:
        return self.a.snapshots != self.b.snapshots

    def discrepancy_sets(self):
        return [np.flatnonzero(row) for row in self.discrepancy]

    def discrepancy_counts(self) -> np.ndarray:
        return self.discrepancy.sum(axis=1)


def bond_rates(cfg: Configuration, x: int, n: int, model: ModelFunctionals) -> Tuple[float, float]:
    """
    ボンド (x, x+1) のジャンプレート (右向き, 左向き)

    (+,-) なら右向き N^2/2 - N^{3/2}/2 + N d_x/2、
    (-,+) なら左向き N^2/2 + N^{3/2}/2 - N d_x/2、同符号なら (0, 0)。
    """
    left, right = cfg[x], cfg[x + 1]
    if left == right:
        return 0.0, 0.0
    d_x = model.d.evaluate(cfg, x)
    half_sq, half_32, half_n = n**2 / 2.0, n**1.5 / 2.0, n / 2.0
    if left > 0:
        rate = half_sq - half_32 + half_n * d_x
        rates = (rate, 0.0)
    else:
        rate = half_sq + half_32 - half_n * d_x
        rates = (0.0, rate)
    if rate < 0:
        raise ValueError(f"ボンド {x} のレートが負です: {rate:.6g}")
    return rates


def total_exit_rate(cfg: Configuration, n: int, model: ModelFunctionals) -> float:
    return float(sum(sum(bond_rates(cfg, x, n, model)) for x in range(cfg.n)))


# numba カーネル


@njit(cache=True, nogil=True)
def _d_at(spins, x, d_off, d_sites, d_coef):
    n = spins.size
    total = 0.0
    for m in range(d_coef.size):
        prod = 1.0
        for j in range(d_off[m], d_off[m + 1]):
            prod *= spins[(x + d_sites[j]) % n]
        total += d_coef[m] * prod
    return total


@njit(cache=True, nogil=True)
def _update_list(active, x, members, pos, counters):
    if active and pos[x] < 0:
        k = counters[0]
        members[k] = x
        pos[x] = k
        counters[0] = k + 1
    elif not active and pos[x] >= 0:
        k = pos[x]
        last = counters[0] - 1
        y = members[last]
        members[k] = y
        pos[y] = k
        pos[x] = -1
        counters[0] = last


@njit(cache=True, nogil=True)
def _refresh_discordant(spins, x, members, pos, counters):
    n = spins.size
    for b in ((x - 1) % n, x, (x + 1) % n):
        _update_list(spins[b] != spins[(b + 1) % n], b, members, pos, counters)


@njit(cache=True, nogil=True)
def _simulate_kernel(
    spins, flux, members, pos, counters, clock, grid, snaps, snap_flux,
    ev_time, ev_bond, ev_dir, log_events, anchor_only,
    d_off, d_sites, d_coef, sym, asym, env, bound, rg,
):
    # counters: [不一致ボンド数, 次のグリッド番号, 記録済みイベント数, ジャンプ数, 棄却数]
    n = spins.size
    t = clock[0]
    t_end = grid[grid.size - 1]
    while True:
        if log_events and counters[2] >= ev_time.size:
            clock[0] = t
            return LOG_FULL
        active = counters[0]
        if active == 0:
            t_next = np.inf
        else:
            t_next = t + rg.exponential(1.0 / (active * bound))
        g = counters[1]
        while g < grid.size and grid[g] <= t_next:
            snaps[g, :] = spins
            if anchor_only:
                snap_flux[g, 0] = flux[0]
            else:
                snap_flux[g, :] = flux
            g += 1
        counters[1] = g
        if t_next > t_end:
            clock[0] = t_end
            return DONE
        t = t_next
        k = int(rg.random() * active)
        if k >= active:
            k = active - 1
        x = members[k]
        y = (x + 1) % n
        d_x = _d_at(spins, x, d_off, d_sites, d_coef)
        if spins[x] > 0:
            rate = sym - asym + env * d_x
            direction = -1
        else:
            rate = sym + asym - env * d_x
            direction = 1
        if rg.random() * bound < rate:
            tmp = spins[x]
            spins[x] = spins[y]
            spins[y] = tmp
            flux[x] += direction
            counters[3] += 1
            if log_events:
                i = counters[2]
                ev_time[i] = t
                ev_bond[i] = x
                ev_dir[i] = direction
                counters[2] = i + 1
            _refresh_discordant(spins, x, members, pos, counters)
        else:
            counters[4] += 1


def _discordant_state(spins: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = spins.size
    members = np.full(n, -1, dtype=np.int64)
    pos = np.full(n, -1, dtype=np.int64)
    bonds = np.flatnonzero(spins != np.roll(spins, -1))
    members[: bonds.size] = bonds
    pos[bonds] = np.arange(bonds.size)
    return members, pos, np.array([bonds.size], dtype=np.int64)


def simulate(params: SimParams, init: Configuration) -> Trajectory:
    """
    連鎖を t_end まで厳密にシミュレートする

    Args:
        params: シミュレーションのパラメータ
        init: 初期配置

    Returns:
        Trajectory
    """
    n = params.n
    if init.n != n:
        raise ValueError(f"初期配置のサイズ {init.n} が N={n} と一致しません")
    rg = as_generator(params.seed)
    grid = params.grid
    sym, asym, env, bound = params.rate_constants()
    d_off, d_sites, d_coef = params.model.d.to_arrays()

    spins = np.array(init.spins, dtype=np.int8)
    flux = np.zeros(n, dtype=np.int64)
    members, pos, count = _discordant_state(spins)
    counters = np.zeros(5, dtype=np.int64)
    counters[0] = count[0]
    clock = np.zeros(1)
    snaps = np.zeros((grid.size, n), dtype=np.int8)
    snap_flux = np.zeros((grid.size, 1 if params.anchor_only else n), dtype=np.int64)

    capacity = LOG_CHUNK if params.log_events else 0
    ev_time = np.zeros(capacity)
    ev_bond = np.zeros(capacity, dtype=np.int64)
    ev_dir = np.zeros(capacity, dtype=np.int8)

    while True:
        status = _simulate_kernel(
            spins, flux, members, pos, counters, clock, grid, snaps, snap_flux,
            ev_time, ev_bond, ev_dir, params.log_events, params.anchor_only,
            d_off, d_sites, d_coef, sym, asym, env, bound, rg,
        )
        if status == DONE:
            break
        grow = ev_time.size
        logger.debug("イベントログを %d 件に拡張します", 2 * grow)
        ev_time = np.concatenate([ev_time, np.zeros(grow)])
        ev_bond = np.concatenate([ev_bond, np.zeros(grow, dtype=np.int64)])
        ev_dir = np.concatenate([ev_dir, np.zeros(grow, dtype=np.int8)])

    events = None
    if params.log_events:
        used = int(counters[2])
        events = EventLog(ev_time[:used].copy(), ev_bond[:used].copy(), ev_dir[:used].copy())
    return Trajectory(
        n=n,
        times=grid,
        snapshots=snaps,
        flux=snap_flux,
        events=events,
        anchor_only=params.anchor_only,
        seed=seed_entropy(params.seed),
        stats={"jumps": int(counters[3]), "rejected": int(counters[4])},
    )


# 結合シミュレーション


@njit(cache=True, nogil=True)
def _pattern(spins, x):
    n = spins.size
    left = spins[x]
    right = spins[(x + 1) % n]
    if left == right:
        return 0
    return 1 if left < 0 else -1


@njit(cache=True, nogil=True)
def _extra_rate(pattern, d_x, half_n, n32, dmax):
    if pattern == 0:
        return 0.0
    if pattern < 0:
        return half_n * (dmax + d_x)
    return n32 + half_n * (dmax - d_x)


@njit(cache=True, nogil=True)
def _jump(spins, flux, x):
    n = spins.size
    y = (x + 1) % n
    if spins[x] == spins[y]:
        return 0
    flux[x] += 1 if spins[x] < 0 else -1
    tmp = spins[x]
    spins[x] = spins[y]
    spins[y] = tmp
    return 1


@njit(cache=True, nogil=True)
def _refresh_active(a, b, x, members, pos, counters):
    n = a.size
    for c in ((x - 1) % n, x, (x + 1) % n):
        nxt = (c + 1) % n
        _update_list(a[c] != a[nxt] or b[c] != b[nxt], c, members, pos, counters)


@njit(cache=True, nogil=True)
def _in_window(site, lo, span, n):
    return (site - lo) % n <= span


@njit(cache=True, nogil=True)
def _coupled_kernel(
    a, b, flux_a, flux_b, members, pos, counters, clock, grid,
    snaps_a, snaps_b, flux_snaps_a, flux_snaps_b, unc_snaps,
    d_off, d_sites, d_coef, s0, e_max, half_n, n32, dmax,
    watch_lo, watch_span, hit, stop_on_hit, rg,
):
    # counters: [活性ボンド数, 次のグリッド番号, 非結合ジャンプ数, A のジャンプ数, B のジャンプ数]
    n = a.size
    per_bond = s0 + 2.0 * e_max
    t = clock[0]
    t_end = grid[grid.size - 1]
    if watch_span >= 0 and hit[0] < 0.0:
        for s in range(n):
            if a[s] != b[s] and _in_window(s, watch_lo, watch_span, n):
                hit[0] = t
                break
    if stop_on_hit and hit[0] >= 0.0:
        return HIT
    while True:
        active = counters[0]
        if active == 0:
            t_next = np.inf
        else:
            t_next = t + rg.exponential(1.0 / (active * per_bond))
        g = counters[1]
        while g < grid.size and grid[g] <= t_next:
            snaps_a[g, :] = a
            snaps_b[g, :] = b
            flux_snaps_a[g, :] = flux_a
            flux_snaps_b[g, :] = flux_b
            unc_snaps[g] = counters[2]
            g += 1
        counters[1] = g
        if t_next > t_end:
            clock[0] = t_end
            return DONE
        t = t_next
        k = int(rg.random() * active)
        if k >= active:
            k = active - 1
        x = members[k]
        u = rg.random() * per_bond
        if u < s0:
            counters[3] += _jump(a, flux_a, x)
            counters[4] += _jump(b, flux_b, x)
        else:
            v = u - s0
            pa = _pattern(a, x)
            pb = _pattern(b, x)
            ea = _extra_rate(pa, _d_at(a, x, d_off, d_sites, d_coef), half_n, n32, dmax)
            eb = _extra_rate(pb, _d_at(b, x, d_off, d_sites, d_coef), half_n, n32, dmax)
            coupled = pa != 0 and pa == pb and ea == eb
            if v < e_max:
                if v < ea:
                    _jump(a, flux_a, x)
                    counters[3] += 1
                    if coupled:
                        _jump(b, flux_b, x)
                        counters[4] += 1
                    else:
                        counters[2] += 1
            elif not coupled and v - e_max < eb:
                _jump(b, flux_b, x)
                counters[4] += 1
                counters[2] += 1
        _refresh_active(a, b, x, members, pos, counters)
        if watch_span >= 0 and hit[0] < 0.0:
            y = (x + 1) % n
            if (a[x] != b[x] and _in_window(x, watch_lo, watch_span, n)) or (
                a[y] != b[y] and _in_window(y, watch_lo, watch_span, n)
            ):
                hit[0] = t
                if stop_on_hit:
                    clock[0] = t
                    return HIT


def _coupled_constants(params: SimParams) -> Tuple[float, float, float, float, float]:
    n = float(params.n)
    dmax = params.model.d_max
    s0 = n**2 / 2.0 - n**1.5 / 2.0 - n * dmax / 2.0
    e_max = n**1.5 + n * dmax
    return s0, e_max, n / 2.0, n**1.5, dmax


def _run_coupled(params, init_a, init_b, grid, window, stop_on_hit):
    n = params.n
    for cfg in (init_a, init_b):
        if cfg.n != n:
            raise ValueError(f"初期配置のサイズ {cfg.n} が N={n} と一致しません")
    rg = as_generator(params.seed)
    d_off, d_sites, d_coef = params.model.d.to_arrays()
    s0, e_max, half_n, n32, dmax = _coupled_constants(params)

    a = np.array(init_a.spins, dtype=np.int8)
    b = np.array(init_b.spins, dtype=np.int8)
    flux_a = np.zeros(n, dtype=np.int64)
    flux_b = np.zeros(n, dtype=np.int64)
    union = (a != np.roll(a, -1)) | (b != np.roll(b, -1))
    bonds = np.flatnonzero(union)
    members = np.full(n, -1, dtype=np.int64)
    pos = np.full(n, -1, dtype=np.int64)
    members[: bonds.size] = bonds
    pos[bonds] = np.arange(bonds.size)
    counters = np.zeros(5, dtype=np.int64)
    counters[0] = bonds.size
    clock = np.zeros(1)
    snaps_a = np.zeros((grid.size, n), dtype=np.int8)
    snaps_b = np.zeros((grid.size, n), dtype=np.int8)
    flux_snaps_a = np.zeros((grid.size, n), dtype=np.int64)
    flux_snaps_b = np.zeros((grid.size, n), dtype=np.int64)
    unc_snaps = np.zeros(grid.size, dtype=np.int64)
    hit = np.array([-1.0])
    watch_lo, watch_span = (0, -1) if window is None else (int(window[0]), int(window[1] - window[0]))

    status = _coupled_kernel(
        a, b, flux_a, flux_b, members, pos, counters, clock, grid,
        snaps_a, snaps_b, flux_snaps_a, flux_snaps_b, unc_snaps,
        d_off, d_sites, d_coef, s0, e_max, half_n, n32, dmax,
        watch_lo, watch_span, hit, stop_on_hit, rg,
    )
    return status, hit[0], counters, (snaps_a, snaps_b, flux_snaps_a, flux_snaps_b, unc_snaps)


def simulate_coupled(params: SimParams, init_a: Configuration, init_b: Configuration) -> CoupledTrajectory:
    """
    対称部分のクロックを共有した 2 種の結合シミュレーション

    非対称部分は、両種が同じ不一致パターンかつ同じレートを持つボンドでは
    同じ一様乱数で基本結合し、それ以外では独立に発火させる。
    """
    grid = params.grid
    _, _, counters, arrays = _run_coupled(params, init_a, init_b, grid, None, False)
    snaps_a, snaps_b, flux_a, flux_b, unc = arrays
    seed = seed_entropy(params.seed)
    traj_a = Trajectory(params.n, grid, snaps_a, flux_a, seed=seed, stats={"jumps": int(counters[3])})
    traj_b = Trajectory(params.n, grid, snaps_b, flux_b, seed=seed, stats={"jumps": int(counters[4])})
    return CoupledTrajectory(traj_a, traj_b, unc)


def watch_window(
    params: SimParams, init_a: Configuration, init_b: Configuration, window: Tuple[int, int]
) -> float:
    """不一致が窓 [lo, hi] に初めて入る時刻。t_end までに入らなければ inf"""
    grid = np.array([0.0, params.t_end])
    status, hit, _, _ = _run_coupled(params, init_a, init_b, grid, window, True)
    return float(hit) if status == HIT or hit >= 0 else math.inf


# 局所化写像と初期配置


def loc_radius(n: int, t: float, ell: float, gamma0: float) -> int:
    """𝔏 = ⌈N^{1+γ} t^{1/2} + N^{3/2+γ} t + N^γ ℓ⌉"""
    if gamma0 <= 0:
        raise ValueError(f"γ0 は正でなければなりません: {gamma0}")
    value = n ** (1 + gamma0) * math.sqrt(t) + n ** (1.5 + gamma0) * t + n**gamma0 * ell
    return int(math.ceil(value - 1e-12))


def loc_map(cfg: Configuration, t: float, ell: float, gamma0: float) -> Configuration:
    """
    ブロック [-𝔏, 𝔏] の外を +1 に置き換える

    𝔏 >= n/2 なら恒等写像を返す。
    """
    radius = loc_radius(cfg.n, t, ell, gamma0)
    if radius >= cfg.n / 2:
        logger.warning("局所化ブロック 𝔏=%d がトーラス全体を覆うため恒等写像とします (n=%d)", radius, cfg.n)
        return cfg
    sites = np.arange(cfg.n)
    dist = np.minimum(sites, cfg.n - sites)
    spins = np.where(dist <= radius, cfg.spins, 1)
    return Configuration(spins)


def _profile_configuration(n: int, profile: Callable[[float], float]) -> np.ndarray:
    base = profile(0.0)
    if abs(profile(1.0) - base) > 1e-9:
        raise ValueError("プロファイル F は F(0) = F(1) を満たす必要があります")
    root = math.sqrt(n)
    spins = np.empty(n, dtype=np.int8)
    spins[0] = 1
    height = 0
    for x in range(1, n):
        target = root * (profile(x / n) - base)
        spins[x] = 1 if height < target else -1
        height += int(spins[x])
    total = int(spins.sum())
    if total:
        flip = np.flatnonzero(spins == (1 if total > 0 else -1))[::-1][: abs(total) // 2]
        spins[flip] *= -1
    return spins


def sample_initial(
    kind: str,
    n: int,
    seed: SeedLike = None,
    profile: Optional[Callable[[float], float]] = None,
) -> Configuration:
    """
    初期配置を生成する

    Args:
        kind: "stationary_zero_sum" / "flat" / "profile"
        n: トーラスサイズ (偶数)
        seed: 乱数シード
        profile: kind="profile" のときの連続関数 F

    Returns:
        ゼロ和の Configuration
    """
    if n % 2:
        raise ValueError(f"N は偶数でなければなりません: {n}")
    if kind == "stationary_zero_sum":
        rg = as_generator(seed)
        spins = np.repeat(np.array([1, -1], dtype=np.int8), n // 2)
        spins = rg.permutation(spins)
    elif kind == "flat":
        spins = np.where(np.arange(n) % 2 == 0, 1, -1)
    elif kind == "profile":
        if profile is None:
            raise ValueError("profile には関数 F が必要です")
        spins = _profile_configuration(n, profile)
    else:
        raise ValueError(f"未知の初期配置: {kind}")
    return Configuration(spins, zero_sum=True)


def apply_events(init: Configuration, events: EventLog, upto: Optional[int] = None) -> Configuration:
    """ログのイベントを順に適用した配置"""
    cfg = init
    for bond in events.bonds[:upto]:
        cfg = swap_bond(cfg, int(bond))
    return cfg


def export_trajectory(traj: Trajectory, path: Union[str, Path], fmt: str = "arrow") -> str:
    """軌道をバイナリフレーム (Arrow IPC) または CSV に書き出す"""
    from .reporter import write_trajectory_arrow, write_trajectory_csv

    if fmt == "arrow":
        return write_trajectory_arrow(traj, path)
    if fmt == "csv":
        return write_trajectory_csv(traj, path)
    raise ValueError(f"未知の形式: {fmt}")
