"""
確率熱方程式 SHE(d̄) の数値解法

単位トーラス T^1 上の ∂_T Z = ½ΔZ - d̄∇Z + Zξ を、半群（スペクトル）による
マイルド形式の陽的オイラー・丸山法で解き、コール・ホップ変換を与える。
複数レプリカを (レプリカ, セル) 配列としてまとめて進める。
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .dynamics import SeedLike, as_generator
from .errors import PositivityError, StabilityError

logger = logging.getLogger(__name__)

STABILITY_CONST = 0.4
MAX_HALVINGS = 8


@dataclass(frozen=True)
class SheGrid:
    """
    SHE ソルバーの格子

    Attributes:
        m: T^1 の空間セル数 M
        dt: 時間刻み δt
        t_end: 終端時刻
        seed: 乱数シード
        stability: 安定性定数 c（δt <= c M^{-2}）
    """

    m: int
    dt: float
    t_end: float = 0.5
    seed: SeedLike = 0
    stability: float = STABILITY_CONST

    def __post_init__(self):
        if self.m < 2:
            raise ValueError(f"セル数は 2 以上が必要です: {self.m}")
        limit = self.stability / self.m**2
        if self.dt <= 0 or self.dt > limit * (1 + 1e-12):
            raise StabilityError(self.dt, limit)

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.m) / self.m

    def refined(self) -> "SheGrid":
        """(2M, δt/4) の細かい格子"""
        return SheGrid(2 * self.m, self.dt / 4, self.t_end, self.seed, self.stability)


@dataclass
class SheField:
    """
    SHE の解のサンプル Z_{t,x} > 0

    Attributes:
        grid: 格子
        dbar: ドリフト係数 d̄
        times: 記録時刻
        values: (記録時刻, レプリカ, セル) の配列
        halvings: 正値性のために分割したステップ数
    """

    grid: SheGrid
    dbar: float
    times: np.ndarray
    values: np.ndarray
    halvings: int = 0

    @property
    def final(self) -> np.ndarray:
        """終端時刻の (レプリカ, セル)"""
        return self.values[-1]

    def at(self, x: float = 0.0) -> np.ndarray:
        """終端時刻、点 x を含むセルでの全レプリカの値"""
        cell = int(math.floor(x * self.grid.m)) % self.grid.m
        return self.final[:, cell]


def drift_symbol(m: int, dbar: float) -> np.ndarray:
    """½Δ - d̄∇ の T^1 上のフーリエ表象 -½(2πk)² - i d̄ 2πk"""
    k = np.fft.fftfreq(m, d=1.0 / m)
    w = 2 * np.pi * k
    return -0.5 * w**2 - 1j * dbar * w


def semigroup(z: np.ndarray, symbol: np.ndarray, dt: float) -> np.ndarray:
    """P_{δt} z（最終軸がセル）"""
    return np.fft.ifft(np.exp(dt * symbol) * np.fft.fft(z, axis=-1), axis=-1).real


def brownian_bridge_halving(
    z: np.ndarray,
    dw: np.ndarray,
    dt: float,
    m: int,
    symbol: np.ndarray,
    rng: np.random.Generator,
    depth: int = 0,
) -> Tuple[np.ndarray, int]:
    """
    1 ステップを Z > 0 を保って進める

    Z が非正になる場合、増分 ΔW を条件付けたブラウン橋から
    ΔW_1 = ΔW/2 + √(δt M / 4) ξ, ΔW_2 = ΔW - ΔW_1 を引いて半ステップ 2 回に分ける。

    Returns:
        (次の Z, 行った分割の回数)
    """
    nxt = semigroup(z, symbol, dt) + z * dw
    if np.all(nxt > 0):
        return nxt, 0
    if depth >= MAX_HALVINGS:
        raise PositivityError(f"{MAX_HALVINGS} 回の分割後も Z の正値性を保てません（δt={dt:.3e}）")
    half = dt / 2
    dw1 = dw / 2 + math.sqrt(half * m / 2) * rng.standard_normal(dw.shape)
    dw2 = dw - dw1
    mid, first = brownian_bridge_halving(z, dw1, half, m, symbol, rng, depth + 1)
    end, second = brownian_bridge_halving(mid, dw2, half, m, symbol, rng, depth + 1)
    return end, 1 + first + second


def _initial(init: Callable[[np.ndarray], np.ndarray], grid: SheGrid, replicas: int) -> np.ndarray:
    z0 = np.broadcast_to(np.asarray(init(grid.points), dtype=float), (replicas, grid.m)).copy()
    if np.any(z0 <= 0):
        raise ValueError("初期値は正である必要があります")
    return z0


def _record_every(grid: SheGrid, records: int) -> int:
    return max(1, grid.steps // max(records, 1))


def solve_she(
    dbar: float,
    init: Callable[[np.ndarray], np.ndarray],
    grid: SheGrid,
    replicas: int = 1,
    noise: bool = True,
    records: int = 1,
    seed: Optional[SeedLike] = None,
) -> SheField:
    """
    SHE(d̄) をマイルド形式で解く

    Z_{t+δt} = P_{δt} Z_t + Z_t ΔW、ΔW はセルごと独立な分散 δt M の中心化ガウス。

    Args:
        dbar: ドリフト係数 d̄
        init: T^1 上の正値初期関数
        grid: 格子
        replicas: 同時に進めるレプリカ数
        noise: False ならノイズなしの熱流
        records: 終端以外に記録する時刻の数の目安
        seed: grid.seed を上書きするシード

    Returns:
        SheField
    """
    rng = as_generator(grid.seed if seed is None else seed)
    symbol = drift_symbol(grid.m, dbar)
    z = _initial(init, grid, replicas)
    every = _record_every(grid, records)
    times = [0.0]
    snapshots = [z.copy()]
    halvings = 0
    scale = math.sqrt(grid.dt * grid.m)
    for step in range(1, grid.steps + 1):
        if noise:
            dw = scale * rng.standard_normal(z.shape)
            z, split = brownian_bridge_halving(z, dw, grid.dt, grid.m, symbol, rng)
            halvings += split
        else:
            z = semigroup(z, symbol, grid.dt)
        if step % every == 0 or step == grid.steps:
            times.append(step * grid.dt)
            snapshots.append(z.copy())
    if halvings:
        logger.debug("正値性のためにステップを %d 回分割しました", halvings)
    return SheField(grid, dbar, np.array(times), np.stack(snapshots), halvings)


def solve_she_pair(
    dbar: float,
    init: Callable[[np.ndarray], np.ndarray],
    grid: SheGrid,
    replicas: int = 1,
    seed: Optional[SeedLike] = None,
) -> Tuple[SheField, SheField]:
    """
    (M, δt) と (2M, δt/4) を同じノイズで解く

    粗いノイズは細かいノイズを隣接 2 セルで平均し、4 サブステップ分を合計して作る。
    """
    fine_grid = grid.refined()
    rng = as_generator(grid.seed if seed is None else seed)
    coarse_symbol = drift_symbol(grid.m, dbar)
    fine_symbol = drift_symbol(fine_grid.m, dbar)
    coarse = _initial(init, grid, replicas)
    fine = _initial(init, fine_grid, replicas)
    fine_scale = math.sqrt(fine_grid.dt * fine_grid.m)
    halvings = [0, 0]
    for _ in range(grid.steps):
        total = np.zeros((replicas, fine_grid.m))
        for _ in range(4):
            dw = fine_scale * rng.standard_normal(fine.shape)
            total += dw
            fine, split = brownian_bridge_halving(fine, dw, fine_grid.dt, fine_grid.m, fine_symbol, rng)
            halvings[1] += split
        coarse_dw = 0.5 * total.reshape(replicas, grid.m, 2).sum(axis=-1)
        coarse, split = brownian_bridge_halving(coarse, coarse_dw, grid.dt, grid.m, coarse_symbol, rng)
        halvings[0] += split
    t = np.array([0.0, grid.steps * grid.dt])
    coarse_init = _initial(init, grid, replicas)
    fine_init = _initial(init, fine_grid, replicas)
    return (
        SheField(grid, dbar, t, np.stack([coarse_init, coarse]), halvings[0]),
        SheField(fine_grid, dbar, t, np.stack([fine_init, fine]), halvings[1]),
    )


def cole_hopf(z) -> np.ndarray:
    """h = -log Z"""
    values = z.values if isinstance(z, SheField) else np.asarray(z, dtype=float)
    if np.any(values <= 0):
        raise PositivityError("コール・ホップ変換には正の Z が必要です")
    return -np.log(values)
