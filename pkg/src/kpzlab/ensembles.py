"""
グランドカノニカル測度とカノニカル測度

期待値の厳密計算とモンテカルロ推定、モデル汎関数と繰り込み定数の構成、
条件付き期待値の階層と空間平均作用素を提供する。
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from numba import njit
from numpy.polynomial import Polynomial
from scipy.stats import hypergeom

from .errors import (
    DisjointnessError,
    EmptyHyperplaneError,
    GradientConditionError,
    RatePositivityError,
    WindowCapError,
)
from .lattice import WINDOW_CAP, Configuration, LocalFunctional, solve_gradient_condition

logger = logging.getLogger(__name__)

MC_SAMPLES = 10_000
BLOCK_TOL = 1e-9


class Expectation(NamedTuple):
    """期待値の推定結果。厳密計算なら se = 0"""

    value: float
    se: float = 0.0
    exact: bool = True
    snap: float = 0.0


@dataclass(frozen=True)
class EnsembleSpec:
    """
    アンサンブルの指定

    kind は "grand_canonical" または "canonical"。canonical では窓 (a, b) 上で
    平均スピンが sigma に固定される。
    """

    kind: str
    sigma: float
    window: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        if self.kind not in ("grand_canonical", "canonical"):
            raise ValueError(f"未知のアンサンブル: {self.kind}")
        if not -1.0 <= self.sigma <= 1.0:
            raise ValueError(f"密度 σ={self.sigma} は [-1, 1] の範囲外です")
        if self.kind == "canonical":
            if self.window is None:
                raise ValueError("カノニカル測度には窓が必要です")
            width = self.width
            plus = (1.0 + self.sigma) * width / 2.0
            if abs(plus - round(plus)) > 1e-9:
                raise EmptyHyperplaneError(width, int(math.floor(plus)))

    @classmethod
    def grand_canonical(cls, sigma: float) -> "EnsembleSpec":
        return cls("grand_canonical", sigma)

    @classmethod
    def canonical(cls, sigma: float, window: Tuple[int, int]) -> "EnsembleSpec":
        return cls("canonical", sigma, (int(window[0]), int(window[1])))

    @classmethod
    def canonical_count(cls, window: Tuple[int, int], plus_count: int) -> "EnsembleSpec":
        width = window[1] - window[0] + 1
        if not 0 <= plus_count <= width:
            raise EmptyHyperplaneError(width, plus_count)
        return cls.canonical(2.0 * plus_count / width - 1.0, window)

    @property
    def width(self) -> int:
        if self.window is None:
            return 0
        return self.window[1] - self.window[0] + 1

    @property
    def plus_count(self) -> int:
        return int(round((1.0 + self.sigma) * self.width / 2.0))


class SigmaPolynomial:
    """σ ↦ E_σ f を表す多項式"""

    def __init__(self, coeffs: Sequence[float]):
        coeffs = np.trim_zeros(np.asarray(coeffs, dtype=float), "b")
        self.poly = Polynomial(coeffs if coeffs.size else [0.0])

    @property
    def coeffs(self) -> np.ndarray:
        return self.poly.coef.copy()

    @property
    def degree(self) -> int:
        return self.poly.degree()

    def coefficient(self, k: int) -> float:
        coef = self.poly.coef
        return float(coef[k]) if k < coef.size else 0.0

    def __call__(self, sigma):
        return self.poly(sigma)

    def __repr__(self) -> str:
        return f"SigmaPolynomial({list(np.round(self.poly.coef, 15))})"


@dataclass(frozen=True)
class ModelFunctionals:
    """d から構成されるモデル汎関数と繰り込み定数"""

    d: LocalFunctional
    w: LocalFunctional
    q: LocalFunctional
    qtilde: LocalFunctional
    qbar: LocalFunctional
    stilde: LocalFunctional
    s: LocalFunctional
    ell_d: int
    dbar: float
    R21: float
    R22: float
    R23: float
    d_max: float

    def renormalization(self, n: int) -> float:
        """R = R1 + R2, R1 = N/2 - 1/24, R2 = N^(1/2) R21 + R22 + R23"""
        return n / 2.0 - 1.0 / 24.0 + math.sqrt(n) * self.R21 + self.R22 + self.R23

    def R_of_N(self, n: int) -> float:
        return self.renormalization(n)

    def to_dict(self) -> Dict:
        return {
            "d": self.d.to_dict(),
            "w": self.w.to_dict(),
            "ell_d": self.ell_d,
            "dbar": self.dbar,
            "R21": self.R21,
            "R22": self.R22,
            "R23": self.R23,
            "qbar_sigma_poly": sigma_expectation_poly(self.qbar).coeffs.tolist(),
            "qtilde_sigma_poly": sigma_expectation_poly(self.qtilde).coeffs.tolist(),
        }


@dataclass(frozen=True)
class AveragingSpec:
    """空間・時間平均の指定"""

    ell_av: int = 0
    t_av: float = 0.0
    stride: Optional[int] = None
    eps_ap: float = 0.6

    def __post_init__(self):
        if self.ell_av < 0 or self.t_av < 0:
            raise ValueError("ell_av と t_av は非負でなければなりません")


# 期待値


def sigma_expectation_poly(f: LocalFunctional, cap: int = WINDOW_CAP) -> SigmaPolynomial:
    """E_σ[prod_{x in S} η_x] = σ^{|S|} による厳密な σ 多項式"""
    if f.width > cap:
        raise WindowCapError(f.width, cap)
    coeffs = np.zeros(f.degree + 1)
    for sites, c in f.monomials():
        coeffs[len(sites)] += c
    return SigmaPolynomial(coeffs)


def canonical_moment(m: int, width: int, plus_count: int) -> float:
    """
    w サイトに + が k 個のカノニカル測度で、相異なる m サイトの積の期待値

    m サイト中の + の個数 j は超幾何分布に従い、積は (-1)^{m-j}。
    """
    if m == 0:
        return 1.0
    if not 0 <= plus_count <= width:
        raise EmptyHyperplaneError(width, plus_count)
    j = np.arange(0, m + 1)
    pmf = hypergeom.pmf(j, width, plus_count, m)
    return float(np.sum(pmf * (-1.0) ** (m - j)))


@njit(cache=True, nogil=True)
def _fixed_popcount_mean(table, width, ones):
    # Gosper の方法で popcount = ones のビット列を列挙
    if ones == 0:
        return table[0]
    total = 0.0
    count = 0
    v = (np.int64(1) << ones) - 1
    limit = np.int64(1) << width
    while v < limit:
        total += table[v]
        count += 1
        c = v & -v
        r = v + c
        v = (((r ^ v) >> 2) // c) | r
    return total / count


def _canonical_enumerate(f: LocalFunctional, window: Tuple[int, int], plus_count: int, cap: int) -> float:
    width = window[1] - window[0] + 1
    if width > cap:
        raise WindowCapError(width, cap)
    table = f.to_table(window, cap=cap)
    return float(_fixed_popcount_mean(table, width, width - plus_count))


def _canonical_closed_form(f: LocalFunctional, width: int, plus_count: int) -> float:
    return sum(c * canonical_moment(len(sites), width, plus_count) for sites, c in f.monomials())


def _evaluate_rows(f: LocalFunctional, spins: np.ndarray, start: int) -> np.ndarray:
    """行ごとの窓配置 (列 i がサイト start+i) で f を評価"""
    out = np.zeros(spins.shape[0])
    for sites, c in f.monomials():
        term = np.full(spins.shape[0], c)
        for s in sites:
            term = term * spins[:, s - start]
        out += term
    return out


def sample_canonical(width: int, plus_count: int, rng: np.random.Generator, size: int) -> np.ndarray:
    """カノニカル測度からの独立標本 (size, width)"""
    ranks = np.argsort(rng.random((size, width)), axis=1)
    return np.where(ranks < plus_count, 1.0, -1.0)


def _monte_carlo(
    f: LocalFunctional, e: EnsembleSpec, window: Tuple[int, int], rng: np.random.Generator, samples: int
) -> Expectation:
    width = window[1] - window[0] + 1
    if e.kind == "canonical":
        spins = sample_canonical(width, e.plus_count, rng, samples)
    else:
        spins = np.where(rng.random((samples, width)) < (1.0 + e.sigma) / 2.0, 1.0, -1.0)
    values = _evaluate_rows(f, spins, window[0])
    return Expectation(float(values.mean()), float(values.std(ddof=1) / math.sqrt(samples)), exact=False)


def expect_estimate(
    f: LocalFunctional,
    e: EnsembleSpec,
    mode: str = "auto",
    rng: Optional[np.random.Generator] = None,
    samples: int = MC_SAMPLES,
    cap: int = WINDOW_CAP,
) -> Expectation:
    """
    期待値を計算する

    Args:
        f: 局所汎関数
        e: アンサンブル
        mode: "auto" / "exact" / "closed_form" / "monte_carlo"。
            canonical の "auto" は窓が cap 以下なら列挙、超えれば閉形式
        rng: モンテカルロ用の乱数生成器
        samples: モンテカルロの標本数
        cap: 列挙の窓幅上限

    Returns:
        Expectation
    """
    if e.kind == "grand_canonical":
        if mode == "monte_carlo":
            window = f.support or (0, 0)
            return _monte_carlo(f, e, window, rng or np.random.default_rng(), samples)
        return Expectation(float(sigma_expectation_poly(f, cap=max(cap, f.width))(e.sigma)))

    window = e.window
    sup = f.support
    if sup is not None and (sup[0] < window[0] or sup[1] > window[1]):
        raise ValueError(f"f の台 {sup} がカノニカル窓 {window} に含まれません")
    if mode == "monte_carlo":
        return _monte_carlo(f, e, window, rng or np.random.default_rng(), samples)
    if mode == "closed_form" or (mode == "auto" and e.width > cap):
        return Expectation(_canonical_closed_form(f, e.width, e.plus_count))
    return Expectation(_canonical_enumerate(f, window, e.plus_count, cap))


def expect(f: LocalFunctional, e: EnsembleSpec, **kwargs) -> float:
    return expect_estimate(f, e, **kwargs).value


def snap_plus_count(width: int, sigma: float) -> Tuple[int, float]:
    """密度 σ に最も近い実現可能な + の個数と、そのずれ (個数単位)"""
    target = (1.0 + sigma) * width / 2.0
    k = int(min(max(round(target), 0), width))
    snap = abs(k - target) if abs(target - round(target)) > 1e-9 else 0.0
    if snap:
        logger.debug("カノニカル密度 %.6g を + 個数 %d に丸めました (窓 %d)", sigma, k, width)
    return k, snap


def canonical_at_density(
    f: LocalFunctional, window: Tuple[int, int], sigma: float, mode: str = "closed_form", **kwargs
) -> Expectation:
    """実現不能な密度は最も近い + 個数に丸めてカノニカル期待値を計算"""
    width = window[1] - window[0] + 1
    k, snap = snap_plus_count(width, sigma)
    result = expect_estimate(f, EnsembleSpec.canonical_count(window, k), mode=mode, **kwargs)
    return result._replace(snap=snap)


def canonical_marginal_law(width: int, plus_count: int, sub_width: int) -> np.ndarray:
    """窓 width のカノニカル測度を先頭 sub_width サイトへ射影した分布 (列挙)"""
    if width > 16:
        raise WindowCapError(width, 16)
    masks = np.arange(1 << width)
    popcount = np.array([bin(m).count("1") for m in masks])
    chosen = masks[popcount == width - plus_count]
    sub = chosen & ((1 << sub_width) - 1)
    return np.bincount(sub, minlength=1 << sub_width) / chosen.size


# モデル汎関数


def ell_of(d: LocalFunctional) -> int:
    """supp(d) ∪ {0, 1} ⊆ [-ℓ, ℓ] となる最小の ℓ >= 1"""
    sup = d.support
    lo, hi = (0, 1) if sup is None else (min(sup[0], 0), max(sup[1], 1))
    return max(1, -lo, hi)


def build_model(d: LocalFunctional, n: Optional[int] = None, cap: int = WINDOW_CAP) -> ModelFunctionals:
    """
    d からモデル汎関数と繰り込み定数を構成する

    Args:
        d: 環境依存項 d
        n: トーラスサイズ。指定時はレートの非負性も検査する
        cap: 窓幅上限

    Returns:
        ModelFunctionals
    """
    witness, residual = solve_gradient_condition(d, cap=cap)
    if witness is None:
        raise GradientConditionError(residual)
    d_max = d.sup_norm(cap=cap)
    if n is not None:
        check_rate_positivity(n, d_max)

    ell = ell_of(d)
    eta01 = LocalFunctional.monomial([0, 1])
    q = 0.5 * d - 0.5 * (d * eta01)
    qtilde = q.shift(-2 * ell)
    poly = sigma_expectation_poly(qtilde, cap=cap)
    dbar = poly.coefficient(1)
    qbar = qtilde - poly.coefficient(0) - dbar * LocalFunctional.spin(0)
    window_sum = LocalFunctional({(-y,): 1.0 for y in range(2 * ell)})
    stilde = -(qtilde * window_sum)
    e0_stilde = sigma_expectation_poly(stilde, cap=cap).coefficient(0)
    s = stilde - e0_stilde

    model = ModelFunctionals(
        d=d,
        w=witness,
        q=q,
        qtilde=qtilde,
        qbar=qbar,
        stilde=stilde,
        s=s,
        ell_d=ell,
        dbar=dbar,
        R21=-sigma_expectation_poly(q, cap=cap).coefficient(0),
        R22=dbar / 2.0,
        R23=e0_stilde,
        d_max=d_max,
    )
    logger.debug("モデル構成: ℓ=%d d̄=%.6g R21=%.6g R23=%.6g", ell, dbar, model.R21, model.R23)
    return model


def check_rate_positivity(n: int, d_max: float) -> None:
    """N^(1/2) >= 1 + N^(-1/2) max|d| でなければ RatePositivityError"""
    root = math.sqrt(n)
    if root < 1.0 + d_max / root:
        raise RatePositivityError(n, d_max)


# 局所密度と条件付き期待値の階層


def block_length(n: int, delta: float) -> int:
    """⌈N^δ⌉。浮動小数の誤差で整数を跨がないよう許容幅をとる"""
    return max(1, int(math.ceil(n**delta - BLOCK_TOL)))


def local_density(cfg: Configuration, delta: float, y: int, length: Optional[int] = None) -> float:
    """A^X_{δ,y} = (L+1)^{-1} sum_{0<=w<=L} η_{y-w}, L = ⌈N^δ⌉"""
    L = block_length(cfg.n, delta) if length is None else int(length)
    idx = (y - np.arange(L + 1)) % cfg.n
    return float(cfg.spins[idx].sum(dtype=np.int64)) / (L + 1)


def local_density_all(spins: np.ndarray, length: int) -> np.ndarray:
    """全サイト y の A^X を一括計算 (最終軸がサイト)"""
    spins = np.asarray(spins, dtype=float)
    total = np.zeros(spins.shape)
    for w in range(length + 1):
        total += np.roll(spins, w, axis=-1)
    return total / (length + 1)


def _block_plus_count(cfg: Configuration, y: int, length: int) -> int:
    idx = (y - np.arange(length + 1)) % cfg.n
    return int(np.count_nonzero(cfg.spins[idx] > 0))


def _check_block(model: ModelFunctionals, length: int) -> None:
    sup = model.qbar.support
    if sup is not None and sup[0] < -length:
        raise ValueError(f"ブロック長 {length} は q̄ の台 {sup} を含みません")


def canonical_block_expectation(
    model: ModelFunctionals, cfg: Configuration, y: int, length: int, mode: str = "closed_form", **kwargs
) -> Expectation:
    """ブロック y-L..y の観測 + 個数で条件付けた q̄ のカノニカル期待値"""
    _check_block(model, length)
    plus = _block_plus_count(cfg, y, length)
    spec = EnsembleSpec.canonical_count((-length, 0), plus)
    return expect_estimate(model.qbar, spec, mode=mode, **kwargs)


def scale_expectation(
    kind: str,
    model: ModelFunctionals,
    cfg: Configuration,
    y: int,
    delta: float,
    eps: float = 0.0,
    mode: str = "closed_form",
    **kwargs,
) -> float:
    """
    スケール δ の条件付き期待値の階層

    Args:
        kind: "can" (E^can_δ), "gc" (E^gc_δ), "S" (S_δ), "R" (R_δ)
        model: モデル汎関数
        cfg: 配置
        y: サイト
        delta: スケール指数 δ
        eps: R_δ のスケール幅 ε
        mode: カノニカル期待値の計算方法

    Returns:
        値
    """
    L = block_length(cfg.n, delta)
    if kind == "can":
        return canonical_block_expectation(model, cfg, y, L, mode=mode, **kwargs).value
    if kind == "gc":
        _check_block(model, L)
        return float(sigma_expectation_poly(model.qbar)(local_density(cfg, delta, y)))
    if kind == "S":
        return model.qbar.evaluate(cfg, y) - scale_expectation("can", model, cfg, y, delta, mode=mode, **kwargs)
    if kind == "R":
        upper = scale_expectation("can", model, cfg, y, delta + eps, mode=mode, **kwargs)
        return scale_expectation("can", model, cfg, y, delta, mode=mode, **kwargs) - upper
    raise ValueError(f"未知の種類: {kind}")


# 空間平均


def _stride_for(f: LocalFunctional, spec: AveragingSpec) -> int:
    width = max(f.width, 1)
    stride = width if spec.stride is None else int(spec.stride)
    if stride < width:
        raise DisjointnessError(stride, width)
    return stride


def spatial_average_parts(
    f: LocalFunctional, cfg: Configuration, y: int, spec: AveragingSpec
) -> Tuple[float, float, float]:
    """(𝔦^X, Ī^X, Ĩ^X) を返す"""
    stride = _stride_for(f, spec)
    if spec.ell_av <= 1:
        value = f.evaluate(cfg, y)
    else:
        sites = [y - stride * w for w in range(1, spec.ell_av + 1)]
        value = float(np.mean([f.evaluate(cfg, x) for x in sites]))
    threshold = cfg.n**spec.eps_ap * max(spec.ell_av, 1) ** -0.5 * f.sup_norm()
    kept = value if abs(value) <= threshold else 0.0
    return value, kept, value - kept


def spatial_average(
    f: LocalFunctional, cfg: Configuration, y: int, spec: AveragingSpec, cutoff: bool = False
) -> float:
    """𝔦^X_{ℓ_av}(f_{·,y})。cutoff=True なら Ī^X"""
    value, kept, _ = spatial_average_parts(f, cfg, y, spec)
    return kept if cutoff else value


# 時空平均


def piecewise_integral(times: np.ndarray, values: np.ndarray, start: float, stop: float) -> np.ndarray:
    """
    区分定数 (時刻 times[k] の値を次の時刻まで保持) の時間積分

    values の先頭軸が時間。stop は記録範囲に収まっていること。
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    ends = np.append(times[1:], np.inf)
    lengths = np.clip(np.minimum(ends, stop) - np.maximum(times, start), 0.0, None)
    return np.tensordot(lengths, values, axes=(0, 0))


def space_time_mean(values: np.ndarray, times: np.ndarray, t: float) -> float:
    """I_t = t^{-1} ∫_0^t N^{-1} sum_x values dS"""
    if t <= 0:
        return float(np.mean(values[0]))
    per_time = np.asarray(values, dtype=float).mean(axis=-1)
    return float(piecewise_integral(times, per_time, 0.0, t)) / t


def kipnis_varadhan_statistic(
    snapshots: np.ndarray,
    times: np.ndarray,
    f: LocalFunctional,
    t: float,
    ell: int,
    y: int = 0,
    stride: Optional[int] = None,
) -> float:
    """定常軌道に沿った 𝔦^T_t 𝔦^X_ℓ(f) のサイト y での値"""
    stride = _stride_for(f, AveragingSpec(ell_av=ell, stride=stride))
    values = f.evaluate_all(np.asarray(snapshots))
    if ell <= 1:
        series = values[:, y % values.shape[1]]
    else:
        sites = (y - stride * np.arange(1, ell + 1)) % values.shape[1]
        series = values[:, sites].mean(axis=1)
    if t <= 0:
        return float(series[0])
    return float(piecewise_integral(times, series, 0.0, t)) / t
