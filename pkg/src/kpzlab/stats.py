"""
統計処理

べき則の当てはめ、標準誤差、ウィルソン区間、2 標本 KS 距離。
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class PowerLawFit:
    """
    log y = log C + α log x の当てはめ結果

    Attributes:
        exponent: 指数 α
        intercept: log C
        ci: α の信頼区間 (下限, 上限)
        stderr: α の標準誤差
        n: スケール数
        weighted: 標準誤差による重み付きか
    """

    exponent: float
    intercept: float
    ci: Tuple[float, float]
    stderr: float
    n: int
    weighted: bool

    @property
    def excludes_zero(self) -> bool:
        return self.ci[1] < 0 or self.ci[0] > 0

    def as_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "intercept": self.intercept,
            "ci_low": self.ci[0],
            "ci_high": self.ci[1],
            "stderr": self.stderr,
            "n": self.n,
            "weighted": self.weighted,
        }


def fit_power_law(
    scales: Sequence[float],
    values: Sequence[float],
    se: Optional[Sequence[float]] = None,
    level: float = 0.95,
) -> PowerLawFit:
    """
    両対数の最小二乗でべき指数を求める

    標準誤差が与えられれば log y の分散 (se/y)^2 の逆数で重み付けする。
    標準誤差が欠けているか 0 を含む場合は通常の最小二乗にする。

    Args:
        scales: スケール（正）
        values: 値（正）
        se: 値の標準誤差
        level: 信頼水準

    Returns:
        PowerLawFit
    """
    x = np.asarray(scales, dtype=float)
    y = np.asarray(values, dtype=float)
    if x.size != y.size:
        raise ValueError("スケールと値の長さが一致しません")
    if x.size < 3:
        raise ValueError(f"スケールは 3 個以上必要です: {x.size}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("べき則の当てはめには正の値が必要です")
    weighted = se is not None and np.all(np.asarray(se, dtype=float) > 0)
    weights = (y / np.asarray(se, dtype=float)) ** 2 if weighted else np.ones_like(y)
    design = np.column_stack([np.ones_like(x), np.log(x)])
    target = np.log(y)
    normal = design.T @ (weights[:, None] * design)
    beta = np.linalg.solve(normal, design.T @ (weights * target))
    residual = target - design @ beta
    dof = x.size - 2
    sigma2 = float(np.sum(weights * residual**2)) / dof
    cov = sigma2 * np.linalg.inv(normal)
    stderr = math.sqrt(max(cov[1, 1], 0.0))
    half = float(stats.t.ppf(0.5 + level / 2, dof)) * stderr
    slope = float(beta[1])
    return PowerLawFit(slope, float(beta[0]), (slope - half, slope + half), stderr, int(x.size), bool(weighted))


def mean_se(samples: Sequence[float]) -> Tuple[float, float]:
    """標本平均とその標準誤差"""
    data = np.asarray(samples, dtype=float)
    if data.size < 2:
        return float(np.mean(data)), 0.0
    return float(np.mean(data)), float(stats.sem(data))


def wilson_interval(successes: int, trials: int, level: float = 0.95) -> Tuple[float, float]:
    """二項比率のウィルソン区間"""
    if trials <= 0:
        raise ValueError("試行回数は正でなければなりません")
    ci = stats.binomtest(int(successes), int(trials)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def ks_distance(a: Sequence[float], b: Sequence[float]) -> Tuple[float, float]:
    """2 標本コルモゴロフ・スミルノフ距離と p 値"""
    result = stats.ks_2samp(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return float(result.statistic), float(result.pvalue)


def within_se(value: float, expected: float, se: float, k: float = 4.0) -> bool:
    """|value - expected| <= k SE。SE が 0 なら厳密一致を要求する"""
    if se <= 0:
        return math.isclose(value, expected, rel_tol=0, abs_tol=1e-12)
    return abs(value - expected) <= k * se
