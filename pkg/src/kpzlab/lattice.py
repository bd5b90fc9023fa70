"""
トーラス上の格子構造

スピン配置、多重線形多項式としての局所汎関数、離散差分作用素、
および勾配条件の求解を提供する。
"""

import json
import logging
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import WindowCapError

logger = logging.getLogger(__name__)

WINDOW_CAP = 22
COEF_TOL = 1e-14
GRADIENT_TOL = 1e-10

GRAD_KINDS = ("nabla", "laplacian", "laplacian_scaled", "nabla_scaled")

Monomial = FrozenSet[int]


@dataclass(frozen=True, eq=False)
class Configuration:
    """トーラス T_n 上のスピン配置 (各サイト +1 または -1)"""

    spins: np.ndarray
    zero_sum: bool = False

    def __post_init__(self):
        spins = np.array(self.spins, dtype=np.int8).reshape(-1)
        if spins.size == 0:
            raise ValueError("空の配置は作れません")
        if not np.all(np.abs(spins) == 1):
            raise ValueError("スピンは +1 か -1 でなければなりません")
        if self.zero_sum:
            if spins.size % 2:
                raise ValueError(f"ゼロ和配置には偶数のサイト数が必要です: n={spins.size}")
            if int(spins.sum()) != 0:
                raise ValueError(f"スピンの総和が 0 ではありません: {int(spins.sum())}")
        spins.flags.writeable = False
        object.__setattr__(self, "spins", spins)

    @property
    def n(self) -> int:
        return int(self.spins.size)

    @property
    def spin_sum(self) -> int:
        return int(self.spins.sum(dtype=np.int64))

    def __getitem__(self, x: int) -> int:
        return int(self.spins[x % self.n])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return np.array_equal(self.spins, other.spins)

    def __hash__(self) -> int:
        return hash(self.spins.tobytes())

    def __repr__(self) -> str:
        text = "".join("+" if s > 0 else "-" for s in self.spins[:64])
        return f"Configuration(n={self.n}, {text}{'...' if self.n > 64 else ''})"


@dataclass(frozen=True, eq=False)
class SiteField:
    """T_n 上の実数値場"""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return int(self.values.size)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


def _fwht(values: np.ndarray) -> np.ndarray:
    """高速ウォルシュ・アダマール変換 (正規化なし)"""
    a = np.array(values, dtype=float).reshape(-1)
    size = a.size
    if size & (size - 1):
        raise ValueError(f"長さが 2 の冪ではありません: {size}")
    h = 1
    while h < size:
        a = a.reshape(-1, 2, h)
        a = np.stack((a[:, 0, :] + a[:, 1, :], a[:, 0, :] - a[:, 1, :]), axis=1).reshape(-1)
        h *= 2
    return a


def _clean(coeffs: Mapping[Monomial, float]) -> Dict[Monomial, float]:
    return {frozenset(s): float(c) for s, c in coeffs.items() if abs(c) > COEF_TOL}


class LocalFunctional:
    """
    有限台を持つ局所汎関数

    η_x^2 = 1 を用いて、窓内スピンの多重線形多項式
    sum_S c_S prod_{x in S} η_x として保持する。台は常に最小。
    """

    __slots__ = ("_coeffs",)

    def __init__(self, coeffs: Optional[Mapping[Iterable[int], float]] = None):
        merged: Dict[Monomial, float] = {}
        for sites, c in (coeffs or {}).items():
            key = frozenset(int(s) for s in sites)
            merged[key] = merged.get(key, 0.0) + float(c)
        self._coeffs = _clean(merged)

    @classmethod
    def constant(cls, c: float) -> "LocalFunctional":
        return cls({frozenset(): c})

    @classmethod
    def monomial(cls, sites: Iterable[int], c: float = 1.0) -> "LocalFunctional":
        """単項式 c * prod η_x (同じサイトの重複は η^2 = 1 で約分)"""
        reduced: set = set()
        for s in sites:
            reduced ^= {int(s)}
        return cls({frozenset(reduced): c})

    @classmethod
    def spin(cls, x: int) -> "LocalFunctional":
        return cls.monomial([x])

    @property
    def coeffs(self) -> Dict[Monomial, float]:
        return dict(self._coeffs)

    @property
    def support(self) -> Optional[Tuple[int, int]]:
        """最小の台 (a, b)。定数関数なら None"""
        sites = [s for mono in self._coeffs for s in mono]
        if not sites:
            return None
        return min(sites), max(sites)

    @property
    def width(self) -> int:
        sup = self.support
        return 0 if sup is None else sup[1] - sup[0] + 1

    @property
    def degree(self) -> int:
        return max((len(m) for m in self._coeffs), default=0)

    @property
    def constant_term(self) -> float:
        return self._coeffs.get(frozenset(), 0.0)

    def is_zero(self, tol: float = COEF_TOL) -> bool:
        return all(abs(c) <= tol for c in self._coeffs.values())

    def monomials(self) -> List[Tuple[Tuple[int, ...], float]]:
        """(ソート済みサイト, 係数) のリスト。順序は決定的"""
        items = [(tuple(sorted(m)), c) for m, c in self._coeffs.items()]
        return sorted(items, key=lambda item: (len(item[0]), item[0]))

    # 評価

    def evaluate(self, cfg: Configuration, x: int = 0) -> float:
        """サイト x に再中心化した値 f(τ_x η) を返す"""
        spins = cfg.spins
        n = cfg.n
        total = 0.0
        for sites, c in self._coeffs.items():
            prod = 1
            for s in sites:
                prod *= int(spins[(x + s) % n])
            total += c * prod
        return total

    def evaluate_all(self, cfg: Union[Configuration, np.ndarray]) -> np.ndarray:
        """全サイト x について f(τ_x η) をまとめて評価"""
        spins = cfg.spins if isinstance(cfg, Configuration) else np.asarray(cfg)
        spins = spins.astype(float)
        out = np.zeros(spins.shape, dtype=float)
        for sites, c in self._coeffs.items():
            term = np.full(spins.shape, c)
            for s in sites:
                term = term * np.roll(spins, -s, axis=-1)
            out += term
        return out

    def to_table(self, window: Optional[Tuple[int, int]] = None, cap: int = WINDOW_CAP) -> np.ndarray:
        """
        窓上の全 2^w 配置での値表

        インデックスのビット i がサイト a+i に対応し、ビット 1 はスピン -1 を表す。

        Args:
            window: 窓 (a, b)。省略時は最小の台
            cap: 窓幅の上限

        Returns:
            長さ 2^w の値表
        """
        a, b = self._window_or_support(window)
        width = b - a + 1
        if width > cap:
            raise WindowCapError(width, cap)
        vec = np.zeros(1 << width)
        for sites, c in self._coeffs.items():
            mask = 0
            for s in sites:
                if not a <= s <= b:
                    raise ValueError(f"台が窓 [{a}, {b}] に収まりません")
                mask |= 1 << (s - a)
            vec[mask] += c
        return _fwht(vec)

    @classmethod
    def from_table(cls, table: Sequence[float], start: int = 0) -> "LocalFunctional":
        """値表から多重線形係数を復元 (to_table の逆変換)"""
        table = np.asarray(table, dtype=float)
        width = int(table.size).bit_length() - 1
        coeffs = _fwht(table) / table.size
        result: Dict[Monomial, float] = {}
        for mask in np.flatnonzero(np.abs(coeffs) > COEF_TOL):
            sites = frozenset(start + i for i in range(width) if (int(mask) >> i) & 1)
            result[sites] = float(coeffs[mask])
        return cls(result)

    def _window_or_support(self, window: Optional[Tuple[int, int]]) -> Tuple[int, int]:
        if window is not None:
            return int(window[0]), int(window[1])
        return self.support or (0, 0)

    def sup_norm(self, cap: int = WINDOW_CAP) -> float:
        """‖f‖_∞。窓が上限を超えるときは係数の絶対値和で上から抑える"""
        if self.width <= cap:
            return float(np.max(np.abs(self.to_table(cap=cap))))
        return float(sum(abs(c) for c in self._coeffs.values()))

    # 代数

    def shift(self, k: int) -> "LocalFunctional":
        """f∘τ_k。単項式 S を S+k に移す"""
        return LocalFunctional({frozenset(s + k for s in m): c for m, c in self._coeffs.items()})

    def recentre(self, x: int) -> "LocalFunctional":
        return self.shift(x)

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = LocalFunctional.constant(other)
        if not isinstance(other, LocalFunctional):
            return NotImplemented
        merged = dict(self._coeffs)
        for m, c in other._coeffs.items():
            merged[m] = merged.get(m, 0.0) + c
        return LocalFunctional(merged)

    __radd__ = __add__

    def __neg__(self):
        return LocalFunctional({m: -c for m, c in self._coeffs.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return LocalFunctional({m: c * float(other) for m, c in self._coeffs.items()})
        if not isinstance(other, LocalFunctional):
            return NotImplemented
        product: Dict[Monomial, float] = {}
        for m1, c1 in self._coeffs.items():
            for m2, c2 in other._coeffs.items():
                key = m1 ^ m2
                product[key] = product.get(key, 0.0) + c1 * c2
        return LocalFunctional(product)

    __rmul__ = __mul__

    def almost_equal(self, other: "LocalFunctional", tol: float = 1e-12) -> bool:
        return (self - other).is_zero(tol)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LocalFunctional):
            return NotImplemented
        return self.almost_equal(other, COEF_TOL)

    def __hash__(self):
        return hash(tuple(self.monomials()))

    def __repr__(self) -> str:
        terms = [f"{c:+.6g}" + "".join(f"η[{s}]" for s in sites) for sites, c in self.monomials()]
        return "LocalFunctional(" + (" ".join(terms) or "0") + ")"

    # 入出力

    def to_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """numba カーネル用の CSR 形式 (offsets, sites, coefs)"""
        monos = self.monomials()
        offsets = np.zeros(len(monos) + 1, dtype=np.int64)
        sites: List[int] = []
        coefs = np.zeros(len(monos), dtype=np.float64)
        for i, (m, c) in enumerate(monos):
            sites.extend(m)
            offsets[i + 1] = len(sites)
            coefs[i] = c
        return offsets, np.asarray(sites, dtype=np.int64), coefs

    def to_dict(self) -> Dict:
        a, b = self.support or (0, 0)
        return {
            "support": [a, b],
            "coeffs": [{"sites": list(m), "c": c} for m, c in self.monomials()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: Mapping) -> "LocalFunctional":
        functional = cls({tuple(item["sites"]): item["c"] for item in data.get("coeffs", [])})
        declared = data.get("support")
        sup = functional.support
        if declared is not None and sup is not None:
            if sup[0] < declared[0] or sup[1] > declared[1]:
                raise ValueError(f"係数のサイトが宣言された台 {declared} の外にあります")
        return functional

    @classmethod
    def from_json(cls, text: str) -> "LocalFunctional":
        return cls.from_dict(json.loads(text))


# 配置に対する操作


def swap_bond(cfg: Configuration, x: int) -> Configuration:
    """ボンド (x, x+1) のスピンを入れ替えた η^{x,x+1}"""
    n = cfg.n
    if not 0 <= x < n:
        raise ValueError(f"サイト {x} は 0..{n - 1} の範囲外です")
    spins = cfg.spins.copy()
    y = (x + 1) % n
    spins[x], spins[y] = spins[y], spins[x]
    return Configuration(spins, zero_sum=cfg.zero_sum)


def shift(cfg: Configuration, k: int) -> Configuration:
    """(τ_k η)_z = η_{z+k}"""
    return Configuration(np.roll(cfg.spins, -k), zero_sum=cfg.zero_sum)


def grad_field(kind: str, phi: Union[SiteField, np.ndarray], ell: int = 1) -> SiteField:
    """
    離散差分作用素

    Args:
        kind: "nabla" (∇^X_ℓ), "laplacian" (Δ), "laplacian_scaled" (N^2 Δ),
            "nabla_scaled" (N ∇^X_ℓ)
        phi: 場
        ell: 差分の幅 ℓ

    Returns:
        差分を適用した場
    """
    values = phi.values if isinstance(phi, SiteField) else np.asarray(phi, dtype=float)
    n = values.size
    if n < 2:
        raise ValueError("n >= 2 が必要です")
    if kind == "nabla":
        out = np.roll(values, -ell) - values
    elif kind == "nabla_scaled":
        out = n * (np.roll(values, -ell) - values)
    elif kind == "laplacian":
        out = np.roll(values, -1) + np.roll(values, 1) - 2.0 * values
    elif kind == "laplacian_scaled":
        out = n**2 * (np.roll(values, -1) + np.roll(values, 1) - 2.0 * values)
    else:
        raise ValueError(f"未知の差分の種類: {kind}（{', '.join(GRAD_KINDS)} のいずれか）")
    return SiteField(out)


# 勾配条件


def _gradient_window(d: LocalFunctional) -> Tuple[int, int]:
    sup = d.support
    a, b = (0, 1) if sup is None else (min(sup[0], 0), max(sup[1] + 1, 1))
    return a, b


def _solve_orbits(g: LocalFunctional, a: int, b: int) -> Tuple[Dict[Monomial, float], float]:
    """窓 [a, b] 上で w_{S-1} - w_S = g_S を平行移動の軌道ごとに最小二乗で解く"""
    residual = abs(g.constant_term)
    shapes: Dict[Tuple[int, ...], Dict[int, float]] = {}
    for mono, c in g.coeffs.items():
        if not mono:
            continue
        lo = min(mono)
        shape = tuple(sorted(s - lo for s in mono))
        shapes.setdefault(shape, {})[lo] = c

    solution: Dict[Monomial, float] = {}
    for shape, rhs_by_pos in shapes.items():
        top = b - shape[-1]
        cols = list(range(a, top + 1))
        rows = list(range(a, top + 2))
        outside = [k for k in rhs_by_pos if k < a or k > top + 1]
        if outside or not cols:
            residual = max(residual, max(abs(rhs_by_pos[k]) for k in (outside or rhs_by_pos)))
            continue
        matrix = np.zeros((len(rows), len(cols)))
        for i, k in enumerate(rows):
            if k - 1 >= a:
                matrix[i, k - 1 - a] = 1.0
            if k <= top:
                matrix[i, k - a] = -1.0
        rhs = np.array([rhs_by_pos.get(k, 0.0) for k in rows])
        x, *_ = np.linalg.lstsq(matrix, rhs, rcond=None)
        residual = max(residual, float(np.max(np.abs(matrix @ x - rhs))))
        for k, value in zip(cols, x):
            if abs(value) > COEF_TOL:
                solution[frozenset(s + k for s in shape)] = float(value)
    return solution, residual


def solve_gradient_condition(
    d: LocalFunctional, cap: int = WINDOW_CAP, tol: float = GRADIENT_TOL
) -> Tuple[Optional[LocalFunctional], float]:
    """
    勾配条件 d(η)(η_1 - η_0) = w(τ_1 η) - w(η) を解く

    Returns:
        (w または None, 最小の最大残差)
    """
    a, b = _gradient_window(d)
    if b - a + 1 > cap:
        raise WindowCapError(b - a + 1, cap)
    g = d * (LocalFunctional.spin(1) - LocalFunctional.spin(0))

    best = np.inf
    while b - a + 1 <= cap:
        coeffs, residual = _solve_orbits(g, a, b)
        best = min(best, residual)
        if residual <= tol:
            witness = LocalFunctional(coeffs)
            check = verify_gradient_witness(d, witness, cap=cap + 1)
            if check <= tol:
                return witness, check
            best = min(best, check)
        if abs(g.constant_term) > tol:
            break
        logger.debug("勾配条件: 窓 [%d, %d] で残差 %.3e、窓を拡大します", a, b, residual)
        a, b = a - 1, b + 1
    return None, float(best)


def verify_gradient_witness(d: LocalFunctional, w: LocalFunctional, cap: int = WINDOW_CAP + 1) -> float:
    """結合窓の全配置で恒等式を確かめ、最大残差を返す"""
    g = d * (LocalFunctional.spin(1) - LocalFunctional.spin(0))
    diff = w.shift(1) - w - g
    if diff.support is None:
        return abs(diff.constant_term)
    supports = [f.support for f in (d, w, w.shift(1), g) if f.support is not None]
    window = (min(s[0] for s in supports), max(s[1] for s in supports))
    return float(np.max(np.abs(diff.to_table(window, cap=cap))))


def check_gradient_condition(d: LocalFunctional, cap: int = WINDOW_CAP) -> Optional[LocalFunctional]:
    """勾配条件の証拠 w を返す。存在しなければ None"""
    witness, residual = solve_gradient_condition(d, cap=cap)
    if witness is None:
        logger.info("勾配条件を満たす w は見つかりませんでした（残差 %.3e）", residual)
    return witness
