"""
厳密な恒等式の検査

統計的な要素を持たない検査（勾配条件、モデル定数、密度と log Z の恒等式、
ジャンプの乗法性、生成作用素の総当たり比較、熱核の恒等式）と、
微視的 SHE の残差のスケーリング (E2) を行う。
"""

import logging
import math
from typing import Callable, Dict, List

import numpy as np

from ..dynamics import SimParams, sample_initial, simulate
from ..ensembles import EnsembleSpec, canonical_moment, expect_estimate, sigma_expectation_poly
from ..errors import GradientConditionError
from ..heat import kernel_property_suite
from ..lattice import LocalFunctional, check_gradient_condition, verify_gradient_witness
from ..observables import (
    c1_norm,
    density_identity_residuals,
    drift_remainder,
    gartner_field,
    generator_action,
    generator_action_bruteforce,
    height_flux_consistency,
    jump_replay_check,
)
from ..parallel import replica_seeds
from ..reader import ExperimentConfig
from .base import BaseChecker, row

logger = logging.getLogger(__name__)

EXACT_TOL = 1e-12
WITNESS_TOL = 1e-10

# (d̄, R21, R23) の列挙による参照値
MODEL_ORACLES: Dict[str, Callable[[LocalFunctional], tuple]] = {
    "constant": lambda d: (0.0, -d.constant_term / 2.0, 0.0),
    "two_site": lambda d: (d.coeffs[frozenset({-1})], 0.0, -d.coeffs[frozenset({-1})] / 2.0),
}

TEST_FUNCTIONS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sin": lambda u: np.sin(2 * np.pi * u),
    "cos2": lambda u: np.cos(4 * np.pi * u),
    "bump": lambda u: np.exp(np.cos(2 * np.pi * u)),
}


class ExactChecker(BaseChecker):
    """厳密な恒等式と E2 を検査するクラス"""

    family = "exact"

    def exact_suite(self, cfg: ExperimentConfig) -> List[Dict]:
        """
        統計的要素のない検査一式

        Args:
            cfg: 実験設定（閾値と熱核の N グリッドを使う）

        Returns:
            結果行のリスト
        """
        rows = []
        rows.extend(self.check_gradient_witnesses(cfg))
        rows.extend(self.check_model_constants(cfg))
        rows.extend(self.check_multilinear(cfg))
        rows.extend(self.check_heat_kernel(cfg))
        return rows

    def check_gradient_witnesses(self, cfg: ExperimentConfig) -> List[Dict]:
        rows = []
        for name, d in self.library.items():
            witness = check_gradient_condition(d)
            if name == "single_spin":
                rows.append(row(cfg, f"gradient:{name}:rejected", float(witness is None), 1.0, witness is None))
                continue
            if witness is None:
                rows.append(row(cfg, f"gradient:{name}", math.inf, WITNESS_TOL, False))
                continue
            residual = verify_gradient_witness(d, witness)
            rows.append(row(cfg, f"gradient:{name}", residual, WITNESS_TOL, residual <= WITNESS_TOL))
        return rows

    def check_model_constants(self, cfg: ExperimentConfig) -> List[Dict]:
        tol = cfg.thresholds.get("sigma_poly_tol", EXACT_TOL)
        rows = []
        for name in self.library:
            try:
                model = self.model_named(name)
            except GradientConditionError:
                continue
            poly = sigma_expectation_poly(model.qbar)
            for k in (0, 1):
                value = abs(poly.coefficient(k))
                rows.append(row(cfg, f"qbar_sigma_coef{k}:{name}", value, tol, value <= tol))
            if name in MODEL_ORACLES:
                expected = MODEL_ORACLES[name](model.d)
                got = (model.dbar, model.R21, model.R23)
                for label, a, b in zip(("dbar", "R21", "R23"), got, expected):
                    err = abs(a - b)
                    rows.append(row(cfg, f"{label}:{name}", a, b, err <= EXACT_TOL))
        return rows

    def check_multilinear(self, cfg: ExperimentConfig) -> List[Dict]:
        """表の往復とカノニカル期待値の閉形式・列挙の一致"""
        rows = []
        qbar = self.model_named("two_site").qbar
        start = qbar.support[0]
        restored = LocalFunctional.from_table(qbar.to_table(), start)
        same = restored.almost_equal(qbar)
        rows.append(row(cfg, "table_roundtrip:qbar", float(same), 1.0, same))
        worst = 0.0
        for width, plus, m in ((8, 3, 2), (10, 5, 3), (12, 7, 4), (16, 8, 2)):
            spec = EnsembleSpec.canonical_count((0, width - 1), plus)
            monomial = LocalFunctional.monomial(range(m))
            enumerated = expect_estimate(monomial, spec, mode="exact").value
            worst = max(worst, abs(enumerated - canonical_moment(m, width, plus)))
        rows.append(row(cfg, "canonical_moment_vs_enumeration", worst, EXACT_TOL, worst <= EXACT_TOL))
        return rows

    def check_heat_kernel(self, cfg: ExperimentConfig) -> List[Dict]:
        n_values = cfg.params.get("heat_n_values", [64, 128, 256])
        dbar = self.model_for(cfg).dbar
        table = kernel_property_suite(n_values, dbar=dbar, seed=cfg.seed)
        return [
            row(cfg, f"heat:{r['statistic']}", r["value"], r["cap"], bool(r["pass"]), n=int(r["N"]))
            for r in table.to_dict("records")
        ]

    # E2

    def run_e2(self, cfg: ExperimentConfig) -> List[Dict]:
        """
        微視的 SHE の残差のスケーリングと厳密な部分検査

        Args:
            cfg: 実験設定

        Returns:
            結果行のリスト
        """
        model = self.model_for(cfg)
        rows = self.exact_suite(cfg)
        rows.extend(self._residual_scaling(cfg, model))
        rows.extend(self._trajectory_identities(cfg, model))
        return rows

    def _residual_scaling(self, cfg: ExperimentConfig, model) -> List[Dict]:
        ratio_cap = cfg.thresholds.get("ratio", 4.0)
        bf_tol = cfg.thresholds.get("bruteforce_tol", 1e-10)
        bf_max_n = int(cfg.params.get("bruteforce_max_n", 128))
        norms = {name: c1_norm(phi) for name, phi in TEST_FUNCTIONS.items()}
        sups: Dict[str, List[float]] = {name: [] for name in TEST_FUNCTIONS}
        rows = []
        for n in cfg.n_values:
            print(f"  N={n}: {cfg.replicas} 個の状態で残差を計算中...")
            seeds = replica_seeds(cfg.seed + n, cfg.replicas)
            states = [sample_initial("stationary_zero_sum", n, seed) for seed in seeds]
            u = np.arange(n) / n
            per_phi = {name: 0.0 for name in TEST_FUNCTIONS}
            for state in states:
                remainder, z = drift_remainder(state, model)
                scale = math.sqrt(n) / (n * float(np.max(z)))
                for name, phi in TEST_FUNCTIONS.items():
                    r = float(np.sum(phi(u) * remainder))
                    per_phi[name] = max(per_phi[name], scale * abs(r) / norms[name])
            for name, value in per_phi.items():
                sups[name].append(value)
                rows.append(row(cfg, f"residual:{name}", value, n=n, size=len(states)))
            if n <= bf_max_n:
                worst = 0.0
                for state in states[:5]:
                    action, _ = generator_action(state, model)
                    brute = generator_action_bruteforce(state, model)
                    worst = max(worst, float(np.max(np.abs(action - brute))) / max(1.0, float(np.max(np.abs(action)))))
                rows.append(row(cfg, "generator_bruteforce", worst, bf_tol, worst <= bf_tol, n=n, size=5))
        for name, values in sups.items():
            ratio = max(values) / min(values) if min(values) > 0 else math.inf
            rows.append(
                row(cfg, f"residual_ratio:{name}", ratio, ratio_cap, ratio < ratio_cap, size=len(values))
            )
        return rows

    def _trajectory_identities(self, cfg: ExperimentConfig, model) -> List[Dict]:
        density_tol = cfg.thresholds.get("density_tol", 1e-9)
        delta = float(cfg.params.get("delta", 0.5))
        replay_n = int(cfg.params.get("replay_n", 32))
        rows = []
        small = [n for n in cfg.n_values if n <= int(cfg.params.get("bruteforce_max_n", 128))]
        for n in sorted(set(small + [replay_n])):
            params = SimParams(n, model, cfg.t_end, seed=cfg.seed, log_events=(n == replay_n))
            init = sample_initial("stationary_zero_sum", n, cfg.seed)
            traj = simulate(params, init)
            residual = density_identity_residuals(traj, gartner_field(traj, model), delta)
            if not math.isnan(residual):
                rows.append(row(cfg, "density_identity", residual, density_tol, residual <= density_tol, n=n))
            mismatch = height_flux_consistency(traj)
            rows.append(row(cfg, "height_flux_consistency", mismatch, 0, mismatch == 0, n=n))
            if traj.events is not None:
                report = jump_replay_check(traj, model)
                rows.append(
                    row(cfg, "jump_replay", report["z_ratio_error"], EXACT_TOL, bool(report["passed"]), n=n,
                        size=int(report["events"]))
                )
        return rows
