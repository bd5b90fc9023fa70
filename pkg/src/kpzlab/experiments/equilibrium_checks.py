"""
定常状態の実験

E1 定常性、E4 カノニカル期待値の減衰、E7 ブリッジ分散と安定性モーメント、
E8 時空平均の分散の減衰 (キプニス・ヴァラダン) を行う。
"""

import logging
import math
from typing import Dict, List

import numpy as np

from ..dynamics import SimParams, sample_initial, simulate
from ..ensembles import EnsembleSpec, expect_estimate, kipnis_varadhan_statistic
from ..observables import bridge_variance, stable_data_moments, time_averaged_moments
from ..parallel import map_replicas
from ..reader import ExperimentConfig
from ..stats import fit_power_law, mean_se, within_se
from .base import BaseChecker, row

logger = logging.getLogger(__name__)


class EquilibriumChecker(BaseChecker):
    """定常状態の実験を行うクラス"""

    family = "equilibrium"

    def run_e1(self, cfg: ExperimentConfig) -> List[Dict]:
        """
        条件付きベルヌーイ初期値から t_end まで進め、時間平均したモーメントを定常値と比べる

        レプリカごとにスナップショットグリッド上で時間平均をとり、レプリカ間の
        標準誤差で判定する。η_0 の平均は 0、η_x η_{x+k} の平均は -1/(N-1)。
        """
        model = self.model_for(cfg)
        k_se = cfg.thresholds.get("se_multiple", 4.0)
        lags = [int(k) for k in cfg.params.get("lags", [1, 2, 3, 4])]
        rows = []
        for n in cfg.n_values:

            def replica(rng: np.random.Generator, i: int) -> np.ndarray:
                init = sample_initial("stationary_zero_sum", n, rng)
                params = SimParams(n, model, cfg.t_end, snapshot_step=cfg.snapshot_step, seed=rng, anchor_only=True)
                traj = simulate(params, init)
                return time_averaged_moments(traj.snapshots, traj.times, lags)

            samples = np.stack(
                map_replicas(replica, cfg.replicas, cfg.seed, cfg.threads, self.progress, f"E1 N={n}")
            )
            expected = [0.0] + [-1.0 / (n - 1)] * len(lags)
            labels = ["eta0"] + [f"pair_k{k}" for k in lags]
            for j, label in enumerate(labels):
                value, se = mean_se(samples[:, j])
                ok = within_se(value, expected[j], se, k_se)
                rows.append(row(cfg, label, value, expected[j], ok, n=n, se=se, size=cfg.replicas))
        return rows

    def run_e4(self, cfg: ExperimentConfig) -> List[Dict]:
        """定常配置でのブロック長 L ごとの E|E^can(q̄)| を測り、L に対するべき指数を求める"""
        model = self.model_for(cfg)
        lengths = [int(L) for L in cfg.params.get("lengths", [8, 16, 32, 64, 128])]
        sites = int(cfg.params.get("sites", 16))
        rows = []
        for n in cfg.n_values:
            tables = {L: self._canonical_table(model, L) for L in lengths}

            def replica(rng: np.random.Generator, i: int) -> np.ndarray:
                cfg_ = sample_initial("stationary_zero_sum", n, rng)
                plus = (cfg_.spins > 0).astype(np.int64)
                ys = rng.choice(n, size=sites, replace=False)
                out = []
                for L in lengths:
                    counts = np.array([plus[(y - np.arange(L + 1)) % n].sum() for y in ys])
                    out.append(float(np.mean(np.abs(tables[L][counts]))))
                return np.array(out)

            samples = np.stack(
                map_replicas(replica, cfg.replicas, cfg.seed, cfg.threads, self.progress, f"E4 N={n}")
            )
            means, ses = [], []
            for j, L in enumerate(lengths):
                value, se = mean_se(samples[:, j])
                means.append(value)
                ses.append(se)
                rows.append(row(cfg, f"canonical_abs:L{L}", value, n=n, se=se, size=cfg.replicas))
            fit = fit_power_law(lengths, means, ses)
            threshold = cfg.thresholds.get("slope", -0.7)
            rows.append(
                row(cfg, "slope_vs_L", fit.exponent, threshold, fit.exponent <= threshold, n=n, se=fit.stderr,
                    size=len(lengths))
            )
        return rows

    @staticmethod
    def _canonical_table(model, length: int) -> np.ndarray:
        """ブロック y-L..y の + の個数 k ごとの E^can(q̄)"""
        return np.array(
            [
                expect_estimate(model.qbar, EnsembleSpec.canonical_count((-length, 0), k), mode="closed_form").value
                for k in range(length + 2)
            ]
        )

    def run_e7(self, cfg: ExperimentConfig) -> List[Dict]:
        """定常初期値の Var(h_0(⌊uN⌋)) と安定性モーメント"""
        rel = cfg.thresholds.get("relative", 0.1)
        points = [float(u) for u in cfg.params.get("points", [0.25, 0.5, 0.75])]
        rows = []
        for n in cfg.n_values:
            configs = map_replicas(
                lambda rng, i: sample_initial("stationary_zero_sum", n, rng),
                cfg.replicas, cfg.seed, cfg.threads, self.progress, f"E7 N={n}",
            )
            for result in bridge_variance(configs, points):
                err = abs(result.value / result.expected - 1.0)
                rows.append(
                    row(cfg, f"bridge_variance:u{result.u:g}", result.value, result.expected, err <= rel, n=n,
                        se=result.se, size=cfg.replicas)
                )
        rows.extend(self._stable_moments(cfg))
        return rows

    def _stable_moments(self, cfg: ExperimentConfig) -> List[Dict]:
        ratio_cap = cfg.thresholds.get("stable_ratio", 3.0)
        p = int(cfg.params.get("p", 2))
        u = float(cfg.params.get("u", 0.25))
        n_values = [int(n) for n in cfg.params.get("stable_n_values", [64, 128, 256])]
        rows = []
        for kind in ("stationary_zero_sum", "flat"):
            height, holder = [], []
            for n in n_values:
                if kind == "flat":
                    configs = [sample_initial("flat", n)]
                else:
                    configs = map_replicas(
                        lambda rng, i: sample_initial(kind, n, rng), cfg.replicas, cfg.seed, cfg.threads, False
                    )
                moments = stable_data_moments(configs, p=p, u=u)
                height.append(moments["height_moment"])
                holder.append(moments["holder_moment"])
                rows.append(row(cfg, f"height_moment:{kind}", moments["height_moment"], n=n, size=len(configs)))
                rows.append(row(cfg, f"holder_moment:{kind}", moments["holder_moment"], n=n, size=len(configs)))
            # 最小の N に対する増加率
            for label, values in (("height_moment", height), ("holder_moment", holder)):
                ratio = max(values) / values[0] if values[0] > 0 else math.inf
                rows.append(
                    row(cfg, f"{label}_ratio:{kind}", ratio, ratio_cap, ratio <= ratio_cap, size=len(values))
                )
        return rows

    def run_e8(self, cfg: ExperimentConfig) -> List[Dict]:
        """
        定常状態で Var(𝔦^T_t 𝔦^X_ℓ(𝔮)) を t と ℓ について測り、べき指数を求める

        t の系列は ℓ を fixed_ell に、ℓ の系列は t を fixed_t_multiple N^{-2} に固定する。
        """
        model = self.model_for(cfg)
        f = model.q
        multiples = [float(m) for m in cfg.params.get("t_multiples", [10, 20, 50, 100])]
        ells = [int(ell) for ell in cfg.params.get("ells", [2, 4, 8, 20])]
        fixed_ell = int(cfg.params.get("fixed_ell", 2))
        fixed_t = float(cfg.params.get("fixed_t_multiple", 10))
        step_fraction = float(cfg.params.get("step_fraction", 0.25))
        threshold = cfg.thresholds.get("slope", -0.7)
        rows = []
        for n in cfg.n_values:
            unit = n**-2.0
            t_end = max(multiples + [fixed_t]) * unit

            def replica(rng: np.random.Generator, i: int) -> np.ndarray:
                init = sample_initial("stationary_zero_sum", n, rng)
                params = SimParams(n, model, t_end, snapshot_step=step_fraction * unit, seed=rng, anchor_only=True)
                traj = simulate(params, init)
                snaps, times = traj.snapshots, traj.times
                by_t = [kipnis_varadhan_statistic(snaps, times, f, m * unit, fixed_ell) for m in multiples]
                by_ell = [kipnis_varadhan_statistic(snaps, times, f, fixed_t * unit, ell) for ell in ells]
                return np.array(by_t + by_ell)

            samples = np.stack(
                map_replicas(replica, cfg.replicas, cfg.seed, cfg.threads, self.progress, f"E8 N={n}")
            )
            variances = samples.var(axis=0, ddof=1)
            var_se = variances * math.sqrt(2.0 / (cfg.replicas - 1))
            k = len(multiples)
            for label, scales, sl in (("t", multiples, slice(0, k)), ("ell", ells, slice(k, None))):
                for scale, v, se in zip(scales, variances[sl], var_se[sl]):
                    rows.append(row(cfg, f"kv_variance:{label}={scale:g}", v, n=n, se=se, size=cfg.replicas))
                fit = fit_power_law(scales, variances[sl], var_se[sl])
                rows.append(
                    row(cfg, f"slope_vs_{label}", fit.exponent, threshold, fit.exponent <= threshold, n=n,
                        se=fit.stderr, size=len(scales))
                )
        return rows
