"""
スケーリング実験

E3 ボルツマン・ギブス原理の減衰、E5 SHE(d̄) との一点分布の比較、
E6 停止時刻モニターの割合、E9 局所化写像による結合の不一致確率を行う。
"""

import logging
import math
from typing import Dict, List

import numpy as np

from ..dynamics import SimParams, loc_map, sample_initial, simulate, watch_window
from ..heat import HeatKernel, heat_op_path
from ..observables import PathObservable, gartner_field, stopping_monitors
from ..parallel import map_replicas
from ..reader import ExperimentConfig
from ..she import SheGrid, solve_she, solve_she_pair
from ..stats import fit_power_law, ks_distance, mean_se, wilson_interval
from .base import BaseChecker, row

logger = logging.getLogger(__name__)


def _flat(points: np.ndarray) -> np.ndarray:
    return np.ones_like(points)


class ScalingChecker(BaseChecker):
    """スケーリング実験を行うクラス"""

    family = "scaling"

    def run_e3(self, cfg: ExperimentConfig) -> List[Dict]:
        """
        平坦な初期値から ‖H^N(N^{1/2} q̄ Y^N)‖_{1;T_N} を測り、N に対するべき指数を求める

        Y^N は停止時刻 t_st で止めたガートナー変換。熱作用素は
        スナップショットグリッド上のデュアメル漸化式で全時刻を評価する。
        """
        model = self.model_for(cfg)
        means, ses = [], []
        rows = []
        for n in cfg.n_values:
            hk = HeatKernel(n, model.dbar)

            def replica(rng: np.random.Generator, i: int) -> float:
                params = SimParams(n, model, cfg.t_end, snapshot_step=cfg.snapshot_step, seed=rng, anchor_only=True)
                traj = simulate(params, sample_initial("flat", n))
                z = gartner_field(traj, model).values
                report = stopping_monitors(traj.times, z, cfg.monitor)
                flux = math.sqrt(n) * model.qbar.evaluate_all(traj.snapshots) * report.y
                return float(np.max(heat_op_path(hk, PathObservable(traj.times, flux), out="sup")))

            samples = map_replicas(replica, cfg.replicas, cfg.seed + n, cfg.threads, self.progress, f"E3 N={n}")
            value, se = mean_se(samples)
            means.append(value)
            ses.append(se)
            rows.append(row(cfg, "bg_sup_mean", value, n=n, se=se, size=cfg.replicas))
        fit = fit_power_law(cfg.n_values, means, ses)
        threshold = cfg.thresholds.get("slope", -0.2)
        passed = fit.exponent <= threshold and fit.ci[1] < 0
        rows.append(row(cfg, "slope_vs_N", fit.exponent, threshold, passed, se=fit.stderr, size=len(means)))
        rows.append(row(cfg, "slope_ci_high", fit.ci[1], 0.0, fit.ci[1] < 0, size=len(means)))
        return rows

    def run_e5(self, cfg: ExperimentConfig) -> List[Dict]:
        """Γ^N Z^N_{t,0} の標本と SHE(d̄) ソルバーの標本を 2 標本 KS 距離で比べる"""
        model = self.model_for(cfg)
        she_m = int(cfg.params.get("she_m", 64))
        refine_m = int(cfg.params.get("refine_m", 32))
        rows = []
        for n in cfg.n_values:

            def replica(rng: np.random.Generator, i: int) -> float:
                params = SimParams(n, model, cfg.t_end, snapshot_step=cfg.t_end, seed=rng, anchor_only=True)
                traj = simulate(params, sample_initial("flat", n))
                return float(gartner_field(traj, model).values[-1, 0])

            micro = map_replicas(replica, cfg.replicas, cfg.seed + n, cfg.threads, self.progress, f"E5 N={n}")
            print(f"  SHE(d̄={model.dbar:g}) を M={she_m} で {cfg.replicas} 回解いています...")
            grid = SheGrid(she_m, 0.4 / she_m**2, cfg.t_end, seed=cfg.seed)
            continuum = solve_she(model.dbar, _flat, grid, replicas=cfg.replicas).at(0.0)
            ks, pvalue = ks_distance(micro, continuum)
            cap = cfg.thresholds.get("ks", 0.1)
            rows.append(row(cfg, "ks_micro_vs_she", ks, cap, ks <= cap, n=n, size=cfg.replicas))
            rows.append(row(cfg, "ks_micro_vs_she_pvalue", pvalue, n=n, size=cfg.replicas))
            rows.append(row(cfg, "micro_mean", float(np.mean(micro)), n=n, size=cfg.replicas))
            rows.append(row(cfg, "she_mean", float(np.mean(continuum)), size=cfg.replicas))

        print(f"  格子の自己整合性を M={refine_m} と {2 * refine_m} で確認しています...")
        grid = SheGrid(refine_m, 0.4 / refine_m**2, cfg.t_end, seed=cfg.seed + 1)
        coarse, fine = solve_she_pair(model.dbar, _flat, grid, replicas=cfg.replicas)
        ks, pvalue = ks_distance(coarse.at(0.0), fine.at(0.0))
        cap = cfg.thresholds.get("refinement_ks", 0.05)
        rows.append(row(cfg, "ks_refinement", ks, cap, ks <= cap, size=cfg.replicas))
        rows.append(row(cfg, "ks_refinement_pvalue", pvalue, size=cfg.replicas))
        return rows

    def run_e6(self, cfg: ExperimentConfig) -> List[Dict]:
        """停止時刻モニターが t <= 1 で発火しない (t_st = 1) レプリカの割合"""
        model = self.model_for(cfg)
        exponent = float(cfg.params.get("step_exponent", -2.0))
        tolerance = cfg.thresholds.get("se_tolerance", 2.0)
        target = cfg.thresholds.get("fraction", 0.9)
        fractions, errors = [], []
        rows = []
        for n in cfg.n_values:

            def replica(rng: np.random.Generator, i: int) -> bool:
                params = SimParams(n, model, cfg.t_end, snapshot_step=n**exponent, seed=rng, anchor_only=True)
                traj = simulate(params, sample_initial("flat", n))
                report = stopping_monitors(traj.times, gartner_field(traj, model).values, cfg.monitor)
                return report.t_st >= 1.0

            survived = map_replicas(replica, cfg.replicas, cfg.seed + n, cfg.threads, self.progress, f"E6 N={n}")
            count = int(np.sum(survived))
            p = count / cfg.replicas
            se = math.sqrt(p * (1 - p) / cfg.replicas)
            low, high = wilson_interval(count, cfg.replicas)
            fractions.append(p)
            errors.append(se)
            rows.append(row(cfg, "no_passage_fraction", p, n=n, se=se, size=cfg.replicas))
            rows.append(row(cfg, "wilson_low", low, n=n, size=cfg.replicas))
            rows.append(row(cfg, "wilson_high", high, n=n, size=cfg.replicas))
        rows.append(
            row(cfg, "fraction_at_largest_N", fractions[-1], target, fractions[-1] >= target, n=cfg.n_values[-1],
                se=errors[-1], size=cfg.replicas)
        )
        drops = [
            fractions[i] - fractions[i + 1] - tolerance * math.hypot(errors[i], errors[i + 1])
            for i in range(len(fractions) - 1)
        ]
        worst = max(drops, default=0.0)
        rows.append(row(cfg, "nondecreasing_excess", worst, 0.0, worst <= 0.0, size=len(fractions)))
        return rows

    def run_e9(self, cfg: ExperimentConfig) -> List[Dict]:
        """
        η と Loc(η) を結合して走らせ、中央の窓に不一致が入る確率を γ_0 ごとに測る

        全ての γ_0 で同じレプリカシードを使う (共通乱数)。
        """
        model = self.model_for(cfg)
        ell = float(cfg.params.get("ell", 4))
        gammas = [float(g) for g in cfg.params.get("gammas", [0.02, 0.05, 0.1])]
        window = tuple(int(w) for w in cfg.params.get("window", [-4, 4]))
        rows = []
        for n in cfg.n_values:
            probs, intervals = [], []
            for gamma in gammas:

                def replica(rng: np.random.Generator, i: int) -> bool:
                    init = sample_initial("stationary_zero_sum", n, rng)
                    localized = loc_map(init, cfg.t_end, ell, gamma)
                    params = SimParams(n, model, cfg.t_end, seed=rng)
                    return math.isfinite(watch_window(params, init, localized, window))

                hits = map_replicas(replica, cfg.replicas, cfg.seed, cfg.threads, self.progress, f"E9 γ={gamma:g}")
                count = int(np.sum(hits))
                p = count / cfg.replicas
                low, high = wilson_interval(count, cfg.replicas)
                probs.append(p)
                intervals.append((low, high))
                se = math.sqrt(p * (1 - p) / cfg.replicas)
                rows.append(row(cfg, f"hit_probability:gamma={gamma:g}", p, n=n, se=se, size=cfg.replicas))
                rows.append(row(cfg, f"wilson_low:gamma={gamma:g}", low, n=n, size=cfg.replicas))
                rows.append(row(cfg, f"wilson_high:gamma={gamma:g}", high, n=n, size=cfg.replicas))
            monotone = all(b <= a for a, b in zip(probs, probs[1:]))
            rows.append(row(cfg, "monotone_decreasing", float(monotone), 1.0, monotone, n=n, size=len(probs)))
            gap = intervals[0][0] - intervals[-1][1]
            rows.append(row(cfg, "extreme_interval_gap", gap, 0.0, gap > 0, n=n, size=cfg.replicas))
        return rows
