"""
KPZ 検証ラボ メインモジュール

シミュレーション、実験、SHE ソルバー、レポートを統合し、CLI インターフェースを提供する。
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .dynamics import SimParams, export_trajectory, sample_initial, simulate
from .ensembles import build_model
from .errors import KpzLabError
from .experiments import run_experiment
from .reader import EXPERIMENT_IDS, ConfigReader, load_library, read_report_dir, resolve_functional
from .reporter import Reporter, write_model_json, write_she_samples_csv
from .she import SheGrid, solve_she

logger = logging.getLogger(__name__)

REPORT_NAME = "kpzlab_report.xlsx"


class KpzLab:
    """KPZ 検証ラボのメインクラス"""

    def __init__(
        self,
        config_path: Optional[str] = None,
        env_path: Optional[str] = None,
        progress: bool = True,
    ):
        """
        KpzLab を初期化

        Args:
            config_path: TOML 設定ファイルのパス
            env_path: .env ファイルのパス
            progress: 進捗バーを表示するか
        """
        self.config_reader = ConfigReader(env_path)
        if config_path is not None:
            print(f"設定ファイルを読み込み中: {config_path}")
        self.config_reader.read_file(config_path)
        self.progress = progress
        self.reporter = Reporter()

    def verify(self, experiments: Sequence[str], overrides: Optional[Dict] = None) -> Dict:
        """
        実験を実行して結果を出力ディレクトリに書き出す

        Args:
            experiments: 実験 ID のリスト
            overrides: CLI で指定された設定

        Returns:
            結果の辞書
        """
        self.reporter.clear_results()
        out_dirs = []
        for exp_id in experiments:
            cfg = self.config_reader.experiment_config(exp_id, overrides)
            rows = run_experiment(cfg, progress=self.progress)
            failed = sum(1 for r in rows if r["passed"] is False)
            print(f"{exp_id}: {len(rows)} 件のチェック、不合格 {failed} 件")

            single = Reporter()
            single.add_results(rows, {exp_id: cfg.to_dict()})
            exp_dir = Path(cfg.out_dir) / exp_id
            single.write_csv(exp_dir)
            single.write_manifest(exp_dir, cfg.to_dict())
            out_dirs.append(str(exp_dir))
            self.reporter.add_results(rows, {exp_id: cfg.to_dict()})
        return {
            "out_dirs": out_dirs,
            "summary": self.reporter.get_summary(),
            "all_passed": self.reporter.all_passed,
        }

    def simulate(
        self,
        overrides: Optional[Dict] = None,
        initial: str = "stationary_zero_sum",
        fmt: str = "arrow",
        log_events: bool = False,
    ) -> Dict[str, str]:
        """
        設定の N・t_end・d で 1 本の軌道を生成して書き出す

        N のグリッドが複数ある場合は先頭の N を使う。

        Returns:
            軌道ファイルとモデル定数ファイルのパス
        """
        run = self.config_reader.raw.get("run", {})
        cfg = self.config_reader.experiment_config(str(run.get("experiment", "E3")), overrides)
        model = build_model(resolve_functional(cfg, load_library()))
        n = cfg.n_values[0]
        print(f"N={n}, t_end={cfg.t_end:g} の軌道を生成中...")
        params = SimParams(n, model, cfg.t_end, cfg.snapshot_step, seed=cfg.seed, log_events=log_events)
        traj = simulate(params, sample_initial(initial, n, cfg.seed))
        print(f"生成完了: {traj.stats.get('jumps', 0)} 回のジャンプ、{len(traj.times)} 枚のスナップショット")

        out_dir = Path(cfg.out_dir)
        suffix = "arrow" if fmt == "arrow" else "csv"
        stem = f"trajectory_N{n}_seed{cfg.seed}"
        return {
            "trajectory": export_trajectory(traj, out_dir / f"{stem}.{suffix}", fmt=fmt),
            "model": write_model_json(model, out_dir / f"{stem}_model.json"),
        }

    def she(self, overrides: Optional[Dict] = None, records: int = 10) -> str:
        """
        平坦な初期値から SHE(d̄) を解いてサンプルを CSV に書き出す

        Returns:
            CSV のパス
        """
        cfg = self.config_reader.she_config(overrides)
        grid = SheGrid(int(cfg.m), float(cfg.resolved_dt()), float(cfg.t_end), seed=cfg.seed)
        print(f"SHE(d̄={cfg.dbar:g}) を M={grid.m}, δt={grid.dt:.3g} で {cfg.replicas} 回解いています...")
        field = solve_she(float(cfg.dbar), np.ones_like, grid, replicas=int(cfg.replicas), records=records)
        if field.halvings:
            print(f"正値性のためにステップを {field.halvings} 回分割しました")
        path = Path(cfg.out_dir) / f"she_M{grid.m}_seed{cfg.seed}.csv"
        return write_she_samples_csv(field, path)

    def load_report(self, directory: str) -> Dict:
        """
        出力ディレクトリのマニフェストを読み込んでレポーターに載せる

        Returns:
            来歴の辞書
        """
        print(f"レポートを読み込み中: {directory}")
        rows, provenance = read_report_dir(directory)
        self.reporter.clear_results()
        self.reporter.add_results(rows, provenance)
        print(f"読み込み完了: {len(rows)} 件の結果")
        return provenance

    def generate_report(self, output_path: str) -> str:
        """
        Excel レポートを生成

        Args:
            output_path: 出力ファイルパス

        Returns:
            生成されたファイルのパス
        """
        print(f"レポートを生成中: {output_path}")
        report_path = self.reporter.generate_excel_report(output_path)
        print(f"レポート生成完了: {report_path}")
        return report_path

    def print_summary(self):
        """サマリーをコンソールに表示"""
        self.reporter.print_summary()


def _experiment_list(values: List[str]) -> List[str]:
    if any(v.lower() == "all" for v in values):
        return list(EXPERIMENT_IDS)
    ids = [v.upper() for v in values]
    for exp_id in ids:
        if exp_id not in EXPERIMENT_IDS:
            raise argparse.ArgumentTypeError(f"未知の実験: {exp_id}")
    return ids


def _overrides(args) -> Dict:
    return {
        "seed": getattr(args, "seed", None),
        "replicas": getattr(args, "replicas", None),
        "n_values": getattr(args, "n", None),
        "t_end": getattr(args, "t_end", None),
        "out_dir": getattr(args, "out", None),
        "threads": getattr(args, "threads", None),
    }


def _add_run_options(parser: argparse.ArgumentParser):
    parser.add_argument("--config", default=None, help="TOML 設定ファイル")
    parser.add_argument("--seed", type=int, default=None, help="親シード")
    parser.add_argument("--replicas", type=int, default=None, help="レプリカ数 M")
    parser.add_argument("--n", type=int, nargs="+", default=None, help="N のグリッド")
    parser.add_argument("--t-end", type=float, default=None, help="終端時刻")
    parser.add_argument("-o", "--out", default=None, help="出力ディレクトリ（デフォルト: KPZLAB_OUT または results）")
    parser.add_argument("--threads", type=int, default=None, help="スレッド数（デフォルト: KPZLAB_THREADS または CPU 数）")


def create_cli_parser():
    """コマンドライン引数のパーサーを作成"""
    parser = argparse.ArgumentParser(
        prog="kpzlab",
        description="弱非対称排他過程の KPZ 検証ラボ",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
使用例:
  kpzlab verify E2 --config run.toml
  kpzlab verify all --replicas 50 -o results
  kpzlab simulate --config run.toml --format csv
  kpzlab she --config run.toml
  kpzlab report results
        """,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="デバッグログを表示する")
    parser.add_argument("-q", "--quiet", action="store_true", help="進捗バーを表示しない")
    parser.add_argument("--env", default=None, help=".env ファイルのパス")
    sub = parser.add_subparsers(dest="command", required=True)

    verify = sub.add_parser("verify", help="実験を実行して合否を判定する")
    verify.add_argument("experiments", nargs="+", help="実験 ID (E1..E9) または all")
    _add_run_options(verify)
    verify.add_argument("--no-report", action="store_true", help="Excel レポートを生成しない")

    sim = sub.add_parser("simulate", help="軌道を 1 本生成して書き出す")
    _add_run_options(sim)
    sim.add_argument(
        "--initial", default="stationary_zero_sum", choices=["stationary_zero_sum", "flat"], help="初期配置"
    )
    sim.add_argument("--format", default="arrow", choices=["arrow", "csv"], help="軌道ファイルの形式")
    sim.add_argument("--log-events", action="store_true", help="ジャンプイベントを記録する")

    she = sub.add_parser("she", help="SHE(d̄) を解いてサンプルを書き出す")
    she.add_argument("--config", default=None, help="TOML 設定ファイル")
    she.add_argument("--m", type=int, default=None, help="空間格子の数 M")
    she.add_argument("--dt", type=float, default=None, help="時間刻み")
    she.add_argument("--dbar", type=float, default=None, help="ドリフト係数 d̄")
    she.add_argument("--replicas", type=int, default=None, help="レプリカ数")
    she.add_argument("--seed", type=int, default=None, help="シード")
    she.add_argument("--records", type=int, default=10, help="記録する時刻の数")
    she.add_argument("-o", "--out", default=None, help="出力ディレクトリ")

    report = sub.add_parser("report", help="出力ディレクトリからレポートを再生成する")
    report.add_argument("directory", help="verify の出力ディレクトリ")
    report.add_argument("-o", "--output", default=None, help="Excel レポートのパス")
    return parser


def main(argv: Optional[Sequence[str]] = None):
    """メイン関数"""
    parser = create_cli_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        if args.command == "report":
            lab = KpzLab(env_path=args.env, progress=not args.quiet)
            lab.load_report(args.directory)
            lab.print_summary()
            output = args.output or str(Path(args.directory) / REPORT_NAME)
            lab.generate_report(output)
            sys.exit(0 if lab.reporter.all_passed else 1)

        lab = KpzLab(args.config, env_path=args.env, progress=not args.quiet)

        if args.command == "simulate":
            paths = lab.simulate(_overrides(args), initial=args.initial, fmt=args.format, log_events=args.log_events)
            print(f"軌道: {paths['trajectory']}")
            print(f"モデル定数: {paths['model']}")
            sys.exit(0)

        if args.command == "she":
            overrides = {"m": args.m, "dt": args.dt, "dbar": args.dbar, "replicas": args.replicas,
                         "seed": args.seed, "out_dir": args.out}
            path = lab.she(overrides, records=args.records)
            print(f"SHE サンプル: {path}")
            sys.exit(0)

        try:
            experiments = _experiment_list(args.experiments)
        except argparse.ArgumentTypeError as e:
            parser.error(str(e))
        result = lab.verify(experiments, _overrides(args))
        print()
        lab.print_summary()
        if not args.no_report:
            output_dir = Path(result["out_dirs"][0]).parent
            report_path = lab.generate_report(str(output_dir / REPORT_NAME))
            print("\n詳細レポートは以下のファイルに出力されました:")
            print(report_path)
        sys.exit(0 if result["all_passed"] else 1)

    except (KpzLabError, FileNotFoundError) as e:
        print(f"エラー: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
