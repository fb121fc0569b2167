#!/usr/bin/env python3
"""
DecompGrind Tracker - Main CLI
研磨分解工作台主程式：工件、示範、訓練、規劃、研磨、基準實驗
"""

import argparse
import logging
import math
import sys
import traceback
from pathlib import Path
from typing import Dict, List, Optional, Tuple

# 加入 scripts 目錄到路徑
sys.path.insert(0, str(Path(__file__).parent))

from rich.console import Console
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn
from rich.table import Table

from grind_config import GrindConfig, load_config, override, parse_seeds, setup_logging
from grind_expert import build_dataset, record_demonstrations
from grind_geometry import GrindError, chamfer
from grind_orchestrator import (
    BENCH_SUITES,
    MethodVariant,
    RunReport,
    bcil_model,
    bench_cells,
    demo_feeds,
    grind_single_removal,
    prepare_bench_models,
    prepare_policy,
    record_training_demonstrations,
    run_baseline,
    run_benchmark,
)
from grind_planner import plan
from grind_policy import PolicyModel, load_model, save_model, train
from grind_storage import GrindStorage
from grind_workpieces import STANDARD_WORKPIECES, WorkpieceSpec, gen_workpiece, get_workpiece, parse_regions

console = Console()
error_console = Console(stderr=True)
logger = logging.getLogger(__name__)


class GrindTracker:
    def __init__(self, config: GrindConfig, data_dir: Optional[str] = None):
        """
        初始化研磨工作台

        Args:
            config: 設定
            data_dir: 資料目錄（預設：專案根目錄下的 data）
        """
        self.config = config
        self.storage = GrindStorage(data_dir)

    def _banner(self, title: str):
        console.print(f"\n{'=' * 60}")
        console.print(f"[bold]{title}[/bold]")
        console.print(f"{'=' * 60}")

    def _spec(self, name: Optional[str], regions: Optional[str] = None, density: Optional[float] = None,
              resolution: Optional[float] = None) -> WorkpieceSpec:
        resolution = resolution or self.config.bench.resolution
        if regions:
            if density is None:
                raise GrindError("自訂工件需要 --density")
            spec = WorkpieceSpec(name or 'custom', 'custom', parse_regions(regions), density)
            if resolution:
                spec = WorkpieceSpec(spec.name, spec.family, spec.regions, spec.density, resolution)
            return spec
        if not name:
            raise GrindError("請指定 --workpiece 或 --regions")
        return get_workpiece(name, resolution)

    def gen_workpiece(self, spec: WorkpieceSpec, seed: int, out: str) -> bool:
        """取樣工件並儲存初始形狀與目標形狀"""
        self._banner(f"產生工件 {spec.name}")
        initial, target = gen_workpiece(spec, seed)
        initial_path = self.storage.save_point_cloud(initial, f"{out}_initial.xyz")
        target_path = self.storage.save_point_cloud(target, f"{out}_target.xyz")

        table = Table(title=f"{spec.name}（密度 {spec.density:g}%）")
        table.add_column("區域")
        table.add_column("直徑 (mm)", justify="right")
        table.add_column("高度 (mm)", justify="right")
        for region in spec.regions:
            table.add_row(region.role, f"{region.diameter:g}", f"{region.height:g}")
        console.print(table)
        console.print(f"  點數: {initial.count}（目標 {target.count}），每點體積 {initial.point_volume:.4f} mm³")
        console.print(f"  初始 Chamfer 誤差: {chamfer(initial, target):.4f} mm²")
        console.print(f"\n✓ 已儲存 {initial_path}")
        console.print(f"✓ 已儲存 {target_path}")
        return True

    def demo(self, workpieces: List[str], repetitions: int, seed: int, out: str) -> bool:
        """以示範者錄製示範並建立資料集"""
        cfg = self.config
        self._banner("錄製示範")
        specs = [get_workpiece(name, cfg.bench.resolution) for name in workpieces]
        episodes = record_demonstrations(specs, repetitions, cfg.sim, cfg.expert, seed)
        paths = self.storage.save_episodes(episodes, f"{out}/episodes")
        dataset = build_dataset(episodes, cfg.model.window, cfg.model.train_rate_hz,
                                touch_off=cfg.model.touch_off)
        dataset_path = self.storage.save_dataset(dataset, f"{out}/dataset_n{cfg.model.window}.csv")

        table = Table(title="示範摘要")
        table.add_column("工件")
        table.add_column("時間 (s)", justify="right")
        table.add_column("取樣數", justify="right")
        table.add_column("最大 |F_T| (N)", justify="right")
        for episode in episodes:
            table.add_row(episode.workpiece, f"{episode.duration:.2f}", str(len(episode)),
                          f"{abs(episode.follower[:, 5]).max():.2f}")
        console.print(table)
        console.print(f"\n✓ {len(paths)} 段示範已儲存到 {paths[0].parent}")
        console.print(f"✓ 資料集 {len(dataset)} 個視窗 (n={dataset.window_length}) → {dataset_path}")
        return True

    def train(self, dataset_path: Optional[str], demos: Optional[str], out: str) -> bool:
        """訓練策略並儲存模型"""
        cfg = self.config
        self._banner("訓練 LCFA 策略")
        if dataset_path:
            dataset = self.storage.load_dataset(dataset_path)
        elif demos:
            episodes = self.storage.load_episodes(demos)
            dataset = build_dataset(episodes, cfg.model.window, cfg.model.train_rate_hz,
                                    touch_off=cfg.model.touch_off)
        else:
            raise GrindError("請指定 --dataset 或 --demos")
        if dataset.window_length != cfg.model.window:
            cfg.model.window = dataset.window_length
        console.print(f"資料集: {len(dataset)} 個視窗, n={dataset.window_length}")
        console.print(f"網路: {cfg.model.layers} 層 × {cfg.model.hidden}，{cfg.train.epochs} epochs")

        model = train(dataset, cfg.model, cfg.train)
        path = save_model(model, self.storage.resolve(out))
        console.print(f"\n  第一個 epoch 損失: {model.loss_history[0]:.6f}")
        console.print(f"  最後一個 epoch 損失: {model.final_loss:.6f}")
        console.print(f"\n✓ 模型已儲存到 {path}")
        return True

    def plan(self, spec: WorkpieceSpec, seed: int, shape_path: Optional[str], target_path: Optional[str],
             out: Optional[str]) -> bool:
        """對目前形狀執行一次 GCSP 規劃"""
        self._banner(f"GCSP 規劃 ({spec.name})")
        initial, target = gen_workpiece(spec, seed)
        current = self.storage.load_point_cloud(shape_path) if shape_path else initial
        if target_path:
            target = self.storage.load_point_cloud(target_path)
        result = plan(current, target, self.config.planner)

        table = Table(title=f"H={len(result.surfaces)}（{result.search}）")
        table.add_column("步")
        table.add_column("θ (°)", justify="right")
        table.add_column("ψ (°)", justify="right")
        table.add_column("x (mm)", justify="right")
        table.add_column("成本", justify="right")
        table.add_column("剩餘點數", justify="right")
        for i, (surface, value, shape) in enumerate(
                zip(result.surfaces, result.per_step_cost, result.predicted_shapes[1:]), 1):
            table.add_row(str(i), f"{math.degrees(surface.theta):.1f}", f"{math.degrees(surface.psi):.1f}",
                          f"{surface.x:.2f}", f"{value:.4f}", str(shape.count))
        console.print(table)
        console.print(f"  平均成本: {result.total_cost:.4f}")
        if out:
            path = self.storage.save_record(result.to_record(), out)
            console.print(f"\n✓ 規劃結果已儲存到 {path}")
        return True

    def _policy_inputs(self, variant: MethodVariant, model_path: Optional[str], demos: Optional[str],
                       seed: int) -> Tuple[Optional[PolicyModel], Dict[MethodVariant, float]]:
        """依方法準備策略模型或示範進給；未提供檔案時重新錄製示範"""
        episodes = self.storage.load_episodes(demos) if demos else None
        if variant in (MethodVariant.DEMO_SPEED_1, MethodVariant.DEMO_SPEED_2):
            if episodes is None:
                console.print("未提供示範，重新錄製 WP-T 示範以計算進給...")
                episodes = record_training_demonstrations(self.config, seed)
            return None, demo_feeds(episodes)
        if variant in (MethodVariant.RAND_HYB, MethodVariant.CSP_HYB):
            return None, {}
        if model_path:
            return load_model(self.storage.resolve(model_path)), {}
        if variant is MethodVariant.PROPOSED:
            console.print("未提供模型，錄製示範並訓練策略...")
            return prepare_policy(self.config, seed, episodes).model, {}
        console.print(f"未提供模型，以連續示範訓練 {variant.value} 策略...")
        return bcil_model(variant, self.config, seed), {}

    def grind(self, spec: WorkpieceSpec, method: str, model_path: Optional[str], demos: Optional[str],
              seed: int, single: bool, out: str) -> bool:
        """以指定方法完整研磨一個工件"""
        variant = MethodVariant.parse(method)
        self._banner(f"{variant.value} 研磨 {spec.name}（seed {seed}）")
        model, feeds = self._policy_inputs(variant, model_path, demos, seed)
        if single:
            report = grind_single_removal(variant, spec, self.config, model, seed, feeds)
        else:
            report = run_baseline(variant, spec, self.config, model, seed, feeds)
        self._print_report(report)
        paths = self.storage.save_report(report, out)
        console.print(f"\n✓ 報告已儲存到 {paths[0]}")
        return True

    def _print_report(self, report: RunReport):
        table = Table(title=f"{report.method} / {report.workpiece}")
        table.add_column("項目")
        table.add_column("數值", justify="right")
        table.add_row("結束原因", report.termination)
        table.add_row("執行時間 (s)", f"{report.execution_time:.1f}")
        table.add_row("研磨時間 (s)", f"{report.grinding_time:.1f}")
        table.add_row("力量範圍內比例 (%)", f"{100 * report.in_limit_ratio:.1f}")
        table.add_row("初始誤差 (mm²)", f"{report.initial_error:.4f}")
        table.add_row("最終誤差 (mm²)", f"{report.final_error:.4f}")
        table.add_row("觀測 / 規劃 / 中止", f"{report.observations} / {report.planning_steps} / {report.aborts}")
        console.print(table)

    def bench(self, suite: str, model_path: Optional[str], out: Optional[str]) -> bool:
        """執行基準套組並輸出 CSV"""
        cfg = self.config
        self._banner(f"基準實驗 {suite}（seeds {', '.join(map(str, cfg.bench.seeds))}）")
        cells = bench_cells(suite, cfg.bench.seeds)
        console.print(f"共 {len(cells)} 個組合，先準備策略模型...")
        bundle = prepare_bench_models(cfg, cells)
        if model_path:
            bundle.model = load_model(self.storage.resolve(model_path))

        with Progress(TextColumn("{task.description}"), BarColumn(), MofNCompleteColumn(),
                      TimeElapsedColumn(), console=console) as progress:
            task = progress.add_task("執行中", total=len(cells))

            def advance(cell, report):
                progress.update(task, advance=1, description=f"{cell.method} / {cell.workpiece}")

            _, runs, summary = run_benchmark(suite, cfg, bundle, advance)

        table = Table(title=f"{suite} 摘要")
        for column in ('suite', 'method', 'workpiece', 'runs'):
            table.add_column(column)
        for column in ('執行時間 (s)', '研磨時間 (s)', '最終誤差', '範圍內 (%)'):
            table.add_column(column, justify="right")
        for _, row in summary.iterrows():
            table.add_row(row['suite'], row['method'], row['workpiece'], str(row['runs']),
                          f"{row['execution_time_mean']:.1f} ± {row['execution_time_std']:.1f}",
                          f"{row['grinding_time_mean']:.1f} ± {row['grinding_time_std']:.1f}",
                          f"{row['final_error_mean']:.4f}",
                          f"{100 * row['in_limit_ratio_mean']:.1f}")
        console.print(table)
        paths = self.storage.save_bench(runs, summary, out or cfg.bench.output_dir)
        console.print(f"\n✓ {paths[0]}")
        console.print(f"✓ {paths[1]}")
        return True


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='DecompGrind 研磨工作台 - 切削平面分解規劃與力量適應策略的模擬',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
範例:
  # 產生 WP-E1 工件點雲
  python grind_tracker.py gen-workpiece --workpiece WP-E1 --seed 1

  # 在 WP-T1、WP-T2 各錄製 5 次示範並建立資料集
  python grind_tracker.py demo --out demos

  # 訓練策略
  python grind_tracker.py train --dataset demos/dataset_n20.csv --out models/lcfa.pt

  # 對 WP-E2 做一次 GCSP 規劃
  python grind_tracker.py plan --workpiece WP-E2 --out plans/wp_e2.json

  # 以提出的方法研磨 WP-E3
  python grind_tracker.py grind --workpiece WP-E3 --model models/lcfa.pt

  # 定速基準（需要示範計算進給）
  python grind_tracker.py grind --workpiece WP-S5 --method Demo-Speed-1 --demos demos/episodes --single

  # 執行 WP-S 基準套組
  python grind_tracker.py bench --suite single-removal
        """
    )
    parser.add_argument('--config', type=str, help='設定檔路徑（預設: data/decompgrind.ini）')
    parser.add_argument('--data-dir', type=str, help='資料目錄（預設: data）')
    parser.add_argument('--log-level', type=str, default='INFO', help='日誌等級 (預設: INFO)')

    subparsers = parser.add_subparsers(dest='command', help='可用指令')

    def add_workpiece_args(p):
        p.add_argument('--workpiece', type=str, help=f"工件名稱 ({', '.join(STANDARD_WORKPIECES)})")
        p.add_argument('--regions', type=str, help='自訂區域 role:diameter:height,...')
        p.add_argument('--density', type=float, help='自訂工件密度 (%%)')
        p.add_argument('--resolution', type=float, help='取樣密度 (點/mm³)')
        p.add_argument('--seed', type=int, default=0, help='亂數種子 (預設: 0)')

    gen_parser = subparsers.add_parser('gen-workpiece', help='產生工件點雲')
    add_workpiece_args(gen_parser)
    gen_parser.add_argument('--out', type=str, help='輸出檔名前綴（相對於資料目錄）')

    demo_parser = subparsers.add_parser('demo', help='錄製示範並建立資料集')
    demo_parser.add_argument('--workpieces', type=str, help='工件列表，逗號分隔 (預設: 設定檔)')
    demo_parser.add_argument('--repetitions', type=int, help='每個工件的示範次數')
    demo_parser.add_argument('--window', type=int, help='視窗長度 n')
    demo_parser.add_argument('--seed', type=int, default=0, help='亂數種子 (預設: 0)')
    demo_parser.add_argument('--out', type=str, default='demos', help='輸出目錄 (預設: demos)')

    train_parser = subparsers.add_parser('train', help='訓練 LCFA 策略')
    train_parser.add_argument('--dataset', type=str, help='資料集 CSV')
    train_parser.add_argument('--demos', type=str, help='示範目錄（直接由示範建立資料集）')
    train_parser.add_argument('--window', type=int, help='視窗長度 n')
    train_parser.add_argument('--epochs', type=int, help='訓練 epochs')
    train_parser.add_argument('--seed', type=int, help='訓練種子')
    train_parser.add_argument('--out', type=str, default='models/lcfa.pt', help='模型輸出路徑')

    plan_parser = subparsers.add_parser('plan', help='GCSP 規劃切削平面')
    add_workpiece_args(plan_parser)
    plan_parser.add_argument('--shape', type=str, help='目前形狀 .xyz（預設: 工件初始形狀）')
    plan_parser.add_argument('--target', type=str, help='目標形狀 .xyz（預設: 工件目標形狀）')
    plan_parser.add_argument('--horizon', type=int, help='規劃時域 H')
    plan_parser.add_argument('--search', type=str, choices=['auto', 'greedy', 'exhaustive'], help='搜尋模式')
    plan_parser.add_argument('--out', type=str, help='規劃結果 JSON')

    grind_parser = subparsers.add_parser('grind', help='完整研磨一個工件')
    add_workpiece_args(grind_parser)
    grind_parser.add_argument('--method', type=str, default='Proposed',
                              help=f"方法 ({', '.join(v.value for v in MethodVariant)})")
    grind_parser.add_argument('--model', type=str, help='策略模型（預設: 重新錄製示範並訓練）')
    grind_parser.add_argument('--demos', type=str, help='示範目錄（Demo-Speed 進給）')
    grind_parser.add_argument('--single', action='store_true', help='只做一次水平移除（WP-S 實驗）')
    grind_parser.add_argument('--out', type=str, default='runs', help='報告目錄 (預設: runs)')

    bench_parser = subparsers.add_parser('bench', help='執行基準實驗')
    bench_parser.add_argument('--suite', type=str, default='all', choices=list(BENCH_SUITES),
                              help='基準套組 (預設: all)')
    bench_parser.add_argument('--seeds', type=str, help='種子列表，逗號分隔')
    bench_parser.add_argument('--workers', type=int, help='平行行程數')
    bench_parser.add_argument('--model', type=str, help='WP-T 策略模型（取代套組內訓練的模型）')
    bench_parser.add_argument('--out', type=str, help='輸出目錄 (預設: 設定檔 output_dir)')
    return parser


def run_command(args: argparse.Namespace) -> bool:
    config = load_config(args.config)
    config = override(config, 'model', window=getattr(args, 'window', None))
    config = override(config, 'train', epochs=getattr(args, 'epochs', None),
                      seed=getattr(args, 'seed', None) if args.command == 'train' else None)
    if args.command == 'plan':
        config = override(config, 'planner', horizon=args.horizon, search=args.search)
    if args.command == 'bench':
        config = override(config, 'bench', seeds=parse_seeds(args.seeds) if args.seeds else None,
                          workers=args.workers)
    tracker = GrindTracker(config, args.data_dir)

    if args.command == 'gen-workpiece':
        spec = tracker._spec(args.workpiece, args.regions, args.density, args.resolution)
        out = args.out or f"workpieces/{spec.name}_s{args.seed}"
        return tracker.gen_workpiece(spec, args.seed, out)
    if args.command == 'demo':
        names = [n.strip() for n in args.workpieces.split(',')] if args.workpieces else list(config.expert.workpieces)
        repetitions = config.expert.repetitions if args.repetitions is None else args.repetitions
        return tracker.demo(names, repetitions, args.seed, args.out)
    if args.command == 'train':
        return tracker.train(args.dataset, args.demos, args.out)
    if args.command == 'plan':
        spec = tracker._spec(args.workpiece, args.regions, args.density, args.resolution)
        return tracker.plan(spec, args.seed, args.shape, args.target, args.out)
    if args.command == 'grind':
        spec = tracker._spec(args.workpiece, args.regions, args.density, args.resolution)
        return tracker.grind(spec, args.method, args.model, args.demos, args.seed, args.single, args.out)
    if args.command == 'bench':
        return tracker.bench(args.suite, args.model, args.out)
    raise GrindError(f"未知指令 {args.command}")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 0

    setup_logging(args.log_level)
    try:
        return 0 if run_command(args) else 1
    except GrindError as e:
        error_console.print(f"\n✗ 錯誤: {e}")
        return 1
    except Exception as e:
        error_console.print(f"\n✗ 發生錯誤: {e}")
        traceback.print_exc()
        return 2


if __name__ == '__main__':
    sys.exit(main())
