#!/usr/bin/env python3
"""
DecompGrind Orchestrator Module
觀測 → GCSP 規劃 → 定位 → LCFA 研磨 → 重複；比較方法、指標與基準實驗
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from grind_config import BenchConfig, GrindConfig
from grind_expert import (
    Dataset,
    Episode,
    build_dataset,
    demonstrate,
    mean_feed,
    record_demonstrations,
    record_on_state,
)
from grind_geometry import (
    AXIS_NORMAL,
    AXIS_TANGENTIAL,
    ContactState,
    CuttingSurface,
    PointCloud,
    chamfer,
    split,
)
from grind_planner import PlannerConfig, PlanningError, candidate_surfaces, plan
from grind_policy import LeadGuard, PolicyLeader, PolicyModel, grind_until_surface, train
from grind_sim import (
    GrindOutcome,
    GrindSimState,
    LeaderSource,
    material_for,
    prepare_state,
    run_bilateral,
)
from grind_workpieces import WorkpieceSpec, gen_workpiece, get_workpiece

logger = logging.getLogger(__name__)

# 形狀誤差低於此值視為已達目標 (mm²)
AT_TARGET_ERROR = 1e-9


class MethodVariant(Enum):
    PROPOSED = 'Proposed'
    RAND_HYB = 'Rand-Hyb'
    CSP_HYB = 'CSP-Hyb'
    DEMO_SPEED_1 = 'Demo-Speed-1'
    DEMO_SPEED_2 = 'Demo-Speed-2'
    BCIL_FULL = 'BCIL-full'
    BCIL_ALL = 'BCIL-all'

    @classmethod
    def parse(cls, name: str) -> 'MethodVariant':
        for variant in cls:
            if variant.value.lower() == name.strip().lower():
                return variant
        raise PlanningError(f"未知方法 {name}，可用: {', '.join(v.value for v in cls)}")


@dataclass(eq=False)
class RunReport:
    """
    一次完整研磨的結果

    trace_times / trace_errors 為每次形狀觀測的（模擬）時間與 Chamfer 誤差；
    execution_time 包含觀測、規劃與研磨時間。
    """
    method: str
    workpiece: str
    seed: int
    trace_times: List[float]
    trace_errors: List[float]
    execution_time: float
    grinding_time: float
    in_limit_ratio: float
    final_shape: PointCloud = field(repr=False)
    termination: str = 'converged'
    observations: int = 0
    planning_steps: int = 0
    aborts: int = 0
    surfaces: List[dict] = field(default_factory=list)
    force_trace: Optional[pd.DataFrame] = field(default=None, repr=False)

    @property
    def initial_error(self) -> float:
        return self.trace_errors[0]

    @property
    def final_error(self) -> float:
        return self.trace_errors[-1]

    @property
    def trace(self) -> pd.DataFrame:
        return pd.DataFrame({'time': self.trace_times, 'chamfer': self.trace_errors})

    def to_record(self) -> dict:
        return {
            'method': self.method,
            'workpiece': self.workpiece,
            'seed': self.seed,
            'termination': self.termination,
            'execution_time': self.execution_time,
            'grinding_time': self.grinding_time,
            'in_limit_ratio': self.in_limit_ratio,
            'initial_error': self.initial_error,
            'final_error': self.final_error,
            'observations': self.observations,
            'planning_steps': self.planning_steps,
            'aborts': self.aborts,
            'final_points': self.final_shape.count,
            'surfaces': list(self.surfaces),
            'trace': [{'time': t, 'chamfer': e} for t, e in zip(self.trace_times, self.trace_errors)],
        }


class ConstantFeedLeader(LeaderSource):
    """以固定法向進給推進的領導端（示範速度基準）"""

    def __init__(self, feed: float, dt: float = 0.001):
        if not feed > 0:
            raise PlanningError(f"進給必須 > 0，收到 {feed}")
        self.feed = feed
        self.rate_hz = 1.0 / dt
        self.start_position = 0.0
        self.start_time = 0.0

    def reset(self, state: GrindSimState) -> None:
        self.start_position = float(state.follower.position[AXIS_NORMAL])
        self.start_time = state.time

    def command(self, state: GrindSimState, history: List[ContactState]) -> ContactState:
        follower = state.follower
        position = follower.position.copy()
        position[AXIS_NORMAL] = self.start_position + self.feed * (state.time - self.start_time)
        velocity = np.array([self.feed, follower.velocity[AXIS_TANGENTIAL]])
        return ContactState(position, velocity, -follower.force, role='leader',
                            orientation=follower.orientation)


class ForceCappedFeedLeader(LeaderSource):
    """
    限制過大力量的混合控制器：切向力低於上限時以固定進給前進，達上限時停在從動端位置
    """

    def __init__(self, feed: float, force_cap: float, dt: float = 0.001):
        if not (feed > 0 and force_cap > 0):
            raise PlanningError("進給與力量上限必須 > 0")
        self.feed = feed
        self.force_cap = force_cap
        self.dt = dt
        self.rate_hz = 1.0 / dt
        self.position = 0.0

    def reset(self, state: GrindSimState) -> None:
        self.position = float(state.follower.position[AXIS_NORMAL])

    def command(self, state: GrindSimState, history: List[ContactState]) -> ContactState:
        follower = state.follower
        current = float(follower.position[AXIS_NORMAL])
        if state.tangential_force >= self.force_cap:
            self.position = current
            feed = 0.0
        else:
            self.position = max(self.position, current) + self.feed * self.dt
            feed = self.feed
        position = np.array([self.position, follower.position[AXIS_TANGENTIAL]])
        velocity = np.array([feed, follower.velocity[AXIS_TANGENTIAL]])
        return ContactState(position, velocity, -follower.force, role='leader',
                            orientation=follower.orientation)


def should_stop(errors: Sequence[float], ratio: float = 0.05) -> bool:
    """
    誤差下降過一次，且最近兩次更新的變化都小於初始誤差的 ratio 時停止
    """
    if len(errors) < 3:
        return False
    decreased = any(b < a for a, b in zip(errors, errors[1:]))
    bound = ratio * errors[0]
    return decreased and abs(errors[-1] - errors[-2]) < bound and abs(errors[-2] - errors[-3]) < bound


def random_surface(shape: PointCloud, cfg: PlannerConfig, rng: np.random.Generator) -> CuttingSurface:
    """
    在規劃網格中隨機選一個不會移除整個形狀的切削平面

    Raises:
        PlanningError: 沒有可行候選
    """
    feasible = [s for s in candidate_surfaces(shape, cfg)
                if not split(shape, s).next_shape.is_empty()]
    if not feasible:
        raise PlanningError("沒有可行的隨機切削平面")
    return feasible[int(rng.integers(len(feasible)))]


class _RunLog:
    """累計模擬時鐘、觀測軌跡與研磨統計"""

    def __init__(self, target: PointCloud, bench: BenchConfig):
        self.target = target
        self.bench = bench
        self.clock = 0.0
        self.grinding_time = 0.0
        self.times: List[float] = []
        self.errors: List[float] = []
        self.steps = 0
        self.in_limit_steps = 0
        self.planning_steps = 0
        self.aborts = 0
        self.surfaces: List[dict] = []

    def observe(self, shape: PointCloud) -> float:
        self.clock += self.bench.observation_time
        error = chamfer(shape, self.target) if not shape.is_empty() else math.inf
        self.times.append(self.clock)
        self.errors.append(error)
        logger.debug("observation %d at %.1f s: chamfer %.4f mm²", len(self.errors), self.clock, error)
        return error

    def charge_planning(self, elapsed: float) -> None:
        self.planning_steps += 1
        self.clock += elapsed if self.bench.planning_charge is None else self.bench.planning_charge

    def add_grind(self, outcome: GrindOutcome, surface: CuttingSurface) -> None:
        self.clock += outcome.elapsed
        self.grinding_time += outcome.elapsed
        self.steps += outcome.steps
        self.in_limit_steps += outcome.in_limit_steps
        if outcome.aborted_force_limit:
            self.aborts += 1
        record = surface.to_record()
        record.update(result=outcome.reason, elapsed=outcome.elapsed)
        self.surfaces.append(record)

    def report(self, method: str, spec: WorkpieceSpec, seed: int, shape: PointCloud,
               termination: str) -> RunReport:
        ratio = self.in_limit_steps / self.steps if self.steps else 1.0
        return RunReport(method, spec.name, seed, list(self.times), list(self.errors),
                         self.clock, self.grinding_time, ratio, shape, termination,
                         len(self.errors), self.planning_steps, self.aborts, list(self.surfaces))


def _grind_with(method: MethodVariant, shape: PointCloud, surface: CuttingSurface,
                spec: WorkpieceSpec, cfg: GrindConfig, model: Optional[PolicyModel],
                feeds: Dict[MethodVariant, float], log: bool = False) -> GrindOutcome:
    """依方法研磨一個移除形狀；log 為 True 時保留 1 kHz 力量紀錄"""
    sim_cfg = cfg.sim
    sim = prepare_state(shape, surface, material_for(spec.density, sim_cfg), sim_cfg)
    if method is MethodVariant.PROPOSED:
        if model is None:
            raise PlanningError("Proposed 需要訓練完成的策略模型")
        return grind_until_surface(model, sim, surface, sim_cfg.eps, sim_cfg.persistence,
                                   sim_cfg.force_limit, sim_cfg.timeout, sim_cfg, log=log,
                                   guard=LeadGuard.from_expert(cfg.expert))
    if method in (MethodVariant.DEMO_SPEED_1, MethodVariant.DEMO_SPEED_2):
        if method not in feeds:
            raise PlanningError(f"{method.value} 需要示範平均進給")
        return run_bilateral(sim, ConstantFeedLeader(feeds[method], sim_cfg.dt), sim_cfg,
                             target=surface, log=log)
    if method in (MethodVariant.RAND_HYB, MethodVariant.CSP_HYB):
        source = ForceCappedFeedLeader(cfg.bench.hybrid_feed, cfg.bench.hybrid_force_cap, sim_cfg.dt)
        return run_bilateral(sim, source, sim_cfg, target=surface, stop_on_reach=False,
                             timeout=cfg.bench.hybrid_duration, log=log)
    raise PlanningError(f"{method.value} 不使用切削平面研磨")


def run_decompgrind(spec: WorkpieceSpec, cfg: GrindConfig, model: Optional[PolicyModel] = None,
                    seed: int = 0, method: MethodVariant = MethodVariant.PROPOSED,
                    feeds: Optional[Dict[MethodVariant, float]] = None,
                    label: Optional[str] = None) -> RunReport:
    """
    DecompGrind 主迴圈

    每次觀測後規劃 replan_observation_period 個切削平面並逐一研磨；
    力量超限中止時立即回到觀測。誤差下降過一次且最近兩次變化都小於
    初始誤差的 stop_ratio 時結束。

    Args:
        spec: 工件規格
        cfg: 全部設定
        model: 策略模型（Proposed）
        seed: 工件取樣與隨機平面的種子
        method: Proposed / CSP-Hyb / Rand-Hyb / Demo-Speed-k
        feeds: Demo-Speed-k 的固定進給 (mm/s)
        label: 報告中的方法名稱（預設為 method.value）

    Returns:
        RunReport
    """
    feeds = feeds or {}
    bench = cfg.bench
    initial, target = gen_workpiece(spec, seed)
    rng = np.random.default_rng(seed)
    log = _RunLog(target, bench)
    shape = initial
    budget = bench.max_planning_steps
    period = cfg.planner.replan_observation_period

    error = log.observe(shape)
    termination = None
    while termination is None:
        if error <= AT_TARGET_ERROR:
            if len(log.errors) < 2:
                error = log.observe(shape)
                continue
            termination = 'at-target'
            break
        if should_stop(log.errors, bench.stop_ratio):
            termination = 'converged'
            break
        if log.planning_steps >= budget:
            termination = 'timeout'
            break

        predicted = shape
        for _ in range(period):
            if log.planning_steps >= budget:
                break
            started = time.perf_counter()
            try:
                if method is MethodVariant.RAND_HYB:
                    surface = random_surface(predicted, cfg.planner, rng)
                    predicted = split(predicted, surface).next_shape
                else:
                    result = plan(predicted, target, cfg.planner)
                    surface = result.surfaces[0]
                    predicted = result.predicted_shapes[1]
            except PlanningError as e:
                logger.warning("%s on %s: planning failed (%s)", method.value, spec.name, e)
                termination = 'no-feasible-plan'
                break
            log.charge_planning(time.perf_counter() - started)
            outcome = _grind_with(method, shape, surface, spec, cfg, model, feeds)
            log.add_grind(outcome, surface)
            shape = outcome.final_state.workpiece
            if outcome.aborted_force_limit:
                logger.info("%s on %s: force limit, restarting from observation", method.value, spec.name)
                break
            if shape.is_empty():
                termination = 'consumed'
                break
        error = log.observe(shape)

    report = log.report(label or method.value, spec, seed, shape, termination)
    logger.info("%s on %s (seed %d): %s, %.1f s, chamfer %.4f → %.4f, in-limit %.3f",
                report.method, spec.name, seed, termination, report.execution_time,
                report.initial_error, report.final_error, report.in_limit_ratio)
    return report


def run_bcil(spec: WorkpieceSpec, cfg: GrindConfig, model: PolicyModel, seed: int = 0,
             label: str = MethodVariant.BCIL_FULL.value) -> RunReport:
    """
    不分解的模仿學習基準：策略不經 GCSP，水平連續研磨 bcil_duration 秒
    """
    initial, target = gen_workpiece(spec, seed)
    log = _RunLog(target, cfg.bench)
    log.observe(initial)
    surface = spec.flat_surface()
    sim = prepare_state(initial, surface, material_for(spec.density, cfg.sim), cfg.sim)
    outcome = run_bilateral(sim, PolicyLeader(model, LeadGuard.from_expert(cfg.expert)), cfg.sim, target=None,
                            timeout=cfg.bench.bcil_duration, log=False)
    log.add_grind(outcome, surface)
    shape = outcome.final_state.workpiece
    log.observe(shape)
    termination = 'force-limit' if outcome.aborted_force_limit else 'duration'
    return log.report(label, spec, seed, shape, termination)


def run_baseline(variant: MethodVariant, spec: WorkpieceSpec, cfg: GrindConfig,
                 model: Optional[PolicyModel] = None, seed: int = 0,
                 feeds: Optional[Dict[MethodVariant, float]] = None) -> RunReport:
    """
    比較方法的完整研磨

    Rand-Hyb / CSP-Hyb 以限力混合控制固定時間研磨；Demo-Speed-k 以示範平均進給定速研磨；
    BCIL 系列需要以連續示範訓練的模型。
    """
    if variant is MethodVariant.PROPOSED:
        return run_decompgrind(spec, cfg, model, seed)
    if variant in (MethodVariant.BCIL_FULL, MethodVariant.BCIL_ALL):
        if model is None:
            raise PlanningError(f"{variant.value} 需要以連續示範訓練的模型")
        return run_bcil(spec, cfg, model, seed, variant.value)
    return run_decompgrind(spec, cfg, model, seed, variant, feeds)


def grind_single_removal(method: MethodVariant, spec: WorkpieceSpec, cfg: GrindConfig,
                         model: Optional[PolicyModel] = None, seed: int = 0,
                         feeds: Optional[Dict[MethodVariant, float]] = None) -> RunReport:
    """
    單一水平移除（WP-S 實驗）：只計研磨時間，不含觀測與規劃
    """
    feeds = feeds or {}
    initial, target = gen_workpiece(spec, seed)
    surface = spec.flat_surface()
    outcome = _grind_with(method, initial, surface, spec, cfg, model, feeds, log=True)
    shape = outcome.final_state.workpiece
    errors = [chamfer(initial, target), chamfer(shape, target) if not shape.is_empty() else math.inf]
    record = surface.to_record()
    record.update(result=outcome.reason, elapsed=outcome.elapsed)
    termination = {'reached': 'reached', 'force-limit': 'force-limit'}.get(outcome.reason, 'timeout')
    return RunReport(method.value, spec.name, seed, [0.0, outcome.elapsed], errors,
                     outcome.elapsed, outcome.elapsed, outcome.in_limit_ratio, shape, termination,
                     observations=2, planning_steps=0,
                     aborts=int(outcome.aborted_force_limit), surfaces=[record],
                     force_trace=outcome.force_trace)


def error_threshold(report: RunReport, fraction: float = 0.2) -> float:
    """final + fraction·(initial − final)"""
    return report.final_error + fraction * (report.initial_error - report.final_error)


ThresholdLike = Union[None, float, Mapping[Tuple[str, int], float]]


def _threshold_for(report: RunReport, threshold: ThresholdLike) -> float:
    if threshold is None:
        return error_threshold(report)
    if isinstance(threshold, Mapping):
        shared = threshold.get((report.workpiece, report.seed))
        return error_threshold(report) if shared is None else shared
    return float(threshold)


def time_to_threshold(report: RunReport, threshold: ThresholdLike = None) -> float:
    """
    誤差第一次 ≤ threshold 的觀測時間

    threshold 可為數值、以 (工件, 種子) 為鍵的對照表，或 None
    （使用此報告自己的 final + 0.2·(initial − final)）。
    """
    threshold = _threshold_for(report, threshold)
    for t, e in zip(report.trace_times, report.trace_errors):
        if e <= threshold:
            return t
    return math.nan


ANCHOR_METHOD = MethodVariant.PROPOSED.value
ANCHOR_SUITES = ('convergence', 'full-grind')


def shared_thresholds(results: Sequence[Tuple['BenchCell', RunReport]]) -> Dict[Tuple[str, int], float]:
    """
    每個 (工件, 種子) 共用的誤差門檻，取自 Proposed 在收斂套組的結果
    （沒有收斂套組時改用 full-grind）；所有方法以同一門檻計算 time-to-threshold
    """
    thresholds: Dict[Tuple[str, int], float] = {}
    for suite in reversed(ANCHOR_SUITES):
        for cell, report in results:
            if cell.suite == suite and report.method == ANCHOR_METHOD and math.isfinite(report.final_error):
                thresholds[(report.workpiece, report.seed)] = error_threshold(report)
    return thresholds


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if len(arr) == 0:
        return math.nan, math.nan
    if len(arr) == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1))


def metrics(reports: Sequence[RunReport], threshold: ThresholdLike = None) -> dict:
    """
    同一 (方法, 工件) 多次執行的摘要：平均與樣本標準差

    Args:
        reports: 同一組合的多次執行
        threshold: time-to-threshold 的誤差門檻，見 time_to_threshold

    Returns:
        dict，單次執行時標準差為 0；threshold_mean 為實際使用的門檻平均
    """
    if not reports:
        raise PlanningError("沒有可彙整的執行結果")
    summary = {
        'method': reports[0].method,
        'workpiece': reports[0].workpiece,
        'runs': len(reports),
    }
    columns = {
        'execution_time': [r.execution_time for r in reports],
        'grinding_time': [r.grinding_time for r in reports],
        'final_error': [r.final_error for r in reports],
        'in_limit_ratio': [r.in_limit_ratio for r in reports],
        'time_to_threshold': [time_to_threshold(r, threshold) for r in reports],
        'threshold': [_threshold_for(r, threshold) for r in reports],
    }
    for name, values in columns.items():
        summary[f'{name}_mean'], summary[f'{name}_std'] = _mean_std(values)
    summary['aborted_runs'] = sum(1 for r in reports if r.aborts)
    summary['terminations'] = ','.join(sorted({r.termination for r in reports}))
    return summary


# ---------------------------------------------------------------------------
# 策略準備與基準實驗
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class PolicyBundle:
    """基準實驗共用的模型與示範進給"""
    model: PolicyModel
    episodes: List[Episode]
    dataset: Dataset
    feeds: Dict[MethodVariant, float] = field(default_factory=dict)
    extra_models: Dict[str, PolicyModel] = field(default_factory=dict)


def _specs(names: Iterable[str], resolution: Optional[float]) -> List[WorkpieceSpec]:
    return [get_workpiece(name, resolution) for name in names]


def demo_feeds(episodes: Sequence[Episode]) -> Dict[MethodVariant, float]:
    """Demo-Speed-1/2 的進給：WP-T1 / WP-T2 示範的平均法向速度"""
    feeds = {}
    for variant, name in ((MethodVariant.DEMO_SPEED_1, 'WP-T1'), (MethodVariant.DEMO_SPEED_2, 'WP-T2')):
        matching = [ep for ep in episodes if ep.workpiece == name]
        if matching:
            feeds[variant] = mean_feed(matching)
            logger.info("%s feed from %s demos: %.3f mm/s", variant.value, name, feeds[variant])
    return feeds


def prepare_policy(cfg: GrindConfig, seed: int = 0,
                   episodes: Optional[List[Episode]] = None) -> PolicyBundle:
    """
    錄製 WP-T 示範、建立資料集、訓練策略，並計算 Demo-Speed-1/2 的進給
    """
    if episodes is None:
        episodes = record_training_demonstrations(cfg, seed)
    dataset = build_dataset(episodes, cfg.model.window, cfg.model.train_rate_hz,
                            touch_off=cfg.model.touch_off)
    model = train(dataset, cfg.model, cfg.train)
    return PolicyBundle(model, episodes, dataset, demo_feeds(episodes))


def record_training_demonstrations(cfg: GrindConfig, seed: int = 0) -> List[Episode]:
    specs = _specs(cfg.expert.workpieces, cfg.bench.resolution)
    return record_demonstrations(specs, cfg.expert.repetitions, cfg.sim, cfg.expert, seed)


def record_continuous_demonstrations(specs: Sequence[WorkpieceSpec], cfg: GrindConfig,
                                     seed: int = 0) -> List[Episode]:
    """BCIL 用：示範者不經分解，水平連續研磨整個工件 bcil_duration 秒"""
    expert = replace(cfg.expert, duration=cfg.bench.bcil_duration)
    episodes = []
    for spec in specs:
        initial, _ = gen_workpiece(spec, seed)
        surface = spec.flat_surface()
        sim = prepare_state(initial, surface, material_for(spec.density, cfg.sim), cfg.sim)
        episodes.append(record_on_state(sim, surface, cfg.sim, expert, spec.name))
    return episodes


def record_segmented_demonstrations(spec: WorkpieceSpec, cfg: GrindConfig, seed: int = 0,
                                    max_segments: Optional[int] = None) -> List[Episode]:
    """
    示範者在 GCSP 分解出的每個移除形狀上示範（Training WP-E）
    """
    initial, target = gen_workpiece(spec, seed)
    material = material_for(spec.density, cfg.sim)
    max_segments = max_segments or cfg.bench.max_planning_steps
    shape = initial
    errors = [chamfer(shape, target)]
    episodes = []
    for _ in range(max_segments):
        if should_stop(errors, cfg.bench.stop_ratio) or errors[-1] <= AT_TARGET_ERROR:
            break
        try:
            surface = plan(shape, target, cfg.planner).surfaces[0]
        except PlanningError as e:
            logger.warning("segmented demo on %s stopped: %s", spec.name, e)
            break
        sim = prepare_state(shape, surface, material, cfg.sim)
        episode, outcome = demonstrate(sim, surface, cfg.sim, cfg.expert, spec.name)
        episodes.append(episode)
        shape = outcome.final_state.workpiece
        if shape.is_empty():
            break
        errors.append(chamfer(shape, target))
    logger.info("segmented demos on %s: %d removal shapes", spec.name, len(episodes))
    return episodes


BENCH_SUITES = ('single-removal', 'full-grind', 'convergence', 'training-data', 'all')
SUITE_WORKPIECES = {
    'single-removal': ('WP-S1', 'WP-S2', 'WP-S3', 'WP-S4', 'WP-S5'),
    'full-grind': ('WP-E1', 'WP-E2', 'WP-E3'),
    'convergence': ('WP-E1', 'WP-E2', 'WP-E3'),
    'training-data': ('WP-E2',),
}
SUITE_METHODS = {
    'single-removal': (MethodVariant.PROPOSED, MethodVariant.DEMO_SPEED_1, MethodVariant.DEMO_SPEED_2),
    'full-grind': (MethodVariant.PROPOSED, MethodVariant.DEMO_SPEED_1, MethodVariant.DEMO_SPEED_2),
    'convergence': (MethodVariant.PROPOSED, MethodVariant.RAND_HYB, MethodVariant.CSP_HYB,
                    MethodVariant.BCIL_FULL, MethodVariant.BCIL_ALL),
}
TRAINING_WP_T = 'Training WP-T'
TRAINING_WP_E = 'Training WP-E'


@dataclass(frozen=True)
class BenchCell:
    suite: str
    method: str
    workpiece: str
    seed: int


def bench_cells(suite: str, seeds: Sequence[int]) -> List[BenchCell]:
    """
    列出基準實驗的 (套組, 方法, 工件, 種子) 組合

    Raises:
        PlanningError: 未知套組
    """
    if suite not in BENCH_SUITES:
        raise PlanningError(f"未知的基準套組 {suite}，可用: {BENCH_SUITES}")
    suites = [s for s in BENCH_SUITES if s != 'all'] if suite == 'all' else [suite]
    cells = []
    for name in suites:
        methods = (TRAINING_WP_T, TRAINING_WP_E) if name == 'training-data' \
            else tuple(m.value for m in SUITE_METHODS[name])
        for method in methods:
            for workpiece in SUITE_WORKPIECES[name]:
                for seed in seeds:
                    cells.append(BenchCell(name, method, workpiece, seed))
    return cells


BCIL_WORKPIECES = {
    MethodVariant.BCIL_FULL: ('WP-E1',),
    MethodVariant.BCIL_ALL: ('WP-E1', 'WP-E2', 'WP-E3'),
}


def bcil_model(variant: MethodVariant, cfg: GrindConfig, seed: int = 0) -> PolicyModel:
    """以 WP-E 連續示範訓練 BCIL-full / BCIL-all 的策略"""
    if variant not in BCIL_WORKPIECES:
        raise PlanningError(f"{variant.value} 不是 BCIL 方法")
    episodes = record_continuous_demonstrations(_specs(BCIL_WORKPIECES[variant], cfg.bench.resolution), cfg, seed)
    return train(build_dataset(episodes, cfg.model.window, cfg.model.train_rate_hz,
                               touch_off=cfg.model.touch_off), cfg.model, cfg.train)


def prepare_bench_models(cfg: GrindConfig, cells: Sequence[BenchCell], seed: int = 0) -> PolicyBundle:
    """依需要的方法訓練 WP-T 策略，以及 BCIL / Training WP-E 的額外模型"""
    bundle = prepare_policy(cfg, seed)
    methods = {c.method for c in cells}
    for variant in BCIL_WORKPIECES:
        if variant.value in methods:
            bundle.extra_models[variant.value] = bcil_model(variant, cfg, seed)
    if TRAINING_WP_E in methods:
        episodes = record_segmented_demonstrations(get_workpiece('WP-E1', cfg.bench.resolution), cfg, seed)
        dataset = build_dataset(episodes, cfg.model.window, cfg.model.train_rate_hz,
                                touch_off=cfg.model.touch_off)
        dataset = dataset.truncated(len(bundle.dataset))
        logger.info("Training WP-E: %d transitions (WP-T: %d)", len(dataset), len(bundle.dataset))
        bundle.extra_models[TRAINING_WP_E] = train(dataset, cfg.model, cfg.train)
    return bundle


def run_cell(cell: BenchCell, cfg: GrindConfig, bundle: PolicyBundle) -> RunReport:
    """執行一個基準組合；每個組合擁有自己的模擬實例"""
    spec = get_workpiece(cell.workpiece, cfg.bench.resolution)
    if cell.method == TRAINING_WP_T:
        return run_decompgrind(spec, cfg, bundle.model, cell.seed, label=TRAINING_WP_T)
    if cell.method == TRAINING_WP_E:
        return run_decompgrind(spec, cfg, bundle.extra_models[TRAINING_WP_E], cell.seed,
                               label=TRAINING_WP_E)
    variant = MethodVariant.parse(cell.method)
    if cell.suite == 'single-removal':
        return grind_single_removal(variant, spec, cfg, bundle.model, cell.seed, bundle.feeds)
    model = bundle.extra_models.get(variant.value, bundle.model)
    return run_baseline(variant, spec, cfg, model, cell.seed, bundle.feeds)


def _run_cell_job(args) -> Tuple[BenchCell, RunReport]:
    cell, cfg, bundle = args
    report = run_cell(cell, cfg, bundle)
    return cell, report


def run_benchmark(suite: str, cfg: GrindConfig, bundle: Optional[PolicyBundle] = None,
                  progress=None) -> Tuple[List[Tuple[BenchCell, RunReport]], pd.DataFrame, pd.DataFrame]:
    """
    執行基準套組

    Args:
        suite: single-removal / full-grind / convergence / training-data / all
        cfg: 全部設定（種子與平行數量取自 [bench]）
        bundle: 已準備的模型；None 時依套組需求訓練
        progress: 每完成一個組合呼叫一次的 callback

    Returns:
        (組合與報告列表, 每次執行的 DataFrame, 摘要 DataFrame)；
        time-to-threshold 以 shared_thresholds 的同一門檻計算，門檻寫入 threshold 欄位
    """
    cells = bench_cells(suite, cfg.bench.seeds)
    bundle = bundle or prepare_bench_models(cfg, cells)
    results: List[Tuple[BenchCell, RunReport]] = []
    if cfg.bench.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.bench.workers) as pool:
            for cell, report in pool.map(_run_cell_job, [(c, cfg, bundle) for c in cells]):
                results.append((cell, report))
                if progress:
                    progress(cell, report)
    else:
        for cell in cells:
            report = run_cell(cell, cfg, bundle)
            results.append((cell, report))
            if progress:
                progress(cell, report)

    thresholds = shared_thresholds(results)
    runs = pd.DataFrame([
        {'suite': cell.suite,
         **{k: v for k, v in report.to_record().items() if k not in ('surfaces', 'trace')},
         'threshold': _threshold_for(report, thresholds),
         'time_to_threshold': time_to_threshold(report, thresholds)}
        for cell, report in results
    ])
    groups: Dict[Tuple[str, str, str], List[RunReport]] = {}
    for cell, report in results:
        groups.setdefault((cell.suite, cell.method, cell.workpiece), []).append(report)
    summary = pd.DataFrame([{'suite': key[0], **metrics(group, thresholds)} for key, group in groups.items()])
    return results, runs, summary
