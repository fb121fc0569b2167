#!/usr/bin/env python3
"""
GCSP Planner Module
滾動時域切削平面規劃：在 [θ, ψ, x] 網格上最小化目標形狀誤差 + 移除形狀成本
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from grind_geometry import (
    KDTREE_THRESHOLD,
    CuttingSurface,
    GeometryError,
    GrindError,
    PointCloud,
    chamfer,
    split,
    surface_normal,
)

logger = logging.getLogger(__name__)

DEFAULT_ANGLES = tuple(math.radians(a) for a in range(-30, 31, 10))
DEFAULT_MIN_REMOVAL_HEIGHT = 0.5
SEARCH_MODES = ('auto', 'greedy', 'exhaustive')


class PlanningError(GrindError):
    """規劃設定無效或沒有可行的切削平面"""
    pass


@dataclass
class PlannerConfig:
    """
    GCSP 規劃設定，對應設定檔 [planner] 區段

    x_grid 為 None 時，x 候選值依目前形狀在各法向上的投影範圍以 x_step 自動產生。
    """
    horizon: int = 2
    theta_grid: Tuple[float, ...] = DEFAULT_ANGLES
    psi_grid: Tuple[float, ...] = DEFAULT_ANGLES
    x_grid: Optional[Tuple[float, ...]] = None
    x_step: float = 1.0
    k_c: float = 0.002
    min_removal_height: float = DEFAULT_MIN_REMOVAL_HEIGHT
    replan_observation_period: int = 2
    search: str = 'auto'
    exhaustive_limit: int = 200_000
    angle_bound: float = math.pi / 2
    workers: int = 1

    def __post_init__(self):
        self.theta_grid = tuple(float(v) for v in self.theta_grid)
        self.psi_grid = tuple(float(v) for v in self.psi_grid)
        if self.x_grid is not None:
            self.x_grid = tuple(float(v) for v in self.x_grid)
        if self.horizon < 1:
            raise PlanningError(f"規劃時域 H 必須 ≥ 1，收到 {self.horizon}")
        if not self.theta_grid or not self.psi_grid or (self.x_grid is not None and not self.x_grid):
            raise PlanningError("候選網格不可為空")
        if self.k_c < 0:
            raise PlanningError(f"k_c 不可為負，收到 {self.k_c}")
        if not self.x_step > 0:
            raise PlanningError(f"x_step 必須 > 0，收到 {self.x_step}")
        if self.replan_observation_period < 1:
            raise PlanningError("replan_observation_period 必須 ≥ 1")
        if self.search not in SEARCH_MODES:
            raise PlanningError(f"未知的搜尋模式 {self.search}，可用: {SEARCH_MODES}")
        for angle in self.theta_grid + self.psi_grid:
            if abs(angle) > self.angle_bound:
                raise PlanningError(f"候選角度 {math.degrees(angle):.1f}° 超出可達範圍")


@dataclass
class PlanResult:
    surfaces: List[CuttingSurface]
    per_step_cost: List[float]
    predicted_shapes: List[PointCloud] = field(repr=False)
    search: str = 'greedy'

    @property
    def total_cost(self) -> float:
        """(1/H)ΣC"""
        return sum(self.per_step_cost) / len(self.per_step_cost)

    def to_record(self) -> dict:
        return {
            'search': self.search,
            'total_cost': self.total_cost,
            'surfaces': [s.to_record() for s in self.surfaces],
            'per_step_cost': list(self.per_step_cost),
            'predicted_counts': [s.count for s in self.predicted_shapes],
        }


@dataclass
class _Candidate:
    surface: CuttingSurface
    cost: float
    next_shape: PointCloud
    key: Tuple[float, float, int]


def removal_cost(volume: float, height: float, k_c: float,
                 min_height: float = DEFAULT_MIN_REMOVAL_HEIGHT) -> float:
    """η = k_c·V/h；沒有移除時為 0"""
    if volume <= 0:
        return 0.0
    return k_c * volume / max(height, min_height)


def cost(target: PointCloud, shape: PointCloud, surface: CuttingSurface, k_c: float,
         min_height: float = DEFAULT_MIN_REMOVAL_HEIGHT, target_tree: Optional[cKDTree] = None) -> float:
    """
    單步成本 C = chamfer(G_O(shape, c), target) + η(shape, c)

    Raises:
        GeometryError: 形狀為空或切削後不剩任何點
    """
    return _split_cost(target, shape, surface, k_c, min_height, target_tree)[0]


def _split_cost(target: PointCloud, shape: PointCloud, surface: CuttingSurface, k_c: float,
                min_height: float, target_tree: Optional[cKDTree]) -> Tuple[float, PointCloud]:
    parts = split(shape, surface)
    removal = parts.removal_shape
    height = 0.0
    if not removal.is_empty():
        heights = removal.projections(surface.normal)
        height = float(heights.max() - heights.min())
    value = chamfer(parts.next_shape, target, target_tree) \
        + removal_cost(removal.volume, height, k_c, min_height)
    return value, parts.next_shape


def x_candidates(shape: PointCloud, theta: float, psi: float, cfg: PlannerConfig) -> Tuple[float, ...]:
    """x 候選值；自動模式涵蓋投影範圍並多一個不相交的值"""
    if cfg.x_grid is not None:
        return cfg.x_grid
    proj = shape.projections(surface_normal(theta, psi))
    lo = math.floor(proj.min() / cfg.x_step)
    hi = math.ceil(proj.max() / cfg.x_step)
    return tuple(float(i * cfg.x_step) for i in range(lo, hi + 1))


def candidate_surfaces(shape: PointCloud, cfg: PlannerConfig) -> List[CuttingSurface]:
    """依網格順序 (θ → ψ → x) 列出所有候選切削平面"""
    return [
        CuttingSurface(theta, psi, x)
        for theta in cfg.theta_grid
        for psi in cfg.psi_grid
        for x in x_candidates(shape, theta, psi, cfg)
    ]


def _target_index(target: PointCloud) -> Optional[cKDTree]:
    """目標點數超過門檻時建立可共用的 KD-tree"""
    if target.count > KDTREE_THRESHOLD:
        return cKDTree(target.points)
    return None


def _evaluate_orientation(shape: PointCloud, target: PointCloud, theta: float, psi: float,
                          cfg: PlannerConfig, target_tree: Optional[cKDTree] = None) -> List[_Candidate]:
    proj = shape.projections(surface_normal(theta, psi))
    evaluated = {}
    candidates = []
    for x in x_candidates(shape, theta, psi, cfg):
        surface = CuttingSurface(theta, psi, x)
        removed = int(np.count_nonzero(proj - x > 0.0))
        if removed == shape.count:
            continue
        # 同一法向下移除點數相同即移除集合相同
        if removed not in evaluated:
            evaluated[removed] = _split_cost(target, shape, surface, cfg.k_c,
                                             cfg.min_removal_height, target_tree)
        value, next_shape = evaluated[removed]
        candidates.append(_Candidate(surface, value, next_shape, (theta, psi, removed)))
    return candidates


def evaluate_stage(shape: PointCloud, target: PointCloud, cfg: PlannerConfig,
                   target_tree: Optional[cKDTree] = None) -> List[_Candidate]:
    """
    評估一個時域階段的所有可行候選，保持網格順序

    Raises:
        PlanningError: 沒有任何可行候選
    """
    if shape.is_empty() or target.is_empty():
        raise PlanningError("規劃需要非空的目前形狀與目標形狀")
    if target_tree is None:
        target_tree = _target_index(target)
    orientations = [(theta, psi) for theta in cfg.theta_grid for psi in cfg.psi_grid]
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            groups = list(pool.map(
                lambda o: _evaluate_orientation(shape, target, o[0], o[1], cfg, target_tree),
                orientations))
    else:
        groups = [_evaluate_orientation(shape, target, theta, psi, cfg, target_tree)
                  for theta, psi in orientations]
    candidates = [c for group in groups for c in group]
    if not candidates:
        raise PlanningError("所有候選切削平面都會移除整個形狀，沒有可行解")
    return candidates


def _best(candidates: List[_Candidate]) -> _Candidate:
    best = candidates[0]
    for candidate in candidates[1:]:
        if candidate.cost < best.cost:
            best = candidate
    return best


def greedy_plan(current: PointCloud, target: PointCloud, cfg: PlannerConfig) -> PlanResult:
    """逐階段取最小成本候選，並以 GCM 推演下一階段形狀"""
    shape = current
    tree = _target_index(target)
    surfaces, costs, shapes = [], [], [current]
    for _ in range(cfg.horizon):
        best = _best(evaluate_stage(shape, target, cfg, tree))
        surfaces.append(best.surface)
        costs.append(best.cost)
        shape = best.next_shape
        shapes.append(shape)
    return PlanResult(surfaces, costs, shapes, search='greedy')


def exhaustive_plan(current: PointCloud, target: PointCloud, cfg: PlannerConfig) -> PlanResult:
    """
    窮舉所有 H 步候選序列，回傳平均成本最小者（同分取網格順序較前者）
    """
    memo: Dict[tuple, Optional[tuple]] = {}
    tree = _target_index(target)

    def best_from(shape: PointCloud, depth: int, path: tuple) -> Optional[tuple]:
        if path in memo:
            return memo[path]
        try:
            candidates = evaluate_stage(shape, target, cfg, tree)
        except PlanningError:
            memo[path] = None
            return None
        best = None
        for candidate in candidates:
            if depth == 1:
                total, tail = candidate.cost, ([], [], [])
            else:
                rest = best_from(candidate.next_shape, depth - 1, path + (candidate.key,))
                if rest is None:
                    continue
                total = candidate.cost + rest[0]
                tail = rest[1]
            if best is None or total < best[0]:
                best = (total, ([candidate.surface] + tail[0],
                                [candidate.cost] + tail[1],
                                [candidate.next_shape] + tail[2]))
        memo[path] = best
        return best

    result = best_from(current, cfg.horizon, ())
    if result is None:
        raise PlanningError("窮舉搜尋找不到可行的切削平面序列")
    surfaces, costs, shapes = result[1]
    return PlanResult(surfaces, costs, [current] + shapes, search='exhaustive')


def plan(current: PointCloud, target: PointCloud, cfg: PlannerConfig) -> PlanResult:
    """
    GCSP：回傳 H 個切削平面、各步成本與推演形狀

    Args:
        current: 目前觀測（或推演）形狀
        target: 目標形狀
        cfg: 規劃設定

    Returns:
        PlanResult，predicted_shapes[0] 為 current

    Raises:
        PlanningError: 沒有可行候選
    """
    if current.is_empty() or target.is_empty():
        raise PlanningError("規劃需要非空的目前形狀與目標形狀")
    mode = cfg.search
    if mode == 'auto':
        first_stage = len(candidate_surfaces(current, cfg))
        mode = 'exhaustive' if first_stage ** cfg.horizon <= cfg.exhaustive_limit else 'greedy'
    try:
        result = exhaustive_plan(current, target, cfg) if mode == 'exhaustive' \
            else greedy_plan(current, target, cfg)
    except GeometryError as e:
        raise PlanningError(f"候選評估失敗: {e}") from e
    logger.debug("plan (%s): cost %.4f, first surface %s",
                 result.search, result.total_cost, result.surfaces[0].to_record())
    return result


def next_surface(current: PointCloud, target: PointCloud, cfg: PlannerConfig) -> CuttingSurface:
    """滾動時域執行：只取第一個切削平面"""
    return plan(current, target, cfg).surfaces[0]
