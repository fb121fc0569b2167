"""
GCSP 規劃測試：與窮舉暴力解比對、成本函數、邊界情況
"""

import itertools
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from grind_geometry import CuttingSurface, PointCloud, chamfer, split
from grind_planner import (
    PlannerConfig,
    PlanningError,
    candidate_surfaces,
    cost,
    exhaustive_plan,
    greedy_plan,
    next_surface,
    plan,
    removal_cost,
)


def block(rng, top: float, count: int = 40) -> PointCloud:
    points = rng.uniform([0.0, -3.0, -3.0], [top, 3.0, 3.0], size=(count, 3))
    return PointCloud(points, 0.5)


def small_config(horizon: int, **kwargs) -> PlannerConfig:
    angles = tuple(math.radians(a) for a in (-20, 0, 20))
    return PlannerConfig(horizon=horizon, theta_grid=angles, psi_grid=(0.0, math.radians(15)),
                         x_step=1.0, **kwargs)


def brute_force(current: PointCloud, target: PointCloud, cfg: PlannerConfig, depth: int):
    """回傳 (總成本, 平面序列)；不使用規劃器內部的候選評估"""
    best = None
    for surface in candidate_surfaces(current, cfg):
        next_shape = split(current, surface).next_shape
        if next_shape.is_empty():
            continue
        value = cost(target, current, surface, cfg.k_c, cfg.min_removal_height)
        if depth > 1:
            rest = brute_force(next_shape, target, cfg, depth - 1)
            if rest is None:
                continue
            value += rest[0]
            sequence = [surface] + rest[1]
        else:
            sequence = [surface]
        if best is None or value < best[0]:
            best = (value, sequence)
    return best


def bar(rng, top: float, count: int) -> PointCloud:
    points = rng.uniform([0.0, -0.5, -0.5], [top, 0.5, 0.5], size=(count, 3))
    return PointCloud(points, 0.5)


def test_plan_matches_exhaustive_oracle():
    print("Testing planner against brute-force oracle on 50 bar instances...")
    rng = np.random.default_rng(21)
    for trial in range(50):
        current = bar(rng, top=rng.uniform(4.0, 7.0), count=int(rng.integers(10, 31)))
        target = bar(rng, top=rng.uniform(1.0, 3.0), count=int(rng.integers(5, 21)))
        horizon = 1 + trial % 2
        cfg = small_config(horizon)
        expected = brute_force(current, target, cfg, horizon)
        result = plan(current, target, cfg)
        assert result.search == 'exhaustive'
        assert sum(result.per_step_cost) == pytest.approx(expected[0], abs=1e-9)
        assert result.total_cost == pytest.approx(expected[0] / horizon, abs=1e-9)
        assert len(result.surfaces) == horizon
    print("✅ PASSED")


def test_bar_plans_the_boundary_cut():
    points = np.array([[float(i), 0.0, 0.0] for i in range(10)])
    current = PointCloud(points)
    target = PointCloud(points[:5])
    cfg = PlannerConfig(horizon=1, theta_grid=(0.0,), psi_grid=(0.0,),
                        x_grid=tuple(i + 0.5 for i in range(-1, 10)))
    for search in ('greedy', 'exhaustive'):
        result = plan(current, target, replace(cfg, search=search))
        assert result.surfaces[0] == CuttingSurface(0.0, 0.0, 4.5)
        assert np.array_equal(result.predicted_shapes[-1].points, target.points)
        assert result.per_step_cost[0] == pytest.approx(
            removal_cost(current.volume / 2, 4.0, cfg.k_c), abs=1e-12)


def test_plan_is_deterministic():
    for search in ('greedy', 'exhaustive'):
        results = []
        for _ in range(2):
            rng = np.random.default_rng(33)
            current = bar(rng, top=6.0, count=30)
            target = bar(rng, top=2.0, count=15)
            results.append(plan(current, target, small_config(2, search=search)))
        first, second = results
        assert first.surfaces == second.surfaces
        assert first.per_step_cost == second.per_step_cost


def test_greedy_equals_exhaustive_for_single_step():
    rng = np.random.default_rng(4)
    current = block(rng, top=5.0)
    target = block(rng, top=2.0, count=25)
    cfg = small_config(1)
    greedy = greedy_plan(current, target, cfg)
    exhaustive = exhaustive_plan(current, target, cfg)
    assert greedy.per_step_cost[0] == pytest.approx(exhaustive.per_step_cost[0], abs=1e-12)
    assert greedy.surfaces[0] == exhaustive.surfaces[0]


def test_plan_predicted_shapes_follow_geometry():
    rng = np.random.default_rng(8)
    current = block(rng, top=6.0)
    target = block(rng, top=2.0, count=25)
    result = plan(current, target, small_config(2, search='greedy'))
    assert result.predicted_shapes[0] is current
    shape = current
    for surface, predicted in zip(result.surfaces, result.predicted_shapes[1:]):
        shape = split(shape, surface).next_shape
        assert np.array_equal(shape.points, predicted.points)
    assert result.predicted_shapes[-1].count <= current.count


def test_flat_target_plans_flat_cut_near_target_top():
    grid = np.array([[x, y, z] for x in np.arange(0, 8.5, 0.5)
                     for y in np.arange(-2, 2.5, 1.0) for z in np.arange(-2, 2.5, 1.0)])
    current = PointCloud(grid, 0.5)
    target = current.subset(grid[:, 0] <= 3.0)
    cfg = PlannerConfig(horizon=1, x_step=0.5)
    surface = next_surface(current, target, cfg)
    assert surface.theta == 0.0 and surface.psi == 0.0
    assert surface.x == pytest.approx(3.0, abs=0.5)


def test_auto_mode_selects_search():
    rng = np.random.default_rng(2)
    current = block(rng, top=4.0)
    target = block(rng, top=2.0, count=20)
    assert plan(current, target, small_config(2)).search == 'exhaustive'
    assert plan(current, target, small_config(2, exhaustive_limit=1)).search == 'greedy'


def test_removal_cost():
    assert removal_cost(0.0, 0.0, 0.002) == 0.0
    assert removal_cost(10.0, 2.0, 0.002) == pytest.approx(0.01)
    # 高度低於下限時以下限計算
    assert removal_cost(10.0, 0.1, 0.002, min_height=0.5) == pytest.approx(0.04)


def test_cost_is_chamfer_plus_removal():
    rng = np.random.default_rng(13)
    current = block(rng, top=5.0)
    target = block(rng, top=2.0, count=20)
    surface = CuttingSurface(0.0, 0.0, 3.0)
    parts = split(current, surface)
    heights = parts.removal_shape.projections(surface.normal)
    expected = chamfer(parts.next_shape, target) + removal_cost(
        parts.removal_shape.volume, heights.max() - heights.min(), 0.002)
    assert cost(target, current, surface, 0.002) == pytest.approx(expected, abs=1e-12)


def test_no_feasible_candidate_raises():
    current = PointCloud(np.array([[5.0, 0.0, 0.0]]))
    target = PointCloud(np.array([[0.0, 0.0, 0.0]]))
    cfg = PlannerConfig(horizon=1, theta_grid=(0.0,), psi_grid=(0.0,), x_grid=(1.0,))
    with pytest.raises(PlanningError):
        plan(current, target, cfg)


def test_empty_shapes_raise():
    empty = PointCloud(np.empty((0, 3)))
    with pytest.raises(PlanningError):
        plan(empty, PointCloud(np.zeros((1, 3))), PlannerConfig())


def test_config_validation():
    with pytest.raises(PlanningError):
        PlannerConfig(horizon=0)
    with pytest.raises(PlanningError):
        PlannerConfig(theta_grid=())
    with pytest.raises(PlanningError):
        PlannerConfig(search='random')
    with pytest.raises(PlanningError):
        PlannerConfig(theta_grid=(math.radians(120),))


def test_candidate_order_is_grid_order():
    rng = np.random.default_rng(1)
    cfg = small_config(1)
    surfaces = candidate_surfaces(block(rng, top=3.0), cfg)
    keys = [(cfg.theta_grid.index(s.theta), cfg.psi_grid.index(s.psi), s.x) for s in surfaces]
    assert keys == sorted(keys)
    assert len(set(itertools.product(cfg.theta_grid, cfg.psi_grid))) == \
        len({(s.theta, s.psi) for s in surfaces})


if __name__ == "__main__":
    test_plan_matches_exhaustive_oracle()
    test_bar_plans_the_boundary_cut()
    test_plan_is_deterministic()
    test_greedy_equals_exhaustive_for_single_step()
    test_flat_target_plans_flat_cut_near_target_top()
    print("所有規劃測試完成")
