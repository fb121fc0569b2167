"""
DecompGrind 流程測試：停止規則、指標、基準控制器、可重現性與基準組合
"""

import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from grind_config import BenchConfig, GrindConfig
from grind_expert import Episode
from grind_geometry import ContactState, PointCloud, split
from grind_orchestrator import (
    BENCH_SUITES,
    BenchCell,
    ConstantFeedLeader,
    ForceCappedFeedLeader,
    MethodVariant,
    RunReport,
    bench_cells,
    demo_feeds,
    grind_single_removal,
    metrics,
    random_surface,
    run_baseline,
    run_decompgrind,
    shared_thresholds,
    should_stop,
    time_to_threshold,
)
from grind_planner import PlannerConfig, PlanningError
from grind_sim import SIM_LOG_COLUMNS, SimConfig, material_for, prepare_state
from grind_workpieces import Region, WorkpieceSpec, gen_workpiece, get_workpiece

BAR = WorkpieceSpec('bar', 'custom', (
    Region('base', 10.0, 2.0),
    Region('target', 10.0, 2.0),
    Region('removable', 10.0, 4.0),
), 30.0, resolution=1.0)


def small_config(**bench) -> GrindConfig:
    planner = PlannerConfig(horizon=1, theta_grid=(0.0,), psi_grid=(0.0,), x_step=0.5)
    settings = dict(planning_charge=0.0, hybrid_duration=3.0, hybrid_feed=1.0, hybrid_force_cap=6.0,
                    max_planning_steps=10)
    settings.update(bench)
    return GrindConfig(sim=SimConfig(), planner=planner, bench=BenchConfig(**settings))


def report(method: str, times, errors, execution: float, ratio: float = 1.0, aborts: int = 0) -> RunReport:
    return RunReport(method, 'WP-E1', 0, list(times), list(errors), execution, execution / 2, ratio,
                     PointCloud(np.zeros((1, 3))), aborts=aborts)


def test_should_stop_rule():
    assert not should_stop([10.0])
    assert not should_stop([10.0, 10.0, 10.0])
    assert not should_stop([10.0, 5.0, 4.9])
    assert should_stop([10.0, 5.0, 4.9, 4.8])
    assert not should_stop([10.0, 5.0, 4.9, 3.0])
    # 變化量以初始誤差為基準
    assert should_stop([100.0, 20.0, 16.0, 12.0], ratio=0.05)


def test_time_to_threshold():
    r = report('Proposed', [50.0, 100.0, 150.0, 200.0], [10.0, 6.0, 3.0, 1.0], 200.0)
    # 預設門檻 1 + 0.2·9 = 2.8
    assert time_to_threshold(r) == 200.0
    assert time_to_threshold(r, threshold=6.0) == 100.0
    assert math.isnan(time_to_threshold(r, threshold=0.5))
    fast = report('Proposed', [50.0, 100.0, 150.0], [10.0, 2.0, 1.0], 150.0)
    assert time_to_threshold(fast) == 100.0


def test_metrics_single_and_multiple_runs():
    single = metrics([report('Proposed', [0, 10], [4.0, 1.0], 10.0)])
    assert single['runs'] == 1
    assert single['execution_time_mean'] == 10.0
    assert single['execution_time_std'] == 0.0

    runs = [
        report('Proposed', [0, 10], [4.0, 1.0], 10.0, ratio=1.0),
        report('Proposed', [0, 20], [4.0, 2.0], 20.0, ratio=0.5, aborts=1),
        report('Proposed', [0, 30], [4.0, 3.0], 30.0, ratio=1.0),
    ]
    summary = metrics(runs)
    assert summary['execution_time_mean'] == pytest.approx(20.0)
    assert summary['execution_time_std'] == pytest.approx(10.0)
    assert summary['grinding_time_mean'] == pytest.approx(10.0)
    assert summary['final_error_mean'] == pytest.approx(2.0)
    assert summary['final_error_std'] == pytest.approx(1.0)
    assert summary['in_limit_ratio_mean'] == pytest.approx(2.5 / 3)
    assert summary['aborted_runs'] == 1
    with pytest.raises(PlanningError):
        metrics([])


def test_method_variant_parse():
    assert MethodVariant.parse('proposed') is MethodVariant.PROPOSED
    assert MethodVariant.parse(' Demo-Speed-2 ') is MethodVariant.DEMO_SPEED_2
    with pytest.raises(PlanningError):
        MethodVariant.parse('Teleop')


def test_constant_feed_leader_advances_linearly():
    cfg = SimConfig()
    initial, _ = _bar_shapes()
    sim = prepare_state(initial, BAR.flat_surface(), material_for(BAR.density, cfg), cfg)
    source = ConstantFeedLeader(2.0, cfg.dt)
    source.reset(sim)
    start = sim.follower.position[0]
    later = replace(sim, time=0.5)
    command = source.command(later, [])
    assert command.position[0] == pytest.approx(start + 1.0)
    assert command.velocity[0] == 2.0
    with pytest.raises(PlanningError):
        ConstantFeedLeader(0.0)


def test_force_capped_leader_holds_at_cap():
    cfg = SimConfig()
    initial, _ = _bar_shapes()
    sim = prepare_state(initial, BAR.flat_surface(), material_for(BAR.density, cfg), cfg)
    source = ForceCappedFeedLeader(1.0, 6.0, cfg.dt)
    source.reset(sim)
    free = source.command(sim, [])
    assert free.position[0] == pytest.approx(sim.follower.position[0] + 0.001)
    pressed = ContactState(sim.follower.position, np.zeros(2), np.array([-12.0, -6.0]))
    held = source.command(replace(sim, follower=pressed), [])
    assert held.position[0] == pytest.approx(sim.follower.position[0])
    assert held.velocity[0] == 0.0


def _bar_shapes():
    return gen_workpiece(BAR, seed=1)


def test_random_surface_is_reproducible_and_feasible():
    initial, _ = _bar_shapes()
    cfg = PlannerConfig(horizon=1)
    first = [random_surface(initial, cfg, np.random.default_rng(5)) for _ in range(3)]
    assert first[0] == first[1] == first[2]
    assert not split(initial, first[0]).next_shape.is_empty()


def test_csp_hybrid_converges_on_bar():
    print("Testing CSP-Hyb loop on a small bar...")
    cfg = small_config()
    result = run_decompgrind(BAR, cfg, seed=1, method=MethodVariant.CSP_HYB)
    print(f"  {result.termination}: {result.initial_error:.4f} → {result.final_error:.6f} mm²")
    assert result.termination in ('converged', 'at-target')
    assert result.final_error <= 0.05 * result.initial_error
    assert result.in_limit_ratio == 1.0
    assert result.observations == len(result.trace_errors)
    # 每次觀測計入 observation_time
    assert result.execution_time >= result.observations * cfg.bench.observation_time
    assert result.execution_time == pytest.approx(
        result.observations * cfg.bench.observation_time + result.grinding_time)
    print("✅ PASSED")


def test_rand_hybrid_is_reproducible_and_respects_budget():
    cfg = small_config(max_planning_steps=3, hybrid_duration=1.0)
    planner = PlannerConfig(horizon=1, theta_grid=(0.0, math.radians(10)), psi_grid=(0.0,), x_step=0.5)
    cfg.planner = planner
    first = run_baseline(MethodVariant.RAND_HYB, BAR, cfg, seed=4)
    second = run_baseline(MethodVariant.RAND_HYB, BAR, cfg, seed=4)
    assert first.trace_errors == second.trace_errors
    assert first.surfaces == second.surfaces
    assert first.planning_steps <= 3
    assert first.termination in ('timeout', 'converged', 'at-target', 'consumed')


def test_methods_require_their_inputs():
    cfg = small_config()
    with pytest.raises(PlanningError):
        run_decompgrind(BAR, cfg, model=None, seed=1, method=MethodVariant.PROPOSED)
    with pytest.raises(PlanningError):
        run_decompgrind(BAR, cfg, seed=1, method=MethodVariant.DEMO_SPEED_1)
    with pytest.raises(PlanningError):
        run_baseline(MethodVariant.BCIL_FULL, BAR, cfg, model=None)


def test_single_removal_with_constant_feed():
    cfg = small_config()
    spec = get_workpiece('WP-S1', 0.5)
    result = grind_single_removal(MethodVariant.DEMO_SPEED_2, spec, cfg, seed=1,
                                  feeds={MethodVariant.DEMO_SPEED_2: 2.0})
    assert result.termination == 'reached'
    assert result.execution_time == result.grinding_time
    assert result.observations == 2 and result.planning_steps == 0
    assert result.final_error < result.initial_error
    assert list(result.force_trace.columns) == SIM_LOG_COLUMNS
    assert result.force_trace['time'].iloc[-1] == pytest.approx(result.grinding_time, abs=2e-3)


def test_demo_feeds_by_workpiece():
    def episode(name, speed):
        follower = np.zeros((10, 6))
        follower[:, 2] = speed
        return Episode(np.arange(10) / 1000.0, follower, np.zeros((10, 6)), 1000.0, name)

    feeds = demo_feeds([episode('WP-T1', 2.0), episode('WP-T1', 4.0), episode('WP-T2', 0.5)])
    assert feeds[MethodVariant.DEMO_SPEED_1] == pytest.approx(3.0)
    assert feeds[MethodVariant.DEMO_SPEED_2] == pytest.approx(0.5)
    assert demo_feeds([episode('WP-T2', 0.5)]).keys() == {MethodVariant.DEMO_SPEED_2}


def test_bench_cells():
    cells = bench_cells('single-removal', (1, 2, 3))
    assert len(cells) == 5 * 3 * 3
    assert {c.method for c in cells} == {'Proposed', 'Demo-Speed-1', 'Demo-Speed-2'}
    training = bench_cells('training-data', (1,))
    assert {(c.method, c.workpiece) for c in training} == {('Training WP-T', 'WP-E2'),
                                                          ('Training WP-E', 'WP-E2')}
    everything = bench_cells('all', (1,))
    assert {c.suite for c in everything} == set(BENCH_SUITES) - {'all'}
    with pytest.raises(PlanningError):
        bench_cells('table', (1,))



def test_shared_threshold_anchors_on_proposed():
    times = [50.0, 100.0, 150.0, 200.0]
    proposed = report('Proposed', times, [10.0, 6.0, 3.0, 1.0], 200.0)
    rand = report('Rand-Hyb', times, [10.0, 8.0, 7.0, 6.0], 200.0)
    # 各自的門檻會讓較差的方法看起來一樣快
    assert time_to_threshold(proposed) == time_to_threshold(rand) == 200.0

    full = replace(proposed, trace_errors=[10.0, 5.0, 3.0, 2.0])
    results = [
        (BenchCell('full-grind', 'Proposed', 'WP-E1', 0), full),
        (BenchCell('convergence', 'Proposed', 'WP-E1', 0), proposed),
        (BenchCell('convergence', 'Rand-Hyb', 'WP-E1', 0), rand),
    ]
    thresholds = shared_thresholds(results)
    assert thresholds == {('WP-E1', 0): pytest.approx(2.8)}
    assert math.isnan(time_to_threshold(rand, thresholds))
    assert time_to_threshold(proposed, thresholds) == 200.0
    # 沒有收斂套組時改用 full-grind 的 Proposed
    assert shared_thresholds(results[:1]) == {('WP-E1', 0): pytest.approx(3.6)}
    # 對照表沒有的組合使用自己的門檻
    other = replace(rand, seed=5)
    assert time_to_threshold(other, thresholds) == 200.0

    summary = metrics([rand], thresholds)
    assert summary['threshold_mean'] == pytest.approx(2.8)
    assert math.isnan(summary['time_to_threshold_mean'])


def test_hybrid_methods_share_the_planning_budget():
    cfg = small_config(max_planning_steps=2, hybrid_duration=0.5)
    cfg.planner = PlannerConfig(horizon=1, theta_grid=(0.0, math.radians(10)), psi_grid=(0.0,), x_step=0.5)
    for variant in (MethodVariant.CSP_HYB, MethodVariant.RAND_HYB):
        result = run_baseline(variant, BAR, cfg, seed=2)
        assert result.planning_steps <= cfg.bench.max_planning_steps
        if result.termination == 'timeout':
            assert result.planning_steps == cfg.bench.max_planning_steps


if __name__ == "__main__":
    test_should_stop_rule()
    test_metrics_single_and_multiple_runs()
    test_csp_hybrid_converges_on_bar()
    print("所有流程測試完成")
