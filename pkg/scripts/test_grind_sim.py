"""
研磨模擬測試：混合控制平衡、移除阻力、模擬步與雙邊研磨迴圈的結束條件
"""

import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from grind_geometry import ContactState, CuttingSurface
from grind_sim import (
    SIM_LOG_COLUMNS,
    ControllerGains,
    LeaderSource,
    MaterialModel,
    SimConfig,
    SimulationError,
    check_force_limit,
    hybrid_control,
    material_for,
    material_from_density,
    prepare_state,
    resistance,
    run_bilateral,
    step,
)
from grind_workpieces import gen_workpiece, get_workpiece


class HoldLeader(LeaderSource):
    """領導端停在從動端目前位置，力量與從動端相反"""
    rate_hz = 20.0

    def command(self, state, history):
        f = state.follower
        return ContactState(f.position, np.zeros(2), -f.force, role='leader', orientation=f.orientation)


class PushLeader(LeaderSource):
    """領導端固定超前從動端 lead mm"""
    rate_hz = 20.0

    def __init__(self, lead: float):
        self.lead = lead

    def command(self, state, history):
        f = state.follower
        return ContactState(f.position + np.array([self.lead, 0.0]), np.zeros(2), -f.force,
                            role='leader', orientation=f.orientation)


def workpiece(name: str, resolution: float = 0.5):
    spec = get_workpiece(name, resolution)
    initial, target = gen_workpiece(spec, seed=1)
    return spec, initial, target


def test_hybrid_control_zero_at_equilibrium():
    print("Testing hybrid control equilibrium...")
    rng = np.random.default_rng(0)
    gains = ControllerGains.uniform()
    for _ in range(200):
        follower = ContactState.from_vector(rng.normal(scale=50, size=6))
        leader = ContactState(follower.position, follower.velocity, -follower.force, role='leader')
        assert np.linalg.norm(hybrid_control(leader, follower, gains)) < 1e-12
    print("✅ PASSED")


def test_hybrid_control_per_axis():
    gains = ControllerGains(kp=[2.0, 4.0], kd=[1.0, 1.0], kf=[1.0, 3.0], inertia=[1.0, 0.5])
    follower = ContactState.at_rest()
    leader = ContactState(np.array([1.0, 1.0]), np.zeros(2), np.array([2.0, 2.0]), role='leader')
    u = hybrid_control(leader, follower, gains)
    assert u[0] == pytest.approx(0.5 * 2.0 + 0.5 * 2.0)
    assert u[1] == pytest.approx(0.5 * 0.5 * 4.0 + 0.5 * 6.0)


def test_resistance_properties():
    print("Testing removal resistance model on 10000 cases...")
    rng = np.random.default_rng(1)
    for i in range(10_000):
        material = MaterialModel(rng.uniform(1, 1000), rng.uniform(0.1, 2), rng.uniform(100, 20000))
        rate = 0.0 if i % 100 == 0 else rng.uniform(0, 1e4)
        normal, tangential = resistance(rate, material)
        assert normal == material.k_r * rate / material.belt_speed
        assert tangential == material.lam * normal
        assert normal >= 0 and tangential >= 0
        if rate > 0:
            assert tangential / normal == pytest.approx(material.lam, rel=1e-12)
        double, _ = resistance(2 * rate, material)
        assert double == pytest.approx(2 * normal, rel=1e-12)
    assert resistance(0.0, material) == (0.0, 0.0)
    with pytest.raises(SimulationError):
        resistance(-1.0, material)
    print("✅ PASSED")


def test_material_scales_with_density():
    soft = material_from_density(30.0, 250.0)
    hard = material_from_density(60.0, 250.0)
    assert hard.k_r == pytest.approx(2 * soft.k_r)
    with pytest.raises(SimulationError):
        material_from_density(0.0, 250.0)


def test_force_limit_is_inclusive():
    cfg = SimConfig()
    _, initial, _ = workpiece('WP-T2')
    state = prepare_state(initial, CuttingSurface(0.0, 0.0, 0.0), material_for(60.0, cfg), cfg)
    at_limit = ContactState(state.follower.position, np.zeros(2), np.array([0.0, -9.0]))
    over = ContactState(state.follower.position, np.zeros(2), np.array([0.0, -9.0001]))
    assert check_force_limit(replace(state, follower=at_limit), 9.0)
    assert not check_force_limit(replace(state, follower=over), 9.0)
    with pytest.raises(SimulationError):
        check_force_limit(state, 0.0)


def test_step_without_contact_removes_nothing():
    cfg = SimConfig()
    _, initial, _ = workpiece('WP-T2')
    state = prepare_state(initial, CuttingSurface(0.0, 0.0, 0.0), material_for(60.0, cfg), cfg)
    leader = HoldLeader().command(state, [])
    for _ in range(100):
        state = step(state, leader, cfg.dt, cfg)
    assert state.workpiece.count == initial.count
    assert state.removed_volume == 0.0
    assert np.allclose(state.follower.force, 0.0)


def test_step_conserves_volume_while_grinding():
    cfg = SimConfig()
    _, initial, _ = workpiece('WP-T1')
    state = prepare_state(initial, CuttingSurface(0.0, 0.0, 0.0), material_for(30.0, cfg), cfg)
    source = PushLeader(0.5)
    for _ in range(500):
        state = step(state, source.command(state, []), cfg.dt, cfg)
    assert state.workpiece.count < initial.count
    assert state.removed_volume + state.workpiece.volume == pytest.approx(initial.volume)
    # 阻力方向與進給方向相反
    assert state.follower.force[0] <= 0 and state.follower.force[1] <= 0
    with pytest.raises(SimulationError):
        step(state, source.command(state, []), 0.0, cfg)


def test_run_bilateral_already_at_target():
    print("Testing termination when already on the target surface...")
    cfg = SimConfig()
    spec, _, target_shape = workpiece('WP-T1')
    surface = spec.flat_surface()
    sim = prepare_state(target_shape, surface, material_for(spec.density, cfg), cfg,
                        contact_offset=surface.x)
    outcome = run_bilateral(sim, HoldLeader(), cfg, target=surface, eps=0.05, persistence=10)
    assert outcome.reached_surface and outcome.reason == 'reached'
    assert outcome.control_steps == 11
    assert outcome.elapsed == pytest.approx(0.55)
    assert outcome.predict_calls == 11
    assert outcome.in_limit_ratio == 1.0
    assert list(outcome.force_trace.columns) == SIM_LOG_COLUMNS
    assert len(outcome.force_trace) == outcome.steps
    print("✅ PASSED")


def test_run_bilateral_times_out():
    cfg = SimConfig()
    spec, _, target_shape = workpiece('WP-T1')
    surface = spec.flat_surface()
    sim = prepare_state(target_shape, surface, material_for(spec.density, cfg), cfg,
                        contact_offset=surface.x + 5.0)
    outcome = run_bilateral(sim, HoldLeader(), cfg, target=surface, timeout=1.0)
    assert outcome.timed_out and outcome.reason == 'timeout'
    assert outcome.steps == 1000
    assert outcome.elapsed == pytest.approx(1.0)


def test_run_bilateral_aborts_on_force_limit():
    cfg = SimConfig()
    spec, initial, _ = workpiece('WP-S5')
    sim = prepare_state(initial, spec.flat_surface(), material_for(spec.density, cfg), cfg)
    outcome = run_bilateral(sim, PushLeader(5.0), cfg, target=None, timeout=5.0)
    assert outcome.aborted_force_limit and outcome.reason == 'force-limit'
    assert not outcome.reached_surface and not outcome.timed_out
    assert outcome.final_state.tangential_force > cfg.force_limit
    assert outcome.in_limit_ratio < 1.0
    assert outcome.in_limit_steps == outcome.steps - 1


def test_virtual_stop_holds_at_target_surface():
    cfg = SimConfig()
    spec, initial, _ = workpiece('WP-S2')
    surface = CuttingSurface(0.0, 0.0, spec.total_height - 1.0)
    sim = prepare_state(initial, surface, material_for(spec.density, cfg), cfg)
    outcome = run_bilateral(sim, PushLeader(2.0), cfg, target=surface, limit=1e6, timeout=20.0)
    assert outcome.reached_surface
    gap = outcome.final_state.contact_surface.x - surface.x
    assert abs(gap) < 0.05
    remaining = outcome.final_state.workpiece.points[:, 0]
    assert remaining.max() <= outcome.final_state.contact_surface.x + 1e-9


def test_run_bilateral_records_pairs():
    cfg = SimConfig()
    spec, _, target_shape = workpiece('WP-T1')
    surface = spec.flat_surface()
    sim = prepare_state(target_shape, surface, material_for(spec.density, cfg), cfg,
                        contact_offset=surface.x)
    outcome = run_bilateral(sim, HoldLeader(), cfg, target=surface, record=True, log=False)
    times, follower, leader = outcome.recorded
    assert outcome.force_trace is None
    assert follower.shape == leader.shape == (outcome.steps, 6)
    assert times[0] == 0.0 and np.all(np.diff(times) > 0)


def test_run_bilateral_rejects_bad_arguments():
    cfg = SimConfig()
    spec, _, target_shape = workpiece('WP-T1')
    surface = spec.flat_surface()
    sim = prepare_state(target_shape, surface, material_for(spec.density, cfg), cfg)
    with pytest.raises(SimulationError):
        run_bilateral(sim, HoldLeader(), cfg, target=surface, eps=0.0)
    with pytest.raises(SimulationError):
        run_bilateral(sim, HoldLeader(), cfg, target=CuttingSurface(0.2, 0.0, surface.x))


def test_sim_config_validation():
    with pytest.raises(SimulationError):
        SimConfig(dt=0.0)
    with pytest.raises(SimulationError):
        SimConfig(control_rate_hz=5000.0)
    with pytest.raises(SimulationError):
        ControllerGains.uniform(kp=-1.0)
    assert SimConfig().substeps_per_control == 50


if __name__ == "__main__":
    test_hybrid_control_zero_at_equilibrium()
    test_resistance_properties()
    test_run_bilateral_already_at_target()
    print("所有模擬測試完成")
