"""
示範者測試：PI 超前律、閉迴路切向力調節、資料集視窗
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from grind_expert import (
    DemonstrationError,
    Episode,
    ExpertConfig,
    ExpertMemory,
    build_dataset,
    decimate,
    expert_leader,
    mean_feed,
    record_demonstrations,
    record_episode,
    touch_off_windows,
)
from grind_geometry import ContactState
from grind_sim import SimConfig
from grind_workpieces import get_workpiece


def follower_with_force(f_t: float) -> ContactState:
    return ContactState(np.array([96.0, 0.0]), np.array([0.5, 0.0]), np.array([-2 * f_t, -f_t]))


def test_expert_lead_signs():
    gains = ExpertConfig()
    low, memory_low = expert_leader(follower_with_force(1.0), 4.0, gains)
    high, memory_high = expert_leader(follower_with_force(8.0), 4.0, gains)
    # 切向力不足時往皮帶推進，過大時後退
    assert memory_low.lead > 0 and low.position[0] > 96.0
    assert memory_high.lead < 0 and high.position[0] < 96.0
    assert low.role == 'leader'
    assert np.array_equal(low.force, -follower_with_force(1.0).force)
    assert low.position[1] == 0.0


def test_expert_lead_rate_and_bound():
    gains = ExpertConfig()
    memory = ExpertMemory()
    follower = follower_with_force(0.0 + 1e-6)
    previous = 0.0
    for _ in range(2000):
        _, memory = expert_leader(follower, 4.0, gains, memory, dt=0.001)
        assert abs(memory.lead - previous) <= gains.max_lead_rate * 0.001 + 1e-12
        assert abs(memory.lead) <= gains.max_lead
        previous = memory.lead
    assert memory.lead == pytest.approx(gains.max_lead)


def test_expert_rejects_bad_target():
    with pytest.raises(DemonstrationError):
        expert_leader(follower_with_force(1.0), 0.0, ExpertConfig())
    with pytest.raises(DemonstrationError):
        ExpertConfig(ki=0.0)


@pytest.mark.parametrize('name', ['WP-T1', 'WP-T2'])
def test_expert_regulates_tangential_force(name):
    print(f"Testing expert force regulation on {name}...")
    sim_cfg = SimConfig()
    episode = record_episode(get_workpiece(name), seed=1, sim_cfg=sim_cfg, expert_cfg=ExpertConfig())
    f_t = np.abs(episode.follower[:, 5])
    settled = f_t[episode.times >= 1.0]
    assert len(settled) > 0
    print(f"  F_T after 1 s: min {settled.min():.3f} N, max {settled.max():.3f} N")
    assert np.all(np.abs(settled - 4.0) < 0.4)
    assert f_t.max() <= 9.0
    print("✅ PASSED")


@pytest.mark.parametrize('name', ['WP-T1', 'WP-T2', 'WP-S3'])
def test_leader_force_mirrors_follower_at_every_sample(name):
    episode = record_episode(get_workpiece(name), seed=2, sim_cfg=SimConfig(),
                             expert_cfg=ExpertConfig(duration=2.0))
    assert len(episode) > 1000
    forces = episode.leader[:, 4:6] + episode.follower[:, 4:6]
    assert np.array_equal(forces, np.zeros_like(forces))
    assert np.abs(episode.follower[:, 5]).max() > 0


def test_build_dataset_window_count():
    print("Testing dataset windows: 121 samples, n=20...")
    rng = np.random.default_rng(0)
    follower = rng.normal(size=(121, 6))
    leader = rng.normal(size=(121, 6))
    episode = Episode(np.arange(121) / 20.0, follower, leader, 20.0, 'WP-T1')
    dataset = build_dataset([episode], 20, 20.0)
    assert len(dataset) == 100
    assert dataset.windows.shape == (100, 20, 6)
    assert np.array_equal(dataset.windows[0], follower[1:21])
    assert np.array_equal(dataset.targets[0], leader[21])
    assert np.array_equal(dataset.windows[-1], follower[100:120])
    assert np.array_equal(dataset.targets[-1], leader[120])
    print("✅ PASSED")


def test_build_dataset_touch_off_windows():
    rng = np.random.default_rng(0)
    follower = rng.normal(size=(121, 6))
    leader = rng.normal(size=(121, 6))
    episode = Episode(np.arange(121) / 20.0, follower, leader, 20.0, 'WP-T1')
    dataset = build_dataset([episode], 20, 20.0, touch_off=True)
    assert len(dataset) == 120
    # 第一個視窗只含初始狀態，目標為下一個控制步的領導端
    assert np.array_equal(dataset.windows[0], np.repeat(follower[:1], 20, axis=0))
    assert np.array_equal(dataset.targets[0], leader[1])
    assert np.array_equal(dataset.windows[2][-3:], follower[:3])
    assert np.array_equal(dataset.windows[2][:-3], np.repeat(follower[:1], 17, axis=0))
    assert np.array_equal(dataset.windows[19], follower[:20])
    assert np.array_equal(dataset.targets[19], leader[20])
    plain = build_dataset([episode], 20, 20.0)
    assert np.array_equal(dataset.windows[20:], plain.windows)
    assert np.array_equal(dataset.targets[20:], plain.targets)
    assert touch_off_windows(follower[:1], 20).shape == (0, 20, 6)


def test_build_dataset_skips_short_episodes():
    short = Episode(np.arange(21) / 20.0, np.zeros((21, 6)), np.zeros((21, 6)), 20.0)
    longer = Episode(np.arange(30) / 20.0, np.ones((30, 6)), np.ones((30, 6)), 20.0)
    dataset = build_dataset([short, longer], 20, 20.0)
    assert len(dataset) == 30 - 20 - 1
    assert set(dataset.episode_index) == {1}
    assert build_dataset([short], 20, 20.0).is_empty()


def test_decimate():
    episode = Episode(np.arange(1000) / 1000.0, np.zeros((1000, 6)), np.zeros((1000, 6)), 1000.0)
    coarse = decimate(episode, 20.0)
    assert len(coarse) == 20 and coarse.rate_hz == 20.0
    assert coarse.times[1] == pytest.approx(0.05)
    with pytest.raises(DemonstrationError):
        decimate(episode, 30.0)


def test_episode_validation():
    with pytest.raises(DemonstrationError):
        Episode(np.array([0.0, 0.0]), np.zeros((2, 6)), np.zeros((2, 6)), 20.0)
    with pytest.raises(DemonstrationError):
        Episode(np.arange(3), np.zeros((2, 6)), np.zeros((3, 6)), 20.0)


def test_record_demonstrations_and_feed():
    sim_cfg = SimConfig()
    expert_cfg = ExpertConfig(duration=1.5)
    specs = [get_workpiece('WP-T1', 0.5)]
    episodes = record_demonstrations(specs, 2, sim_cfg, expert_cfg, seed=3)
    assert len(episodes) == 2
    assert all(ep.workpiece == 'WP-T1' and ep.rate_hz == sim_cfg.rate_hz for ep in episodes)
    assert all(ep.duration <= 1.5 + 1e-9 for ep in episodes)
    assert mean_feed(episodes) > 0
    with pytest.raises(DemonstrationError):
        mean_feed([])


if __name__ == "__main__":
    test_expert_lead_signs()
    test_expert_regulates_tangential_force('WP-T1')
    test_expert_regulates_tangential_force('WP-T2')
    test_build_dataset_window_count()
    test_build_dataset_touch_off_windows()
    print("所有示範測試完成")
