#!/usr/bin/env python3
"""
Demonstration Expert Module
以 PI 切向力調節取代人工操作的領導端，錄製雙邊示範並建立訓練資料集
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from grind_geometry import AXIS_NORMAL, AXIS_TANGENTIAL, ContactState, GrindError
from grind_sim import (
    GrindOutcome,
    GrindSimState,
    LeaderSource,
    SimConfig,
    material_for,
    prepare_state,
    run_bilateral,
)
from grind_workpieces import WorkpieceSpec, gen_workpiece

logger = logging.getLogger(__name__)

DEFAULT_TRAINING_WORKPIECES = ('WP-T1', 'WP-T2')


class DemonstrationError(GrindError):
    """示範或資料集參數無效"""
    pass


@dataclass
class ExpertConfig:
    """示範者設定，對應設定檔 [expert] 區段"""
    target_force: float = 4.0
    kp: float = 0.1
    ki: float = 1.5
    max_lead: float = 3.0
    max_lead_rate: float = 20.0
    duration: float = 6.0
    repetitions: int = 5
    workpieces: Tuple[str, ...] = DEFAULT_TRAINING_WORKPIECES

    def __post_init__(self):
        self.workpieces = tuple(self.workpieces)
        if not self.target_force > 0:
            raise DemonstrationError(f"目標切向力必須 > 0，收到 {self.target_force}")
        if self.kp < 0 or not self.ki > 0:
            raise DemonstrationError("kp 不可為負且 ki 必須 > 0")
        if not (self.max_lead > 0 and self.max_lead_rate > 0 and self.duration > 0):
            raise DemonstrationError("max_lead、max_lead_rate、duration 必須 > 0")
        if self.repetitions < 1:
            raise DemonstrationError(f"repetitions 必須 ≥ 1，收到 {self.repetitions}")


@dataclass(frozen=True)
class ExpertMemory:
    """PI 積分項與目前的法向超前量"""
    integral: float = 0.0
    lead: float = 0.0


def expert_leader(follower: ContactState, target_F_T: float, gains: ExpertConfig,
                  memory: Optional[ExpertMemory] = None,
                  dt: float = 0.001) -> Tuple[ContactState, ExpertMemory]:
    """
    示範者的領導端命令

    領導端法向位置 = 從動端位置 + lead，lead 由切向力誤差的 PI 律決定，
    每步變化量受 max_lead_rate·dt 限制；領導端力量取 −F^f。

    Args:
        follower: 目前從動端狀態
        target_F_T: 目標切向力 (N)
        gains: 示範者設定
        memory: 上一步的 PI 狀態
        dt: 命令週期 (s)

    Returns:
        (leader, memory)
    """
    if not target_F_T > 0:
        raise DemonstrationError(f"目標切向力必須 > 0，收到 {target_F_T}")
    memory = memory or ExpertMemory()
    error = target_F_T - abs(float(follower.force[AXIS_TANGENTIAL]))

    # 積分飽和：積分項本身不超過 max_lead
    windup = gains.max_lead / gains.ki
    integral = float(np.clip(memory.integral + error * dt, -windup, windup))
    desired = gains.kp * error + gains.ki * integral

    max_step = gains.max_lead_rate * dt
    lead = float(np.clip(desired, memory.lead - max_step, memory.lead + max_step))
    lead = float(np.clip(lead, -gains.max_lead, gains.max_lead))

    position = follower.position.copy()
    position[AXIS_NORMAL] += lead
    leader = ContactState(position, follower.velocity, -follower.force,
                          role='leader', orientation=follower.orientation)
    return leader, ExpertMemory(integral, lead)


class ExpertLeader(LeaderSource):
    """以 1 kHz 執行 expert_leader 的領導端來源"""

    def __init__(self, gains: ExpertConfig, dt: float = 0.001):
        self.gains = gains
        self.dt = dt
        self.rate_hz = 1.0 / dt
        self.memory = ExpertMemory()

    def reset(self, state: GrindSimState) -> None:
        self.memory = ExpertMemory()

    def command(self, state: GrindSimState, history: List[ContactState]) -> ContactState:
        leader, self.memory = expert_leader(state.follower, self.gains.target_force,
                                            self.gains, self.memory, self.dt)
        return leader


@dataclass(eq=False)
class Episode:
    """
    一次示範：依時間排序的 (從動端, 領導端) 狀態向量

    follower / leader 為 T×6，欄位順序同 STATE_FIELDS。
    """
    times: np.ndarray
    follower: np.ndarray
    leader: np.ndarray
    rate_hz: float
    workpiece: str = ''
    orientation: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.follower = np.asarray(self.follower, dtype=float).reshape(-1, 6)
        self.leader = np.asarray(self.leader, dtype=float).reshape(-1, 6)
        if not self.rate_hz > 0:
            raise DemonstrationError(f"rate_hz 必須 > 0，收到 {self.rate_hz}")
        if not (len(self.times) == len(self.follower) == len(self.leader)):
            raise DemonstrationError("時間、從動端、領導端長度不一致")
        if len(self.times) > 1 and not (np.diff(self.times) > 0).all():
            raise DemonstrationError("示範時間戳記必須嚴格遞增")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def duration(self) -> float:
        return len(self.times) / self.rate_hz

    @property
    def samples(self) -> List[Tuple[ContactState, ContactState]]:
        return [
            (ContactState.from_vector(f, 'follower', self.orientation),
             ContactState.from_vector(l, 'leader', self.orientation))
            for f, l in zip(self.follower, self.leader)
        ]

    @classmethod
    def from_outcome(cls, outcome: GrindOutcome, rate_hz: float, workpiece: str = '') -> 'Episode':
        if outcome.recorded is None:
            raise DemonstrationError("研磨結果沒有錄製資料（record=False）")
        times, follower, leader = outcome.recorded
        return cls(times, follower, leader, rate_hz, workpiece,
                   outcome.final_state.follower.orientation)


@dataclass(eq=False)
class Dataset:
    """
    訓練資料集：從動端視窗 (M×n×6) 與下一步領導端狀態 (M×6)

    episode_index 記錄每個視窗來自哪一段示範，視窗不跨示範。
    """
    windows: np.ndarray
    targets: np.ndarray
    window_length: int
    episode_index: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.window_length < 1:
            raise DemonstrationError(f"視窗長度 n 必須 ≥ 1，收到 {self.window_length}")
        self.windows = np.asarray(self.windows, dtype=float).reshape(-1, self.window_length, 6)
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1, 6)
        if len(self.windows) != len(self.targets):
            raise DemonstrationError("視窗數與目標數不一致")
        if self.episode_index is None:
            self.episode_index = np.zeros(len(self.windows), dtype=int)
        self.episode_index = np.asarray(self.episode_index, dtype=int).reshape(-1)

    def __len__(self) -> int:
        return len(self.windows)

    def is_empty(self) -> bool:
        return len(self.windows) == 0

    def truncated(self, count: int) -> 'Dataset':
        """只保留前 count 個視窗（比較不同示範來源時對齊轉移數）"""
        return Dataset(self.windows[:count], self.targets[:count], self.window_length,
                       self.episode_index[:count])


def decimate(episode: Episode, rate_hz: float) -> Episode:
    """
    降採樣到 rate_hz

    Raises:
        DemonstrationError: rate_hz 不能整除錄製頻率
    """
    if not rate_hz > 0:
        raise DemonstrationError(f"rate_hz 必須 > 0，收到 {rate_hz}")
    ratio = episode.rate_hz / rate_hz
    stride = int(round(ratio))
    if stride < 1 or abs(ratio - stride) > 1e-9:
        raise DemonstrationError(
            f"訓練頻率 {rate_hz} Hz 必須整除錄製頻率 {episode.rate_hz} Hz")
    return Episode(episode.times[::stride], episode.follower[::stride], episode.leader[::stride],
                   rate_hz, episode.workpiece, episode.orientation)


def touch_off_windows(follower: np.ndarray, n: int) -> np.ndarray:
    """
    接觸初期的視窗：第 j 個 (j = 1 … n) 為前 j 個取樣，前方以第一個取樣補齊到 n

    與 PolicyLeader 在歷史不足 n 步時的補齊方式相同；對應目標為 z^l_j。
    """
    last = min(n, len(follower) - 1)
    if last < 1:
        return np.empty((0, n, follower.shape[1]))
    return np.stack([
        np.concatenate([np.repeat(follower[:1], n - j, axis=0), follower[:j]])
        for j in range(1, last + 1)
    ])


def build_dataset(episodes: Sequence[Episode], n: int, train_rate_hz: float,
                  touch_off: bool = False) -> Dataset:
    """
    由示範建立 (z^f_{t−n+1:t}, z^l_{t+1}) 視窗，t = n … T−2（0 起算）

    Args:
        episodes: 示範列表
        n: 視窗長度
        train_rate_hz: 降採樣後的頻率
        touch_off: 另外加入 touch_off_windows 產生的補齊視窗（目標 z^l_1 … z^l_n）

    Returns:
        Dataset；長度不足 n+2 個取樣的示範會被略過
    """
    if n < 1:
        raise DemonstrationError(f"視窗長度 n 必須 ≥ 1，收到 {n}")
    windows, targets, index = [], [], []
    for i, episode in enumerate(episodes):
        ep = decimate(episode, train_rate_hz)
        count = len(ep) - n - 1
        if count <= 0:
            logger.warning("episode %d (%s) has %d samples at %.0f Hz, too short for n=%d; skipped",
                           i, ep.workpiece, len(ep), train_rate_hz, n)
            continue
        if touch_off:
            padded = touch_off_windows(ep.follower, n)
            windows.append(padded)
            targets.append(ep.leader[1:1 + len(padded)])
            index.append(np.full(len(padded), i))
        # 起點 s = t−n+1 由 1 到 T−n−1
        view = sliding_window_view(ep.follower, (n, 6))[:, 0]
        windows.append(view[1:1 + count])
        targets.append(ep.leader[n + 1:n + 1 + count])
        index.append(np.full(count, i))
    if not windows:
        return Dataset(np.empty((0, n, 6)), np.empty((0, 6)), n, np.empty(0, dtype=int))
    dataset = Dataset(np.concatenate(windows), np.concatenate(targets), n, np.concatenate(index))
    logger.info("dataset: %d windows of length %d from %d episodes",
                len(dataset), n, len(episodes))
    return dataset


def record_episode(spec: WorkpieceSpec, seed: int, sim_cfg: SimConfig,
                   expert_cfg: ExpertConfig) -> Episode:
    """在一個工件上以示範者磨到目標頂端或時間到，回傳錄製的示範"""
    surface = spec.flat_surface()
    initial, _ = gen_workpiece(spec, seed)
    sim = prepare_state(initial, surface, material_for(spec.density, sim_cfg), sim_cfg)
    return record_on_state(sim, surface, sim_cfg, expert_cfg, spec.name)


def record_on_state(sim: GrindSimState, surface, sim_cfg: SimConfig, expert_cfg: ExpertConfig,
                    name: str = '') -> Episode:
    """從既有模擬狀態錄製一段示範"""
    return demonstrate(sim, surface, sim_cfg, expert_cfg, name)[0]


def demonstrate(sim: GrindSimState, surface, sim_cfg: SimConfig, expert_cfg: ExpertConfig,
                name: str = '') -> Tuple[Episode, GrindOutcome]:
    """示範者磨到目標平面或時間到，回傳示範與研磨結果"""
    outcome = run_bilateral(
        sim, ExpertLeader(expert_cfg, sim_cfg.dt), sim_cfg,
        target=surface, clip_to_target=False, persistence=0,
        timeout=expert_cfg.duration, record=True, log=False,
    )
    if outcome.aborted_force_limit:
        logger.warning("expert exceeded the force limit on %s at t = %.2f s", name, outcome.elapsed)
    logger.debug("demo on %s: %s after %.2f s", name, outcome.reason, outcome.elapsed)
    return Episode.from_outcome(outcome, sim_cfg.rate_hz, name), outcome


def record_demonstrations(workpieces: Sequence[WorkpieceSpec], repetitions: int,
                          sim_cfg: SimConfig, expert_cfg: Optional[ExpertConfig] = None,
                          seed: int = 0) -> List[Episode]:
    """
    每個工件錄製 repetitions 次示範（種子 seed, seed+1, ...）

    Returns:
        依工件、重複次數排序的 Episode 列表
    """
    if repetitions < 1:
        raise DemonstrationError(f"repetitions 必須 ≥ 1，收到 {repetitions}")
    expert_cfg = expert_cfg or ExpertConfig()
    episodes = []
    for spec in workpieces:
        for rep in range(repetitions):
            episodes.append(record_episode(spec, seed + rep, sim_cfg, expert_cfg))
    logger.info("recorded %d episodes (%s)", len(episodes), ', '.join(s.name for s in workpieces))
    return episodes


def mean_feed(episodes: Sequence[Episode]) -> float:
    """
    示範中從動端法向速度的平均值 (mm/s)，作為定速基準的進給

    Raises:
        DemonstrationError: 沒有任何取樣
    """
    samples = [ep.follower[:, 2] for ep in episodes if len(ep)]
    if not samples:
        raise DemonstrationError("沒有示範取樣可計算平均進給")
    return float(np.concatenate(samples).mean())
