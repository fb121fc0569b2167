#!/usr/bin/env python3
"""
Grind Simulation Module
從動端壓著工件對皮帶研磨的固定步長模擬：移除阻力、材料移除、混合控制
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from grind_geometry import (
    AXIS_NORMAL,
    AXIS_TANGENTIAL,
    ContactState,
    CuttingSurface,
    GrindError,
    MountConfig,
    PointCloud,
    state_from_surface,
)

logger = logging.getLogger(__name__)

# 密度基準（%），k_r 以此為 1 倍
REFERENCE_DENSITY = 30.0

SIM_LOG_COLUMNS = ['time', 'x_N', 'x_T', 'v_N', 'v_T', 'F_N', 'F_T', 'V_t', 'points_remaining']


class SimulationError(GrindError):
    """模擬參數或狀態無效"""
    pass


@dataclass(frozen=True)
class MaterialModel:
    k_r: float
    lam: float = 0.5
    belt_speed: float = 10000.0
    density: float = REFERENCE_DENSITY

    def __post_init__(self):
        if not self.k_r > 0:
            raise SimulationError(f"k_r 必須 > 0，收到 {self.k_r}")
        if not self.lam > 0:
            raise SimulationError(f"λ 必須 > 0，收到 {self.lam}")
        if not self.belt_speed > 0:
            raise SimulationError(f"皮帶速度 S_g 必須 > 0，收到 {self.belt_speed}")


@dataclass(frozen=True, eq=False)
class ControllerGains:
    """混合控制律在法向與切向兩軸的對角增益"""
    kp: np.ndarray
    kd: np.ndarray
    kf: np.ndarray
    inertia: np.ndarray

    def __post_init__(self):
        for name in ('kp', 'kd', 'kf', 'inertia'):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (2,)).copy()
            if not (arr > 0).all():
                raise SimulationError(f"增益 {name} 必須全為正值，收到 {arr}")
            object.__setattr__(self, name, arr)

    @classmethod
    def uniform(cls, kp: float = 360.0, kd: float = 120.0, kf: float = 1.0,
                inertia: float = 1.0) -> 'ControllerGains':
        return cls(kp, kd, kf, inertia)


@dataclass
class SimConfig:
    """模擬與研磨迴圈參數，對應設定檔 [sim] 區段"""
    dt: float = 0.001
    mass: float = 1.0
    damping: float = 50.0
    contact_time_constant: float = 0.05
    base_k_r: float = 250.0
    lam: float = 0.5
    belt_speed: float = 10000.0
    force_limit: float = 9.0
    gains: ControllerGains = field(default_factory=ControllerGains.uniform)
    mount: MountConfig = field(default_factory=MountConfig)
    control_rate_hz: float = 20.0
    timeout: float = 120.0
    eps: float = 0.05
    persistence: int = 10

    def __post_init__(self):
        if not self.dt > 0:
            raise SimulationError(f"dt 必須 > 0，收到 {self.dt}")
        if not (self.mass > 0 and self.damping >= 0):
            raise SimulationError("mass 必須 > 0 且 damping 不可為負")
        if self.contact_time_constant < 0:
            raise SimulationError("contact_time_constant 不可為負")
        if not self.force_limit > 0:
            raise SimulationError(f"力量上限必須 > 0，收到 {self.force_limit}")
        if self.substeps_per_control < 1:
            raise SimulationError("控制頻率不可高於模擬頻率")

    @property
    def rate_hz(self) -> float:
        return 1.0 / self.dt

    @property
    def substeps_per_control(self) -> int:
        return int(round(self.rate_hz / self.control_rate_hz))


@dataclass(frozen=True, eq=False)
class GrindSimState:
    """
    單一時間步的模擬狀態

    workpiece 依法向投影由高到低排序，neg_projections 為對應的 −投影（遞增），
    讓每步只需一次二分搜尋就能找出越過皮帶面的點。
    """
    follower: ContactState
    workpiece: PointCloud
    material: MaterialModel
    mount: MountConfig
    time: float = 0.0
    removed_volume_rate: float = 0.0
    neg_projections: Optional[np.ndarray] = None
    filtered_rate: float = 0.0
    removed_volume: float = 0.0

    def __post_init__(self):
        if self.neg_projections is None:
            normal = CuttingSurface(*self.follower.orientation, 0.0).normal
            proj = self.workpiece.projections(normal)
            order = np.argsort(-proj, kind='stable')
            object.__setattr__(self, 'workpiece',
                               PointCloud(self.workpiece.points[order], self.workpiece.point_volume))
            object.__setattr__(self, 'neg_projections', -proj[order])

    @property
    def contact_surface(self) -> CuttingSurface:
        theta, psi = self.follower.orientation
        return CuttingSurface(theta, psi, self.mount.contact_offset(float(self.follower.position[AXIS_NORMAL])))

    @property
    def tangential_force(self) -> float:
        return abs(float(self.follower.force[AXIS_TANGENTIAL]))

    @property
    def top_offset(self) -> Optional[float]:
        """工件沿法向的最高投影"""
        if self.workpiece.is_empty():
            return None
        return float(-self.neg_projections[0])

    def log_row(self) -> dict:
        """一列模擬紀錄；力量以阻力大小（正值）記錄"""
        f = self.follower
        return {
            'time': self.time,
            'x_N': f.position[AXIS_NORMAL],
            'x_T': f.position[AXIS_TANGENTIAL],
            'v_N': f.velocity[AXIS_NORMAL],
            'v_T': f.velocity[AXIS_TANGENTIAL],
            'F_N': -f.force[AXIS_NORMAL],
            'F_T': -f.force[AXIS_TANGENTIAL],
            'V_t': self.removed_volume_rate,
            'points_remaining': self.workpiece.count,
        }


def resistance(removal_rate: float, material: MaterialModel) -> Tuple[float, float]:
    """
    移除阻力 F_N = k_r·V_t/S_g，F_T = λ·F_N

    Args:
        removal_rate: 移除速率 V_t (mm³/s)，不可為負
        material: 材料模型

    Returns:
        (F_N, F_T)
    """
    if removal_rate < 0:
        raise SimulationError(f"移除速率不可為負: {removal_rate}")
    normal = material.k_r * removal_rate / material.belt_speed
    return normal, material.lam * normal


def hybrid_control(leader: ContactState, follower: ContactState,
                   gains: ControllerGains) -> np.ndarray:
    """u = ½J[K_p(x^l−x^f) + K_d(ẋ^l−ẋ^f)] + ½K_f(F^l+F^f)，逐軸計算"""
    position_term = gains.kp * (leader.position - follower.position)
    velocity_term = gains.kd * (leader.velocity - follower.velocity)
    force_term = gains.kf * (leader.force + follower.force)
    return 0.5 * gains.inertia * (position_term + velocity_term) + 0.5 * force_term


def material_from_density(density: float, base_k_r: float, lam: float = 0.5,
                          belt_speed: float = 10000.0) -> MaterialModel:
    """
    以填充密度模擬材料硬度：k_r = base_k_r × density/30

    Raises:
        SimulationError: 密度不在 (0, 100]
    """
    if not (0 < density <= 100):
        raise SimulationError(f"密度必須在 (0, 100] 之間，收到 {density}")
    return MaterialModel(base_k_r * density / REFERENCE_DENSITY, lam, belt_speed, density)


def material_for(density: float, cfg: SimConfig) -> MaterialModel:
    return material_from_density(density, cfg.base_k_r, cfg.lam, cfg.belt_speed)


def check_force_limit(state: GrindSimState, limit: float) -> bool:
    """切向力在上限內（含等於）回傳 True"""
    if not limit > 0:
        raise SimulationError(f"力量上限必須 > 0，收到 {limit}")
    return state.tangential_force <= limit


def prepare_state(workpiece: PointCloud, surface: CuttingSurface, material: MaterialModel,
                  cfg: SimConfig, contact_offset: Optional[float] = None) -> GrindSimState:
    """
    將工件轉到與切削平面平行的姿態並靠上皮帶

    contact_offset 省略時，皮帶面對準工件沿法向的最高點（剛好接觸、尚未磨除）。
    """
    surface.validate(cfg.mount.angle_bound)
    if contact_offset is None:
        if workpiece.is_empty():
            contact_offset = surface.x
        else:
            contact_offset = float(workpiece.projections(surface.normal).max())
    start = CuttingSurface(surface.theta, surface.psi, contact_offset)
    follower = state_from_surface(start, cfg.mount)
    logger.debug("touch-off at offset %.3f mm (target %.3f mm)", contact_offset, surface.x)
    return GrindSimState(follower, workpiece, material, cfg.mount)


def step(state: GrindSimState, leader: ContactState, dt: float,
         cfg: Optional[SimConfig] = None) -> GrindSimState:
    """
    前進一個模擬步

    半隱式 Euler 推進法向軸；切向軸直接跟隨領導端命令。
    越過皮帶面的點在本步刪除，V_t = 刪除體積 / dt，
    反作用力由經接觸時間常數平滑後的移除率計算。

    Raises:
        SimulationError: dt ≤ 0
    """
    if not dt > 0:
        raise SimulationError(f"dt 必須 > 0，收到 {dt}")
    if cfg is None:
        cfg = SimConfig()
    follower = state.follower
    u = hybrid_control(leader, follower, cfg.gains)

    accel = (u[AXIS_NORMAL] + follower.force[AXIS_NORMAL]
             - cfg.damping * follower.velocity[AXIS_NORMAL]) / cfg.mass
    v_normal = follower.velocity[AXIS_NORMAL] + accel * dt
    x_normal = follower.position[AXIS_NORMAL] + v_normal * dt

    offset = state.mount.contact_offset(x_normal)
    k = int(np.searchsorted(state.neg_projections, -offset, side='left'))
    removed = k * state.workpiece.point_volume
    rate = removed / dt

    tau = cfg.contact_time_constant
    if tau > 0:
        filtered = state.filtered_rate + (rate - state.filtered_rate) * min(1.0, dt / tau)
    else:
        filtered = rate
    force_normal, force_tangential = resistance(max(filtered, 0.0), state.material)

    new_follower = ContactState(
        np.array([x_normal, leader.position[AXIS_TANGENTIAL]]),
        np.array([v_normal, leader.velocity[AXIS_TANGENTIAL]]),
        np.array([-force_normal, -force_tangential]),
        role='follower',
        orientation=follower.orientation,
    )
    if k > 0:
        workpiece = PointCloud(state.workpiece.points[k:], state.workpiece.point_volume)
        neg_projections = state.neg_projections[k:]
    else:
        workpiece = state.workpiece
        neg_projections = state.neg_projections

    return replace(
        state,
        follower=new_follower,
        workpiece=workpiece,
        neg_projections=neg_projections,
        time=state.time + dt,
        removed_volume_rate=rate,
        filtered_rate=filtered,
        removed_volume=state.removed_volume + removed,
    )


class LeaderSource:
    """
    領導端命令來源（示範者、學習策略或基準控制器）

    rate_hz 為產生新命令的頻率；兩次命令之間位置做線性內插。
    """
    rate_hz: float = 1000.0

    def reset(self, state: GrindSimState) -> None:
        pass

    def command(self, state: GrindSimState, history: List[ContactState]) -> ContactState:
        raise NotImplementedError


@dataclass
class GrindOutcome:
    """
    一段研磨的結果；reached_surface / aborted_force_limit / timed_out 恰有一個為真
    """
    reached_surface: bool
    aborted_force_limit: bool
    timed_out: bool
    elapsed: float
    in_limit_ratio: float
    steps: int
    in_limit_steps: int
    control_steps: int
    predict_calls: int
    final_state: GrindSimState = field(repr=False)
    force_trace: Optional[pd.DataFrame] = field(default=None, repr=False)
    recorded: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default=None, repr=False)

    @property
    def reason(self) -> str:
        if self.reached_surface:
            return 'reached'
        if self.aborted_force_limit:
            return 'force-limit'
        return 'timeout'


def _follow_command(follower: ContactState) -> ContactState:
    """與從動端一致、滿足作用反作用的領導端狀態"""
    return ContactState(follower.position, follower.velocity, -follower.force,
                        role='leader', orientation=follower.orientation)


def _blend(start: ContactState, end: ContactState, fraction: float) -> ContactState:
    position = start.position + (end.position - start.position) * fraction
    return ContactState(position, end.velocity, end.force, role='leader', orientation=end.orientation)


def run_bilateral(sim: GrindSimState, source: LeaderSource, cfg: SimConfig,
                  target: Optional[CuttingSurface] = None, clip_to_target: bool = True,
                  eps: Optional[float] = None, persistence: Optional[int] = None,
                  limit: Optional[float] = None, timeout: Optional[float] = None,
                  record: bool = False, log: bool = True,
                  stop_on_reach: bool = True) -> GrindOutcome:
    """
    雙邊控制研磨迴圈：領導端來源 → 混合控制 → 模擬步

    Args:
        sim: 起始模擬狀態
        source: 領導端命令來源
        cfg: 模擬設定（dt、控制頻率、預設 eps/persistence/limit/timeout）
        target: 目標切削平面；None 表示只依時間結束
        clip_to_target: 命令法向位置不超過目標平面的 Γ⁻¹ 姿態；
            關閉時只要接觸面越過目標即視為到達
        eps: 到達判定容許誤差 (mm)，只沿法向評估
        persistence: 誤差需連續小於 eps 超過此控制步數
        limit: 切向力上限 (N)，超過即中止
        timeout: 最長模擬時間 (s)
        record: 是否保存 1 kHz 的 (從動端, 領導端) 配對
        log: 是否保存模擬紀錄
        stop_on_reach: 關閉時只用目標平面限位，固定跑到 timeout

    Returns:
        GrindOutcome
    """
    eps = cfg.eps if eps is None else eps
    persistence = cfg.persistence if persistence is None else persistence
    limit = cfg.force_limit if limit is None else limit
    timeout = cfg.timeout if timeout is None else timeout
    if not eps > 0:
        raise SimulationError(f"eps 必須 > 0，收到 {eps}")
    if persistence < 0:
        raise SimulationError(f"persistence 不可為負，收到 {persistence}")
    if target is not None:
        target.validate(sim.mount.angle_bound)
        if not np.allclose(target.normal, sim.contact_surface.normal):
            raise SimulationError("目標切削平面與目前姿態不平行")

    dt = cfg.dt
    substeps = cfg.substeps_per_control
    source_every = max(1, int(round(cfg.rate_hz / source.rate_hz)))
    max_steps = max(1, int(round(timeout / dt)))
    stop_x = sim.mount.normal_position(target.x) if target is not None else None

    state = sim
    source.reset(state)
    history = [state.follower]
    start_cmd = end_cmd = _follow_command(state.follower)
    steps = in_limit = control_steps = commands = streak = 0
    reached = aborted = False
    rows = [] if log else None
    times, followers, leaders = [], [], []

    while True:
        phase = steps % source_every
        if phase == 0:
            start_cmd = end_cmd
            end_cmd = source.command(state, history)
            commands += 1
        leader = _blend(start_cmd, end_cmd, (phase + 1) / source_every)
        if clip_to_target and stop_x is not None and leader.position[AXIS_NORMAL] > stop_x:
            leader = ContactState(
                np.array([stop_x, leader.position[AXIS_TANGENTIAL]]),
                np.array([min(leader.velocity[AXIS_NORMAL], 0.0), leader.velocity[AXIS_TANGENTIAL]]),
                leader.force, role='leader', orientation=leader.orientation,
            )
        if record:
            times.append(state.time)
            followers.append(state.follower.as_vector())
            leaders.append(leader.as_vector())

        state = step(state, leader, dt, cfg)
        steps += 1
        if log:
            rows.append(state.log_row())
        if check_force_limit(state, limit):
            in_limit += 1
        else:
            aborted = True
            logger.warning("force limit exceeded: |F_T| = %.2f N at t = %.3f s",
                           state.tangential_force, state.time - sim.time)
            break

        if steps % substeps == 0:
            control_steps += 1
            history.append(state.follower)
            if target is not None and stop_on_reach:
                gap = state.contact_surface.x - target.x
                within = abs(gap) < eps if clip_to_target else gap < eps
                streak = streak + 1 if within else 0
                if streak > persistence:
                    reached = True
                    break
        if steps >= max_steps:
            break

    recorded = None
    if record:
        recorded = (np.array(times), np.array(followers).reshape(-1, 6), np.array(leaders).reshape(-1, 6))
    return GrindOutcome(
        reached_surface=reached,
        aborted_force_limit=aborted,
        timed_out=not (reached or aborted),
        elapsed=steps * dt,
        in_limit_ratio=in_limit / steps if steps else 1.0,
        steps=steps,
        in_limit_steps=in_limit,
        control_steps=control_steps,
        predict_calls=commands,
        final_state=state,
        force_trace=pd.DataFrame(rows, columns=SIM_LOG_COLUMNS) if log else None,
        recorded=recorded,
    )
