#!/usr/bin/env python3
"""
Grind Geometry Module
點雲形狀、切削平面 (GCM)、Chamfer 誤差與 Γ_sur 轉換
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation


# 超過此點數改用 KD-tree 搜尋最近點
KDTREE_THRESHOLD = 1000

AXIS_NORMAL = 0
AXIS_TANGENTIAL = 1


class GrindError(Exception):
    """研磨工作台所有錯誤的基底類別"""
    pass


class GeometryError(GrindError):
    """幾何輸入無效（空點雲、角度超出範圍等）"""
    pass


@dataclass(frozen=True, eq=False)
class PointCloud:
    """
    工件形狀：N×3 點座標 (mm) 與每點均一體積 (mm³)
    """
    points: np.ndarray
    point_volume: float = 1.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise GeometryError(f"點雲必須是 N×3 陣列，收到 {pts.shape}")
        if not np.isfinite(pts).all():
            raise GeometryError("點雲含有非有限座標")
        if not (self.point_volume > 0 and math.isfinite(self.point_volume)):
            raise GeometryError(f"point_volume 必須 > 0，收到 {self.point_volume}")
        pts.setflags(write=False)
        object.__setattr__(self, 'points', pts)
        object.__setattr__(self, 'point_volume', float(self.point_volume))

    @property
    def count(self) -> int:
        return int(self.points.shape[0])

    @property
    def volume(self) -> float:
        return self.count * self.point_volume

    def is_empty(self) -> bool:
        return self.count == 0

    def subset(self, mask: np.ndarray) -> 'PointCloud':
        return PointCloud(self.points[mask], self.point_volume)

    def translated(self, offset) -> 'PointCloud':
        return PointCloud(self.points + np.asarray(offset, dtype=float), self.point_volume)

    def bounds(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """回傳 (最小角, 最大角)，空點雲回傳 None"""
        if self.is_empty():
            return None
        return self.points.min(axis=0), self.points.max(axis=0)

    def projections(self, normal: np.ndarray) -> np.ndarray:
        """各點沿法向量的投影（與 signed_distance 同一運算順序）"""
        p = self.points
        return p[:, 0] * normal[0] + p[:, 1] * normal[1] + p[:, 2] * normal[2]


@dataclass(frozen=True)
class CuttingSurface:
    """
    切削平面 c = [θ, ψ, x]

    θ 為繞工件側向軸 (y) 的旋轉，ψ 為繞縱向軸 (z) 的旋轉；
    法向量 n = R(θ, ψ)·e_x，平面位於沿 n 的偏移 x 處。
    """
    theta: float
    psi: float
    x: float

    def __post_init__(self):
        for name in ('theta', 'psi', 'x'):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise GeometryError(f"切削平面參數 {name} 必須是有限值，收到 {value}")
            object.__setattr__(self, name, float(value))

    @property
    def normal(self) -> np.ndarray:
        return surface_normal(self.theta, self.psi)

    def validate(self, angle_bound: float = math.pi / 2) -> 'CuttingSurface':
        if abs(self.theta) > angle_bound or abs(self.psi) > angle_bound:
            raise GeometryError(
                f"切削平面角度超出範圍 ±{math.degrees(angle_bound):.1f}°: "
                f"θ={math.degrees(self.theta):.2f}°, ψ={math.degrees(self.psi):.2f}°"
            )
        return self

    def signed_distance(self, cloud: PointCloud) -> np.ndarray:
        """正值代表位於皮帶側（移除側）"""
        return cloud.projections(self.normal) - self.x

    def shifted(self, dx: float) -> 'CuttingSurface':
        return CuttingSurface(self.theta, self.psi, self.x + dx)

    def to_record(self) -> dict:
        return {
            'theta_deg': math.degrees(self.theta),
            'psi_deg': math.degrees(self.psi),
            'x': self.x,
        }


def surface_normal(theta: float, psi: float) -> np.ndarray:
    """n = R_z(ψ)·R_y(θ)·e_x"""
    rot = Rotation.from_euler('ZY', [psi, theta])
    return rot.apply([1.0, 0.0, 0.0])


@dataclass(frozen=True)
class SplitResult:
    next_shape: PointCloud
    removal_shape: PointCloud


@dataclass(frozen=True)
class RemovalMetrics:
    volume: float
    height: float


@dataclass(frozen=True, eq=False)
class ContactState:
    """
    接觸狀態 z = (x, ẋ, F)，兩軸：法向 X、切向 Z

    orientation 為末端執行器姿態 (θ, ψ)，與切削平面平行。
    """
    position: np.ndarray
    velocity: np.ndarray
    force: np.ndarray
    role: str = 'follower'
    orientation: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        for name in ('position', 'velocity', 'force'):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if arr.shape != (2,):
                raise GeometryError(f"{name} 必須有兩軸 (normal, tangential)，收到 {arr.shape}")
            if not np.isfinite(arr).all():
                raise GeometryError(f"{name} 含有非有限值")
            object.__setattr__(self, name, arr)
        if self.role not in ('leader', 'follower'):
            raise GeometryError(f"未知角色: {self.role}")
        object.__setattr__(self, 'orientation', (float(self.orientation[0]), float(self.orientation[1])))

    def as_vector(self) -> np.ndarray:
        """[x_N, x_T, v_N, v_T, F_N, F_T]"""
        return np.concatenate([self.position, self.velocity, self.force])

    @classmethod
    def from_vector(cls, vector, role: str = 'follower',
                    orientation: Tuple[float, float] = (0.0, 0.0)) -> 'ContactState':
        v = np.asarray(vector, dtype=float).reshape(-1)
        if v.shape != (6,):
            raise GeometryError(f"狀態向量長度必須是 6，收到 {v.shape}")
        return cls(v[0:2], v[2:4], v[4:6], role=role, orientation=orientation)

    @classmethod
    def at_rest(cls, normal_position: float = 0.0, role: str = 'follower',
                orientation: Tuple[float, float] = (0.0, 0.0)) -> 'ContactState':
        return cls(np.array([normal_position, 0.0]), np.zeros(2), np.zeros(2),
                   role=role, orientation=orientation)


STATE_FIELDS = ('x_N', 'x_T', 'v_N', 'v_T', 'F_N', 'F_T')


@dataclass(frozen=True)
class MountConfig:
    """
    機台幾何：皮帶面在世界法向座標的位置，以及法蘭到工件座標原點的距離

    工件姿態使切削平面法向與世界 +X 對齊時，工件點 q 的世界座標為
    x_N + tool_offset + n·q，超過 belt_position 即被皮帶磨除。
    """
    belt_position: float = 250.0
    tool_offset: float = 150.0
    angle_bound: float = math.pi / 2

    def contact_offset(self, normal_position: float) -> float:
        """皮帶面在工件座標中的偏移（c^con 的 x）"""
        return self.belt_position - self.tool_offset - normal_position

    def normal_position(self, offset: float) -> float:
        return self.belt_position - self.tool_offset - offset


def split(cloud: PointCloud, surface: CuttingSurface) -> SplitResult:
    """
    以切削平面分割形狀 (G_O, G_r)

    Args:
        cloud: 目前形狀
        surface: 切削平面

    Returns:
        SplitResult；距離恰為 0 的點留在 next_shape
    """
    if cloud.is_empty():
        empty = PointCloud(np.empty((0, 3)), cloud.point_volume)
        return SplitResult(empty, empty)
    removed = surface.signed_distance(cloud) > 0.0
    return SplitResult(cloud.subset(~removed), cloud.subset(removed))


def nearest_sq_distances(query: np.ndarray, reference: np.ndarray,
                         tree: Optional[cKDTree] = None) -> np.ndarray:
    """
    query 每點到 reference 最近點的平方距離

    最近點索引由 KD-tree 或暴力法找出，平方距離一律以座標差重新計算，
    兩條路徑因此得到相同數值。
    """
    if len(query) == 0 or len(reference) == 0:
        raise GeometryError("最近點搜尋需要非空點集")
    if tree is not None or max(len(query), len(reference)) > KDTREE_THRESHOLD:
        if tree is None:
            tree = cKDTree(reference)
        _, idx = tree.query(query, k=1)
    else:
        diff = query[:, None, :] - reference[None, :, :]
        idx = np.argmin((diff ** 2).sum(axis=2), axis=1)
    delta = query - reference[idx]
    return (delta ** 2).sum(axis=1)


def chamfer(a: PointCloud, b: PointCloud, b_tree: Optional[cKDTree] = None) -> float:
    """
    Chamfer 誤差 (mm²)：雙向最近點平方距離的平均和

    b_tree 為 b 的 KD-tree，同一目標重複計算時可共用。

    Raises:
        GeometryError: 任一點雲為空
    """
    if a.is_empty() or b.is_empty():
        raise GeometryError("Chamfer 誤差在空點雲上沒有定義")
    forward = nearest_sq_distances(a.points, b.points, b_tree)
    backward = nearest_sq_distances(b.points, a.points)
    return float(forward.mean() + backward.mean())


def removal_metrics(cloud: PointCloud, surface: CuttingSurface) -> RemovalMetrics:
    removal = split(cloud, surface).removal_shape
    if removal.is_empty():
        return RemovalMetrics(0.0, 0.0)
    heights = removal.projections(surface.normal)
    return RemovalMetrics(removal.volume, float(heights.max() - heights.min()))


def surface_from_state(state: ContactState, mount: MountConfig) -> CuttingSurface:
    """Γ_sur：由從動端姿態求工件座標中的皮帶面"""
    theta, psi = state.orientation
    return CuttingSurface(theta, psi, mount.contact_offset(float(state.position[AXIS_NORMAL])))


def state_from_surface(surface: CuttingSurface, mount: MountConfig) -> ContactState:
    """
    Γ_sur⁻¹：使皮帶面與切削平面重合的從動端姿態

    Raises:
        GeometryError: 平面角度超出機台可達範圍
    """
    surface.validate(mount.angle_bound)
    return ContactState.at_rest(
        mount.normal_position(surface.x),
        role='follower',
        orientation=(surface.theta, surface.psi),
    )
