#!/usr/bin/env python3
"""
Grind Workpieces Module
堆疊圓柱工件：底座 (base)、目標形狀 (target)、待磨除材料 (removable)
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from grind_geometry import CuttingSurface, GrindError, PointCloud

logger = logging.getLogger(__name__)

REGION_ROLES = ('base', 'target', 'removable')
STANDARD_FAMILIES = ('WP-E', 'WP-T', 'WP-S')
STANDARD_DENSITIES = (30.0, 45.0, 60.0)
DEFAULT_RESOLUTION = 2.0


class WorkpieceError(GrindError):
    """工件幾何或規格無效"""
    pass


@dataclass(frozen=True)
class Region:
    role: str
    diameter: float
    height: float

    def __post_init__(self):
        if self.role not in REGION_ROLES:
            raise WorkpieceError(f"未知區域類型 {self.role}，可用: {REGION_ROLES}")
        if not (self.diameter > 0 and self.height > 0):
            raise WorkpieceError(f"區域尺寸必須 > 0: ⌀{self.diameter} h{self.height}")

    @property
    def volume(self) -> float:
        return math.pi * (self.diameter / 2) ** 2 * self.height


@dataclass(frozen=True)
class WorkpieceSpec:
    """
    工件規格：沿研磨軸 +x 由下而上堆疊的圓柱區域

    Args:
        name: 名稱，例如 WP-T1
        family: WP-E / WP-T / WP-S / custom
        regions: 由下而上的區域，待磨除區域必須位於最上方
        density: 填充密度 (%)
        resolution: 取樣密度 (點/mm³)
    """
    name: str
    family: str
    regions: Tuple[Region, ...]
    density: float
    resolution: float = DEFAULT_RESOLUTION

    def __post_init__(self):
        object.__setattr__(self, 'regions', tuple(self.regions))
        roles = [r.role for r in self.regions]
        if 'removable' not in roles or not any(r != 'removable' for r in roles):
            raise WorkpieceError(f"{self.name}: 需要至少一個待磨除區域與一個保留區域")
        first_removable = roles.index('removable')
        if any(r != 'removable' for r in roles[first_removable:]):
            raise WorkpieceError(f"{self.name}: 待磨除區域必須堆疊在最上方")
        if self.family in STANDARD_FAMILIES:
            if self.density not in STANDARD_DENSITIES:
                raise WorkpieceError(f"{self.name}: 密度必須是 {STANDARD_DENSITIES} 之一")
        elif not (0 < self.density <= 100):
            raise WorkpieceError(f"{self.name}: 密度必須在 (0, 100]")
        if not self.resolution > 0:
            raise WorkpieceError(f"{self.name}: 取樣密度必須 > 0")

    @property
    def target_top(self) -> float:
        """保留區域頂端高度 (mm)"""
        return sum(r.height for r in self.regions if r.role != 'removable')

    @property
    def total_height(self) -> float:
        return sum(r.height for r in self.regions)

    @property
    def removable_diameter(self) -> float:
        return min(r.diameter for r in self.regions if r.role == 'removable')

    def flat_surface(self) -> CuttingSurface:
        """水平磨到目標頂端的切削平面（WP-S 評估用）"""
        return CuttingSurface(0.0, 0.0, self.target_top)

    def to_record(self) -> dict:
        return {
            'name': self.name,
            'family': self.family,
            'density': self.density,
            'resolution': self.resolution,
            'regions': [f"{r.role}:{r.diameter:g}:{r.height:g}" for r in self.regions],
        }


def _simple(name: str, family: str, diameter: float, height: float, density: float) -> WorkpieceSpec:
    return WorkpieceSpec(name, family, (
        Region('base', 30.0, 3.0),
        Region('target', diameter, 1.0),
        Region('removable', diameter, height),
    ), density)


def _stacked(name: str, base: Tuple[float, float], target: Tuple[float, float],
             removable: Tuple[float, float], density: float) -> WorkpieceSpec:
    return WorkpieceSpec(name, 'WP-E', (
        Region('base', *base),
        Region('target', *target),
        Region('removable', *removable),
    ), density)


STANDARD_WORKPIECES: Dict[str, WorkpieceSpec] = {
    'WP-T1': _simple('WP-T1', 'WP-T', 10.0, 20.0, 30.0),
    'WP-T2': _simple('WP-T2', 'WP-T', 25.0, 2.0, 60.0),
    'WP-S1': _simple('WP-S1', 'WP-S', 10.0, 20.0, 30.0),
    'WP-S2': _simple('WP-S2', 'WP-S', 14.0, 10.0, 30.0),
    'WP-S3': _simple('WP-S3', 'WP-S', 17.0, 10.0, 45.0),
    'WP-S4': _simple('WP-S4', 'WP-S', 21.0, 10.0, 45.0),
    'WP-S5': _simple('WP-S5', 'WP-S', 25.0, 10.0, 60.0),
    'WP-E1': _stacked('WP-E1', (30.0, 4.0), (30.0, 6.0), (30.0, 8.0), 30.0),
    'WP-E2': _stacked('WP-E2', (30.0, 4.0), (20.0, 6.0), (25.0, 8.0), 45.0),
    'WP-E3': _stacked('WP-E3', (20.0, 4.0), (10.0, 6.0), (10.0, 12.0), 60.0),
}


def get_workpiece(name: str, resolution: Optional[float] = None) -> WorkpieceSpec:
    """
    依名稱取得標準工件規格

    Raises:
        WorkpieceError: 未知名稱
    """
    key = name.upper()
    if key not in STANDARD_WORKPIECES:
        raise WorkpieceError(f"未知工件 {name}，可用: {', '.join(STANDARD_WORKPIECES)}")
    spec = STANDARD_WORKPIECES[key]
    if resolution is not None:
        spec = WorkpieceSpec(spec.name, spec.family, spec.regions, spec.density, resolution)
    return spec


def parse_regions(text: str) -> Tuple[Region, ...]:
    """解析 'base:30:4,target:30:6,removable:30:8'"""
    regions: List[Region] = []
    for item in text.split(','):
        parts = item.strip().split(':')
        if len(parts) != 3:
            raise WorkpieceError(f"區域格式錯誤 '{item}'，應為 role:diameter:height")
        try:
            regions.append(Region(parts[0].strip(), float(parts[1]), float(parts[2])))
        except ValueError as e:
            raise WorkpieceError(f"區域數值錯誤 '{item}': {e}") from e
    return tuple(regions)


def _sample_cylinder(rng: np.random.Generator, region: Region, base_height: float,
                     count: int) -> np.ndarray:
    # 沿軸向分層抖動取樣，截面內均勻
    axial = base_height + region.height * (np.arange(count) + rng.random(count)) / count
    radius = (region.diameter / 2) * np.sqrt(rng.random(count))
    angle = 2 * np.pi * rng.random(count)
    return np.column_stack([axial, radius * np.cos(angle), radius * np.sin(angle)])


def gen_workpiece(spec: WorkpieceSpec, seed: int = 0) -> Tuple[PointCloud, PointCloud]:
    """
    取樣工件初始形狀與目標形狀

    Args:
        spec: 工件規格
        seed: 亂數種子

    Returns:
        (initial, target)；target 為 initial 的前段點（底座 + 目標區域）
    """
    rng = np.random.default_rng(seed)
    blocks = []
    kept = 0
    height = 0.0
    total_volume = 0.0
    for region in spec.regions:
        count = max(1, int(round(region.volume * spec.resolution)))
        blocks.append(_sample_cylinder(rng, region, height, count))
        if region.role != 'removable':
            kept += count
        height += region.height
        total_volume += region.volume
    points = np.vstack(blocks)
    point_volume = total_volume / len(points)
    initial = PointCloud(points, point_volume)
    target = PointCloud(points[:kept], point_volume)
    logger.info("%s: %d points (%d target), point volume %.4f mm³",
                spec.name, initial.count, target.count, point_volume)
    return initial, target
