#!/usr/bin/env python3
"""
Grind Config Module
讀取 data/decompgrind.ini 並建立各模組的設定物件；設定 rich 日誌輸出
"""

import configparser
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Tuple, Union

from rich.logging import RichHandler

from grind_expert import ExpertConfig
from grind_geometry import GrindError, MountConfig
from grind_planner import PlannerConfig
from grind_policy import ModelConfig, TrainConfig
from grind_sim import ControllerGains, SimConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).parent.parent / "data" / "decompgrind.ini"


class ConfigError(GrindError):
    """設定檔格式或數值錯誤"""
    pass


@dataclass
class BenchConfig:
    """
    基準實驗設定，對應設定檔 [bench] 區段

    planning_charge 為 None 時以實際計算時間計入執行時間。
    """
    seeds: Tuple[int, ...] = (1, 2, 3)
    observation_time: float = 50.5
    planning_charge: Optional[float] = None
    hybrid_duration: float = 10.0
    hybrid_feed: float = 1.0
    hybrid_force_cap: float = 6.0
    max_planning_steps: int = 30
    bcil_duration: float = 60.0
    stop_ratio: float = 0.05
    resolution: Optional[float] = None
    workers: int = 1
    output_dir: str = "bench"

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("[bench] seeds 不可為空")
        if self.observation_time < 0 or (self.planning_charge is not None and self.planning_charge < 0):
            raise ConfigError("[bench] observation_time / planning_charge 不可為負")
        if not (self.hybrid_duration > 0 and self.hybrid_feed > 0 and self.hybrid_force_cap > 0):
            raise ConfigError("[bench] hybrid_duration、hybrid_feed、hybrid_force_cap 必須 > 0")
        if self.max_planning_steps < 1 or self.workers < 1:
            raise ConfigError("[bench] 步數與 workers 必須 ≥ 1")
        if not 0 < self.stop_ratio < 1:
            raise ConfigError(f"[bench] stop_ratio 必須在 (0, 1)，收到 {self.stop_ratio}")


@dataclass
class GrindConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    source: Optional[Path] = None


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in text.split(',') if v.strip())


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in text.split(',') if v.strip())


def _names(text: str) -> Tuple[str, ...]:
    return tuple(v.strip() for v in text.split(',') if v.strip())


def _optional_float(text: str) -> Optional[float]:
    text = text.strip().lower()
    if text in ('', 'none', 'measured', 'auto'):
        return None
    return float(text)


def _boolean(text: str) -> bool:
    value = text.strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"不是布林值: {text}")


class _Section:
    """單一 INI 區段的型別化讀取，錯誤訊息包含區段與鍵名"""

    def __init__(self, parser: configparser.ConfigParser, name: str):
        self.name = name
        self.values = parser[name] if parser.has_section(name) else {}

    def get(self, key: str, default, convert: Callable = float):
        if key not in self.values:
            return default
        raw = self.values[key]
        try:
            return convert(raw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"[{self.name}] {key} = {raw!r} 無法解析: {e}") from e


def _build(section: str, factory: Callable, *args, **kwargs):
    try:
        return factory(*args, **kwargs)
    except ConfigError:
        raise
    except GrindError as e:
        raise ConfigError(f"[{section}] 設定無效: {e}") from e


def override(config: GrindConfig, section: str, **changes) -> GrindConfig:
    """
    以命令列參數覆寫一個區段；None 值忽略，覆寫後重新驗證

    Raises:
        ConfigError: 覆寫後的數值無效
    """
    changes = {k: v for k, v in changes.items() if v is not None}
    if not changes:
        return config
    updated = _build(section, replace, getattr(config, section), **changes)
    return replace(config, **{section: updated})


def parse_seeds(text: str) -> Tuple[int, ...]:
    """
    逗號分隔的種子列表

    Raises:
        ConfigError: 含非整數或為空
    """
    try:
        seeds = _ints(text)
    except ValueError as e:
        raise ConfigError(f"種子列表 {text!r} 無法解析: {e}") from e
    if not seeds:
        raise ConfigError("種子列表不可為空")
    return seeds


def load_config(path: Optional[Union[str, Path]] = None) -> GrindConfig:
    """
    讀取設定檔；缺少的鍵使用預設值

    Args:
        path: INI 路徑，None 時讀取 data/decompgrind.ini（不存在則全部使用預設值）

    Returns:
        GrindConfig

    Raises:
        ConfigError: 檔案不存在（明確指定時）、格式錯誤或數值無效
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=('#', ';'))
    source = None
    if path is not None:
        source = Path(path)
        if not source.exists():
            raise ConfigError(f"找不到設定檔: {source}")
    elif DEFAULT_CONFIG_PATH.exists():
        source = DEFAULT_CONFIG_PATH
    if source is not None:
        try:
            parser.read(source, encoding='utf-8')
        except configparser.Error as e:
            raise ConfigError(f"設定檔格式錯誤 {source}: {e}") from e
        logger.debug("config loaded from %s", source)

    s = _Section(parser, 'sim')
    d_sim = SimConfig()
    d_gains = ControllerGains.uniform()
    d_mount = MountConfig()
    gains = _build('sim', ControllerGains,
                   kp=s.get('kp', d_gains.kp, _floats), kd=s.get('kd', d_gains.kd, _floats),
                   kf=s.get('kf', d_gains.kf, _floats), inertia=s.get('inertia', d_gains.inertia, _floats))
    mount = MountConfig(
        belt_position=s.get('belt_position', d_mount.belt_position),
        tool_offset=s.get('tool_offset', d_mount.tool_offset),
        angle_bound=math.radians(s.get('angle_bound_deg', math.degrees(d_mount.angle_bound))),
    )
    sim = _build('sim', SimConfig,
                 dt=s.get('dt', d_sim.dt),
                 mass=s.get('mass', d_sim.mass),
                 damping=s.get('damping', d_sim.damping),
                 contact_time_constant=s.get('contact_time_constant', d_sim.contact_time_constant),
                 base_k_r=s.get('base_k_r', d_sim.base_k_r),
                 lam=s.get('lam', d_sim.lam),
                 belt_speed=s.get('belt_speed', d_sim.belt_speed),
                 force_limit=s.get('force_limit', d_sim.force_limit),
                 gains=gains,
                 mount=mount,
                 control_rate_hz=s.get('control_rate_hz', d_sim.control_rate_hz),
                 timeout=s.get('timeout', d_sim.timeout),
                 eps=s.get('eps', d_sim.eps),
                 persistence=s.get('persistence', d_sim.persistence, int))

    p = _Section(parser, 'planner')
    d_plan = PlannerConfig()
    planner = _build('planner', PlannerConfig,
                     horizon=p.get('horizon', d_plan.horizon, int),
                     theta_grid=tuple(math.radians(a) for a in p.get(
                         'theta_deg', tuple(math.degrees(a) for a in d_plan.theta_grid), _floats)),
                     psi_grid=tuple(math.radians(a) for a in p.get(
                         'psi_deg', tuple(math.degrees(a) for a in d_plan.psi_grid), _floats)),
                     x_grid=p.get('x_grid', None, lambda t: _floats(t) or None),
                     x_step=p.get('x_step', d_plan.x_step),
                     k_c=p.get('k_c', d_plan.k_c),
                     min_removal_height=p.get('min_removal_height', d_plan.min_removal_height),
                     replan_observation_period=p.get('replan_observation_period',
                                                     d_plan.replan_observation_period, int),
                     search=p.get('search', d_plan.search, str.strip),
                     exhaustive_limit=p.get('exhaustive_limit', d_plan.exhaustive_limit, int),
                     angle_bound=mount.angle_bound,
                     workers=p.get('workers', d_plan.workers, int))

    e = _Section(parser, 'expert')
    d_exp = ExpertConfig()
    expert = _build('expert', ExpertConfig,
                    target_force=e.get('target_force', d_exp.target_force),
                    kp=e.get('kp', d_exp.kp),
                    ki=e.get('ki', d_exp.ki),
                    max_lead=e.get('max_lead', d_exp.max_lead),
                    max_lead_rate=e.get('max_lead_rate', d_exp.max_lead_rate),
                    duration=e.get('duration', d_exp.duration),
                    repetitions=e.get('repetitions', d_exp.repetitions, int),
                    workpieces=e.get('workpieces', d_exp.workpieces, _names))

    m = _Section(parser, 'policy')
    d_model = ModelConfig()
    d_train = TrainConfig()
    model = _build('policy', ModelConfig,
                   window=m.get('window', d_model.window, int),
                   layers=m.get('layers', d_model.layers, int),
                   hidden=m.get('hidden', d_model.hidden, int),
                   train_rate_hz=m.get('train_rate_hz', d_model.train_rate_hz),
                   relative_positions=m.get('relative_positions', d_model.relative_positions, _boolean),
                   touch_off=m.get('touch_off', d_model.touch_off, _boolean))
    train = _build('policy', TrainConfig,
                   epochs=m.get('epochs', d_train.epochs, int),
                   learning_rate=m.get('learning_rate', d_train.learning_rate),
                   batch_size=m.get('batch_size', d_train.batch_size, int),
                   seed=m.get('seed', d_train.seed, int))

    b = _Section(parser, 'bench')
    d_bench = BenchConfig()
    bench = _build('bench', BenchConfig,
                   seeds=b.get('seeds', d_bench.seeds, _ints),
                   observation_time=b.get('observation_time', d_bench.observation_time),
                   planning_charge=b.get('planning_charge', d_bench.planning_charge, _optional_float),
                   hybrid_duration=b.get('hybrid_duration', d_bench.hybrid_duration),
                   hybrid_feed=b.get('hybrid_feed', d_bench.hybrid_feed),
                   hybrid_force_cap=b.get('hybrid_force_cap', d_bench.hybrid_force_cap),
                   max_planning_steps=b.get('max_planning_steps', d_bench.max_planning_steps, int),
                   bcil_duration=b.get('bcil_duration', d_bench.bcil_duration),
                   stop_ratio=b.get('stop_ratio', d_bench.stop_ratio),
                   resolution=b.get('resolution', d_bench.resolution, _optional_float),
                   workers=b.get('workers', d_bench.workers, int),
                   output_dir=b.get('output_dir', d_bench.output_dir, str.strip))

    if not math.isclose(model.train_rate_hz, sim.control_rate_hz):
        raise ConfigError(
            f"[policy] train_rate_hz ({model.train_rate_hz}) 必須等於 [sim] control_rate_hz ({sim.control_rate_hz})")
    return GrindConfig(sim, planner, expert, model, train, bench, source)


def setup_logging(level: Union[int, str] = logging.INFO, rich_output: bool = True) -> None:
    """
    設定根日誌；預設使用 RichHandler，非互動環境可改用純文字格式
    """
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.INFO)
    if rich_output:
        handler = RichHandler(rich_tracebacks=True, show_path=False)
        fmt = '%(message)s'
    else:
        handler = logging.StreamHandler()
        fmt = '[%(levelname)s] %(message)s'
    logging.basicConfig(level=level, format=fmt, datefmt='[%X]', handlers=[handler], force=True)
