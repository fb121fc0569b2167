#!/usr/bin/env python3
"""
Grind Storage Module
管理點雲、模擬紀錄、示範、資料集、執行報告與基準結果的本地儲存
"""

import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from grind_expert import Dataset, Episode
from grind_geometry import STATE_FIELDS, GrindError, PointCloud

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
EPISODE_COLUMNS = ['time'] + [f'f_{name}' for name in STATE_FIELDS] + [f'l_{name}' for name in STATE_FIELDS]


class StorageError(GrindError):
    """檔案不存在或格式錯誤"""
    pass


def _read_header(path: Path) -> Dict[str, str]:
    """讀取檔案開頭 '# key=value' 形式的註解"""
    header = {}
    with open(path, 'r', encoding='utf-8-sig') as f:
        for line in f:
            stripped = line.strip()
            if not stripped:
                continue
            if not stripped.startswith('#'):
                break
            body = stripped.lstrip('#').strip()
            if '=' in body:
                key, value = body.split('=', 1)
                header[key.strip()] = value.strip()
    return header


def _write_with_header(df: pd.DataFrame, path: Path, header: Dict[str, object], **kwargs) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8-sig', newline='') as f:
        for key, value in header.items():
            f.write(f"# {key}={value}\n")
        df.to_csv(f, index=False, **kwargs)
    return path


class GrindStorage:
    def __init__(self, data_dir: Optional[PathLike] = None):
        """
        初始化儲存模組

        Args:
            data_dir: 資料目錄路徑（預設為專案根目錄下的 data）
        """
        if data_dir is None:
            base_dir = Path(__file__).parent.parent
            self.data_dir = base_dir / "data"
        else:
            self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)

    def resolve(self, path: PathLike) -> Path:
        """相對路徑以資料目錄為基準"""
        path = Path(path)
        return path if path.is_absolute() else self.data_dir / path

    # ------------------------------------------------------------------
    # 點雲
    # ------------------------------------------------------------------

    def save_point_cloud(self, cloud: PointCloud, path: PathLike) -> Path:
        """
        儲存為 ASCII .xyz，每行 "x y z"，開頭為 point_volume 註解
        """
        path = self.resolve(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(f"# point_volume={cloud.point_volume!r}\n")
            np.savetxt(f, cloud.points, fmt='%.9g', delimiter=' ')
        return path

    def load_point_cloud(self, path: PathLike, point_volume: Optional[float] = None) -> PointCloud:
        """
        讀取 .xyz；容許空白行與 '#' 註解，含非有限座標的列會被略過

        Args:
            path: 檔案路徑
            point_volume: 檔案沒有標頭時使用的每點體積

        Raises:
            StorageError: 檔案不存在、欄位數錯誤或缺少 point_volume
        """
        path = self.resolve(path)
        if not path.exists():
            raise StorageError(f"找不到點雲檔案: {path}")
        header = _read_header(path)
        if 'point_volume' in header:
            try:
                point_volume = float(header['point_volume'])
            except ValueError as e:
                raise StorageError(f"{path}: point_volume 標頭無效") from e
        if point_volume is None:
            raise StorageError(f"{path}: 缺少 point_volume 標頭")

        try:
            df = pd.read_csv(path, sep=r'\s+', comment='#', header=None,
                             skip_blank_lines=True, encoding='utf-8-sig')
        except pd.errors.EmptyDataError:
            return PointCloud(np.empty((0, 3)), point_volume)
        if df.shape[1] != 3:
            raise StorageError(f"{path}: 每行必須是 'x y z'，收到 {df.shape[1]} 欄")
        values = df.apply(pd.to_numeric, errors='coerce').to_numpy(dtype=float)
        finite = np.isfinite(values).all(axis=1)
        if not finite.all():
            logger.warning("%s: dropped %d rows with non-finite coordinates", path, int((~finite).sum()))
        return PointCloud(values[finite], point_volume)

    # ------------------------------------------------------------------
    # 模擬紀錄與示範
    # ------------------------------------------------------------------

    def save_sim_log(self, log: pd.DataFrame, path: PathLike) -> Path:
        path = self.resolve(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        log.to_csv(path, index=False, encoding='utf-8-sig')
        return path

    def save_episode(self, episode: Episode, path: PathLike) -> Path:
        """每列為一個取樣：時間、從動端六個欄位、領導端六個欄位"""
        df = pd.DataFrame(np.column_stack([episode.times, episode.follower, episode.leader]),
                          columns=EPISODE_COLUMNS)
        header = {
            'rate_hz': episode.rate_hz,
            'workpiece': episode.workpiece,
            'theta': repr(episode.orientation[0]),
            'psi': repr(episode.orientation[1]),
        }
        return _write_with_header(df, self.resolve(path), header)

    def load_episode(self, path: PathLike) -> Episode:
        path = self.resolve(path)
        if not path.exists():
            raise StorageError(f"找不到示範檔案: {path}")
        header = _read_header(path)
        df = pd.read_csv(path, comment='#', encoding='utf-8-sig')
        missing = [c for c in EPISODE_COLUMNS if c not in df.columns]
        if missing or 'rate_hz' not in header:
            raise StorageError(f"{path}: 示範檔案缺少欄位 {missing or ['rate_hz']}")
        orientation = (float(header.get('theta', 0.0)), float(header.get('psi', 0.0)))
        follower = df[[f'f_{n}' for n in STATE_FIELDS]].to_numpy(dtype=float)
        leader = df[[f'l_{n}' for n in STATE_FIELDS]].to_numpy(dtype=float)
        return Episode(df['time'].to_numpy(dtype=float), follower, leader,
                       float(header['rate_hz']), header.get('workpiece', ''), orientation)

    def save_episodes(self, episodes: Sequence[Episode], directory: PathLike) -> List[Path]:
        directory = self.resolve(directory)
        paths = []
        for i, episode in enumerate(episodes):
            name = episode.workpiece or 'episode'
            paths.append(self.save_episode(episode, directory / f"{i:03d}_{name}.csv"))
        return paths

    def load_episodes(self, directory: PathLike) -> List[Episode]:
        directory = self.resolve(directory)
        files = sorted(directory.glob('*.csv'))
        if not files:
            raise StorageError(f"{directory} 中沒有示範檔案")
        return [self.load_episode(p) for p in files]

    # ------------------------------------------------------------------
    # 資料集
    # ------------------------------------------------------------------

    @staticmethod
    def dataset_columns(n: int) -> List[str]:
        """episode、由舊到新的 n 個從動端取樣、領導端六個欄位"""
        follower = [f'f{k}_{name}' for k in range(n) for name in STATE_FIELDS]
        return ['episode'] + follower + [f'l_{name}' for name in STATE_FIELDS]

    def save_dataset(self, dataset: Dataset, path: PathLike) -> Path:
        n = dataset.window_length
        body = np.column_stack([
            dataset.episode_index.reshape(-1, 1),
            dataset.windows.reshape(len(dataset), n * 6),
            dataset.targets,
        ]) if len(dataset) else np.empty((0, 1 + n * 6 + 6))
        df = pd.DataFrame(body, columns=self.dataset_columns(n))
        df['episode'] = df['episode'].astype(int)
        return _write_with_header(df, self.resolve(path), {'window_length': n}, float_format='%.9g')

    def load_dataset(self, path: PathLike) -> Dataset:
        path = self.resolve(path)
        if not path.exists():
            raise StorageError(f"找不到資料集檔案: {path}")
        header = _read_header(path)
        try:
            n = int(header['window_length'])
        except (KeyError, ValueError) as e:
            raise StorageError(f"{path}: 缺少 window_length 標頭") from e
        df = pd.read_csv(path, comment='#', encoding='utf-8-sig')
        columns = self.dataset_columns(n)
        if list(df.columns) != columns:
            raise StorageError(f"{path}: 欄位與視窗長度 {n} 不符")
        follower = df[columns[1:1 + n * 6]].to_numpy(dtype=float).reshape(-1, n, 6)
        leader = df[columns[1 + n * 6:]].to_numpy(dtype=float)
        return Dataset(follower, leader, n, df['episode'].to_numpy(dtype=int))

    # ------------------------------------------------------------------
    # 報告與基準結果
    # ------------------------------------------------------------------

    def save_report(self, report, directory: PathLike, name: Optional[str] = None) -> Tuple[Path, Path, Path]:
        """
        儲存 RunReport：JSON 紀錄、形狀誤差軌跡 CSV、最終形狀 .xyz
        （單次移除另存 1 kHz 力量紀錄 _force.csv）

        Returns:
            (json 路徑, trace 路徑, xyz 路徑)
        """
        directory = self.resolve(directory)
        directory.mkdir(parents=True, exist_ok=True)
        name = name or f"{report.method}_{report.workpiece}_s{report.seed}".replace(' ', '_')
        record = report.to_record()
        json_path = directory / f"{name}.json"
        with open(json_path, 'w', encoding='utf-8') as f:
            json.dump(_jsonable(record), f, indent=4, ensure_ascii=False)
        trace_path = directory / f"{name}_trace.csv"
        report.trace.to_csv(trace_path, index=False, encoding='utf-8-sig')
        shape_path = self.save_point_cloud(report.final_shape, directory / f"{name}_final.xyz")
        if report.force_trace is not None:
            self.save_sim_log(report.force_trace, directory / f"{name}_force.csv")
        return json_path, trace_path, shape_path

    def load_report_record(self, path: PathLike) -> dict:
        path = self.resolve(path)
        if not path.exists():
            raise StorageError(f"找不到報告檔案: {path}")
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise StorageError(f"{path}: JSON 格式錯誤: {e}") from e

    def save_record(self, record: dict, path: PathLike) -> Path:
        path = self.resolve(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(_jsonable(record), f, indent=4, ensure_ascii=False)
        return path

    def save_bench(self, runs: pd.DataFrame, summary: pd.DataFrame,
                   directory: PathLike) -> Tuple[Path, Path]:
        directory = self.resolve(directory)
        directory.mkdir(parents=True, exist_ok=True)
        runs_path = directory / "bench_runs.csv"
        summary_path = directory / "bench_summary.csv"
        runs.to_csv(runs_path, index=False, encoding='utf-8-sig')
        summary.to_csv(summary_path, index=False, encoding='utf-8-sig')
        return runs_path, summary_path

    def load_bench_summary(self, directory: PathLike) -> pd.DataFrame:
        path = self.resolve(directory) / "bench_summary.csv"
        if not path.exists() or path.stat().st_size == 0:
            return pd.DataFrame()
        return pd.read_csv(path, encoding='utf-8-sig')


def _jsonable(value):
    """numpy 數值轉為 JSON 可序列化型別；非有限值存為 null"""
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value
