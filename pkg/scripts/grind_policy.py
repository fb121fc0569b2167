#!/usr/bin/env python3
"""
LCFA Policy Module
由從動端接觸狀態序列預測下一步領導端狀態的 LSTM 策略：訓練、推論、存取、研磨執行
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
from torch.utils.data import DataLoader, TensorDataset

from grind_expert import Dataset, ExpertConfig
from grind_geometry import AXIS_NORMAL, ContactState, CuttingSurface, GrindError
from grind_sim import GrindOutcome, GrindSimState, LeaderSource, SimConfig, run_bilateral

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
STATE_DIM = 6
# 標準差低於此值視為常數欄位
MIN_STD = 1e-8


class PolicyError(GrindError):
    """策略訓練、推論或模型檔案錯誤"""
    pass


@dataclass
class ModelConfig:
    """網路結構與特徵設定，對應設定檔 [policy] 區段"""
    window: int = 20
    layers: int = 2
    hidden: int = 64
    train_rate_hz: float = 20.0
    relative_positions: bool = True
    # 訓練資料加入接觸初期的補齊視窗
    touch_off: bool = True

    def __post_init__(self):
        if self.window < 1 or self.layers < 1 or self.hidden < 1:
            raise PolicyError("window、layers、hidden 必須 ≥ 1")
        if not self.train_rate_hz > 0:
            raise PolicyError(f"train_rate_hz 必須 > 0，收到 {self.train_rate_hz}")


@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-3
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise PolicyError("epochs、learning_rate、batch_size 必須為正值")
        if self.seed < 0:
            raise PolicyError(f"seed 不可為負，收到 {self.seed}")


class LeaderPredictor(nn.Module):
    """
    LSTM 序列迴歸器

    輸出頭讀取最後一步的 LSTM 輸出與最後一個（正規化）輸入取樣；
    輸出頭初始化為零，起始預測即為正規化後的平均值。
    """

    def __init__(self, layers: int, hidden: int, input_size: int = STATE_DIM,
                 output_size: int = STATE_DIM):
        super().__init__()
        self.lstm = nn.LSTM(input_size, hidden, num_layers=layers, batch_first=True)
        self.head = nn.Linear(hidden + input_size, output_size)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out, _ = self.lstm(x)
        return self.head(torch.cat([out[:, -1, :], x[:, -1, :]], dim=1))


@dataclass(eq=False)
class PolicyModel:
    """
    訓練完成的策略 π_w 與其正規化統計量

    訓練後不再修改，可同時供多個研磨迴圈推論。
    """
    net: LeaderPredictor = field(repr=False)
    config: ModelConfig
    input_mean: np.ndarray
    input_std: np.ndarray
    output_mean: np.ndarray
    output_std: np.ndarray
    loss_history: List[float] = field(default_factory=list)

    def __post_init__(self):
        for name in ('input_mean', 'input_std', 'output_mean', 'output_std'):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if arr.shape != (STATE_DIM,) or not np.isfinite(arr).all():
                raise PolicyError(f"正規化統計量 {name} 無效")
            setattr(self, name, arr)
        if not ((self.input_std > 0).all() and (self.output_std > 0).all()):
            raise PolicyError("正規化標準差必須 > 0")
        self.net.eval()

    @property
    def window_length(self) -> int:
        return self.config.window

    @property
    def rate_hz(self) -> float:
        return self.config.train_rate_hz

    @property
    def final_loss(self) -> Optional[float]:
        return self.loss_history[-1] if self.loss_history else None

    def predict_batch(self, windows: np.ndarray) -> np.ndarray:
        """M×n×6 視窗 → M×6 預測領導端狀態向量"""
        windows = np.asarray(windows, dtype=float)
        if windows.ndim != 3 or windows.shape[1:] != (self.window_length, STATE_DIM):
            raise PolicyError(
                f"視窗形狀必須是 M×{self.window_length}×{STATE_DIM}，收到 {windows.shape}")
        if not np.isfinite(windows).all():
            raise PolicyError("視窗含有非有限值")
        features, reference = _relative(windows, None, self.config.relative_positions)
        x = torch.as_tensor((features - self.input_mean) / self.input_std, dtype=torch.float32)
        with torch.no_grad():
            y = self.net(x).double().numpy()
        out = y * self.output_std + self.output_mean
        if self.config.relative_positions:
            out[:, 0:2] += reference
        return out


def _relative(windows: np.ndarray, targets: Optional[np.ndarray], enabled: bool):
    """位置欄位改為相對視窗最後一個從動端位置"""
    reference = windows[:, -1, 0:2].copy()
    if not enabled:
        return (windows, reference) if targets is None else (windows, targets)
    features = windows.copy()
    features[:, :, 0:2] -= reference[:, None, :]
    if targets is None:
        return features, reference
    shifted = targets.copy()
    shifted[:, 0:2] -= reference
    return features, shifted


def _stats(values: np.ndarray):
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    std = np.where(std < MIN_STD, 1.0, std)
    return mean, std


def train(dataset: Dataset, model_cfg: Optional[ModelConfig] = None,
          train_cfg: Optional[TrainConfig] = None) -> PolicyModel:
    """
    以最小平方誤差訓練策略（Adam + 餘弦學習率）

    Args:
        dataset: 視窗資料集，視窗長度須等於 model_cfg.window
        model_cfg: 網路設定
        train_cfg: 訓練設定

    Returns:
        PolicyModel，loss_history 為每個 epoch 的平均正規化 MSE

    Raises:
        PolicyError: 資料集為空、視窗長度不符或損失非有限值
    """
    model_cfg = model_cfg or ModelConfig(window=dataset.window_length)
    train_cfg = train_cfg or TrainConfig()
    if dataset.is_empty():
        raise PolicyError("資料集為空，無法訓練")
    if dataset.window_length != model_cfg.window:
        raise PolicyError(f"資料集視窗長度 {dataset.window_length} 與模型設定 {model_cfg.window} 不符")

    features, targets = _relative(dataset.windows, dataset.targets, model_cfg.relative_positions)
    in_mean, in_std = _stats(features.reshape(-1, STATE_DIM))
    out_mean, out_std = _stats(targets)

    torch.manual_seed(train_cfg.seed)
    net = LeaderPredictor(model_cfg.layers, model_cfg.hidden)
    x = torch.as_tensor((features - in_mean) / in_std, dtype=torch.float32)
    y = torch.as_tensor((targets - out_mean) / out_std, dtype=torch.float32)
    loader = DataLoader(
        TensorDataset(x, y),
        batch_size=min(train_cfg.batch_size, len(x)),
        shuffle=True,
        generator=torch.Generator().manual_seed(train_cfg.seed),
    )
    optimizer = torch.optim.Adam(net.parameters(), lr=train_cfg.learning_rate)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=train_cfg.epochs)
    loss_fn = nn.MSELoss()

    history = []
    net.train()
    for epoch in range(train_cfg.epochs):
        total = 0.0
        for xb, yb in loader:
            loss = loss_fn(net(xb), yb)
            if not torch.isfinite(loss):
                raise PolicyError(f"第 {epoch + 1} 個 epoch 的損失為非有限值")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(xb)
        scheduler.step()
        history.append(total / len(x))
        if (epoch + 1) % max(1, train_cfg.epochs // 10) == 0:
            logger.debug("epoch %d/%d loss %.6f", epoch + 1, train_cfg.epochs, history[-1])

    logger.info("trained on %d windows (n=%d): final loss %.6f",
                len(x), model_cfg.window, history[-1])
    return PolicyModel(net, model_cfg, in_mean, in_std, out_mean, out_std, history)


WindowLike = Union[np.ndarray, Sequence[ContactState]]


def _window_array(window: WindowLike) -> np.ndarray:
    if len(window) and isinstance(window[0], ContactState):
        return np.stack([s.as_vector() for s in window])
    return np.asarray(window, dtype=float)


def predict(model: PolicyModel, window: WindowLike,
            orientation=(0.0, 0.0)) -> ContactState:
    """
    由 n 個從動端狀態預測下一步領導端狀態

    Raises:
        PolicyError: 視窗長度不等於 n 或含非有限值
    """
    arr = _window_array(window)
    if arr.ndim != 2 or arr.shape[0] != model.window_length:
        raise PolicyError(f"視窗長度必須是 {model.window_length}，收到 {arr.shape[0] if arr.ndim else 0}")
    if len(window) and isinstance(window[0], ContactState):
        orientation = window[-1].orientation
    vector = model.predict_batch(arr[None, :, :])[0]
    return ContactState.from_vector(vector, role='leader', orientation=orientation)


@dataclass(frozen=True)
class LeadGuard:
    """
    策略命令的法向超前量限制：|lead| ≤ max_lead，每次命令變化 ≤ max_lead_rate / rate_hz

    預設值與示範者的 max_lead、max_lead_rate 相同。
    """
    max_lead: float = 3.0
    max_lead_rate: float = 20.0

    def __post_init__(self):
        if not (self.max_lead > 0 and self.max_lead_rate > 0):
            raise PolicyError(f"max_lead 與 max_lead_rate 必須 > 0，收到 {self.max_lead}, {self.max_lead_rate}")

    @classmethod
    def from_expert(cls, expert: ExpertConfig) -> 'LeadGuard':
        return cls(expert.max_lead, expert.max_lead_rate)

    def clamp(self, lead: float, previous: float, rate_hz: float) -> float:
        step = self.max_lead_rate / rate_hz
        lead = min(max(lead, previous - step), previous + step)
        return min(max(lead, -self.max_lead), self.max_lead)


class PolicyLeader(LeaderSource):
    """
    以策略預測取代領導端；歷史不足 n 步時以第一個狀態補齊

    指定 guard 時，預測的法向位置改寫為從動端位置加上限制後的超前量，
    速度與力量仍取預測值。
    """

    def __init__(self, model: PolicyModel, guard: Optional[LeadGuard] = None):
        self.model = model
        self.guard = guard
        self.rate_hz = model.rate_hz
        self.lead = 0.0

    def reset(self, state: GrindSimState) -> None:
        self.lead = 0.0

    def command(self, state: GrindSimState, history: List[ContactState]) -> ContactState:
        n = self.model.window_length
        window = list(history[-n:])
        if len(window) < n:
            window = [window[0]] * (n - len(window)) + window
        predicted = predict(self.model, window)
        if self.guard is None:
            return predicted
        follower_x = float(state.follower.position[AXIS_NORMAL])
        lead = float(predicted.position[AXIS_NORMAL]) - follower_x
        self.lead = self.guard.clamp(lead, self.lead, self.rate_hz)
        position = predicted.position.copy()
        position[AXIS_NORMAL] = follower_x + self.lead
        return ContactState(position, predicted.velocity, predicted.force,
                            role='leader', orientation=predicted.orientation)


def grind_until_surface(model: PolicyModel, sim: GrindSimState, target: CuttingSurface,
                        eps: float = 0.05, persistence: int = 10, limit: float = 9.0,
                        timeout: float = 120.0, cfg: Optional[SimConfig] = None,
                        log: bool = True, guard: Optional[LeadGuard] = None) -> GrindOutcome:
    """
    以策略研磨一個移除形狀，直到接觸面到達切削平面

    Args:
        model: 訓練完成的策略
        sim: 已定位到與切削平面平行的模擬狀態
        target: 切削平面 c*
        eps: 法向誤差容許值 (mm)
        persistence: 誤差需連續小於 eps 超過此控制步數
        limit: 切向力上限 (N)
        timeout: 最長模擬時間 (s)
        cfg: 模擬設定
        log: 是否保留 1 kHz 力量紀錄
        guard: 法向超前量限制；None 時直接使用預測

    Returns:
        GrindOutcome

    Raises:
        PolicyError: persistence < 1 或策略頻率與控制頻率不符
    """
    cfg = cfg or SimConfig()
    if persistence < 1:
        raise PolicyError(f"persistence 必須 ≥ 1，收到 {persistence}")
    if not math.isclose(model.rate_hz, cfg.control_rate_hz):
        raise PolicyError(f"策略頻率 {model.rate_hz} Hz 與控制頻率 {cfg.control_rate_hz} Hz 不符")
    outcome = run_bilateral(sim, PolicyLeader(model, guard), cfg, target=target, clip_to_target=True,
                            eps=eps, persistence=persistence, limit=limit, timeout=timeout, log=log)
    logger.debug("grind to x=%.3f: %s after %.2f s (in-limit %.3f)",
                 target.x, outcome.reason, outcome.elapsed, outcome.in_limit_ratio)
    return outcome


def save_model(model: PolicyModel, path: Union[str, Path]) -> Path:
    """以 torch.save 儲存權重、結構、正規化統計量與損失紀錄"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        'format_version': MODEL_FORMAT_VERSION,
        'window': model.config.window,
        'layers': model.config.layers,
        'hidden': model.config.hidden,
        'train_rate_hz': model.config.train_rate_hz,
        'relative_positions': model.config.relative_positions,
        'input_mean': model.input_mean.tolist(),
        'input_std': model.input_std.tolist(),
        'output_mean': model.output_mean.tolist(),
        'output_std': model.output_std.tolist(),
        'loss_history': list(model.loss_history),
        'state_dict': model.net.state_dict(),
    }, path)
    logger.info("saved model to %s", path)
    return path


def load_model(path: Union[str, Path]) -> PolicyModel:
    """
    讀取 save_model 的輸出

    Raises:
        PolicyError: 檔案不存在、版本不符或內容缺漏
    """
    path = Path(path)
    if not path.exists():
        raise PolicyError(f"找不到模型檔案: {path}")
    try:
        blob = torch.load(path, map_location='cpu', weights_only=True)
    except Exception as e:
        raise PolicyError(f"無法讀取模型檔案 {path}: {e}") from e
    if blob.get('format_version') != MODEL_FORMAT_VERSION:
        raise PolicyError(f"模型格式版本不符: {blob.get('format_version')}")
    try:
        cfg = ModelConfig(blob['window'], blob['layers'], blob['hidden'],
                          blob['train_rate_hz'], blob['relative_positions'])
        net = LeaderPredictor(cfg.layers, cfg.hidden)
        net.load_state_dict(blob['state_dict'])
        return PolicyModel(net, cfg, blob['input_mean'], blob['input_std'],
                           blob['output_mean'], blob['output_std'], list(blob['loss_history']))
    except (KeyError, RuntimeError) as e:
        raise PolicyError(f"模型檔案內容不完整 {path}: {e}") from e
