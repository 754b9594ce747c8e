"""Training loop and inference for the self-supervised denoiser."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from ..errors import InvalidArgument, TrainingError
from ..geometry import PolarFrame
from .loss import batch_loss
from .network import DenoiserModel
from .subsample import random_choice_map

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    gamma: float = 1.0
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 4
    gamma_ramp: bool = False
    seed: int = 0
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.gamma < 0:
            raise InvalidArgument(f"gamma must be >= 0, got {self.gamma}")
        if self.epochs < 0 or self.batch_size < 1 or not self.learning_rate > 0:
            raise InvalidArgument("epochs >= 0, batch_size >= 1 and learning_rate > 0 are required")

    def gamma_at(self, epoch):
        """Consistency weight for a 0-based epoch (linear ramp over the first half if enabled)."""
        if not self.gamma_ramp or self.epochs < 2:
            return self.gamma
        return self.gamma * min(1.0, epoch / (self.epochs / 2))


@dataclass
class EpochLoss:
    loss1: float
    loss2: float
    total: float


def _frame_stack(dataset):
    frames = getattr(dataset, "frames", dataset)
    arrays = [np.asarray(getattr(f, "data", f), dtype=np.float32) for f in frames]
    if not arrays:
        raise InvalidArgument("training needs at least one frame")
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise InvalidArgument("all training frames must share one shape")
    if shape[0] < 2 or shape[1] < 2:
        raise InvalidArgument(f"training frames must be at least 2x2, got {shape}")
    return np.stack(arrays)


def train(dataset, config=None):
    """Fit a fresh DenoiserModel on noisy frames only.

    Every epoch visits each frame once in a seeded random order, drawing a new
    choice map per frame. Returns ``(model, history)`` where history holds the
    per-epoch mean (loss1, loss2, total).
    """
    config = config or TrainConfig()
    stack = _frame_stack(dataset)
    torch.manual_seed(config.seed)
    model = DenoiserModel()
    history = []
    if config.epochs == 0:
        return model.eval(), history

    rng = np.random.default_rng(config.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    mask = None if config.mask is None else torch.as_tensor(np.asarray(config.mask, dtype=bool))
    images = torch.from_numpy(stack)[:, None]
    n = len(stack)
    model.train()
    for epoch in range(config.epochs):
        gamma = config.gamma_at(epoch)
        order = rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            maps = torch.from_numpy(np.stack([random_choice_map(stack.shape[1:], rng) for _ in idx]))
            total, l1, l2 = batch_loss(model, images[idx], maps, gamma, mask)
            if not torch.isfinite(total):
                raise TrainingError(f"non-finite loss in epoch {epoch + 1}", epoch=epoch + 1)
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            sums += len(idx) * np.array([l1.item(), l2.item(), total.item()])
        record = EpochLoss(*(sums / n))
        history.append(record)
        logger.info("epoch %d/%d loss1=%.6g loss2=%.6g total=%.6g",
                    epoch + 1, config.epochs, record.loss1, record.loss2, record.total)
        if not all(math.isfinite(v) for v in (record.loss1, record.loss2, record.total)):
            raise TrainingError(f"non-finite loss in epoch {epoch + 1}", epoch=epoch + 1)
    return model.eval(), history


def denoise_image(model, image):
    """Single full-resolution pass; output clamped to [0, 1]."""
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(np.asarray(image), dtype=dtype)[None, None]
    with torch.no_grad():
        y = model(x)[0, 0].double().numpy()
    return np.clip(y, 0.0, 1.0)


def denoise_frame(model, frame):
    return PolarFrame(frame.geometry, frame.timestamp_us, denoise_image(model, frame.data))
