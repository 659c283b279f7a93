"""Per-layer execution gates with straight-through binarization.

Each adaptable synthesis layer gets a tiny classifier that looks at the
layer's input features and decides whether that layer's transmitted
update runs. The forward value is exactly 0 or 1 (threshold at 0.5); the
gradient is that of the underlying soft probability, so gate networks
train through the binary decision.

The classifier head is zero-initialized: the first post-warmup evaluation
sits exactly on the decision boundary, so even short adaptation runs with
a small gate learning rate resolve each gate by the sign of the
accumulated rate/distortion trade-off rather than by arbitrary init noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ContractError, ShapeError


class GateNetwork(nn.Module):
    """conv 3x3 stride 2 (8 ch) -> ReLU -> global mean pool -> linear 8 -> 2."""

    def __init__(self, in_channels: int, seed: int = 0, dtype: torch.dtype = torch.float32):
        super().__init__()
        if in_channels < 1:
            raise ContractError(f"in_channels must be >= 1, got {in_channels}")
        self.conv = nn.Conv2d(in_channels, 8, 3, stride=2, padding=1)
        self.head = nn.Linear(8, 2)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            fan_in = in_channels * 9
            std = (2.0 / fan_in) ** 0.5
            self.conv.weight.copy_(torch.randn(self.conv.weight.shape, generator=gen) * std)
            self.conv.bias.zero_()
            self.head.weight.zero_()
            self.head.bias.zero_()
        self.to(dtype)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        """Soft probability of executing the layer's update, shape (N,)."""
        x = F.relu(self.conv(h))
        pooled = F.adaptive_avg_pool2d(x, 1).flatten(1)
        logits = self.head(pooled)
        return torch.softmax(logits, dim=1)[:, 1]


def gate_forward(h: torch.Tensor, net: GateNetwork) -> tuple[torch.Tensor, torch.Tensor]:
    """Returns (gate, soft) for a single feature map (1, C, H, W).

    ``gate`` is numerically exactly 1.0 when soft >= 0.5 and exactly 0.0
    otherwise, but carries the gradient of ``soft`` (straight-through).
    """
    if h.ndim != 4 or h.shape[0] != 1:
        raise ShapeError(f"expected (1, C, H, W) features, got {tuple(h.shape)}")
    soft = net(h)[0]
    hard = (soft >= 0.5).to(soft.dtype)
    # grouping matters: soft - soft.detach() is exactly zero, so the
    # forward value is bit-exact 0/1 while the gradient is soft's
    gate = hard.detach() + (soft - soft.detach())
    return gate, soft


def warmup_override(step: int, warmup_steps: int) -> bool:
    """True while gates are forced open; adaptation steps are counted from 1.

    warmup_steps = 0 never forces; warmup_steps = total steps always forces.
    """
    if warmup_steps < 0:
        raise ContractError(f"warmup_steps must be >= 0, got {warmup_steps}")
    return step <= warmup_steps


@dataclass
class GateVector:
    """Final hard decisions for layers 1..K, with optional soft probabilities."""

    bits: np.ndarray
    soft: np.ndarray | None = None

    def __post_init__(self) -> None:
        b = np.asarray(self.bits, dtype=np.uint8)
        if b.ndim != 1 or b.size < 1:
            raise ShapeError("gate bits must be a non-empty vector")
        if np.any(b > 1):
            raise ContractError("gate bits must be 0 or 1")
        object.__setattr__(self, "bits", b)
        if self.soft is not None:
            s = np.asarray(self.soft, dtype=np.float64)
            if s.shape != b.shape:
                raise ShapeError("soft probabilities must match gate bits")
            if np.any((s >= 0.5).astype(np.uint8) != b):
                raise ContractError("gate bits disagree with soft probabilities")

    @property
    def open_count(self) -> int:
        return int(self.bits.sum())

    def open_layers(self) -> list[int]:
        """1-based indices of layers whose update executes."""
        return [i + 1 for i in range(self.bits.size) if self.bits[i]]
