"""Quantized-logistic prior for transmitted decoder-weight updates.

Weight deltas are quantized to a uniform grid of width ``interval`` and
entropy-coded under a logistic density integrated over each bin:

    cdf(d) = 0.5 + 0.5 * tanh((d - loc) / (2 * scale))
    p(i)   = cdf(i * interval + interval / 2) - cdf(i * interval - interval / 2)

Bin probabilities are floored at 2**-20 so every symbol in the clamped
alphabet [-max_index, max_index] stays codable. The same closed form is
exposed both for exact integer-symbol accounting (numpy) and for the
differentiable additive-noise rate proxy used inside optimization loops
(torch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ContractError

PROB_FLOOR = 2.0 ** -20


@dataclass(frozen=True)
class DeltaPriorConfig:
    """Prior hyperparameters, fixed per bitstream.

    Args:
        interval: quantization bin width, > 0.
        loc: center of the logistic density.
        scale: spread of the logistic density, > 0.
        max_index: symbols are clamped to [-max_index, max_index].
    """

    interval: float = 0.01
    loc: float = 0.0
    scale: float = 0.05
    max_index: int = 255

    def __post_init__(self) -> None:
        # Headers carry these at single precision; round at construction so
        # encoder-side tables match what a decoder derives from the header.
        for name in ("interval", "loc", "scale"):
            object.__setattr__(self, name, float(np.float32(getattr(self, name))))
        if not self.interval > 0:
            raise ContractError(f"interval must be > 0, got {self.interval}")
        if not self.scale > 0:
            raise ContractError(f"scale must be > 0, got {self.scale}")
        if self.max_index < 1:
            raise ContractError(f"max_index must be >= 1, got {self.max_index}")

    @property
    def alphabet(self) -> np.ndarray:
        return np.arange(-self.max_index, self.max_index + 1, dtype=np.int32)


def cdf(x: np.ndarray | float, config: DeltaPriorConfig) -> np.ndarray | float:
    """Logistic cumulative distribution in tanh form."""
    return 0.5 + 0.5 * np.tanh((np.asarray(x, dtype=np.float64) - config.loc) / (2.0 * config.scale))


def symbol_prob(index: np.ndarray | int, config: DeltaPriorConfig) -> np.ndarray | float:
    """Probability mass of integer symbols, floored at PROB_FLOOR.

    Raises ContractError when any index falls outside the alphabet.
    """
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ContractError("symbol_prob expects integer indices")
    if np.any(np.abs(idx) > config.max_index):
        raise ContractError(
            f"symbol index out of range [-{config.max_index}, {config.max_index}]"
        )
    center = idx.astype(np.float64) * config.interval
    half = config.interval / 2.0
    p = cdf(center + half, config) - cdf(center - half, config)
    p = np.maximum(p, PROB_FLOOR)
    return float(p) if np.isscalar(index) or idx.ndim == 0 else p


def quantize_delta(values: np.ndarray, config: DeltaPriorConfig) -> np.ndarray:
    """Round real-valued deltas to grid indices (ties to even), clamped to the alphabet."""
    idx = np.round(np.asarray(values, dtype=np.float64) / config.interval)
    idx = np.clip(idx, -config.max_index, config.max_index)
    return idx.astype(np.int32)


def dequantize(indices: np.ndarray, config: DeltaPriorConfig) -> np.ndarray:
    """Map grid indices back to float32 delta values.

    This is the single reconstruction path shared by encoder simulation and
    decoder, so both sides see bit-identical floats.
    """
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ContractError("dequantize expects integer indices")
    return idx.astype(np.float32) * np.float32(config.interval)


def delta_rate(indices: np.ndarray, config: DeltaPriorConfig) -> float:
    """Exact code length in bits of integer symbols under the floored prior."""
    idx = np.asarray(indices)
    if idx.size == 0:
        return 0.0
    return float(np.sum(-np.log2(symbol_prob(idx.reshape(-1), config))))


def table_probs(config: DeltaPriorConfig) -> np.ndarray:
    """Floored bin probabilities over the full alphabet, for coder tables."""
    return np.asarray(symbol_prob(config.alphabet, config), dtype=np.float64)


def ste_quantize(values: torch.Tensor, config: DeltaPriorConfig) -> torch.Tensor:
    """Straight-through quantization: forward uses grid values, gradient is identity."""
    hard = torch.clamp(torch.round(values / config.interval), -config.max_index, config.max_index)
    hard = hard * config.interval
    return values + (hard - values).detach()


def noisy_rate_bits(values: torch.Tensor, config: DeltaPriorConfig,
                    generator: torch.Generator | None = None) -> torch.Tensor:
    """Differentiable rate proxy: bits of values perturbed by U(-interval/2, interval/2)."""
    noise = (torch.rand(values.shape, generator=generator, dtype=values.dtype) - 0.5) * config.interval
    noisy = values + noise
    half = config.interval / 2.0
    upper = 0.5 + 0.5 * torch.tanh((noisy + half - config.loc) / (2.0 * config.scale))
    lower = 0.5 + 0.5 * torch.tanh((noisy - half - config.loc) / (2.0 * config.scale))
    p = torch.clamp(upper - lower, min=PROB_FLOOR)
    return torch.sum(-torch.log2(p))
