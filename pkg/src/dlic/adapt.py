"""Per-image adaptation: latent refinement, then gated decoder updates.

Phase 1 refines the latent tensor against the frozen model with
straight-through rounding. Phase 2 freezes the quantized latents and
trains one update per synthesis layer plus one gate network per layer.
For the first ``warmup_steps`` of phase 2 every gate is forced open and
gate parameters stay frozen; afterwards gates are re-evaluated each step
and the straight-through estimator lets their soft probabilities learn
from the binary decision actually applied.

The update rate term inside the loop uses the additive-noise proxy of the
transmission prior; the distortion path sees straight-through quantized
update values. After the loop the updates of open layers are quantized
for real, and the reported model rate is the exact code length of those
transmitted symbols. The final reconstruction is produced by the same
function the decoder uses, so reported quality is what a receiver sees.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F

from . import adapters, instrumentation
from .adapters import DecoderUpdate, QuantizedUpdate
from .codec import (CodecModel, ImageTensor, LatentCode, analyze, dequantize_latent,
                    latent_rate, latent_rate_torch, pad_to_multiple, quantize_latent,
                    ste_round, synthesize, to_tensor)
from .delta_prior import DeltaPriorConfig, delta_rate, noisy_rate_bits, ste_quantize
from .errors import AdaptationError, ContractError
from .gating import GateNetwork, GateVector, gate_forward, warmup_override
from .metrics import psnr


@dataclass(frozen=True)
class AdaptationConfig:
    """Knobs of the two-phase per-image adaptation.

    Args:
        latent_steps: refinement steps on the latent tensor.
        decoder_steps: update/gate training steps.
        warmup_steps: leading decoder steps with all gates forced open,
            <= decoder_steps.
        rank: rank of low-rank (and serial-adapter) updates.
        variant: which update family to transmit.
        fixed_gates: force this 0/1 pattern for all steps instead of
            learning gates (None learns them).
        lmbda: rate-distortion multiplier; None uses the model's own.
    """

    latent_steps: int = 200
    decoder_steps: int = 200
    warmup_steps: int = 100
    rank: int = 2
    variant: str = "low_rank"
    lr_latent: float = 1e-3
    lr_delta: float = 1e-3
    lr_gate: float = 1e-5
    lmbda: float | None = None
    seed: int = 0
    fixed_gates: tuple[int, ...] | None = None
    prior: DeltaPriorConfig = field(default_factory=DeltaPriorConfig)

    def __post_init__(self) -> None:
        if self.latent_steps < 0 or self.decoder_steps < 0:
            raise ContractError("step counts must be >= 0")
        if self.warmup_steps < 0 or self.warmup_steps > self.decoder_steps:
            raise ContractError("need 0 <= warmup_steps <= decoder_steps")
        if self.rank < 1:
            raise ContractError("rank must be >= 1")
        if self.variant not in adapters.VARIANT_KINDS:
            raise ContractError(f"unknown variant {self.variant!r}")
        if min(self.lr_latent, self.lr_delta, self.lr_gate) <= 0:
            raise ContractError("learning rates must be > 0")
        if self.lmbda is not None and self.lmbda <= 0:
            raise ContractError("lmbda must be > 0")
        if self.fixed_gates is not None and any(b not in (0, 1) for b in self.fixed_gates):
            raise ContractError("fixed_gates entries must be 0 or 1")


@dataclass
class TraceRow:
    step: int
    loss: float
    rate_latent_bits: float
    rate_update_bits: float
    mse: float
    gates: tuple[int, ...]


@dataclass
class AdaptationResult:
    refined_latent: LatentCode
    updates: list[QuantizedUpdate]
    gate_bits: GateVector
    loss_trace: list[TraceRow]
    rate_latent_bits: float
    rate_update_bits: float
    reconstruction: ImageTensor
    mse: float
    psnr_db: float

    @property
    def total_bits(self) -> float:
        return self.rate_latent_bits + self.rate_update_bits


def refine_latent(image: ImageTensor, model: CodecModel,
                  config: AdaptationConfig) -> LatentCode:
    """Phase 1: gradient descent on the latent tensor, weights frozen."""
    lam = model.lmbda if config.lmbda is None else config.lmbda
    x = to_tensor(image)
    latent = analyze(image, model)
    if config.latent_steps == 0:
        return quantize_latent(latent)
    y = torch.from_numpy(latent.values).unsqueeze(0).clone().requires_grad_(True)
    opt = torch.optim.Adam([y], lr=config.lr_latent)
    npix = image.height * image.width
    for _ in range(config.latent_steps):
        y_hat = ste_round(y)
        bits = latent_rate_torch(y_hat, model)
        x_hat = model.synthesis_forward(y_hat)
        loss = bits / npix + lam * 255.0 ** 2 * F.mse_loss(x_hat, x)
        opt.zero_grad()
        loss.backward()
        opt.step()
        instrumentation.bump("gradient_steps")
    refined = LatentCode(values=y.detach().squeeze(0).numpy().astype(np.float32))
    return quantize_latent(refined)


def decode_with_updates(model: CodecModel, latent: LatentCode,
                        updates: list[QuantizedUpdate],
                        prior: DeltaPriorConfig) -> ImageTensor:
    """The receiver's reconstruction path; encode-side reporting uses it too."""
    shapes = model.adaptable_shapes()
    fns = {}
    for q in updates:
        if not 1 <= q.layer_index <= len(shapes):
            raise ContractError(f"layer index {q.layer_index} out of range")
        base_w = model.synthesis[q.layer_index - 1].weight if q.kind == "svd" else None
        upd = adapters.realize(q, shapes[q.layer_index - 1], prior, base_weight=base_w)
        fns[q.layer_index] = adapters.layer_function(upd, 1.0)
    return synthesize(latent, model, fns or None)


def adapt_decoder(image: ImageTensor, model: CodecModel, latent: LatentCode,
                  config: AdaptationConfig) -> AdaptationResult:
    """Phase 2 on frozen quantized latents; returns the full transmission recipe."""
    if latent.quantized is None:
        raise ContractError("adapt_decoder needs quantized latents; run refine_latent first")
    lam = model.lmbda if config.lmbda is None else config.lmbda
    shapes = model.adaptable_shapes()
    K = len(shapes)
    if config.fixed_gates is not None and len(config.fixed_gates) != K:
        raise ContractError(f"fixed_gates must have {K} entries")

    x = to_tensor(image)
    y_hat = torch.from_numpy(dequantize_latent(latent.quantized)).unsqueeze(0)
    npix = image.height * image.width
    rate_latent = latent_rate(latent, model)
    prior = config.prior

    updates: list[DecoderUpdate] = []
    for k in range(1, K + 1):
        base_w = model.synthesis[k - 1].weight if config.variant == "svd" else None
        updates.append(adapters.make_update(
            config.variant, shapes[k - 1], rank=config.rank,
            seed=config.seed * 131 + k, layer_index=k, base_weight=base_w))
    dynamic = config.fixed_gates is None
    gate_nets = []
    if dynamic:
        in_chans = [shapes[k][1] for k in range(K)]
        gate_nets = [GateNetwork(c, seed=config.seed * 131 + 64 + k)
                     for k, c in enumerate(in_chans)]

    opt_delta = torch.optim.Adam([p.requires_grad_(True) for u in updates for p in u.params()],
                                 lr=config.lr_delta)
    opt_gate = None
    if dynamic and config.decoder_steps > config.warmup_steps:
        opt_gate = torch.optim.Adam([p for net in gate_nets for p in net.parameters()],
                                    lr=config.lr_gate)
    noise_gen = torch.Generator().manual_seed(config.seed * 131 + 911)

    trace: list[TraceRow] = []
    last_bits = tuple([1] * K) if config.fixed_gates is None else tuple(config.fixed_gates)
    last_soft: list[float] | None = None

    for step in range(1, config.decoder_steps + 1):
        forced = (not dynamic) or warmup_override(step, config.warmup_steps)
        state: dict[int, torch.Tensor | float] = {}
        softs: dict[int, torch.Tensor] = {}

        def make_fn(k: int):
            upd = updates[k - 1]
            def fn(h, conv):
                if not dynamic:
                    g = float(config.fixed_gates[k - 1])
                elif forced:
                    g = 1.0
                else:
                    g, soft = gate_forward(h, gate_nets[k - 1])
                    softs[k] = soft
                state[k] = g
                tensors = [ste_quantize(t, prior) for t in upd.params()]
                return upd.apply(h, conv, g, tensors)
            return fn

        fns = {}
        for k in range(1, K + 1):
            if not dynamic and config.fixed_gates[k - 1] == 0:
                continue  # layer runs unmodified; nothing to train or pay for
            fns[k] = make_fn(k)

        x_hat = model.synthesis_forward(y_hat, fns or None)
        mse = F.mse_loss(x_hat, x)
        update_bits = y_hat.new_zeros(())
        for k in sorted(fns):
            bits_k = sum(noisy_rate_bits(t, prior, noise_gen) for t in updates[k - 1].params())
            update_bits = update_bits + state[k] * bits_k
        loss = (rate_latent + update_bits) / npix + lam * 255.0 ** 2 * mse

        if not torch.isfinite(loss):
            raise AdaptationError(f"adaptation loss non-finite at step {step}")
        opt_delta.zero_grad()
        if opt_gate is not None:
            opt_gate.zero_grad()
        loss.backward()
        opt_delta.step()
        if opt_gate is not None and not forced:
            opt_gate.step()
        instrumentation.bump("gradient_steps")

        if dynamic:
            if forced:
                bits_now = tuple([1] * K)
                last_soft = None
            else:
                bits_now = tuple(int(float(state[k].detach()) >= 0.5) for k in range(1, K + 1))
                last_soft = [float(softs[k].detach()) for k in range(1, K + 1)]
        else:
            bits_now = tuple(config.fixed_gates)
        last_bits = bits_now
        trace.append(TraceRow(step=step, loss=float(loss.detach()),
                              rate_latent_bits=float(rate_latent),
                              rate_update_bits=float(update_bits.detach()), mse=float(mse.detach()),
                              gates=bits_now))

    if config.decoder_steps == 0:
        last_bits = tuple([0] * K)
        last_soft = None
    gate_vec = GateVector(bits=np.asarray(last_bits, dtype=np.uint8),
                          soft=None if last_soft is None else np.asarray(last_soft))

    transmitted: list[QuantizedUpdate] = []
    rate_update = 0.0
    for k in gate_vec.open_layers():
        q = adapters.quantize_update(updates[k - 1], prior)
        transmitted.append(q)
        rate_update += sum(delta_rate(ix, prior) for ix in q.indices)

    recon = decode_with_updates(model, latent, transmitted, prior)
    mse_final = float(np.mean((recon.pixels.astype(np.float64)
                               - image.pixels.astype(np.float64)) ** 2))
    return AdaptationResult(
        refined_latent=latent,
        updates=transmitted,
        gate_bits=gate_vec,
        loss_trace=trace,
        rate_latent_bits=float(rate_latent),
        rate_update_bits=float(rate_update),
        reconstruction=recon,
        mse=mse_final,
        psnr_db=psnr(image, recon),
    )


def adapt_image(image: ImageTensor, model: CodecModel,
                config: AdaptationConfig) -> AdaptationResult:
    """Full per-image pipeline on an arbitrarily sized image.

    Pads to the model's downsample factor, refines latents, adapts the
    decoder, then reports quality on the original (cropped) extent.
    """
    padded = pad_to_multiple(image, model.downsample)
    refined = refine_latent(padded, model, config)
    result = adapt_decoder(padded, model, refined, config)
    if padded.pixels.shape != image.pixels.shape:
        cropped = ImageTensor(np.ascontiguousarray(
            result.reconstruction.pixels[:image.height, :image.width]))
        result.reconstruction = cropped
        result.mse = float(np.mean((cropped.pixels.astype(np.float64)
                                    - image.pixels.astype(np.float64)) ** 2))
        result.psnr_db = psnr(image, cropped)
    return result


def latent_only_config(config: AdaptationConfig) -> AdaptationConfig:
    """The same run with phase 2 disabled (refinement-only baseline)."""
    return replace(config, decoder_steps=0, warmup_steps=0)


def scaled_step_config(config: AdaptationConfig, total_steps: int) -> AdaptationConfig:
    """Split a total step budget evenly between the two phases."""
    if total_steps < 0:
        raise ContractError("total_steps must be >= 0")
    half = total_steps // 2
    return replace(config, latent_steps=total_steps - half, decoder_steps=half,
                   warmup_steps=min(config.warmup_steps, half))
