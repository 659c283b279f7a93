"""Convolutional transform codec with a factorized logistic latent prior.

The analysis transform maps an RGB image to a latent tensor downsampled by
a fixed factor (8 by default); the synthesis transform mirrors it back
using sub-pixel (conv + pixel shuffle) upsampling. Latents are scalar
quantized and coded under per-channel logistic priors whose location and
scale are trained jointly with the transforms.

Every synthesis convolution is an adaptation site: per-image decoder
updates and gate decisions attach to the stable layer indices 1..K
returned by ``adaptable_shapes``. ``synthesize`` accepts per-layer
modulation callables so update variants can rewrite a layer's computation
without the codec knowing their internals.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import instrumentation
from .errors import ContractError, ShapeError, TrainingError

PROB_FLOOR = 2.0 ** -20
LATENT_MIN = -127
LATENT_MAX = 128


@dataclass(frozen=True)
class ImageTensor:
    """An RGB image as float32 values in [0, 1], shape (H, W, 3)."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        p = self.pixels
        if not isinstance(p, np.ndarray) or p.ndim != 3 or p.shape[2] != 3:
            raise ShapeError(f"expected (H, W, 3) array, got {getattr(p, 'shape', None)}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ShapeError("image must have positive height and width")
        if p.dtype != np.float32:
            raise ShapeError(f"expected float32 pixels, got {p.dtype}")
        if float(p.min()) < 0.0 or float(p.max()) > 1.0:
            raise ShapeError("pixel values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.rint(self.pixels.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)

    @staticmethod
    def from_uint8(arr: np.ndarray) -> "ImageTensor":
        if arr.dtype != np.uint8:
            raise ShapeError(f"expected uint8 array, got {arr.dtype}")
        return ImageTensor((arr.astype(np.float32) / 255.0).astype(np.float32))


@dataclass
class LatentCode:
    """Latent tensor (C, h, w); ``quantized`` holds rounded integer symbols."""

    values: np.ndarray
    quantized: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.values.ndim != 3:
            raise ShapeError(f"latent must be (C, h, w), got {self.values.shape}")
        if self.quantized is not None and self.quantized.shape != self.values.shape:
            raise ShapeError("quantized symbols must match latent shape")


def pad_to_multiple(image: ImageTensor, factor: int) -> ImageTensor:
    """Replicate-pad an image on the bottom/right to a multiple of ``factor``."""
    h, w = image.height, image.width
    ph = (-h) % factor
    pw = (-w) % factor
    if ph == 0 and pw == 0:
        return image
    padded = np.pad(image.pixels, ((0, ph), (0, pw), (0, 0)), mode="edge")
    return ImageTensor(padded)


def to_tensor(image: ImageTensor) -> torch.Tensor:
    """Image -> (1, 3, H, W) float32 tensor."""
    return torch.from_numpy(image.pixels).permute(2, 0, 1).unsqueeze(0).contiguous()


def to_image(x: torch.Tensor) -> ImageTensor:
    """(1, 3, H, W) tensor -> clipped ImageTensor."""
    arr = x.detach().clamp(0.0, 1.0).squeeze(0).permute(1, 2, 0).contiguous().numpy()
    return ImageTensor(np.ascontiguousarray(arr, dtype=np.float32))


class CodecModel(nn.Module):
    """Transform codec; all synthesis convolutions are adaptation sites.

    Args:
        latent_channels: channels of the coded latent tensor.
        hidden_channels: width of the intermediate transform layers.
        downsample: total spatial reduction, 8 or 16.
        lmbda: rate-distortion multiplier this model was trained for.
        seed: RNG seed for parameter initialization.
    """

    def __init__(self, latent_channels: int = 32, hidden_channels: int = 48,
                 downsample: int = 8, lmbda: float = 0.01, seed: int = 0):
        super().__init__()
        if downsample not in (8, 16):
            raise ContractError(f"downsample must be 8 or 16, got {downsample}")
        self.latent_channels = latent_channels
        self.hidden_channels = hidden_channels
        self.downsample = downsample
        self.lmbda = float(lmbda)
        self.seed = int(seed)

        torch.manual_seed(seed)
        c, h = latent_channels, hidden_channels
        strides = [2, 2, 2, 1] if downsample == 8 else [2, 2, 2, 2]
        ana = []
        chans = [3, h, h, h, c]
        for i, s in enumerate(strides):
            ana.append(nn.Conv2d(chans[i], chans[i + 1], 3, stride=s, padding=1))
            if i < len(strides) - 1:
                ana.append(nn.LeakyReLU(0.2))
        self.analysis = nn.Sequential(*ana)

        # Synthesis mirror: stride-1 convs, upsampling via pixel shuffle.
        self._upsample = [s == 2 for s in reversed(strides)]
        convs = []
        in_ch = c
        for k, up in enumerate(self._upsample):
            base_out = 3 if k == len(self._upsample) - 1 else h
            out_ch = base_out * (4 if up else 1)
            convs.append(nn.Conv2d(in_ch, out_ch, 3, stride=1, padding=1))
            in_ch = base_out
        self.synthesis = nn.ModuleList(convs)

        self.prior_loc = nn.Parameter(torch.zeros(c))
        self.prior_log_scale = nn.Parameter(torch.zeros(c))

    @property
    def num_adaptable_layers(self) -> int:
        return len(self.synthesis)

    def adaptable_shapes(self) -> list[tuple[int, int, int, int]]:
        """Kernel shapes (c_out, c_in, k_h, k_w) of layers 1..K in order."""
        return [tuple(conv.weight.shape) for conv in self.synthesis]

    def analysis_forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.analysis(x)

    def synthesis_forward(self, y: torch.Tensor, layer_fns: dict | None = None) -> torch.Tensor:
        """Run synthesis; ``layer_fns[k]`` replaces layer k's conv with
        a callable (features, base_conv) -> features."""
        h = y
        last = len(self.synthesis)
        for k, conv in enumerate(self.synthesis, start=1):
            fn = layer_fns.get(k) if layer_fns else None
            h = fn(h, conv) if fn is not None else conv(h)
            if self._upsample[k - 1]:
                h = F.pixel_shuffle(h, 2)
            if k < last:
                h = F.leaky_relu(h, 0.2)
        return h

    def prior_scale(self) -> torch.Tensor:
        return torch.exp(self.prior_log_scale)

    def config(self) -> dict:
        return {
            "latent_channels": self.latent_channels,
            "hidden_channels": self.hidden_channels,
            "downsample": self.downsample,
            "lmbda": self.lmbda,
            "seed": self.seed,
        }


def analyze(image: ImageTensor, model: CodecModel) -> LatentCode:
    """Encode an image (already padded to the downsample factor) to latents."""
    if image.height % model.downsample or image.width % model.downsample:
        raise ShapeError(
            f"image {image.height}x{image.width} not a multiple of {model.downsample}; pad first"
        )
    instrumentation.bump("analysis_passes")
    with torch.no_grad():
        y = model.analysis_forward(to_tensor(image))
    return LatentCode(values=y.squeeze(0).numpy().astype(np.float32))


def quantize_latent(latent: LatentCode) -> LatentCode:
    """Round latents to integers (ties to even), clamped to the coded alphabet."""
    q = np.clip(np.round(latent.values.astype(np.float64)), LATENT_MIN, LATENT_MAX)
    return LatentCode(values=latent.values, quantized=q.astype(np.int32))


def dequantize_latent(quantized: np.ndarray) -> np.ndarray:
    return quantized.astype(np.float32)


def synthesize(latent: LatentCode, model: CodecModel,
               layer_fns: dict | None = None) -> ImageTensor:
    """Decode quantized latents to an image; requires ``latent.quantized``."""
    if latent.quantized is None:
        raise ContractError("synthesize requires quantized latents")
    y = torch.from_numpy(dequantize_latent(latent.quantized)).unsqueeze(0)
    with torch.no_grad():
        x_hat = model.synthesis_forward(y, layer_fns)
    return to_image(x_hat)


def _logistic_bin_prob_np(k: np.ndarray, loc: np.ndarray, scale: np.ndarray) -> np.ndarray:
    up = 0.5 + 0.5 * np.tanh((k + 0.5 - loc) / (2.0 * scale))
    lo = 0.5 + 0.5 * np.tanh((k - 0.5 - loc) / (2.0 * scale))
    return np.maximum(up - lo, PROB_FLOOR)


def latent_rate(latent: LatentCode, model: CodecModel) -> float:
    """Exact bits of the quantized latents under the model's channel priors."""
    if latent.quantized is None:
        raise ContractError("latent_rate requires quantized latents")
    loc = model.prior_loc.detach().numpy().astype(np.float64)[:, None, None]
    scale = np.exp(model.prior_log_scale.detach().numpy().astype(np.float64))[:, None, None]
    p = _logistic_bin_prob_np(latent.quantized.astype(np.float64), loc, scale)
    return float(np.sum(-np.log2(p)))


def latent_rate_torch(y: torch.Tensor, model: CodecModel) -> torch.Tensor:
    """Differentiable bits of (possibly noisy or rounded) latents, shape (1, C, h, w)."""
    loc = model.prior_loc[None, :, None, None]
    scale = torch.exp(model.prior_log_scale)[None, :, None, None]
    up = 0.5 + 0.5 * torch.tanh((y + 0.5 - loc) / (2.0 * scale))
    lo = 0.5 + 0.5 * torch.tanh((y - 0.5 - loc) / (2.0 * scale))
    p = torch.clamp(up - lo, min=PROB_FLOOR)
    return torch.sum(-torch.log2(p))


def latent_table_probs(model: CodecModel, channel: int) -> np.ndarray:
    """Bin probabilities over the latent alphabet for one channel's coder table."""
    k = np.arange(LATENT_MIN, LATENT_MAX + 1, dtype=np.float64)
    loc = float(model.prior_loc.detach()[channel])
    scale = float(np.exp(float(model.prior_log_scale.detach()[channel])))
    return _logistic_bin_prob_np(k, np.float64(loc), np.float64(scale))


def ste_round(y: torch.Tensor) -> torch.Tensor:
    """Round with identity gradient, clamped to the coded alphabet."""
    hard = torch.clamp(torch.round(y), LATENT_MIN, LATENT_MAX)
    return y + (hard - y).detach()


def rd_loss(model: CodecModel, images: list[ImageTensor], lmbda: float | None = None) -> float:
    """Mean rate-distortion loss (bpp + lmbda * 255^2 * MSE) with hard rounding."""
    lam = model.lmbda if lmbda is None else lmbda
    total = 0.0
    with torch.no_grad():
        for img in images:
            padded = pad_to_multiple(img, model.downsample)
            x = to_tensor(padded)
            y = model.analysis_forward(x)
            y_hat = torch.clamp(torch.round(y), LATENT_MIN, LATENT_MAX)
            bits = latent_rate_torch(y_hat, model)
            x_hat = model.synthesis_forward(y_hat)
            mse = F.mse_loss(x_hat[:, :, :img.height, :img.width],
                             x[:, :, :img.height, :img.width])
            npix = img.height * img.width
            total += float(bits) / npix + lam * 255.0 ** 2 * float(mse)
    return total / len(images)


def train_base(images: list[ImageTensor], lmbda: float, steps: int = 4000,
               crop: int = 64, batch_size: int = 8, lr: float = 5e-4,
               seed: int = 0, latent_channels: int = 32, hidden_channels: int = 48,
               downsample: int = 8) -> CodecModel:
    """Train a base codec on random crops of ``images``.

    Rate uses the additive-noise quantization proxy; distortion is MSE
    scaled by 255^2 so the lmbda grid trades off against bits per pixel.
    Raises TrainingError if the loss becomes non-finite.
    """
    if not images:
        raise ContractError("training set is empty")
    if not (lmbda > 0 and np.isfinite(lmbda)):
        raise ContractError(f"lmbda must be positive and finite, got {lmbda}")
    if steps < 1:
        raise ContractError("steps must be >= 1")
    for img in images:
        if img.height < crop or img.width < crop:
            raise ContractError(f"image {img.height}x{img.width} smaller than crop {crop}")
    if crop % downsample:
        raise ContractError("crop size must be a multiple of the downsample factor")

    model = CodecModel(latent_channels=latent_channels, hidden_channels=hidden_channels,
                       downsample=downsample, lmbda=lmbda, seed=seed)
    model.train()
    gen = torch.Generator().manual_seed(seed + 1)
    data = [to_tensor(img).squeeze(0) for img in images]
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    npix = crop * crop

    for step in range(steps):
        batch = []
        for _ in range(batch_size):
            i = int(torch.randint(len(data), (1,), generator=gen))
            t = data[i]
            dy = int(torch.randint(t.shape[1] - crop + 1, (1,), generator=gen))
            dx = int(torch.randint(t.shape[2] - crop + 1, (1,), generator=gen))
            batch.append(t[:, dy:dy + crop, dx:dx + crop])
        x = torch.stack(batch)
        y = model.analysis_forward(x)
        noise = torch.rand(y.shape, generator=gen) - 0.5
        y_noisy = y + noise
        bits = latent_rate_torch(y_noisy, model)
        x_hat = model.synthesis_forward(y_noisy)
        mse = F.mse_loss(x_hat, x)
        loss = bits / (batch_size * npix) + lmbda * 255.0 ** 2 * mse
        if not torch.isfinite(loss):
            raise TrainingError(
                f"loss became non-finite at step {step}: bits={float(bits):.3g} mse={float(mse):.3g}"
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
        instrumentation.bump("gradient_steps")

    model.eval()
    return model


def checkpoint_bytes(model: CodecModel) -> bytes:
    """Canonical serialization: config line + sorted float32 little-endian params."""
    buf = io.BytesIO()
    cfg = model.config()
    line = ",".join(f"{k}={cfg[k]}" for k in sorted(cfg)) + "\n"
    buf.write(line.encode("ascii"))
    state = model.state_dict()
    for name in sorted(state):
        t = state[name].detach().cpu().numpy().astype("<f4")
        buf.write(name.encode("ascii") + b"\x00")
        buf.write(np.asarray(t.shape, dtype="<i4").tobytes())
        buf.write(t.tobytes())
    return buf.getvalue()


def model_identity(model: CodecModel) -> bytes:
    """8-byte digest binding bitstreams to an exact checkpoint."""
    return hashlib.blake2b(checkpoint_bytes(model), digest_size=8).digest()


def save_checkpoint(model: CodecModel, path: str) -> None:
    torch.save({"config": model.config(), "state": model.state_dict()}, path)


def load_checkpoint(path: str) -> CodecModel:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    model = CodecModel(**payload["config"])
    model.load_state_dict(payload["state"])
    model.eval()
    return model
