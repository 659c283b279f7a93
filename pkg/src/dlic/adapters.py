"""Per-layer decoder update variants.

Each variant perturbs one synthesis convolution (identified by its stable
1-based layer index) and transmits a small parameter payload. All variants
are exact no-ops at initialization so an update that never trains decodes
to the base model. The default transmitted variant factors the kernel's
center tap as a rank-r product B @ A; the remaining variants exist for
controlled comparisons at matched or larger payload sizes.

Payload serialization order is fixed per variant (documented on each
class) so the model stream is decodable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .delta_prior import DeltaPriorConfig, ste_quantize
from .errors import ContractError

VARIANT_KINDS = ("low_rank", "fine_tune", "bias_only", "svd", "adapter")


def _check_shape(shape: tuple[int, int, int, int]) -> None:
    if len(shape) != 4 or any(int(d) < 1 for d in shape):
        raise ContractError(f"expected kernel shape (c_out, c_in, k_h, k_w), got {shape}")


@dataclass
class DecoderUpdate:
    """Base class; subclasses hold the trainable payload tensors."""

    layer_index: int
    shape: tuple[int, int, int, int]

    kind = "base"

    def params(self) -> list[torch.Tensor]:
        raise NotImplementedError

    def apply(self, h: torch.Tensor, conv: torch.nn.Conv2d, gate,
              tensors: list[torch.Tensor]) -> torch.Tensor:
        raise NotImplementedError


@dataclass
class LowRankUpdate(DecoderUpdate):
    """Rank-r center-tap update: payload is A (r, c_in) then B (c_out, r),
    each row-major. B @ A is added to the kernel's center tap."""

    A: torch.Tensor = None
    B: torch.Tensor = None

    kind = "low_rank"

    @property
    def rank(self) -> int:
        return int(self.A.shape[0])

    def params(self) -> list[torch.Tensor]:
        return [self.A, self.B]

    def apply(self, h, conv, gate, tensors):
        a, b = tensors
        dw = b @ a
        kh, kw = conv.weight.shape[2], conv.weight.shape[3]
        delta = torch.zeros(conv.weight.shape, dtype=dw.dtype)
        delta[:, :, kh // 2, kw // 2] = dw
        return F.conv2d(h, conv.weight + gate * delta, conv.bias,
                        stride=conv.stride, padding=conv.padding)


@dataclass
class FineTuneUpdate(DecoderUpdate):
    """Unconstrained update: payload is dW (c_out, c_in, k_h, k_w) then db (c_out)."""

    dW: torch.Tensor = None
    db: torch.Tensor = None

    kind = "fine_tune"

    def params(self):
        return [self.dW, self.db]

    def apply(self, h, conv, gate, tensors):
        dw, db = tensors
        return F.conv2d(h, conv.weight + gate * dw, conv.bias + gate * db,
                        stride=conv.stride, padding=conv.padding)


@dataclass
class BiasUpdate(DecoderUpdate):
    """Bias-only update: payload is db (c_out)."""

    db: torch.Tensor = None

    kind = "bias_only"

    def params(self):
        return [self.db]

    def apply(self, h, conv, gate, tensors):
        (db,) = tensors
        return F.conv2d(h, conv.weight, conv.bias + gate * db,
                        stride=conv.stride, padding=conv.padding)


@dataclass
class SingularValueUpdate(DecoderUpdate):
    """Update to the singular values of the flattened kernel: payload is
    dS (min(c_out, c_in*k_h*k_w),). U and V come from the shared base
    checkpoint, so only dS is transmitted."""

    dS: torch.Tensor = None
    U: torch.Tensor = field(default=None, repr=False)
    Vh: torch.Tensor = field(default=None, repr=False)

    kind = "svd"

    def params(self):
        return [self.dS]

    def apply(self, h, conv, gate, tensors):
        (ds,) = tensors
        dw = (self.U * ds.unsqueeze(0)) @ self.Vh
        dw = dw.reshape(conv.weight.shape).to(conv.weight.dtype)
        return F.conv2d(h, conv.weight + gate * dw, conv.bias,
                        stride=conv.stride, padding=conv.padding)


@dataclass
class SerialAdapter(DecoderUpdate):
    """Residual channel mixer on the layer output: payload is A (r, c_out)
    then B (c_out, r); output = z + gate * B @ A @ z with z the base output."""

    A: torch.Tensor = None
    B: torch.Tensor = None

    kind = "adapter"

    @property
    def rank(self) -> int:
        return int(self.A.shape[0])

    def params(self):
        return [self.A, self.B]

    def apply(self, h, conv, gate, tensors):
        a, b = tensors
        z = F.conv2d(h, conv.weight, conv.bias, stride=conv.stride, padding=conv.padding)
        mix = torch.einsum("cr,rd,bdhw->bchw", b, a, z)
        return z + gate * mix


_CLASS_BY_KIND = {
    "low_rank": LowRankUpdate,
    "fine_tune": FineTuneUpdate,
    "bias_only": BiasUpdate,
    "svd": SingularValueUpdate,
    "adapter": SerialAdapter,
}


def make_low_rank(shape: tuple[int, int, int, int], rank: int, seed: int = 0,
                  layer_index: int = 1, dtype: torch.dtype = torch.float32) -> LowRankUpdate:
    """Fresh rank-r update: A ~ N(0, 0.01^2), B = 0, so B @ A = 0 initially.

    Requires 1 <= rank and 4 * rank <= min(c_in, c_out).
    """
    _check_shape(shape)
    c_out, c_in = int(shape[0]), int(shape[1])
    if rank < 1:
        raise ContractError(f"rank must be >= 1, got {rank}")
    if 4 * rank > min(c_in, c_out):
        raise ContractError(
            f"rank {rank} too large for layer with min(c_in, c_out)={min(c_in, c_out)}"
        )
    gen = torch.Generator().manual_seed(seed)
    a = torch.randn((rank, c_in), generator=gen, dtype=dtype) * 0.01
    b = torch.zeros((c_out, rank), dtype=dtype)
    return LowRankUpdate(layer_index=layer_index, shape=tuple(int(d) for d in shape), A=a, B=b)


def make_update(kind: str, shape: tuple[int, int, int, int], rank: int = 2,
                seed: int = 0, layer_index: int = 1,
                base_weight: torch.Tensor | None = None,
                dtype: torch.dtype = torch.float32) -> DecoderUpdate:
    """Fresh zero-effect update of the requested kind for one layer."""
    _check_shape(shape)
    shape = tuple(int(d) for d in shape)
    c_out, c_in, kh, kw = shape
    if kind == "low_rank":
        return make_low_rank(shape, rank, seed=seed, layer_index=layer_index, dtype=dtype)
    if kind == "fine_tune":
        return FineTuneUpdate(layer_index=layer_index, shape=shape,
                              dW=torch.zeros(shape, dtype=dtype),
                              db=torch.zeros(c_out, dtype=dtype))
    if kind == "bias_only":
        return BiasUpdate(layer_index=layer_index, shape=shape,
                          db=torch.zeros(c_out, dtype=dtype))
    if kind == "svd":
        if base_weight is None:
            raise ContractError("svd updates need the layer's base weight")
        flat = base_weight.detach().to(torch.float64).reshape(c_out, c_in * kh * kw)
        u, s, vh = torch.linalg.svd(flat, full_matrices=False)
        m = min(c_out, c_in * kh * kw)
        return SingularValueUpdate(layer_index=layer_index, shape=shape,
                                   dS=torch.zeros(m, dtype=dtype),
                                   U=u.to(dtype), Vh=vh.to(dtype))
    if kind == "adapter":
        if rank < 1:
            raise ContractError(f"rank must be >= 1, got {rank}")
        gen = torch.Generator().manual_seed(seed)
        a = torch.randn((rank, c_out), generator=gen, dtype=dtype) * 0.01
        b = torch.zeros((c_out, rank), dtype=dtype)
        return SerialAdapter(layer_index=layer_index, shape=shape, A=a, B=b)
    raise ContractError(f"unknown update kind {kind!r}; expected one of {VARIANT_KINDS}")


def count_params(update: DecoderUpdate) -> int:
    """Number of transmitted parameters."""
    return int(sum(t.numel() for t in update.params()))


def payload_shapes(kind: str, shape: tuple[int, int, int, int], rank: int = 2) -> list[tuple[int, ...]]:
    """Shapes of the transmitted tensors, in serialization order."""
    _check_shape(shape)
    c_out, c_in, kh, kw = (int(d) for d in shape)
    if kind == "low_rank":
        return [(rank, c_in), (c_out, rank)]
    if kind == "fine_tune":
        return [(c_out, c_in, kh, kw), (c_out,)]
    if kind == "bias_only":
        return [(c_out,)]
    if kind == "svd":
        return [(min(c_out, c_in * kh * kw),)]
    if kind == "adapter":
        return [(rank, c_out), (c_out, rank)]
    raise ContractError(f"unknown update kind {kind!r}")


def from_arrays(kind: str, layer_index: int, shape: tuple[int, int, int, int],
                rank: int, arrays: list[np.ndarray],
                base_weight: torch.Tensor | None = None) -> DecoderUpdate:
    """Rebuild an update from decoded payload arrays (serialization order)."""
    expected = payload_shapes(kind, shape, rank)
    if len(arrays) != len(expected):
        raise ContractError(f"{kind} expects {len(expected)} payload tensors, got {len(arrays)}")
    tensors = []
    for arr, shp in zip(arrays, expected):
        a = np.ascontiguousarray(arr, dtype=np.float32)
        if a.size != int(np.prod(shp)):
            raise ContractError(f"payload size {a.size} does not match shape {shp}")
        tensors.append(torch.from_numpy(a.reshape(shp)))
    upd = make_update(kind, shape, rank=rank, layer_index=layer_index, base_weight=base_weight)
    for slot, t in zip(upd.params(), tensors):
        with torch.no_grad():
            slot.copy_(t)
    return upd


@dataclass
class QuantizedUpdate:
    """An update reduced to transmitted integer symbols.

    ``indices`` holds one int32 array per payload tensor, in serialization
    order and already shaped; ``rank`` is meaningful for the factored kinds.
    """

    layer_index: int
    kind: str
    rank: int
    indices: list[np.ndarray]

    def __post_init__(self) -> None:
        if self.kind not in VARIANT_KINDS:
            raise ContractError(f"unknown update kind {self.kind!r}")
        for ix in self.indices:
            if not np.issubdtype(np.asarray(ix).dtype, np.integer):
                raise ContractError("payload indices must be integers")

    @property
    def num_symbols(self) -> int:
        return int(sum(np.asarray(ix).size for ix in self.indices))


def quantize_update(update: DecoderUpdate, prior: DeltaPriorConfig) -> QuantizedUpdate:
    """Quantize an update's payload tensors to prior grid indices."""
    from .delta_prior import quantize_delta
    rank = getattr(update, "rank", 0)
    indices = [quantize_delta(t.detach().numpy(), prior) for t in update.params()]
    return QuantizedUpdate(layer_index=update.layer_index, kind=update.kind,
                           rank=int(rank), indices=indices)


def realize(q: QuantizedUpdate, shape: tuple[int, int, int, int],
            prior: DeltaPriorConfig, base_weight: torch.Tensor | None = None) -> DecoderUpdate:
    """Rebuild the exact update a receiver applies from integer symbols."""
    from .delta_prior import dequantize
    arrays = [dequantize(ix, prior) for ix in q.indices]
    return from_arrays(q.kind, q.layer_index, shape, q.rank or 1, arrays,
                       base_weight=base_weight)


def layer_function(update: DecoderUpdate, gate,
                   train_prior: DeltaPriorConfig | None = None):
    """Wrap an update as a synthesis layer callable (features, conv) -> features.

    With ``train_prior`` set, payload tensors pass through straight-through
    quantization so optimization sees the values a decoder will see.
    """
    def fn(h, conv):
        tensors = update.params()
        if train_prior is not None:
            tensors = [ste_quantize(t, train_prior) for t in tensors]
        return update.apply(h, conv, gate, tensors)
    return fn


def center_tap_kernel(dw: torch.Tensor, kernel_shape: tuple[int, int, int, int]) -> torch.Tensor:
    """Materialize a (c_out, c_in) matrix as a kernel delta on the center tap."""
    c_out, c_in, kh, kw = kernel_shape
    if dw.shape != (c_out, c_in):
        raise ContractError(f"expected ({c_out}, {c_in}) matrix, got {tuple(dw.shape)}")
    delta = torch.zeros(kernel_shape, dtype=dw.dtype)
    delta[:, :, kh // 2, kw // 2] = dw
    return delta
