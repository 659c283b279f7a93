"""Self-contained bitstream container (`.dlic`).

Layout (little-endian), followed by two range-coded streams:

    magic        4B   b"DLIC"
    version      1B   format version, currently 1
    variant      1B   update kind id (index into adapters.VARIANT_KINDS)
    height       2B   original image height
    width        2B   original image width
    model_id     8B   digest binding the stream to one exact checkpoint
    lmbda        4B   f32, rate-distortion point (informational)
    interval     4B   f32 \
    loc          4B   f32  > transmission prior for update payloads
    scale        4B   f32 /
    max_index    2B   u16, payload symbols clamped to [-max_index, max_index]
    num_layers   1B   K, number of adaptable synthesis layers
    gate_bits    ceil(K/8)B, layer 1 at the MSB of the first byte; pad bits 0
    ranks        1B per open layer, ascending layer order (0 if kind has none)
    latent_len   4B   u32, bytes of the latent stream
    update_len   4B   u32, bytes of the update stream (0 when no layer opens)

The latent stream codes quantized latents channel by channel (row-major
within a channel) under per-channel tables derived from the checkpoint's
priors. The update stream codes each open layer's payload tensors in
serialization order under the header's transmission prior. Everything a
receiver needs beyond the shared checkpoint is in the header, and both
sides derive coder tables from the same single-precision values, so
encoder and decoder walk identical coder state.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import adapters
from .adapt import AdaptationConfig, AdaptationResult, adapt_image, decode_with_updates
from .adapters import QuantizedUpdate
from .codec import (LATENT_MAX, LATENT_MIN, CodecModel, ImageTensor, LatentCode,
                    latent_table_probs, model_identity)
from .delta_prior import DeltaPriorConfig, table_probs
from .errors import ContractError, DecodeError, IncompatibleBitstreamError
from .gating import GateVector
from .rangecoder import RangeDecoder, RangeEncoder, FrequencyTable

MAGIC = b"DLIC"
VERSION = 1
_FIXED = struct.Struct("<4sBBHH8sffffHB")


@dataclass(frozen=True)
class Header:
    variant: str
    height: int
    width: int
    model_id: bytes
    lmbda: float
    prior: DeltaPriorConfig
    num_layers: int
    gate_bits: tuple[int, ...]
    ranks: tuple[int, ...]
    latent_len: int
    update_len: int


def _pack_gate_bits(bits: np.ndarray) -> bytes:
    out = bytearray((len(bits) + 7) // 8)
    for i, b in enumerate(bits):
        if b:
            out[i // 8] |= 0x80 >> (i % 8)
    return bytes(out)


def _unpack_gate_bits(data: bytes, k: int) -> tuple[int, ...]:
    bits = []
    for i in range(len(data) * 8):
        bit = (data[i // 8] >> (7 - i % 8)) & 1
        if i < k:
            bits.append(bit)
        elif bit:
            raise DecodeError("nonzero padding in gate bits")
    return tuple(bits)


def _delta_table(prior: DeltaPriorConfig) -> FrequencyTable:
    return FrequencyTable(table_probs(prior), offset=-prior.max_index)


def _latent_tables(model: CodecModel) -> list[FrequencyTable]:
    return [FrequencyTable(latent_table_probs(model, c), offset=LATENT_MIN)
            for c in range(model.latent_channels)]


def pack(model: CodecModel, latent: LatentCode, updates: list[QuantizedUpdate],
         gates: GateVector, original_size: tuple[int, int], variant: str,
         prior: DeltaPriorConfig, lmbda: float | None = None) -> bytes:
    """Serialize one image's transmission into a `.dlic` blob."""
    if latent.quantized is None:
        raise ContractError("pack requires quantized latents")
    height, width = original_size
    if not (1 <= height <= 0xFFFF and 1 <= width <= 0xFFFF):
        raise ContractError("image size must fit in 16 bits per side")
    if variant not in adapters.VARIANT_KINDS:
        raise ContractError(f"unknown variant {variant!r}")
    k = model.num_adaptable_layers
    if gates.bits.size != k:
        raise ContractError(f"gate vector has {gates.bits.size} entries, model has {k}")
    open_layers = gates.open_layers()
    if sorted(u.layer_index for u in updates) != open_layers:
        raise ContractError("updates must match open gate layers exactly")

    q = latent.quantized
    if q.min() < LATENT_MIN or q.max() > LATENT_MAX:
        raise ContractError("quantized latents outside the coded alphabet")
    enc = RangeEncoder()
    for c, table in enumerate(_latent_tables(model)):
        enc.encode(q[c].reshape(-1), table)
    latent_stream = enc.finish()

    by_layer = {u.layer_index: u for u in updates}
    update_stream = b""
    if open_layers:
        table = _delta_table(prior)
        enc = RangeEncoder()
        for idx in open_layers:
            for arr in by_layer[idx].indices:
                enc.encode(np.asarray(arr).reshape(-1), table)
        update_stream = enc.finish()

    head = _FIXED.pack(
        MAGIC, VERSION, adapters.VARIANT_KINDS.index(variant), height, width,
        model_identity(model), float(model.lmbda if lmbda is None else lmbda),
        prior.interval, prior.loc, prior.scale, prior.max_index, k)
    parts = [head, _pack_gate_bits(gates.bits)]
    parts.append(bytes(by_layer[idx].rank & 0xFF for idx in open_layers))
    parts.append(struct.pack("<II", len(latent_stream), len(update_stream)))
    parts.append(latent_stream)
    parts.append(update_stream)
    return b"".join(parts)


def unpack(blob: bytes, model: CodecModel) -> tuple[LatentCode, list[QuantizedUpdate], GateVector, Header]:
    """Parse and entropy-decode a blob against its shared checkpoint."""
    if len(blob) < _FIXED.size:
        raise DecodeError("blob shorter than fixed header")
    (magic, version, variant_id, height, width, model_id, lmbda,
     interval, loc, scale, max_index, k) = _FIXED.unpack_from(blob, 0)
    if magic != MAGIC:
        raise DecodeError("bad magic; not a dlic stream")
    if version != VERSION:
        raise DecodeError(f"unsupported container version {version}")
    if model_id != model_identity(model):
        raise IncompatibleBitstreamError(
            "bitstream was produced against a different checkpoint")
    if variant_id >= len(adapters.VARIANT_KINDS):
        raise DecodeError(f"unknown variant id {variant_id}")
    variant = adapters.VARIANT_KINDS[variant_id]
    if k != model.num_adaptable_layers:
        raise DecodeError(f"stream has {k} adaptable layers, model has "
                          f"{model.num_adaptable_layers}")
    pos = _FIXED.size
    gate_len = (k + 7) // 8
    if len(blob) < pos + gate_len:
        raise DecodeError("blob truncated in gate bits")
    bits = _unpack_gate_bits(blob[pos:pos + gate_len], k)
    pos += gate_len
    open_layers = [i + 1 for i, b in enumerate(bits) if b]
    if len(blob) < pos + len(open_layers) + 8:
        raise DecodeError("blob truncated in layer ranks")
    ranks = tuple(blob[pos:pos + len(open_layers)])
    pos += len(open_layers)
    latent_len, update_len = struct.unpack_from("<II", blob, pos)
    pos += 8
    if len(blob) != pos + latent_len + update_len:
        raise DecodeError("blob length disagrees with header stream lengths")
    prior = DeltaPriorConfig(interval=float(interval), loc=float(loc),
                             scale=float(scale), max_index=int(max_index))

    ds = model.downsample
    lh = (height + (-height) % ds) // ds
    lw = (width + (-width) % ds) // ds
    dec = RangeDecoder(blob[pos:pos + latent_len])
    channels = []
    for table in _latent_tables(model):
        channels.append(dec.decode(lh * lw, table).reshape(lh, lw))
    q = np.stack(channels).astype(np.int32)
    latent = LatentCode(values=q.astype(np.float32), quantized=q)
    pos += latent_len

    updates: list[QuantizedUpdate] = []
    if open_layers:
        if update_len == 0:
            raise DecodeError("open gates but empty update stream")
        shapes = model.adaptable_shapes()
        table = _delta_table(prior)
        dec = RangeDecoder(blob[pos:pos + update_len])
        for idx, rank in zip(open_layers, ranks):
            if variant in ("low_rank", "adapter") and rank < 1:
                raise DecodeError(f"layer {idx} has invalid rank {rank}")
            arrays = []
            for shp in adapters.payload_shapes(variant, shapes[idx - 1], max(rank, 1)):
                n = int(np.prod(shp))
                arrays.append(dec.decode(n, table).reshape(shp))
            updates.append(QuantizedUpdate(layer_index=idx, kind=variant,
                                           rank=rank, indices=arrays))
    elif update_len:
        raise DecodeError("update stream present but no gate is open")

    header = Header(variant=variant, height=height, width=width, model_id=model_id,
                    lmbda=float(lmbda), prior=prior, num_layers=k, gate_bits=bits,
                    ranks=ranks, latent_len=latent_len, update_len=update_len)
    gates = GateVector(bits=np.asarray(bits, dtype=np.uint8))
    return latent, updates, gates, header


def encode_image(image: ImageTensor, model: CodecModel,
                 config: AdaptationConfig) -> tuple[bytes, AdaptationResult]:
    """Adapt, then serialize; returns the blob plus the adaptation report."""
    result = adapt_image(image, model, config)
    blob = pack(model, result.refined_latent, result.updates, result.gate_bits,
                (image.height, image.width), config.variant, config.prior)
    return blob, result


def decode_image(blob: bytes, model: CodecModel) -> ImageTensor:
    """Reconstruct an image from a blob and its shared checkpoint."""
    latent, updates, gates, header = unpack(blob, model)
    recon = decode_with_updates(model, latent, updates, header.prior)
    pixels = recon.pixels[:header.height, :header.width]
    return ImageTensor(np.ascontiguousarray(pixels))
