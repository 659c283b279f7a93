"""Bitstream container: round trips, header checks, tamper rejection."""

import struct

import numpy as np
import pytest

from dlic import container
from dlic.adapt import AdaptationConfig, adapt_decoder, refine_latent
from dlic.codec import (CodecModel, analyze, pad_to_multiple, quantize_latent)
from dlic.container import (MAGIC, VERSION, decode_image, encode_image, pack,
                            unpack)
from dlic.delta_prior import DeltaPriorConfig
from dlic.errors import (ContractError, DecodeError,
                         IncompatibleBitstreamError)
from dlic.gating import GateVector

CFG = AdaptationConfig(latent_steps=8, decoder_steps=24, warmup_steps=6, seed=0)


def _zero_gates(model):
    return GateVector(bits=np.zeros(model.num_adaptable_layers, dtype=np.uint8))


def _coded(tiny_model, image, config=CFG):
    padded = pad_to_multiple(image, tiny_model.downsample)
    latent = refine_latent(padded, tiny_model, config)
    result = adapt_decoder(padded, tiny_model, latent, config)
    blob = pack(tiny_model, latent, result.updates, result.gate_bits,
                (image.height, image.width), config.variant, config.prior)
    return blob, latent, result


def test_latent_only_round_trip(tiny_model, ood_images):
    img = ood_images[0]
    padded = pad_to_multiple(img, tiny_model.downsample)
    latent = quantize_latent(analyze(padded, tiny_model))
    blob = pack(tiny_model, latent, [], _zero_gates(tiny_model),
                (img.height, img.width), "low_rank", CFG.prior)
    got_latent, got_updates, got_gates, header = unpack(blob, tiny_model)
    assert np.array_equal(got_latent.quantized, latent.quantized)
    assert got_updates == [] and got_gates.open_count == 0
    assert (header.height, header.width) == (img.height, img.width)
    assert header.update_len == 0


def test_full_round_trip_preserves_updates(tiny_model, ood_images):
    blob, latent, result = _coded(tiny_model, ood_images[1])
    got_latent, got_updates, got_gates, header = unpack(blob, tiny_model)
    assert np.array_equal(got_latent.quantized, latent.quantized)
    assert tuple(got_gates.bits) == tuple(result.gate_bits.bits)
    assert len(got_updates) == len(result.updates)
    for sent, got in zip(result.updates, got_updates):
        assert got.layer_index == sent.layer_index
        assert got.kind == sent.kind and got.rank == sent.rank
        for a, b in zip(sent.indices, got.indices):
            assert np.array_equal(np.asarray(a), np.asarray(b))


def test_header_prior_survives_f32_round_trip(tiny_model, ood_images):
    blob, _, _ = _coded(tiny_model, ood_images[2])
    _, _, _, header = unpack(blob, tiny_model)
    assert header.prior == CFG.prior


def test_pack_requires_updates_to_match_gates(tiny_model, ood_images):
    img = ood_images[3]
    padded = pad_to_multiple(img, tiny_model.downsample)
    latent = quantize_latent(analyze(padded, tiny_model))
    open_one = GateVector(bits=np.array(
        [1] + [0] * (tiny_model.num_adaptable_layers - 1), dtype=np.uint8))
    with pytest.raises(ContractError):
        pack(tiny_model, latent, [], open_one, (img.height, img.width),
             "low_rank", CFG.prior)


def test_pack_rejects_unquantized_and_oversized(tiny_model, ood_images):
    img = ood_images[4]
    padded = pad_to_multiple(img, tiny_model.downsample)
    raw = analyze(padded, tiny_model)
    with pytest.raises(ContractError):
        pack(tiny_model, raw, [], _zero_gates(tiny_model),
             (img.height, img.width), "low_rank", CFG.prior)
    latent = quantize_latent(raw)
    with pytest.raises(ContractError):
        pack(tiny_model, latent, [], _zero_gates(tiny_model),
             (0, img.width), "low_rank", CFG.prior)
    with pytest.raises(ContractError):
        pack(tiny_model, latent, [], _zero_gates(tiny_model),
             (img.height, 1 << 16), "low_rank", CFG.prior)


def test_bad_magic_rejected(tiny_model, ood_images):
    blob, _, _ = _coded(tiny_model, ood_images[5])
    bad = b"XLIC" + blob[4:]
    with pytest.raises(DecodeError):
        unpack(bad, tiny_model)


def test_bad_version_rejected(tiny_model, ood_images):
    blob, _, _ = _coded(tiny_model, ood_images[6])
    bad = blob[:4] + bytes([VERSION + 1]) + blob[5:]
    with pytest.raises(DecodeError):
        unpack(bad, tiny_model)


def test_wrong_checkpoint_rejected(tiny_model, ood_images):
    blob, _, _ = _coded(tiny_model, ood_images[7])
    other = CodecModel(latent_channels=tiny_model.latent_channels,
                       hidden_channels=tiny_model.hidden_channels, seed=999)
    with pytest.raises(IncompatibleBitstreamError):
        unpack(blob, other)


def test_truncation_rejected_everywhere(tiny_model, ood_images):
    blob, _, _ = _coded(tiny_model, ood_images[8])
    for cut in (4, container._FIXED.size - 1, container._FIXED.size + 1,
                len(blob) - 1):
        with pytest.raises(DecodeError):
            unpack(blob[:cut], tiny_model)


def test_trailing_garbage_rejected(tiny_model, ood_images):
    blob, _, _ = _coded(tiny_model, ood_images[9])
    with pytest.raises(DecodeError):
        unpack(blob + b"\x00", tiny_model)


def test_nonzero_gate_padding_rejected(tiny_model, ood_images):
    img = ood_images[10]
    padded = pad_to_multiple(img, tiny_model.downsample)
    latent = quantize_latent(analyze(padded, tiny_model))
    blob = pack(tiny_model, latent, [], _zero_gates(tiny_model),
                (img.height, img.width), "low_rank", CFG.prior)
    pos = container._FIXED.size
    k = tiny_model.num_adaptable_layers
    pad_mask = 0x80 >> k  # first pad bit after k layer bits
    tampered = blob[:pos] + bytes([blob[pos] | pad_mask]) + blob[pos + 1:]
    with pytest.raises(DecodeError):
        unpack(tampered, tiny_model)


def test_gate_bit_packing_is_msb_first(tiny_model, ood_images):
    img = ood_images[11]
    padded = pad_to_multiple(img, tiny_model.downsample)
    latent = quantize_latent(analyze(padded, tiny_model))
    k = tiny_model.num_adaptable_layers
    from dlic import adapters
    bits = np.zeros(k, dtype=np.uint8)
    bits[0] = 1  # layer 1 only
    upd = adapters.make_low_rank(tiny_model.adaptable_shapes()[0], rank=2,
                                 seed=0, layer_index=1)
    q = adapters.quantize_update(upd, CFG.prior)
    blob = pack(tiny_model, latent, [q], GateVector(bits=bits),
                (img.height, img.width), "low_rank", CFG.prior)
    gate_byte = blob[container._FIXED.size]
    assert gate_byte == 0x80


def test_encode_decode_image_bit_identical(tiny_model, ood_images):
    img = ood_images[12]
    blob, result = encode_image(img, tiny_model, CFG)
    recon = decode_image(blob, tiny_model)
    assert recon.pixels.shape == img.pixels.shape
    assert np.array_equal(recon.pixels, result.reconstruction.pixels)
    again = decode_image(blob, tiny_model)
    assert np.array_equal(recon.pixels, again.pixels)


def test_encode_deterministic(tiny_model, ood_images):
    img = ood_images[13]
    a, _ = encode_image(img, tiny_model, CFG)
    b, _ = encode_image(img, tiny_model, CFG)
    assert a == b


def test_measured_bits_close_to_estimate(tiny_model, ood_images):
    img = ood_images[14]
    blob, result = encode_image(img, tiny_model, CFG)
    measured = len(blob) * 8
    assert measured <= result.total_bits * 1.01 + 64 * 8
    assert measured >= result.total_bits * 0.9  # sanity: no free lunch


def test_header_fields_documented_sizes(tiny_model, ood_images):
    # fixed header is 37 bytes: 4+1+1+2+2+8+4*4+2+1
    assert container._FIXED.size == 37
    blob, _, result = _coded(tiny_model, ood_images[15])
    k = tiny_model.num_adaptable_layers
    n_open = result.gate_bits.open_count
    latent_len, update_len = struct.unpack_from(
        "<II", blob, container._FIXED.size + (k + 7) // 8 + n_open)
    assert len(blob) == (container._FIXED.size + (k + 7) // 8 + n_open
                         + 8 + latent_len + update_len)
