"""Quantized-logistic prior: frozen oracle values and invariants."""

import math

import numpy as np
import pytest
import torch

from dlic.delta_prior import (PROB_FLOOR, DeltaPriorConfig, cdf, delta_rate,
                              dequantize, noisy_rate_bits, quantize_delta,
                              ste_quantize, symbol_prob, table_probs)
from dlic.errors import ContractError

CFG = DeltaPriorConfig()

# Closed-form values for the default prior (interval 0.01, scale 0.05):
#   p(0)      = tanh(0.05)
#   p(1)      = (tanh(0.15) - tanh(0.05)) / 2
#   cdf(w/2)  = 1/2 + tanh(0.05)/2
P0 = 0.04995837495787998
P0_BITS = 4.323129693592394
P1 = 0.049463329332719005
CDF_HALF_BIN = 0.52497918747894


def test_zero_symbol_probability():
    assert symbol_prob(0, CFG) == pytest.approx(P0, abs=1e-6)
    assert -math.log2(symbol_prob(0, CFG)) == pytest.approx(P0_BITS, abs=1e-3)


def test_one_symbol_probability():
    assert symbol_prob(1, CFG) == pytest.approx(P1, abs=1e-6)


def test_cdf_at_half_bin():
    assert cdf(0.5 * CFG.interval, CFG) == pytest.approx(CDF_HALF_BIN, abs=1e-6)


def test_symmetry_about_loc():
    for k in (1, 2, 17, 100):
        assert symbol_prob(k, CFG) == pytest.approx(symbol_prob(-k, CFG), rel=1e-12)


def test_probabilities_floor_and_monotone_decay():
    probs = [symbol_prob(k, CFG) for k in range(0, CFG.max_index + 1)]
    assert all(p >= PROB_FLOOR for p in probs)
    # mass decays moving away from the mode
    for a, b in zip(probs, probs[1:]):
        assert b <= a + 1e-15


def test_table_mass_near_one():
    table = table_probs(CFG)
    assert table.shape == (2 * CFG.max_index + 1,)
    # the floor lifts far-tail symbols, so the sum may exceed 1 by at
    # most one floor per symbol
    assert 0.9 < float(table.sum()) <= 1.0 + table.size * PROB_FLOOR


def test_config_rejects_bad_values():
    with pytest.raises(ContractError):
        DeltaPriorConfig(interval=0.0)
    with pytest.raises(ContractError):
        DeltaPriorConfig(scale=-1.0)
    with pytest.raises(ContractError):
        DeltaPriorConfig(max_index=0)


def test_config_values_are_float32_exact():
    # header stores these as f32; construction must already round
    assert CFG.interval == float(np.float32(0.01))
    assert CFG.scale == float(np.float32(0.05))


def test_symbol_prob_rejects_out_of_range():
    with pytest.raises(ContractError):
        symbol_prob(CFG.max_index + 1, CFG)
    with pytest.raises(ContractError):
        symbol_prob(0.5, CFG)


def test_quantize_round_trip_error_bound():
    rng = np.random.default_rng(3)
    vals = rng.normal(0.0, 0.03, 500).astype(np.float64)
    idx = quantize_delta(vals, CFG)
    back = dequantize(idx, CFG)
    assert np.max(np.abs(back - vals)) <= CFG.interval / 2 + 1e-9


def test_quantize_clips_to_alphabet():
    idx = quantize_delta(np.array([10.0, -10.0]), CFG)
    assert idx.tolist() == [CFG.max_index, -CFG.max_index]


def test_dequantize_uses_float32_interval():
    idx = np.array([7, -3], dtype=np.int32)
    expect = idx.astype(np.float32) * np.float32(CFG.interval)
    assert np.array_equal(dequantize(idx, CFG), expect.astype(np.float64))


def test_delta_rate_matches_sum_of_symbol_bits():
    rng = np.random.default_rng(11)
    idx = quantize_delta(rng.normal(0.0, 0.05, 200), CFG)
    expect = -sum(math.log2(symbol_prob(int(k), CFG)) for k in idx)
    assert delta_rate(idx, CFG) == pytest.approx(expect, rel=1e-12)


def test_delta_rate_additive_over_concatenation():
    rng = np.random.default_rng(12)
    a = quantize_delta(rng.normal(0.0, 0.05, 64), CFG)
    b = quantize_delta(rng.normal(0.0, 0.05, 64), CFG)
    joint = delta_rate(np.concatenate([a, b]), CFG)
    assert joint == pytest.approx(delta_rate(a, CFG) + delta_rate(b, CFG), rel=1e-12)


def test_ste_quantize_forward_and_gradient():
    t = torch.tensor([0.0234, -0.0161, 0.4], dtype=torch.float64, requires_grad=True)
    q = ste_quantize(t, CFG)
    expect = dequantize(quantize_delta(t.detach().numpy(), CFG), CFG)
    assert np.allclose(q.detach().numpy(), expect)
    q.sum().backward()
    # straight-through: gradient of identity
    assert torch.allclose(t.grad, torch.ones_like(t))


def test_noisy_rate_close_to_exact_rate_for_coarse_values():
    # values far from bin edges: noise rarely changes the bin
    torch.manual_seed(0)
    gen = torch.Generator().manual_seed(5)
    vals = torch.tensor([0.05, -0.03, 0.11, 0.0], dtype=torch.float64)
    noisy = float(noisy_rate_bits(vals, CFG, gen))
    exact = delta_rate(quantize_delta(vals.numpy(), CFG), CFG)
    assert noisy == pytest.approx(exact, rel=0.25)


def test_noisy_rate_differentiable():
    gen = torch.Generator().manual_seed(6)
    vals = torch.tensor([0.02, -0.05], dtype=torch.float64, requires_grad=True)
    bits = noisy_rate_bits(vals, CFG, gen)
    bits.backward()
    assert vals.grad is not None and torch.isfinite(vals.grad).all()
