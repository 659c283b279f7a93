"""Decoder weight updates: parameter counts, no-op starts, gradient flow."""

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from dlic import adapters
from dlic.adapters import (LowRankUpdate, count_params, from_arrays,
                           make_low_rank, make_update, payload_shapes,
                           quantize_update, realize)
from dlic.delta_prior import DeltaPriorConfig
from dlic.errors import ContractError

SHAPE_192 = (192, 192, 3, 3)
PRIOR = DeltaPriorConfig()


def _conv(shape, seed=0):
    c_out, c_in, kh, kw = shape
    gen = torch.Generator().manual_seed(seed)
    conv = torch.nn.Conv2d(c_in, c_out, (kh, kw), padding=(kh // 2, kw // 2))
    with torch.no_grad():
        conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * 0.1)
        conv.bias.copy_(torch.randn(conv.bias.shape, generator=gen) * 0.1)
    return conv


# Transmitted-parameter counts for a 192->192 3x3 layer at rank 2.
COUNTS_192_R2 = {
    "low_rank": 768,
    "bias_only": 192,
    "fine_tune": 331_968,
    "svd": 192,
    "adapter": 768,
}


@pytest.mark.parametrize("kind,expect", sorted(COUNTS_192_R2.items()))
def test_parameter_counts_192(kind, expect):
    upd = make_update(kind, SHAPE_192, rank=2, seed=0, layer_index=1,
                      base_weight=_conv(SHAPE_192).weight if kind == "svd" else None)
    assert count_params(upd) == expect


def test_low_rank_count_formula():
    for rank in (1, 2, 4):
        for shape in [(48, 32, 3, 3), (96, 48, 3, 3), (12, 48, 3, 3)]:
            if 4 * rank > min(shape[0], shape[1]):
                continue
            upd = make_update("low_rank", shape, rank=rank, seed=0, layer_index=1)
            assert count_params(upd) == rank * (shape[0] + shape[1])


def test_rank_precondition_enforced():
    with pytest.raises(ContractError):
        make_low_rank((12, 48, 3, 3), rank=4)  # 4*4 > 12
    with pytest.raises(ContractError):
        make_low_rank((48, 48, 3, 3), rank=0)
    make_low_rank((12, 48, 3, 3), rank=3)  # 4*3 == 12 is legal


def test_low_rank_init_distribution():
    upd = make_low_rank((64, 64, 3, 3), rank=4, seed=1)
    assert torch.all(upd.B == 0)
    assert upd.A.std() == pytest.approx(0.01, rel=0.5)
    again = make_low_rank((64, 64, 3, 3), rank=4, seed=1)
    assert torch.equal(upd.A, again.A)


@pytest.mark.parametrize("kind", adapters.VARIANT_KINDS)
def test_fresh_update_is_identity(kind):
    shape = (16, 24, 3, 3)
    conv = _conv(shape, seed=2)
    upd = make_update(kind, shape, rank=2, seed=3, layer_index=1,
                      base_weight=conv.weight if kind == "svd" else None)
    h = torch.randn(1, shape[1], 6, 6, generator=torch.Generator().manual_seed(4))
    base = conv(h)
    out = upd.apply(h, conv, 1.0, list(upd.params()))
    assert torch.allclose(out, base, atol=1e-6)


@pytest.mark.parametrize("kind", adapters.VARIANT_KINDS)
def test_closed_gate_is_identity_even_when_trained(kind):
    shape = (16, 24, 3, 3)
    conv = _conv(shape, seed=5)
    upd = make_update(kind, shape, rank=2, seed=6, layer_index=1,
                      base_weight=conv.weight if kind == "svd" else None)
    with torch.no_grad():
        for p in upd.params():
            p.add_(torch.randn(p.shape, generator=torch.Generator().manual_seed(7)) * 0.05)
    h = torch.randn(1, shape[1], 6, 6, generator=torch.Generator().manual_seed(8))
    out = upd.apply(h, conv, 0.0, list(upd.params()))
    assert torch.allclose(out, conv(h), atol=1e-6)


def test_low_rank_touches_only_center_tap():
    shape = (8, 8, 3, 3)
    conv = _conv(shape, seed=9)
    upd = make_low_rank(shape, rank=2, seed=10, layer_index=1)
    with torch.no_grad():
        upd.B.add_(0.3)
    # an input that is zero except at one pixel isolates kernel taps
    h = torch.zeros(1, 8, 5, 5)
    h[0, :, 2, 2] = 1.0
    diff = upd.apply(h, conv, 1.0, list(upd.params())) - conv(h)
    # off-center taps of the delta are zero, so the difference is a
    # single impulse at the center position
    nz = diff.abs().sum(dim=1).squeeze(0)
    assert nz[2, 2] > 0
    nz[2, 2] = 0
    assert torch.all(nz == 0)


def test_low_rank_gradient_flows_to_factors():
    shape = (16, 16, 3, 3)
    conv = _conv(shape, seed=11)
    upd = make_low_rank(shape, rank=2, seed=12, layer_index=1)
    for p in upd.params():
        p.requires_grad_(True)
    h = torch.randn(1, 16, 6, 6, generator=torch.Generator().manual_seed(13))
    out = upd.apply(h, conv, 1.0, list(upd.params()))
    out.square().sum().backward()
    # B starts at zero, so dL/dA flows through B's gradient path only
    assert upd.B.grad is not None and upd.B.grad.abs().sum() > 0
    assert upd.A.grad is not None


def test_low_rank_finite_difference_gradient():
    # float64 central differences on both factors
    torch.manual_seed(0)
    shape = (8, 8, 3, 3)
    conv = _conv(shape, seed=14).double()
    upd = LowRankUpdate(layer_index=1, shape=shape,
                        A=torch.randn(2, 8, dtype=torch.float64,
                                      generator=torch.Generator().manual_seed(15)) * 0.01,
                        B=torch.randn(8, 2, dtype=torch.float64,
                                      generator=torch.Generator().manual_seed(16)) * 0.01)
    h = torch.randn(1, 8, 5, 5, dtype=torch.float64,
                    generator=torch.Generator().manual_seed(17))

    def loss_fn(A, B):
        out = upd.apply(h, conv, 1.0, [A, B])
        return out.square().sum()

    for name in ("A", "B"):
        t = getattr(upd, name).clone().requires_grad_(True)
        args = {"A": (t, upd.B), "B": (upd.A, t)}[name]
        loss_fn(*args).backward()
        grad = t.grad.clone()
        eps = 1e-4
        rng = np.random.default_rng(18)
        for _ in range(5):
            i = tuple(rng.integers(0, s) for s in t.shape)
            plus, minus = t.detach().clone(), t.detach().clone()
            plus[i] += eps
            minus[i] -= eps
            args_p = {"A": (plus, upd.B), "B": (upd.A, plus)}[name]
            args_m = {"A": (minus, upd.B), "B": (upd.A, minus)}[name]
            with torch.no_grad():
                fd = (loss_fn(*args_p) - loss_fn(*args_m)) / (2 * eps)
            assert float(grad[i]) == pytest.approx(float(fd), rel=1e-3, abs=1e-9)


def test_payload_shapes_match_params():
    for kind in adapters.VARIANT_KINDS:
        shape = (16, 24, 3, 3)
        upd = make_update(kind, shape, rank=2, seed=19, layer_index=1,
                          base_weight=_conv(shape).weight if kind == "svd" else None)
        declared = payload_shapes(kind, shape, rank=2)
        assert [tuple(p.shape) for p in upd.params()] == declared


def test_quantize_realize_round_trip():
    shape = (16, 24, 3, 3)
    conv = _conv(shape, seed=20)
    upd = make_low_rank(shape, rank=2, seed=21, layer_index=2)
    with torch.no_grad():
        upd.B.add_(torch.randn(upd.B.shape, generator=torch.Generator().manual_seed(22)) * 0.05)
    q = quantize_update(upd, PRIOR)
    assert q.kind == "low_rank" and q.layer_index == 2 and q.rank == 2
    back = realize(q, shape, PRIOR, base_weight=None)
    # realized tensors equal the straight-through-quantized originals
    for orig, rec in zip(upd.params(), back.params()):
        grid = torch.round(orig / PRIOR.interval).clamp(-PRIOR.max_index, PRIOR.max_index)
        expect = (grid.to(torch.float32) * np.float32(PRIOR.interval)).to(orig.dtype)
        assert torch.allclose(rec, expect, atol=1e-7)


def test_from_arrays_validates_sizes():
    shape = (16, 24, 3, 3)
    with pytest.raises(ContractError):
        from_arrays("low_rank", 1, shape, rank=2,
                    arrays=[np.zeros(10, dtype=np.float32)])


def test_make_update_rejects_unknown_kind():
    with pytest.raises(ContractError):
        make_update("dense", (8, 8, 3, 3), rank=2, seed=0, layer_index=1)


def test_svd_requires_base_weight():
    with pytest.raises(ContractError):
        make_update("svd", (8, 8, 3, 3), rank=2, seed=0, layer_index=1)
