"""Bank-based zero-backprop adaptation: clustering, bank IO, encode path."""

import numpy as np
import pytest

from dlic import instrumentation
from dlic.codec import model_identity
from dlic.container import decode_image
from dlic.delta_prior import DeltaPriorConfig
from dlic.errors import ContractError, IncompatibleBitstreamError
from dlic.onestep import DeltaBank, build_bank, embed, kmeans, onestep_encode


@pytest.fixture(scope="module")
def bank(tiny_model, ood_images):
    return build_bank(ood_images[:12], tiny_model, clusters=3, rank=2,
                      steps=10, seed=0)


def test_kmeans_deterministic():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(40, 6))
    c1, a1 = kmeans(pts, 4, seed=3)
    c2, a2 = kmeans(pts, 4, seed=3)
    assert np.array_equal(c1, c2)
    assert np.array_equal(a1, a2)


def test_kmeans_single_cluster_is_mean():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(25, 3))
    centers, assign = kmeans(pts, 1, seed=0)
    assert np.allclose(centers[0], pts.mean(axis=0))
    assert np.all(assign == 0)


def test_kmeans_recovers_separated_blobs():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(20, 2)) * 0.05
    b = rng.normal(size=(20, 2)) * 0.05 + 100.0
    pts = np.concatenate([a, b])
    centers, assign = kmeans(pts, 2, seed=0)
    means = sorted([a.mean(axis=0), b.mean(axis=0)], key=lambda m: m[0])
    got = sorted(centers, key=lambda m: m[0])
    assert np.allclose(got[0], means[0])
    assert np.allclose(got[1], means[1])
    # one blob per cluster
    assert len(set(assign[:20])) == 1 and len(set(assign[20:])) == 1
    assert assign[0] != assign[20]


def test_kmeans_every_cluster_populated():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(30, 4))
    for clusters in (2, 5, 8):
        centers, assign = kmeans(pts, clusters, seed=1)
        assert set(assign.tolist()) == set(range(clusters))
        # empty-cluster reseeding must keep centers pairwise distinct
        d = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
        off_diag = d[~np.eye(clusters, dtype=bool)]
        assert np.all(off_diag > 0)


def test_kmeans_rejects_bad_input():
    with pytest.raises(ContractError):
        kmeans(np.zeros(8), 2)
    with pytest.raises(ContractError):
        kmeans(np.zeros((3, 2)), 4)


def test_embed_is_channel_mean_one_pass(tiny_model, ood_images):
    img = ood_images[0]
    with instrumentation.watch("analysis_passes") as delta:
        e, latent = embed(img, tiny_model)
    assert delta() == 1
    assert e.dtype == np.float64
    assert e.shape == (latent.values.shape[0],)
    assert np.allclose(e, latent.values.mean(axis=(1, 2)))


def test_bank_requires_one_update_per_center(bank):
    with pytest.raises(ContractError):
        DeltaBank(bank.centers, bank.updates[:-1], bank.layer_index,
                  bank.rank, bank.prior, bank.model_id)


def test_nearest_ties_to_lowest_index():
    centers = np.array([[0.0, 0.0], [10.0, 10.0], [0.0, 0.0]])
    b = DeltaBank.__new__(DeltaBank)
    b.centers = centers
    assert DeltaBank.nearest(b, np.array([9.0, 9.0])) == 1
    assert DeltaBank.nearest(b, np.array([1.0, 1.0])) == 0
    # exact tie between clusters 0 and 2
    assert DeltaBank.nearest(b, np.array([0.5, 0.5])) == 0


def test_build_bank_shape_and_counts(tiny_model, bank):
    assert bank.num_clusters == 3
    assert bank.rank == 2
    assert bank.layer_index == tiny_model.num_adaptable_layers - 1
    assert bank.model_id == model_identity(tiny_model)
    for upd in bank.updates:
        assert upd.kind == "low_rank"
        assert upd.rank == 2
        assert upd.layer_index == bank.layer_index


def test_build_bank_counts_gradient_steps(tiny_model, ood_images):
    with instrumentation.watch("gradient_steps") as delta:
        build_bank(ood_images[:6], tiny_model, clusters=2, rank=2,
                   steps=4, seed=1)
    assert delta() == 2 * 4


def test_build_bank_rejects_bad_corpus(tiny_model, ood_images):
    with pytest.raises(ContractError):
        build_bank(ood_images[:2], tiny_model, clusters=3, steps=1)
    with pytest.raises(ContractError):
        build_bank(ood_images[:2], tiny_model, clusters=0, steps=1)


def test_bank_save_load_round_trip(bank, tmp_path):
    path = str(tmp_path / "bank.npz")
    bank.save(path)
    loaded = DeltaBank.load(path)
    assert np.array_equal(loaded.centers, bank.centers)
    assert loaded.layer_index == bank.layer_index
    assert loaded.rank == bank.rank
    assert loaded.model_id == bank.model_id
    assert loaded.prior == DeltaPriorConfig(
        interval=bank.prior.interval, loc=bank.prior.loc,
        scale=bank.prior.scale, max_index=bank.prior.max_index)
    assert len(loaded.updates) == len(bank.updates)
    for got, want in zip(loaded.updates, bank.updates):
        assert got.kind == want.kind and got.rank == want.rank
        assert len(got.indices) == len(want.indices)
        for g, w in zip(got.indices, want.indices):
            assert np.array_equal(g, w)


def test_loaded_bank_encodes_identically(tiny_model, ood_images, bank, tmp_path):
    path = str(tmp_path / "bank.npz")
    bank.save(path)
    loaded = DeltaBank.load(path)
    blob_a, _ = onestep_encode(ood_images[3], tiny_model, bank)
    blob_b, _ = onestep_encode(ood_images[3], tiny_model, loaded)
    assert blob_a == blob_b


def test_onestep_zero_gradient_steps(tiny_model, ood_images, bank):
    with instrumentation.watch("gradient_steps") as delta:
        blob, report = onestep_encode(ood_images[1], tiny_model, bank)
    assert delta() == 0
    assert report["gradient_steps"] == 0


def test_onestep_report_consistency(tiny_model, ood_images, bank):
    img = ood_images[2]
    blob, report = onestep_encode(img, tiny_model, bank)
    assert report["bits"] == len(blob) * 8
    assert 0 <= report["cluster"] < bank.num_clusters
    assert report["distance"] >= 0.0
    assert report["rate_update_bits"] > 0.0
    e, _ = embed(img, tiny_model)
    assert report["cluster"] == bank.nearest(e)
    # measured stream stays close to the entropy estimate
    estimate = report["rate_latent_bits"] + report["rate_update_bits"]
    assert report["bits"] <= estimate * 1.01 + 64 * 8


def test_onestep_decodes_bit_exactly(tiny_model, ood_images, bank):
    from dlic.metrics import psnr

    img = ood_images[4]
    blob, report = onestep_encode(img, tiny_model, bank)
    recon = decode_image(blob, tiny_model)
    assert recon.pixels.shape == img.pixels.shape
    assert psnr(img, recon) == report["psnr_db"]


def test_onestep_deterministic(tiny_model, ood_images, bank):
    blob_a, _ = onestep_encode(ood_images[5], tiny_model, bank)
    blob_b, _ = onestep_encode(ood_images[5], tiny_model, bank)
    assert blob_a == blob_b


def test_onestep_rejects_wrong_model(tiny_model, ood_images, bank):
    stale = DeltaBank(bank.centers, bank.updates, bank.layer_index,
                      bank.rank, bank.prior, b"\x00" * 8)
    with pytest.raises(IncompatibleBitstreamError):
        onestep_encode(ood_images[0], tiny_model, stale)
