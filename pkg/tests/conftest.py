"""Shared fixtures.

Trained models are expensive, so they are built once per session and
cached on disk under tests/_cache keyed by their training recipe. All
training is seeded; a cache hit and a fresh train produce identical
checkpoints.
"""

import os

import pytest
import torch

from dlic import codec, datasets
from dlic.adapt import AdaptationConfig

CACHE = os.path.join(os.path.dirname(__file__), "_cache")
RD_LAMBDAS = (0.003, 0.01, 0.03, 0.1)


def _cached_model(name: str, **kwargs) -> codec.CodecModel:
    os.makedirs(CACHE, exist_ok=True)
    path = os.path.join(CACHE, name + ".pt")
    if os.path.exists(path):
        return codec.load_checkpoint(path)
    train = datasets.natural_like(24, size=128, seed=7)
    model = codec.train_base(train, **kwargs)
    codec.save_checkpoint(model, path)
    return model


@pytest.fixture(scope="session")
def tiny_model():
    """Small, briefly trained model for fast protocol-level tests."""
    return _cached_model("tiny", lmbda=0.01, steps=800, seed=0,
                         hidden_channels=24, lr=5e-4)


@pytest.fixture(scope="session")
def tiny_model_hi():
    """Companion to tiny_model at a higher lambda, for two-point curves."""
    return _cached_model("tiny_hi", lmbda=0.1, steps=800, seed=0,
                         hidden_channels=24, lr=5e-4)


@pytest.fixture(scope="session")
def rd_models():
    """The four-lambda grid used by the evaluation criteria."""
    return [_cached_model(f"rd_{lam}", lmbda=lam, steps=8000, seed=0,
                          hidden_channels=48, lr=5e-4)
            for lam in RD_LAMBDAS]


@pytest.fixture(scope="session")
def ood_images():
    """32 held-out images far from the training distribution."""
    return (datasets.pixel_art(16, size=64, seed=11)
            + datasets.vector_art(16, size=64, seed=12))


@pytest.fixture(scope="session")
def nat_images():
    """Held-out images from the training family."""
    return datasets.natural_like(4, size=64, seed=99)


@pytest.fixture(scope="session")
def nat_eval_images():
    """32 held-out in-domain images for the layer and step analyses."""
    return datasets.natural_like(32, size=64, seed=21)


@pytest.fixture(scope="session")
def onestep_corpus():
    """64 corpus images for bank building, disjoint from the held-out set."""
    return (datasets.pixel_art(32, size=64, seed=31)
            + datasets.vector_art(32, size=64, seed=32))


@pytest.fixture(scope="session")
def desk_config():
    return AdaptationConfig(latent_steps=200, decoder_steps=200,
                            warmup_steps=20, rank=2, seed=0)


@pytest.fixture(autouse=True)
def _single_thread():
    # bit-exactness tests assume deterministic kernels
    torch.set_num_threads(1)
    yield
