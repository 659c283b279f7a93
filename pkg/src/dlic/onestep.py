"""Zero-backprop adaptation from a pre-fitted bank of decoder updates.

Offline, a corpus is clustered in the codec's own embedding space (the
spatial mean of the encoder's latent tensor) and one low-rank update of
the next-to-last synthesis layer is fitted per cluster. At encode time an
image costs exactly one analysis pass: its embedding picks the nearest
cluster center (Euclidean distance, ties to the lowest index) and the
cluster's update is transmitted as-is. No gradient steps run at encode.
"""

from __future__ import annotations

import json

import numpy as np
import torch
import torch.nn.functional as F

from . import adapters, instrumentation
from .adapt import decode_with_updates
from .adapters import QuantizedUpdate
from .codec import (CodecModel, ImageTensor, LatentCode, analyze, dequantize_latent,
                    latent_rate, model_identity, pad_to_multiple, quantize_latent,
                    to_tensor)
from .container import pack
from .delta_prior import DeltaPriorConfig, delta_rate, noisy_rate_bits
from .errors import ContractError, IncompatibleBitstreamError
from .gating import GateVector
from .metrics import psnr


def embed(image: ImageTensor, model: CodecModel) -> tuple[np.ndarray, LatentCode]:
    """Per-channel mean of the latent tensor, plus the latents themselves.

    Returned together so encode paths that need both spend one analysis pass.
    """
    latent = analyze(pad_to_multiple(image, model.downsample), model)
    return latent.values.mean(axis=(1, 2)).astype(np.float64), latent


def kmeans(points: np.ndarray, clusters: int, seed: int = 0,
           iterations: int = 25) -> tuple[np.ndarray, np.ndarray]:
    """Plain Lloyd's k-means with deterministic tie-breaking.

    Assignment ties go to the lowest center index; a cluster that empties
    is reseeded to the point farthest from its assigned center.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < clusters:
        raise ContractError("need at least as many points as clusters")
    rng = np.random.default_rng(seed)
    centers = pts[rng.choice(pts.shape[0], size=clusters, replace=False)].copy()
    assign = np.zeros(pts.shape[0], dtype=np.int64)
    for _ in range(iterations):
        d = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=2)
        assign = np.argmin(d, axis=1)  # argmin takes the lowest index on ties
        for j in range(clusters):
            members = pts[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            else:
                worst = int(np.argmax(d[np.arange(len(pts)), assign]))
                centers[j] = pts[worst]
                assign[worst] = j
    return centers, assign


class DeltaBank:
    """Cluster centers plus one quantized update per cluster."""

    def __init__(self, centers: np.ndarray, updates: list[QuantizedUpdate],
                 layer_index: int, rank: int, prior: DeltaPriorConfig,
                 model_id: bytes):
        if centers.ndim != 2 or centers.shape[0] != len(updates):
            raise ContractError("one update per cluster center required")
        self.centers = np.asarray(centers, dtype=np.float64)
        self.updates = updates
        self.layer_index = int(layer_index)
        self.rank = int(rank)
        self.prior = prior
        self.model_id = bytes(model_id)

    @property
    def num_clusters(self) -> int:
        return int(self.centers.shape[0])

    def nearest(self, embedding: np.ndarray) -> int:
        d = np.linalg.norm(self.centers - embedding[None, :], axis=1)
        return int(np.argmin(d))

    def save(self, path: str) -> None:
        meta = {
            "layer_index": self.layer_index,
            "rank": self.rank,
            "prior": [self.prior.interval, self.prior.loc, self.prior.scale,
                      self.prior.max_index],
            "model_id": self.model_id.hex(),
        }
        arrays = {"centers": self.centers,
                  "meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
        for j, upd in enumerate(self.updates):
            for t, arr in enumerate(upd.indices):
                arrays[f"u{j}_{t}"] = arr
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @staticmethod
    def load(path: str) -> "DeltaBank":
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            centers = z["centers"]
            prior = DeltaPriorConfig(interval=meta["prior"][0], loc=meta["prior"][1],
                                     scale=meta["prior"][2], max_index=int(meta["prior"][3]))
            updates = []
            for j in range(centers.shape[0]):
                indices = []
                t = 0
                while f"u{j}_{t}" in z:
                    indices.append(z[f"u{j}_{t}"].astype(np.int32))
                    t += 1
                updates.append(QuantizedUpdate(layer_index=int(meta["layer_index"]),
                                               kind="low_rank", rank=int(meta["rank"]),
                                               indices=indices))
        return DeltaBank(centers, updates, int(meta["layer_index"]), int(meta["rank"]),
                         prior, bytes.fromhex(meta["model_id"]))


def build_bank(images: list[ImageTensor], model: CodecModel, clusters: int = 8,
               rank: int = 2, steps: int = 200, batch_size: int = 8,
               lr: float = 1e-3, seed: int = 0,
               prior: DeltaPriorConfig | None = None,
               lmbda: float | None = None) -> DeltaBank:
    """Cluster a corpus and fit one next-to-last-layer update per cluster."""
    if clusters < 1:
        raise ContractError("clusters must be >= 1")
    if len(images) < clusters:
        raise ContractError("corpus smaller than the number of clusters")
    prior = prior or DeltaPriorConfig()
    lam = model.lmbda if lmbda is None else lmbda
    layer_index = model.num_adaptable_layers - 1
    if layer_index < 1:
        raise ContractError("model has no next-to-last synthesis layer")
    shape = model.adaptable_shapes()[layer_index - 1]

    embeddings = []
    latents = []
    for img in images:
        e, latent = embed(img, model)
        embeddings.append(e)
        latents.append(quantize_latent(latent))
    centers, assign = kmeans(np.stack(embeddings), clusters, seed=seed)

    tensors = [to_tensor(pad_to_multiple(img, model.downsample)) for img in images]
    y_hats = [torch.from_numpy(dequantize_latent(lt.quantized)).unsqueeze(0)
              for lt in latents]

    updates = []
    for j in range(clusters):
        members = [i for i in range(len(images)) if assign[i] == j]
        upd = adapters.make_low_rank(shape, rank, seed=seed * 977 + j,
                                     layer_index=layer_index)
        opt = torch.optim.Adam([p.requires_grad_(True) for p in upd.params()], lr=lr)
        gen = torch.Generator().manual_seed(seed * 977 + 31 + j)
        noise_gen = torch.Generator().manual_seed(seed * 977 + 67 + j)
        for _ in range(steps):
            take = min(batch_size, len(members))
            picks = [members[int(torch.randint(len(members), (1,), generator=gen))]
                     for _ in range(take)]
            fn = adapters.layer_function(upd, 1.0, train_prior=prior)
            loss = 0.0
            for i in picks:
                x_hat = model.synthesis_forward(y_hats[i], {layer_index: fn})
                npix = tensors[i].shape[2] * tensors[i].shape[3]
                bits = sum(noisy_rate_bits(t, prior, noise_gen) for t in upd.params())
                loss = loss + lam * 255.0 ** 2 * F.mse_loss(x_hat, tensors[i]) + bits / npix
            loss = loss / take
            opt.zero_grad()
            loss.backward()
            opt.step()
            instrumentation.bump("gradient_steps")
        updates.append(adapters.quantize_update(upd, prior))

    return DeltaBank(centers, updates, layer_index, rank, prior, model_identity(model))


def onestep_encode(image: ImageTensor, model: CodecModel,
                   bank: DeltaBank) -> tuple[bytes, dict]:
    """Encode with a bank lookup instead of per-image optimization.

    Costs one analysis pass and zero gradient steps; returns the blob and
    a report dict (cluster choice, bits, psnr).
    """
    if bank.model_id != model_identity(model):
        raise IncompatibleBitstreamError("bank was built against a different checkpoint")
    with instrumentation.watch("gradient_steps") as grad_delta:
        e, latent = embed(image, model)
        latent = quantize_latent(latent)
        j = bank.nearest(e)
        chosen = bank.updates[j]
        k = model.num_adaptable_layers
        bits_vec = np.zeros(k, dtype=np.uint8)
        bits_vec[bank.layer_index - 1] = 1
        gates = GateVector(bits=bits_vec)
        blob = pack(model, latent, [chosen], gates, (image.height, image.width),
                    "low_rank", bank.prior)
        recon_padded = decode_with_updates(model, latent, [chosen], bank.prior)
        recon = ImageTensor(np.ascontiguousarray(
            recon_padded.pixels[:image.height, :image.width]))
        report = {
            "cluster": j,
            "distance": float(np.linalg.norm(bank.centers[j] - e)),
            "bits": len(blob) * 8,
            "rate_latent_bits": latent_rate(latent, model),
            "rate_update_bits": sum(delta_rate(ix, bank.prior) for ix in chosen.indices),
            "psnr_db": psnr(image, recon),
            "gradient_steps": grad_delta(),
        }
    return blob, report
