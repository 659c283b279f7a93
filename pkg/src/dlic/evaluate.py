"""Rate-distortion evaluation: method comparisons, step sweeps, gate stats.

Each evaluation measures rate from real serialized bitstreams (header and
coder overhead included) and quality from the receiver-side
reconstruction. Curves aggregate per-image bpp and PSNR by mean at each
rate-distortion point, and method deltas are Bjontegaard rate differences
against a named anchor. CSV output is plain and deterministic; plots are
regenerated from the same rows.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .adapt import (AdaptationConfig, adapt_decoder, refine_latent,
                    scaled_step_config, decode_with_updates)
from .codec import CodecModel, ImageTensor, analyze, pad_to_multiple, quantize_latent, latent_rate
from .container import pack
from .errors import ContractError
from .gating import GateVector
from .metrics import RDCurve, bd_rate, curve_from_points, psnr

METHOD_BASE = "base"
METHOD_LATENT = "latent_refine"
METHOD_ADAPTED = "adapted"


@dataclass(frozen=True)
class EvalPoint:
    method: str
    lmbda: float
    image_index: int
    bits: int
    bpp: float
    psnr_db: float
    estimated_bits: float
    gates: tuple[int, ...] | None = None


@dataclass
class EvalReport:
    points: list[EvalPoint]

    def methods(self) -> list[str]:
        seen = []
        for p in self.points:
            if p.method not in seen:
                seen.append(p.method)
        return seen

    def curve(self, method: str) -> RDCurve:
        """Mean bpp/PSNR per rate-distortion point."""
        pts = [p for p in self.points if p.method == method]
        if not pts:
            raise ContractError(f"no points for method {method!r}")
        lmbdas = sorted({p.lmbda for p in pts})
        bpps, psnrs = [], []
        for lam in lmbdas:
            rows = [p for p in pts if p.lmbda == lam]
            bpps.append(float(np.mean([p.bpp for p in rows])))
            psnrs.append(float(np.mean([p.psnr_db for p in rows])))
        return curve_from_points(method, bpps, psnrs)

    def bd(self, method: str, anchor: str) -> float:
        return bd_rate(self.curve(anchor), self.curve(method))

    def gate_frequency(self, method: str = METHOD_ADAPTED) -> np.ndarray:
        rows = [p.gates for p in self.points if p.method == method and p.gates is not None]
        if not rows:
            raise ContractError(f"no gate records for method {method!r}")
        return np.mean(np.asarray(rows, dtype=np.float64), axis=0)


def _crop_psnr(image: ImageTensor, recon_padded: ImageTensor) -> float:
    cropped = ImageTensor(np.ascontiguousarray(
        recon_padded.pixels[:image.height, :image.width]))
    return psnr(image, cropped)


def _zero_gates(model: CodecModel) -> GateVector:
    return GateVector(bits=np.zeros(model.num_adaptable_layers, dtype=np.uint8))


def _method_points(image: ImageTensor, index: int, model: CodecModel,
                   config: AdaptationConfig,
                   methods: tuple[str, ...]) -> list[EvalPoint]:
    lam = model.lmbda if config.lmbda is None else config.lmbda
    padded = pad_to_multiple(image, model.downsample)
    npix = image.height * image.width
    size = (image.height, image.width)
    out: list[EvalPoint] = []

    def measured(latent, updates, gates) -> tuple[int, float]:
        blob = pack(model, latent, updates, gates, size, config.variant, config.prior)
        recon = decode_with_updates(model, latent, updates, config.prior)
        return len(blob) * 8, _crop_psnr(image, recon)

    refined = None
    if METHOD_BASE in methods:
        latent = quantize_latent(analyze(padded, model))
        bits, quality = measured(latent, [], _zero_gates(model))
        out.append(EvalPoint(METHOD_BASE, lam, index, bits, bits / npix, quality,
                             estimated_bits=latent_rate(latent, model)))
    if METHOD_LATENT in methods or METHOD_ADAPTED in methods:
        refined = refine_latent(padded, model, config)
    if METHOD_LATENT in methods:
        bits, quality = measured(refined, [], _zero_gates(model))
        out.append(EvalPoint(METHOD_LATENT, lam, index, bits, bits / npix, quality,
                             estimated_bits=latent_rate(refined, model)))
    if METHOD_ADAPTED in methods:
        result = adapt_decoder(padded, model, refined, config)
        bits, quality = measured(refined, result.updates, result.gate_bits)
        out.append(EvalPoint(METHOD_ADAPTED, lam, index, bits, bits / npix, quality,
                             estimated_bits=result.total_bits,
                             gates=tuple(int(b) for b in result.gate_bits.bits)))
    return out


def rd_methods(images: list[ImageTensor], models: list[CodecModel],
               config: AdaptationConfig,
               methods: tuple[str, ...] = (METHOD_BASE, METHOD_LATENT, METHOD_ADAPTED),
               jobs: int = 1) -> EvalReport:
    """Evaluate the method ladder over an image set and a model grid."""
    points: list[EvalPoint] = []
    for model in models:
        def work(pair):
            i, img = pair
            return _method_points(img, i, model, config, methods)
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                for rows in pool.map(work, enumerate(images)):
                    points.extend(rows)
        else:
            for pair in enumerate(images):
                points.extend(work(pair))
    return EvalReport(points=points)


def fixed_vs_dynamic(images: list[ImageTensor], models: list[CodecModel],
                     config: AdaptationConfig,
                     layer_counts: tuple[int, ...] = (1, 2, 4)) -> dict[str, float]:
    """BD-rate of fixed top-m-layer updates and of learned gates.

    Anchor is the latent-refinement baseline; keys are "fixed_1", ...,
    "dynamic". Shares one latent refinement per (model, image).
    """
    k = models[0].num_adaptable_layers
    if any(m.num_adaptable_layers != k for m in models):
        raise ContractError("models disagree on the number of adaptable layers")
    if any(not 0 <= c <= k for c in layer_counts):
        raise ContractError(f"layer counts must lie in [0, {k}]")
    labels = [f"fixed_{c}" for c in layer_counts] + ["dynamic"]
    configs = {}
    for c in layer_counts:
        gates = tuple(1 if i < c else 0 for i in range(k))
        configs[f"fixed_{c}"] = replace(config, fixed_gates=gates)
    configs["dynamic"] = replace(config, fixed_gates=None)

    points: list[EvalPoint] = []
    for model in models:
        lam = model.lmbda if config.lmbda is None else config.lmbda
        for i, img in enumerate(images):
            padded = pad_to_multiple(img, model.downsample)
            size = (img.height, img.width)
            npix = img.height * img.width
            refined = refine_latent(padded, model, config)
            blob = pack(model, refined, [], _zero_gates(model), size,
                        config.variant, config.prior)
            recon = decode_with_updates(model, refined, [], config.prior)
            points.append(EvalPoint("anchor", lam, i, len(blob) * 8,
                                    len(blob) * 8 / npix, _crop_psnr(img, recon),
                                    estimated_bits=latent_rate(refined, model)))
            for label, cfg in configs.items():
                result = adapt_decoder(padded, model, refined, cfg)
                blob = pack(model, refined, result.updates, result.gate_bits, size,
                            cfg.variant, cfg.prior)
                recon = decode_with_updates(model, refined, result.updates, cfg.prior)
                points.append(EvalPoint(label, lam, i, len(blob) * 8,
                                        len(blob) * 8 / npix, _crop_psnr(img, recon),
                                        estimated_bits=result.total_bits,
                                        gates=tuple(int(b) for b in result.gate_bits.bits)))
    report = EvalReport(points=points)
    return {label: report.bd(label, "anchor") for label in labels}


@dataclass(frozen=True)
class SweepRow:
    total_steps: int
    wall_seconds: float
    bd_pct: float


def sweep_steps(images: list[ImageTensor], models: list[CodecModel],
                config: AdaptationConfig,
                totals: tuple[int, ...] = (0, 50, 200)) -> list[SweepRow]:
    """RD gain and wall time as the per-image step budget grows.

    Each budget splits evenly between latent refinement and decoder
    adaptation; BD-rate is measured against the zero-step run.
    """
    if len(totals) < 2 or sorted(set(totals)) != list(totals):
        raise ContractError("totals must be strictly increasing, length >= 2")
    curves: dict[int, RDCurve] = {}
    walls: dict[int, float] = {}
    for total in totals:
        cfg = scaled_step_config(config, total)
        start = time.perf_counter()
        per_lmbda: list[tuple[float, float]] = []
        for model in models:
            bpps, psnrs = [], []
            for img in images:
                padded = pad_to_multiple(img, model.downsample)
                refined = refine_latent(padded, model, cfg)
                result = adapt_decoder(padded, model, refined, cfg)
                blob = pack(model, refined, result.updates, result.gate_bits,
                            (img.height, img.width), cfg.variant, cfg.prior)
                recon = decode_with_updates(model, refined, result.updates, cfg.prior)
                bpps.append(len(blob) * 8 / (img.height * img.width))
                psnrs.append(_crop_psnr(img, recon))
            per_lmbda.append((float(np.mean(bpps)), float(np.mean(psnrs))))
        walls[total] = time.perf_counter() - start
        curves[total] = curve_from_points(f"steps_{total}",
                                          [b for b, _ in per_lmbda],
                                          [p for _, p in per_lmbda])
    anchor = curves[totals[0]]
    return [SweepRow(total_steps=t, wall_seconds=walls[t],
                     bd_pct=0.0 if t == totals[0] else bd_rate(anchor, curves[t]))
            for t in totals]


def write_points_csv(path: str, points: list[EvalPoint]) -> None:
    with open(path, "w") as fh:
        fh.write("method,lmbda,image,bits,bpp,psnr_db,estimated_bits,gates\n")
        for p in points:
            gates = "" if p.gates is None else "".join(str(b) for b in p.gates)
            fh.write(f"{p.method},{p.lmbda:.6g},{p.image_index},{p.bits},"
                     f"{p.bpp:.8f},{p.psnr_db:.6f},{p.estimated_bits:.4f},{gates}\n")


def write_curves_csv(path: str, curves: list[RDCurve]) -> None:
    with open(path, "w") as fh:
        fh.write("method,bpp,psnr_db\n")
        for c in curves:
            for pt in c.points:
                fh.write(f"{c.label},{pt.bpp:.8f},{pt.psnr_db:.6f}\n")


def write_bd_csv(path: str, rows: dict[str, float], anchor: str) -> None:
    with open(path, "w") as fh:
        fh.write("method,anchor,bd_rate_pct\n")
        for label, val in rows.items():
            fh.write(f"{label},{anchor},{val:.6f}\n")


def write_sweep_csv(path: str, rows: list[SweepRow]) -> None:
    with open(path, "w") as fh:
        fh.write("total_steps,wall_seconds,bd_rate_pct\n")
        for r in rows:
            fh.write(f"{r.total_steps},{r.wall_seconds:.3f},{r.bd_pct:.6f}\n")


def write_gate_csv(path: str, freqs: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("layer,open_fraction\n")
        for i, f in enumerate(freqs, start=1):
            fh.write(f"{i},{f:.6f}\n")


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_rd(path: str, curves: list[RDCurve]) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for c in curves:
        ax.plot(c.bpps, c.psnrs, marker="o", label=c.label)
    ax.set_xlabel("bits per pixel")
    ax.set_ylabel("PSNR (dB)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_gate_frequency(path: str, freqs: np.ndarray) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    layers = np.arange(1, len(freqs) + 1)
    ax.bar(layers, np.asarray(freqs, dtype=np.float64))
    ax.set_xticks(layers)
    ax.set_xlabel("synthesis layer")
    ax.set_ylabel("open fraction")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
