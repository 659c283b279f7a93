"""Quality and rate metrics: PSNR, RD curves, Bjontegaard rate deltas."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .codec import ImageTensor
from .errors import ContractError, ShapeError

PSNR_CAP_DB = 100.0


def psnr(reference: ImageTensor, test: ImageTensor) -> float:
    """Peak signal-to-noise ratio in dB between 8-bit views of two images.

    Identical images return the 100 dB cap instead of infinity.
    """
    if reference.pixels.shape != test.pixels.shape:
        raise ShapeError(
            f"image shapes differ: {reference.pixels.shape} vs {test.pixels.shape}"
        )
    a = reference.to_uint8().astype(np.float64)
    b = test.to_uint8().astype(np.float64)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(255.0 ** 2 / mse))


@dataclass(frozen=True)
class RDPoint:
    bpp: float
    psnr_db: float

    def __post_init__(self) -> None:
        if not (self.bpp > 0 and math.isfinite(self.bpp)):
            raise ContractError(f"bpp must be positive and finite, got {self.bpp}")
        if not math.isfinite(self.psnr_db):
            raise ContractError("psnr must be finite")


@dataclass(frozen=True)
class RDCurve:
    """Operating points of one method, ordered by strictly increasing bpp."""

    label: str
    points: tuple[RDPoint, ...]

    def __post_init__(self) -> None:
        if len(self.points) < 2:
            raise ContractError("an RD curve needs at least two points")
        bpps = [p.bpp for p in self.points]
        if any(b2 <= b1 for b1, b2 in zip(bpps, bpps[1:])):
            raise ContractError("RD curve bpp values must strictly increase")

    @property
    def bpps(self) -> np.ndarray:
        return np.array([p.bpp for p in self.points], dtype=np.float64)

    @property
    def psnrs(self) -> np.ndarray:
        return np.array([p.psnr_db for p in self.points], dtype=np.float64)


def curve_from_points(label: str, bpps, psnrs) -> RDCurve:
    """Build a curve from parallel arrays, sorting by bpp."""
    pairs = sorted(zip(map(float, bpps), map(float, psnrs)))
    return RDCurve(label, tuple(RDPoint(b, p) for b, p in pairs))


def bd_rate(anchor: RDCurve, test: RDCurve) -> float:
    """Average rate difference of ``test`` vs ``anchor`` at equal quality, percent.

    Fits log-rate as a polynomial in PSNR (cubic when enough points) and
    integrates both fits over the overlapping PSNR interval. Negative
    values mean ``test`` needs fewer bits for the same quality.
    """
    lo = max(anchor.psnrs.min(), test.psnrs.min())
    hi = min(anchor.psnrs.max(), test.psnrs.max())
    if not hi > lo:
        raise ContractError(
            f"curves do not overlap in PSNR ({anchor.label}: "
            f"[{anchor.psnrs.min():.2f}, {anchor.psnrs.max():.2f}], "
            f"{test.label}: [{test.psnrs.min():.2f}, {test.psnrs.max():.2f}])"
        )

    def integral(curve: RDCurve) -> float:
        deg = min(3, len(curve.points) - 1)
        poly = np.polyfit(curve.psnrs, np.log(curve.bpps), deg)
        anti = np.polyint(poly)
        return float(np.polyval(anti, hi) - np.polyval(anti, lo))

    avg_log_diff = (integral(test) - integral(anchor)) / (hi - lo)
    return (math.exp(avg_log_diff) - 1.0) * 100.0
