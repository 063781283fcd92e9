"""Heuristic RGB flame segmentation.

Produces a per-pixel flame mask from three channel criteria — distance to
the channel means, absolute green/blue value thresholds, and inter-channel
distances — followed by isolated-pixel removal and a 3x3 morphological
closing. The mask drives indirect labeling of paired thermal patches.

The inter-channel filter rejects a pixel when any of these hold (channel
arithmetic in real numbers, not saturating integers):

    |R - G|  <= alpha * G        red too close to green (not orange enough)
    |R - 2G| >= beta * R         red far from twice green (kills green-
                                 dominant pixels, where 2G overshoots R)
    |G - 2B| <= delta * G        green/blue ratio unlike flame tones

Note the second condition intentionally rejects *large* distances while its
siblings reject small ones; the asymmetry is what suppresses vegetation,
whose green channel dwarfs red. It is kept exactly as stated even though a
symmetric form might look more natural.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, LengthMismatch
from .evaluation import ConfusionMatrix
from .imaging import BinaryMask, PatchLabel, RgbImage, channel_means


@dataclass(frozen=True)
class SegParams:
    """Thresholds and coefficients for the flame-color criteria.

    Defaults use the tuned operating point alpha=0.1, beta=0.47, delta=0.14.
    The channel-value thresholds default to 200, chosen so dominant green or
    blue backgrounds are suppressed; both are scene-dependent tunables.
    """

    tau_g: float = 200.0
    tau_b: float = 200.0
    alpha: float = 0.1
    beta: float = 0.47
    delta: float = 0.14

    def __post_init__(self):
        for name in ("alpha", "beta", "delta"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        for name in ("tau_g", "tau_b"):
            v = getattr(self, name)
            if not 0 <= v <= 255:
                raise ValueError(f"{name} must lie in [0, 255], got {v}")


def _channels(img: RgbImage) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    data = img.data.astype(np.float64)
    return data[:, :, 0], data[:, :, 1], data[:, :, 2]


def mask_mean_distance(img: RgbImage, means: tuple[float, float, float]) -> BinaryMask:
    """Keep pixels whose red excess over the red mean beats both the green
    and blue excesses over their means (strict comparisons)."""
    r, g, b = _channels(img)
    r_m, g_m, b_m = means
    reject = ((r - r_m) < (b - b_m)) | ((r - r_m) < (g - g_m))
    return BinaryMask(~reject)


def mask_value(img: RgbImage, tau_g: float, tau_b: float) -> BinaryMask:
    """Reject pixels whose green or blue channel exceeds its threshold."""
    r, g, b = _channels(img)
    reject = (g > tau_g) | (b > tau_b)
    return BinaryMask(~reject)


def mask_interchannel(img: RgbImage, alpha: float, beta: float, delta: float) -> BinaryMask:
    """Apply the three inter-channel distance criteria (see module docs)."""
    r, g, b = _channels(img)
    reject = (
        (np.abs(r - g) <= alpha * g)
        | (np.abs(r - 2.0 * g) >= beta * r)
        | (np.abs(g - 2.0 * b) <= delta * g)
    )
    return BinaryMask(~reject)


def _shift_or(bits: np.ndarray) -> np.ndarray:
    """3x3 dilation; out-of-image neighbors count as background."""
    h, w = bits.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = bits
    out = np.zeros((h, w), dtype=bool)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            out |= padded[dy:dy + h, dx:dx + w]
    return out


def _shift_and(bits: np.ndarray) -> np.ndarray:
    """3x3 erosion; out-of-image neighbors count as background, so blobs
    flush with the border shrink by one pixel."""
    h, w = bits.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = bits
    out = np.ones((h, w), dtype=bool)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            out &= padded[dy:dy + h, dx:dx + w]
    return out


def clean_mask(mask: BinaryMask) -> BinaryMask:
    """Drop set pixels with no set 8-neighbor, then close with a 3x3 square
    (dilate, then erode) to fill pinholes and smooth blob boundaries."""
    bits = mask.bits.astype(bool)
    h, w = bits.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = bits
    neighbor_any = np.zeros((h, w), dtype=bool)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            if dy == 1 and dx == 1:
                continue
            neighbor_any |= padded[dy:dy + h, dx:dx + w]
    kept = bits & neighbor_any
    closed = _shift_and(_shift_or(kept))
    return BinaryMask(closed)


def flame_seg(img: RgbImage, params: SegParams | None = None) -> BinaryMask:
    """Full pipeline: conjunction of the three criteria masks, then cleanup."""
    params = params or SegParams()
    means = channel_means(img)
    m1 = mask_mean_distance(img, means)
    m2 = mask_value(img, params.tau_g, params.tau_b)
    m3 = mask_interchannel(img, params.alpha, params.beta, params.delta)
    combined = BinaryMask(m1.bits & m2.bits & m3.bits)
    return clean_mask(combined)


def confusion_counts(
    pred_labels: Sequence[PatchLabel | int],
    ref_labels: Sequence[PatchLabel | int],
) -> ConfusionMatrix:
    """Count TP/FN/FP/TN over aligned label lists with flame as positive."""
    if len(pred_labels) != len(ref_labels):
        raise LengthMismatch(f"{len(pred_labels)} predictions vs {len(ref_labels)} references")
    pred = np.asarray([int(v) for v in pred_labels])
    ref = np.asarray([int(v) for v in ref_labels])
    tp = int(((pred == 1) & (ref == 1)).sum())
    fn = int(((pred == 0) & (ref == 1)).sum())
    fp = int(((pred == 1) & (ref == 0)).sum())
    tn = int(((pred == 0) & (ref == 0)).sum())
    return ConfusionMatrix(tp=tp, fn=fn, fp=fp, tn=tn)
