"""Saliency maps, threshold masks and mask import.

A saliency map is an ``(H, W)`` float array of scores in ``[0, 1]``.  Masks
cut from it at an integer level ``tau`` in ``0..255`` are nested: lowering
``tau`` can only grow the region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DecodeError
from .image import load_image, quantize, to_gray8

IMPORTED_TAU = -1
"""``Mask.tau`` value for masks read from file rather than thresholded."""

_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])
_BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


@dataclass(frozen=True)
class Mask:
    """Binary region of an image together with the level that produced it."""

    inside: np.ndarray
    tau: int = IMPORTED_TAU

    @property
    def shape(self) -> tuple[int, int]:
        return self.inside.shape

    @property
    def is_empty(self) -> bool:
        return not self.inside.any()

    @classmethod
    def full(cls, shape) -> "Mask":
        return cls(np.ones(shape, dtype=bool), 0)


def minmax_normalize(raw: np.ndarray) -> np.ndarray:
    """Scale ``raw`` to ``[0, 1]``; a constant input maps to all zeros."""
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def lc_saliency(img) -> np.ndarray:
    """Luminance-contrast saliency: summed gray-level distance to every other pixel.

    Uses the 256-bin histogram, which is an exact refactoring of the pairwise sum.
    """
    gray = to_gray8(img).astype(np.int64)
    hist = np.bincount(gray.ravel(), minlength=256)
    levels = np.arange(256)
    # distance table: cost of each gray level against the whole image
    table = np.abs(levels[:, None] - levels[None, :]) @ hist
    return minmax_normalize(table[gray].astype(np.float64))


def srgb_to_lab(img) -> np.ndarray:
    """Convert an sRGB image in ``[0, 1]`` to CIELab (D65, 2 degree observer).

    Single-channel images are treated as gray ``R = G = B``.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    lin = np.where(img <= 0.04045, img / 12.92, ((img + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _SRGB_TO_XYZ.T / _D65_WHITE
    delta = 6.0 / 29.0
    f = np.where(xyz > delta**3, np.cbrt(xyz), xyz / (3 * delta**2) + 4.0 / 29.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def binomial_blur(channels: np.ndarray) -> np.ndarray:
    """Separable (1,4,6,4,1)/16 blur of an ``(H, W, K)`` array, edge-replicated."""
    h, w = channels.shape[:2]
    padded = np.pad(channels, ((2, 2), (0, 0), (0, 0)), mode="edge")
    rows = sum(k * padded[i : i + h] for i, k in enumerate(_BINOMIAL5))
    padded = np.pad(rows, ((0, 0), (2, 2), (0, 0)), mode="edge")
    return sum(k * padded[:, i : i + w] for i, k in enumerate(_BINOMIAL5))


def ft_saliency(img) -> np.ndarray:
    """Frequency-tuned saliency: Lab distance of the blurred image from its mean color."""
    lab = srgb_to_lab(img)
    mean = lab.reshape(-1, 3).mean(axis=0)
    blurred = binomial_blur(lab)
    raw = np.sqrt(((blurred - mean) ** 2).sum(axis=-1))
    return minmax_normalize(raw)


def threshold_mask(smap, tau: int) -> Mask:
    """Pixels whose 8-bit score ``round(score * 255)`` is at least ``tau``."""
    if not (isinstance(tau, (int, np.integer)) and 0 <= tau <= 255):
        raise ValueError(f"tau must be an integer in 0..255, got {tau!r}")
    levels = quantize(smap).astype(np.int64)
    return Mask(levels >= tau, int(tau))


def load_mask(path, shape) -> Mask:
    """Import a mask from an 8-bit grayscale PNG/PGM; bytes >= 128 are inside."""
    img = load_image(path)
    if img.shape[2] != 1:
        raise DecodeError(f"{path}: mask file must be grayscale, got {img.shape[2]} channels")
    if img.shape[:2] != tuple(shape):
        raise ValueError(f"{path}: mask shape {img.shape[:2]} does not match image shape {tuple(shape)}")
    return Mask(quantize(img[:, :, 0]) >= 128, IMPORTED_TAU)


def mask_area_fraction(mask: Mask) -> float:
    return float(mask.inside.sum()) / mask.inside.size


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean arrays (1.0 when both are empty)."""
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum()) / float(union)


SALIENCY_METHODS = {"ft": ft_saliency, "lc": lc_saliency}
