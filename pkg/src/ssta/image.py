"""Image values, file I/O, resizing and perturbation visualization.

Images are plain ``float64`` arrays of shape ``(H, W, C)`` with ``C`` in
``{1, 3}`` and every intensity in ``[0, 1]``.  Quantization to 8 bits only
happens when writing files.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import DecodeError

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_PNG_COLOR_TYPES = {0: "grayscale", 2: "RGB", 3: "palette", 4: "gray+alpha", 6: "RGBA"}


def as_image(data) -> np.ndarray:
    """Validate ``data`` as an image and return it as a float64 ``(H, W, C)`` array.

    2-D input is treated as a single-channel image.
    """
    img = np.asarray(data, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"image must have shape (H, W, 1|3), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"image must be at least 1x1, got {img.shape[:2]}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite intensities")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image intensities must lie in [0, 1]")
    return img


def check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def quantize(values) -> np.ndarray:
    """Map unit-interval values to bytes with round-half-away-from-zero."""
    v = np.asarray(values, dtype=np.float64) * 255.0
    return (np.sign(v) * np.floor(np.abs(v) + 0.5)).clip(0, 255).astype(np.uint8)


def to_gray8(img: np.ndarray) -> np.ndarray:
    """Rec.601 luma of ``img`` as an ``(H, W)`` uint8 array."""
    return quantize(luma(img))


def luma(img: np.ndarray) -> np.ndarray:
    """Rec.601 luma of ``img`` as an ``(H, W)`` float array in ``[0, 1]``."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[:, :, 0]
    return 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]


def _check_png_header(path: Path) -> None:
    with open(path, "rb") as fh:
        head = fh.read(33)
    if len(head) < 33 or head[12:16] != b"IHDR":
        raise DecodeError(f"{path}: truncated or malformed PNG header")
    _, _, depth, color = struct.unpack(">IIBB", head[16:26])
    if color not in (0, 2):
        name = _PNG_COLOR_TYPES.get(color, str(color))
        raise DecodeError(f"{path}: unsupported color type {name}")
    if depth != 8:
        raise DecodeError(f"{path}: unsupported bit depth {depth} (only 8-bit is supported)")


def load_image(path) -> np.ndarray:
    """Read an 8-bit grayscale/RGB PNG or a binary PGM (P5) / PPM (P6) file.

    Raises
    ------
    DecodeError
        If the file cannot be read or uses an unsupported bit depth or color type.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            magic = fh.read(8)
    except OSError as exc:
        raise DecodeError(f"{path}: unreadable file ({exc.strerror})") from exc
    if magic == PNG_SIGNATURE:
        _check_png_header(path)
    elif magic[:2] not in (b"P5", b"P6"):
        raise DecodeError(f"{path}: not a PNG, PGM (P5) or PPM (P6) file")
    try:
        with PILImage.open(path) as pil:
            pil.load()
            mode = pil.mode
            arr = np.array(pil)
    except (OSError, ValueError, SyntaxError) as exc:
        raise DecodeError(f"{path}: cannot decode image ({exc})") from exc
    if mode not in ("L", "RGB"):
        if mode.startswith("I") or mode == "1":
            raise DecodeError(f"{path}: unsupported bit depth (mode {mode})")
        raise DecodeError(f"{path}: unsupported color type (mode {mode})")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float64) / 255.0


def save_image(img, path) -> None:
    """Write ``img`` as PNG (``.png``) or binary PNM (``.ppm``/``.pgm``).

    Intensities are quantized with ``round(i * 255)``, halves away from zero.
    """
    img = as_image(img)
    path = Path(path)
    data = quantize(img)
    pil = PILImage.fromarray(data[:, :, 0], "L") if data.shape[2] == 1 else PILImage.fromarray(data, "RGB")
    suffix = path.suffix.lower()
    if suffix == ".png":
        pil.save(path, format="PNG")
    elif suffix in (".ppm", ".pgm", ".pnm"):
        pil.save(path, format="PPM")
    else:
        raise ValueError(f"{path}: unknown image extension {suffix!r} (use .png, .ppm or .pgm)")


def resize_bilinear(img, out_h: int, out_w: int) -> np.ndarray:
    """Resize with bilinear interpolation, half-pixel (align-corners-false) centers."""
    img = np.asarray(img, dtype=np.float64)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    in_h, in_w = img.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()

    def axis(n_in, n_out):
        s = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        s = np.clip(s, 0.0, n_in - 1)
        i0 = np.floor(s).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, s - i0

    r0, r1, wr = axis(in_h, out_h)
    c0, c1, wc = axis(in_w, out_w)
    wr = wr[:, None, None]
    wc = wc[None, :, None]
    # lerp form a + w*(b - a) keeps constant regions exact
    top = img[r0][:, c0] + wc * (img[r0][:, c1] - img[r0][:, c0])
    bottom = img[r1][:, c0] + wc * (img[r1][:, c1] - img[r1][:, c0])
    return top + wr * (bottom - top)


def amplify_diff(x, x_adv, factor: float = 30.0) -> np.ndarray:
    """Visualize ``x_adv - x`` magnified by ``factor`` around mid-gray."""
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    check_same_shape(x, x_adv)
    if factor <= 0:
        raise ValueError("factor must be positive")
    return np.clip(0.5 + factor * (x_adv - x), 0.0, 1.0)
