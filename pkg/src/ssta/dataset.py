"""Deterministic synthetic scenes: one geometric shape on a textured background.

The shape type is the class label and its raster footprint is kept as a
ground-truth object mask, which lets saliency masks be scored by IoU.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .image import load_image, quantize, resize_bilinear, save_image

TRAIN_FRACTION = 0.8


def _disk(dx, dy):
    return dx**2 + dy**2 <= 1.0


def _square(dx, dy):
    return np.maximum(np.abs(dx), np.abs(dy)) <= 0.8


def _triangle(dx, dy):
    return (dy <= 0.8) & (np.abs(dx) <= (dy + 0.95) * 0.55)


def _plus(dx, dy):
    return ((np.abs(dx) <= 0.3) & (np.abs(dy) <= 0.95)) | ((np.abs(dy) <= 0.3) & (np.abs(dx) <= 0.95))


def _ring(dx, dy):
    r2 = dx**2 + dy**2
    return (r2 <= 1.0) & (r2 >= 0.55**2)


def _diamond(dx, dy):
    return np.abs(dx) + np.abs(dy) <= 1.0


def _hbar(dx, dy):
    return dx**2 + (dy / 0.45) ** 2 <= 1.0


def _vbar(dx, dy):
    return (dx / 0.45) ** 2 + dy**2 <= 1.0


def _saltire(dx, dy):
    box = np.maximum(np.abs(dx), np.abs(dy)) <= 0.8
    return box & ((np.abs(dx - dy) <= 0.38) | (np.abs(dx + dy) <= 0.38))


def _frame(dx, dy):
    m = np.maximum(np.abs(dx), np.abs(dy))
    return (m <= 0.85) & (m >= 0.5)


# compact shapes first: the default 4-class set avoids thin strokes
SHAPES = {
    "disk": _disk,
    "square": _square,
    "triangle": _triangle,
    "diamond": _diamond,
    "plus": _plus,
    "ring": _ring,
    "hbar": _hbar,
    "vbar": _vbar,
    "saltire": _saltire,
    "frame": _frame,
}
CLASS_NAMES = list(SHAPES)


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, 3)
    labels: np.ndarray  # (N,)
    object_masks: np.ndarray  # (N, H, W) bool
    num_classes: int

    def __len__(self):
        return len(self.labels)

    @property
    def n_train(self) -> int:
        return int(round(TRAIN_FRACTION * len(self)))

    def split(self, name: str):
        """``(images, labels, object_masks)`` of the ``"train"`` or ``"test"`` split."""
        cut = self.n_train
        sl = {"train": slice(0, cut), "test": slice(cut, None)}[name]
        return self.images[sl], self.labels[sl], self.object_masks[sl]

    def split_indices(self, name: str) -> np.ndarray:
        cut = self.n_train
        return np.arange(cut) if name == "train" else np.arange(cut, len(self))


def _smooth_noise(rng, size, cells):
    coarse = rng.uniform(-1.0, 1.0, (cells, cells, 1))
    return resize_bilinear(coarse, size, size)[:, :, 0]


def _pick_colors(rng):
    while True:
        bg = rng.uniform(0.15, 0.85, 3)
        fg = rng.uniform(0.0, 1.0, 3)
        if np.linalg.norm(fg - bg) >= 0.45:
            return bg, fg


def render_scene(rng, size: int, label: int):
    """Render one scene of class ``label``; returns ``(image, object_mask)``."""
    shape_fn = SHAPES[CLASS_NAMES[label]]
    radius = rng.uniform(0.2, 0.32) * size
    lo, hi = radius + 1.0, size - 1.0 - radius
    cx, cy = rng.uniform(lo, hi, 2)
    rows, cols = np.mgrid[0:size, 0:size] + 0.5
    obj = shape_fn((cols - cx) / radius, (rows - cy) / radius)

    bg, fg = _pick_colors(rng)
    texture = 0.04 * _smooth_noise(rng, size, 8) + 0.02 * rng.uniform(-1.0, 1.0, (size, size))
    shading = 0.02 * _smooth_noise(rng, size, 4)
    # pixel-scale checker grain; invisible to the saliency blur, which nulls the Nyquist frequency
    grain = rng.uniform(0.04, 0.08) * np.where((np.mgrid[0:size, 0:size].sum(axis=0) % 2) == 0, 1.0, -1.0)
    background = bg[None, None, :] + texture[:, :, None]
    foreground = fg[None, None, :] * (1.0 + shading[:, :, None]) + grain[:, :, None]
    img = np.where(obj[:, :, None], foreground, background)
    # stored 8-bit quantized so PNG round trips are exact
    return quantize(np.clip(img, 0.0, 1.0)) / 255.0, obj


def generate_dataset(seed: int, n: int, image_size: int = 64, num_classes: int = 4) -> Dataset:
    """Generate ``n`` labelled scenes; the same arguments always give the same data.

    Labels are balanced (class counts differ by at most one) and shuffled.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if not 4 <= num_classes <= len(SHAPES):
        raise ValueError(f"num_classes must be in 4..{len(SHAPES)}, got {num_classes}")
    if image_size < 16:
        raise ValueError(f"image_size must be at least 16, got {image_size}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % num_classes)
    images = np.empty((n, image_size, image_size, 3))
    masks = np.empty((n, image_size, image_size), dtype=bool)
    for i, label in enumerate(labels):
        images[i], masks[i] = render_scene(rng, image_size, int(label))
    return Dataset(images, labels.astype(np.intp), masks, num_classes)


def save_dataset(ds: Dataset, out_dir) -> list:
    """Write ``ds`` as a directory tree; returns the written paths relative to ``out_dir``.

    Layout: ``images/NNNNN.png``, ``masks/NNNNN.png`` (object footprint as
    0/255 gray), ``labels.csv`` and the ``train.txt`` / ``test.txt`` split lists.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    names = [f"images/{i:05d}.png" for i in range(len(ds))]
    for i, name in enumerate(names):
        save_image(ds.images[i], out / name)
        save_image(ds.object_masks[i].astype(np.float64), out / f"masks/{i:05d}.png")
    with open(out / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["file", "label", "class"])
        for name, label in zip(names, ds.labels):
            writer.writerow([name, int(label), CLASS_NAMES[label]])
    for split in ("train", "test"):
        lines = [names[i] for i in ds.split_indices(split)]
        (out / f"{split}.txt").write_text("".join(line + "\n" for line in lines))
    return names + [f"masks/{i:05d}.png" for i in range(len(ds))] + ["labels.csv", "train.txt", "test.txt"]


def read_labels(data_dir) -> dict:
    """Map image file name to label from ``labels.csv``."""
    path = Path(data_dir) / "labels.csv"
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["file", "label"]:
        raise FormatError(f"{path}: expected a 'file,label,...' header")
    try:
        return {row[0]: int(row[1]) for row in rows[1:] if row}
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed row ({exc})") from exc


def read_split(data_dir, split: str):
    """``(names, images, labels)`` for the files listed in ``<split>.txt``."""
    data_dir = Path(data_dir)
    labels = read_labels(data_dir)
    names = [line for line in (data_dir / f"{split}.txt").read_text().splitlines() if line]
    missing = [n for n in names if n not in labels]
    if missing:
        raise FormatError(f"{data_dir}: {len(missing)} files in {split}.txt have no label, e.g. {missing[0]}")
    images = np.stack([load_image(data_dir / n) for n in names]) if names else np.empty((0,))
    return names, images, np.array([labels[n] for n in names], dtype=np.intp)
