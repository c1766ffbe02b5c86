"""Image decoding, bilinear resizing, PNG output and the synthetic dataset."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, DomainError, FormatError
from .model import CLASS_NAMES
from .tensor import DTYPE, Tensor

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
SYNTHETIC_CLASSES = ("class0_blob", "class1_gradient", "class2_stripes")


def resize_bilinear(img: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of the last two axes with half-pixel centres and edge clamping."""
    img = np.asarray(img, dtype=DTYPE)
    h, w = img.shape[-2:]
    if (h, w) == (out_h, out_w):
        return img.copy()

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis(h, out_h)
    x0, x1, fx = axis(w, out_w)
    top = img[..., y0, :] * (1 - fy)[:, None] + img[..., y1, :] * fy[:, None]
    return top[..., x0] * (1 - fx) + top[..., x1] * fx


def load_image(path, size: int = 224, channels: int = 3) -> Tensor:
    """Decode PNG/JPEG to ``channels x size x size`` floats in [0, 1]."""
    path = Path(path)
    if channels not in (1, 3):
        raise DomainError("channels must be 1 or 3")
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        raise FormatError(f"{path}: unsupported image format")
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "JPEG"):
                raise FormatError(f"{path}: unsupported image format {im.format}")
            im.load()
            if channels == 1 or im.mode in ("1", "L", "LA", "I", "I;16", "F"):
                arr = _gray_array(im)
                arr = np.repeat(arr[None], channels, axis=0)
            else:
                arr = np.asarray(im.convert("RGB"), dtype=DTYPE).transpose(2, 0, 1) / 255.0
    except FormatError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"{path}: cannot decode image ({exc})") from exc
    return np.ascontiguousarray(resize_bilinear(arr, size, size))


def _gray_array(im: Image.Image) -> Tensor:
    if im.mode in ("I;16", "I;16B", "I;16L"):
        return np.asarray(im, dtype=DTYPE) / 65535.0
    if im.mode in ("I", "F"):
        arr = np.asarray(im, dtype=DTYPE)
        top = arr.max()
        return arr / top if top > 0 else arr
    return np.asarray(im.convert("L"), dtype=DTYPE) / 255.0


def to_uint8(img: Tensor) -> np.ndarray:
    return np.rint(np.clip(np.asarray(img, dtype=DTYPE), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, img: Tensor):
    """Write ``H x W`` grayscale or ``3 x H x W`` RGB floats in [0, 1] as 8-bit PNG."""
    arr = to_uint8(img)
    if arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
        mode = "RGB"
    else:
        mode = "L"
    Image.fromarray(arr, mode=mode).save(path, format="PNG")


# -- dataset manifest ------------------------------------------------------------


@dataclass
class DatasetManifest:
    root: Path
    class_names: list[str]
    items: list[tuple[str, int]] = field(default_factory=list)  # (relative path, label)

    @property
    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.items], dtype=np.int64)

    def paths(self) -> list[Path]:
        return [self.root / rel for rel, _ in self.items]

    def load(self, size: int, channels: int) -> tuple[Tensor, np.ndarray]:
        if not self.items:
            return np.zeros((0, channels, size, size)), self.labels
        images = np.stack([load_image(p, size, channels) for p in self.paths()])
        return images, self.labels


def class_order(names: Sequence[str]) -> list[str]:
    """Known benchmark classes first in their fixed order, others alphabetically."""
    known = [n for n in CLASS_NAMES if n in names]
    return known + sorted(n for n in names if n not in CLASS_NAMES)


def scan_dataset(root) -> DatasetManifest:
    """Index ``root/<class name>/*.{png,jpg,jpeg}``."""
    root = Path(root)
    if not root.is_dir():
        raise DecodeError(f"{root}: not a dataset directory")
    names = class_order([d.name for d in root.iterdir() if d.is_dir()])
    if not names:
        raise DecodeError(f"{root}: no class subdirectories")
    items = []
    for label, name in enumerate(names):
        for f in sorted((root / name).iterdir()):
            if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES:
                items.append((f"{name}/{f.name}", label))
    return DatasetManifest(root, names, items)


# -- synthetic data --------------------------------------------------------------


def synthetic_image(label: int, size: int, rng: np.random.Generator) -> Tensor:
    """One ``size x size`` grayscale sample of class ``label`` (0 blob, 1 gradient, 2 stripes)."""
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    if label == 0:
        cy, cx = rng.uniform(0.2, 0.35, size=2)
        sigma = rng.uniform(0.08, 0.14)
        img = 0.15 + 0.75 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    elif label == 1:
        lo = rng.uniform(0.05, 0.2)
        img = lo + rng.uniform(0.6, 0.75) * xx
    elif label == 2:
        period = rng.uniform(1 / 7, 1 / 4)
        img = 0.45 + 0.3 * np.sin(2 * np.pi * yy / period + rng.uniform(0, 2 * np.pi))
    else:
        raise DomainError(f"synthetic generator has no class {label}")
    img = img + rng.normal(0.0, 0.05, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_synthetic(out_dir, per_class: int, size: int = 64, seed: int = 0, classes: int = 3) -> DatasetManifest:
    """Write ``per_class`` PNGs for each synthetic class under ``out_dir/<class>/``."""
    if size < 16:
        raise DomainError("synthetic images must be at least 16 pixels wide")
    if not 1 <= classes <= len(SYNTHETIC_CLASSES):
        raise DomainError(f"synthetic generator supports 1..{len(SYNTHETIC_CLASSES)} classes")
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    items = []
    names = list(SYNTHETIC_CLASSES[:classes])
    for label, name in enumerate(names):
        (out_dir / name).mkdir(parents=True, exist_ok=True)
    for i in range(per_class):
        for label, name in enumerate(names):
            rel = f"{name}/{i:05d}.png"
            save_png(out_dir / rel, synthetic_image(label, size, rng))
            items.append((rel, label))
    items.sort(key=lambda it: (it[1], it[0]))
    return DatasetManifest(out_dir, names, items)


def ensure_writable(path):
    parent = Path(path).resolve().parent
    if not parent.is_dir() or not os.access(parent, os.W_OK):
        raise OSError(f"{parent}: directory is not writable")
