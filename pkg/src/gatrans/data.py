"""Dataset ingestion, palette coding, and synthetic scene generation.

Images and labels are lossless RGB PNGs; labels are decoded to class-index
maps through a bijective color palette. A manifest lists each pair and its
split membership.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)


class DataError(Exception):
    """Raised for malformed datasets, rasters, or palettes."""


DEFAULT_CLASS_NAMES = ("impervious surface", "building", "low vegetation", "tree", "car")
DEFAULT_CLASS_COLORS = ((255, 255, 255), (0, 0, 255), (0, 255, 255), (0, 255, 0), (255, 255, 0))


@dataclass(frozen=True)
class ClassPalette:
    names: tuple
    colors: tuple

    def __post_init__(self):
        if len(self.names) != len(self.colors):
            raise DataError("palette names and colors differ in length")
        if len(set(self.colors)) != len(self.colors):
            raise DataError("palette colors must be distinct")

    @property
    def num_classes(self):
        return len(self.names)

    def encode(self, labels: np.ndarray) -> np.ndarray:
        """(H,W) class indices -> (H,W,3) uint8 colors."""
        lut = np.array(self.colors, dtype=np.uint8)
        return lut[np.asarray(labels)]

    def decode(self, raster: np.ndarray) -> np.ndarray:
        """(H,W,3) colors -> (H,W) class indices; unknown colors are errors."""
        raster = np.asarray(raster)
        out = np.full(raster.shape[:2], -1, dtype=np.int64)
        for k, color in enumerate(self.colors):
            out[(raster == np.array(color, dtype=raster.dtype)).all(axis=-1)] = k
        if (out < 0).any():
            y, x = np.argwhere(out < 0)[0]
            raise DataError(
                f"unknown label color {tuple(raster[y, x])} at pixel ({y},{x})")
        return out


DEFAULT_PALETTE = ClassPalette(DEFAULT_CLASS_NAMES, DEFAULT_CLASS_COLORS)


@dataclass
class SegSample:
    """Image in [0,1] as (C,H,W) float32 plus (H,W) integer label map."""

    image: np.ndarray
    label: np.ndarray
    name: str = ""
    split: str = "train"


def _write_png(path, array_u8):
    Image.fromarray(array_u8).save(path, format="PNG")


def _read_png(path):
    return np.asarray(Image.open(path).convert("RGB"))


def synth_dataset(out_dir, n_train, n_val, size=64, num_classes=5, seed=0,
                  palette: ClassPalette = None):
    """Write a deterministic synthetic dataset of shape-composite scenes.

    Scenes place random rectangles and ellipses of the foreground classes on
    a background-class canvas; image channels carry the class colors with
    per-scene color jitter and pixel noise so classes are learnable without
    being trivially separable.
    """
    if size < 32:
        raise DataError(f"scene size {size} below minimum 32")
    palette = palette or DEFAULT_PALETTE
    if num_classes != palette.num_classes:
        raise DataError("num_classes must match palette")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    manifest = []
    for i in range(n_train + n_val):
        split = "train" if i < n_train else "val"
        name = f"scene_{i:04d}"
        label = _synth_scene(rng, size, num_classes)
        image = _render_scene(rng, label, palette)
        _write_png(out / f"{name}_image.png", image)
        _write_png(out / f"{name}_label.png", palette.encode(label))
        manifest.append(f"{name} {split}")
    (out / "manifest.txt").write_text("\n".join(manifest) + "\n")
    return out


def _synth_scene(rng, size, num_classes):
    label = np.zeros((size, size), dtype=np.int64)
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(int(rng.integers(5, 10))):
        cls = int(rng.integers(1, num_classes))
        cy, cx = rng.integers(0, size, 2)
        h = int(rng.integers(size // 8, size // 2))
        w = int(rng.integers(size // 8, size // 2))
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) <= h // 2) & (np.abs(xx - cx) <= w // 2)
        else:
            mask = ((yy - cy) / max(h / 2, 1)) ** 2 + ((xx - cx) / max(w / 2, 1)) ** 2 <= 1.0
        label[mask] = cls
    return label


def _render_scene(rng, label, palette):
    base = np.array(palette.colors, dtype=np.float64) / 255.0
    jitter = rng.normal(0.0, 0.12, size=base.shape)
    img = (base + jitter)[label]                      # (H,W,3)
    img += rng.normal(0.0, 0.08, size=img.shape)
    return (np.clip(img, 0.0, 1.0) * 255).round().astype(np.uint8)


def load_dataset(data_dir, palette: ClassPalette = None):
    """Read image/label pairs listed in the manifest into SegSamples."""
    palette = palette or DEFAULT_PALETTE
    root = Path(data_dir)
    manifest = root / "manifest.txt"
    if not manifest.is_file():
        raise DataError(f"missing manifest: {manifest}")
    samples = []
    for line in manifest.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            name, split = line.split()
        except ValueError:
            raise DataError(f"malformed manifest line: {line!r}")
        img_path = root / f"{name}_image.png"
        lbl_path = root / f"{name}_label.png"
        for p in (img_path, lbl_path):
            if not p.is_file():
                raise DataError(f"missing raster: {p}")
        image = _read_png(img_path).astype(np.float32) / 255.0
        label = palette.decode(_read_png(lbl_path))
        if image.shape[:2] != label.shape:
            raise DataError(
                f"{name}: image {image.shape[:2]} and label {label.shape} sizes differ")
        samples.append(SegSample(image=np.ascontiguousarray(image.transpose(2, 0, 1)),
                                 label=label, name=name, split=split))
    if not samples:
        log.warning("manifest %s lists no samples", manifest)
    return samples


def save_label_png(path, label, palette: ClassPalette = None):
    palette = palette or DEFAULT_PALETTE
    _write_png(path, palette.encode(label))
