"""Procedural image classification task for end-to-end pipeline checks.

Each 64x64 RGB image carries exactly one colored object (square, disc, or
diamond, cycling with the class index) on a noisy background.  The
background is lightly tinted toward the class color, standing in for the
scene context that real crops carry: a crop that misses the object still
holds a weak, learnable class signal.  Object sizes are drawn from integer
ranges chosen so the mask covers between 10% and 50% of the image for every
shape.

Everything is derived from one seed through per-image sub-streams, so a
dataset is bit-identical across runs and platforms.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError, ShapeError
from ..rng import Stream, spawn

DEFAULT_NUM_CLASSES = 10
IMAGE_SIZE = 64
TILE_SIZE = 8

# Half-open integer ranges per shape, picked so the pixel-counted area
# fraction of a 64x64 image stays inside [0.1, 0.5] at both extremes.
_SQUARE_SIDE = (21, 46)
_DISC_RADIUS = (13, 26)
_DIAMOND_RADIUS = (15, 32)

_BG_TINT = 0.18
_BG_NOISE = 0.25
_OBJ_JITTER = 0.08


@dataclass(frozen=True)
class SynthImage:
    """One generated image: pixels, its object mask, and the class."""

    image_id: str
    class_index: int
    pixels: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.pixels.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
            raise ShapeError(f"expected {IMAGE_SIZE}x{IMAGE_SIZE}x3 pixels, got {self.pixels.shape}")
        if self.mask.shape != (IMAGE_SIZE, IMAGE_SIZE):
            raise ShapeError(f"mask shape {self.mask.shape} does not match the image")

    @property
    def area_fraction(self) -> float:
        return float(self.mask.sum()) / (IMAGE_SIZE * IMAGE_SIZE)


@dataclass(frozen=True)
class SynthTask:
    """A full train/val dataset plus the parameters that shaped it."""

    num_classes: int
    image_size: int
    train: tuple[SynthImage, ...]
    val: tuple[SynthImage, ...]
    seed: int

    def image_by_id(self, image_id: str) -> SynthImage:
        for img in self.train + self.val:
            if img.image_id == image_id:
                return img
        raise KeyError(image_id)


def class_color(class_index: int, num_classes: int) -> np.ndarray:
    """Class colors spread around the hue wheel, moderately saturated."""
    hue = class_index / num_classes
    return np.asarray(colorsys.hsv_to_rgb(hue, 0.85, 0.9), dtype=np.float64)


def _object_mask(kind: int, stream: Stream) -> np.ndarray:
    size = IMAGE_SIZE
    yy, xx = np.ogrid[0:size, 0:size]
    if kind == 0:
        side = _SQUARE_SIDE[0] + stream.next_below(_SQUARE_SIDE[1] - _SQUARE_SIDE[0])
        x0 = stream.next_below(size - side + 1)
        y0 = stream.next_below(size - side + 1)
        return (yy >= y0) & (yy < y0 + side) & (xx >= x0) & (xx < x0 + side)
    if kind == 1:
        r = _DISC_RADIUS[0] + stream.next_below(_DISC_RADIUS[1] - _DISC_RADIUS[0])
        cx = r + stream.next_below(size - 2 * r)
        cy = r + stream.next_below(size - 2 * r)
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    r = _DIAMOND_RADIUS[0] + stream.next_below(_DIAMOND_RADIUS[1] - _DIAMOND_RADIUS[0])
    cx = r + stream.next_below(size - 2 * r)
    cy = r + stream.next_below(size - 2 * r)
    return np.abs(yy - cy) + np.abs(xx - cx) <= r


def _render(image_id: str, class_index: int, num_classes: int, seed: int) -> SynthImage:
    stream = spawn(seed, "image", image_id)
    base = stream.uniform(0.25, 0.55)
    mask = _object_mask(class_index % 3, stream)
    n = IMAGE_SIZE * IMAGE_SIZE * 3
    bg_noise = (stream.doubles(n).reshape(IMAGE_SIZE, IMAGE_SIZE, 3) * 2.0 - 1.0) * _BG_NOISE
    jitter = (stream.doubles(n).reshape(IMAGE_SIZE, IMAGE_SIZE, 3) * 2.0 - 1.0) * _OBJ_JITTER
    color = class_color(class_index, num_classes)
    pixels = (1.0 - _BG_TINT) * (base + bg_noise) + _BG_TINT * color
    obj = color + jitter
    pixels[mask] = obj[mask]
    pixels = np.clip(pixels, 0.0, 1.0).astype(np.float32)
    return SynthImage(image_id=image_id, class_index=class_index, pixels=pixels, mask=mask)


def generate_task(
    seed: int,
    sizes: tuple[int, int],
    num_classes: int = DEFAULT_NUM_CLASSES,
) -> SynthTask:
    """Deterministic dataset of ``sizes = (train, val)`` images.

    Classes rotate round-robin, so counts are balanced within one.
    """
    num_train, num_val = sizes
    if num_train < 1 or num_val < 1:
        raise ParameterError(f"need at least 1 train and 1 val image, got {sizes}")
    if num_classes < 2:
        raise ParameterError(f"need at least 2 classes, got {num_classes}")
    train = tuple(
        _render(f"train_{i:05d}", i % num_classes, num_classes, seed)
        for i in range(num_train)
    )
    val = tuple(
        _render(f"val_{i:05d}", i % num_classes, num_classes, seed)
        for i in range(num_val)
    )
    return SynthTask(
        num_classes=num_classes,
        image_size=IMAGE_SIZE,
        train=train,
        val=val,
        seed=seed,
    )


def downsample_tile(
    pixels: np.ndarray, box_px: tuple[int, int, int, int], flip: bool
) -> np.ndarray:
    """Area-average the crop region down to an 8x8x3 tile.

    Source rows/cols are partitioned into 8 bins (a bin keeps at least one
    line even when the crop is smaller than the tile), and each cell is the
    mean of its bin.  ``flip`` mirrors the tile left-right.
    """
    x0, y0, x1, y1 = box_px
    if not (0 <= x0 < x1 <= pixels.shape[1] and 0 <= y0 < y1 <= pixels.shape[0]):
        raise ParameterError(f"crop box {box_px} outside image {pixels.shape[1]}x{pixels.shape[0]}")
    w = x1 - x0
    h = y1 - y0
    tile = np.empty((TILE_SIZE, TILE_SIZE, 3), dtype=np.float64)
    region = pixels[y0:y1, x0:x1].astype(np.float64)
    for i in range(TILE_SIZE):
        r0 = (i * h) // TILE_SIZE
        r1 = max(r0 + 1, ((i + 1) * h) // TILE_SIZE)
        for j in range(TILE_SIZE):
            c0 = (j * w) // TILE_SIZE
            c1 = max(c0 + 1, ((j + 1) * w) // TILE_SIZE)
            tile[i, j] = region[r0:r1, c0:c1].reshape(-1, 3).mean(axis=0)
    if flip:
        tile = tile[:, ::-1, :].copy()
    return tile
