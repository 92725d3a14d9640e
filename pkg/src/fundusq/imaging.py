"""Deterministic fundus image preprocessing.

Raw photographs are cropped to drop their black borders, padded back to a
square, resized with bilinear interpolation and normalized to [0, 1].
No augmentation is ever applied: the same input and config always produce
bit-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import AllBlackImage

__all__ = [
    "ImageTensor",
    "PreprocessConfig",
    "crop_black_borders",
    "square_pad",
    "resize",
    "preprocess",
    "load_image",
    "save_image",
]


@dataclass(frozen=True)
class ImageTensor:
    """An RGB raster with an explicit normalization state.

    ``values`` has shape (height, width, 3). Raw images hold intensities in
    [0, 255]; normalized images hold [0, 1].
    """

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        v = self.values
        if v.ndim != 3 or v.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError("image must be non-empty")
        hi = 1.0 if self.normalized else 255.0
        if float(v.min()) < 0.0 or float(v.max()) > hi:
            raise ValueError(
                f"values outside [0, {hi:g}] for normalized={self.normalized}"
            )

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return 3


@dataclass(frozen=True)
class PreprocessConfig:
    """Parameters of the deterministic preprocessing chain.

    Serialized into checkpoints so inference replays training-time
    preprocessing exactly.
    """

    target_size: int = 224
    border_threshold: int = 10
    interpolation: str = "bilinear"
    squaring: str = "pad_black"

    def __post_init__(self):
        if self.target_size < 32:
            raise ValueError("target_size must be >= 32")
        if not 0 <= self.border_threshold <= 255:
            raise ValueError("border_threshold must be in [0, 255]")
        if self.interpolation != "bilinear":
            raise ValueError(f"unsupported interpolation {self.interpolation!r}")
        if self.squaring != "pad_black":
            raise ValueError(f"unsupported squaring {self.squaring!r}")

    def to_dict(self) -> dict:
        return {
            "target_size": self.target_size,
            "border_threshold": self.border_threshold,
            "interpolation": self.interpolation,
            "squaring": self.squaring,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessConfig":
        return cls(**d)


def crop_black_borders(image: ImageTensor, threshold: int = 10) -> ImageTensor:
    """Strip outer rows/columns that are dark everywhere.

    A row or column is removable when the per-pixel maximum over channels is
    <= ``threshold`` for every pixel in it. Only the outer frame is removed;
    dark rows in the interior are kept.

    Raises:
        AllBlackImage: no row or column contains a pixel above the threshold.
    """
    if image.normalized:
        raise ValueError("crop_black_borders expects a raw image")
    if not 0 <= threshold <= 255:
        raise ValueError("threshold must be in [0, 255]")

    bright = image.values.max(axis=2) > threshold
    rows = np.flatnonzero(bright.any(axis=1))
    cols = np.flatnonzero(bright.any(axis=0))
    if rows.size == 0 or cols.size == 0:
        raise AllBlackImage(
            f"no pixel exceeds threshold {threshold}; image has no content"
        )
    r0, r1 = rows[0], rows[-1]
    c0, c1 = cols[0], cols[-1]
    return ImageTensor(image.values[r0 : r1 + 1, c0 : c1 + 1].copy(), normalized=False)


def square_pad(image: ImageTensor) -> ImageTensor:
    """Zero-pad the shorter axis so the image becomes square, content centered."""
    if image.normalized:
        raise ValueError("square_pad expects a raw image")
    h, w = image.height, image.width
    if h == w:
        return image
    side = max(h, w)
    out = np.zeros((side, side, 3), dtype=image.values.dtype)
    top = (side - h) // 2
    left = (side - w) // 2
    out[top : top + h, left : left + w] = image.values
    return ImageTensor(out, normalized=False)


def _resize_axis(values: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    """Bilinear resampling along one axis with half-pixel-centered sampling."""
    in_len = values.shape[axis]
    scale = in_len / out_len
    coords = (np.arange(out_len, dtype=np.float64) + 0.5) * scale - 0.5
    coords = np.clip(coords, 0.0, in_len - 1)
    lo = np.floor(coords).astype(np.intp)
    hi = np.minimum(lo + 1, in_len - 1)
    frac = coords - lo
    shape = [1] * values.ndim
    shape[axis] = out_len
    frac = frac.reshape(shape)
    return np.take(values, lo, axis=axis) * (1.0 - frac) + np.take(
        values, hi, axis=axis
    ) * frac


def resize(image: ImageTensor, size: int) -> ImageTensor:
    """Bilinear resize to ``size`` x ``size``.

    Outputs are convex combinations of input pixels, so the value range of
    the input is never exceeded.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    v = image.values.astype(np.float64)
    v = _resize_axis(v, size, axis=0)
    v = _resize_axis(v, size, axis=1)
    return ImageTensor(v.astype(np.float32), normalized=image.normalized)


def preprocess(image: ImageTensor, config: PreprocessConfig | None = None) -> ImageTensor:
    """Full deterministic chain: crop borders, square-pad, resize, scale to [0, 1].

    Raises:
        AllBlackImage: propagated from border cropping.
    """
    config = config or PreprocessConfig()
    if image.normalized:
        raise ValueError("preprocess expects a raw image")
    out = crop_black_borders(image, config.border_threshold)
    out = square_pad(out)
    out = resize(out, config.target_size)
    values = (out.values.astype(np.float64) / 255.0).astype(np.float32)
    return ImageTensor(values, normalized=True)


def load_image(path: str | Path) -> ImageTensor:
    """Decode a PNG/JPEG file into a raw ImageTensor."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return ImageTensor(arr, normalized=False)


def save_image(image: ImageTensor, path: str | Path) -> None:
    """Write an ImageTensor as an 8-bit PNG/JPEG (by file extension)."""
    v = image.values
    if image.normalized:
        v = v * 255.0
    arr = np.clip(np.rint(v), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)
