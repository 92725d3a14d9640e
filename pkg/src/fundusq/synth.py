"""Synthetic fundus-like corpus for desk-scale development and testing.

Real clinical corpora are not redistributable, so tests and demos run on
generated rasters: a bright retinal disc with an optic-disc blob and
vessel strokes on a dark field, degraded by blur, dimming and sensor
noise. Ground-truth quality is a monotone function of the degradation
severity, snapped to the half-step grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .datasets import (
    BinaryLabel,
    DatasetManifest,
    FundusRecord,
    TrinaryLabel,
    snap_to_grid,
)
from .imaging import ImageTensor, save_image

__all__ = [
    "SynthConfig",
    "SynthCorpus",
    "severity_to_score",
    "trinary_from_score",
    "binary_from_score",
    "render_fundus",
    "degrade",
    "synth_corpus",
]

GOOD_MIN_SCORE = 7.5
USABLE_MIN_SCORE = 4.5
BINARY_THRESHOLD = 6.5


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for rendering and degrading synthetic fundus images."""

    image_size: int = 96
    max_blur_sigma: float = 4.0
    max_brightness_drop: float = 0.6
    max_noise_sd: float = 20.0
    n_vessels: int = 7
    # Keep sampled severities away from trinary class boundaries by this much.
    severity_margin: float = 0.0


@dataclass
class SynthCorpus:
    """A generated manifest plus the ground-truth severities behind it."""

    manifest: DatasetManifest
    severities: dict[str, float]
    config: SynthConfig


def severity_to_score(severity: float) -> float:
    """Monotone map from degradation severity in [0, 1] to the quality grid.

    Zero degradation scores 10.0, maximal degradation scores 1.0.
    """
    if not 0.0 <= severity <= 1.0:
        raise ValueError("severity must be in [0, 1]")
    return snap_to_grid(10.0 - 9.0 * severity)


def trinary_from_score(score: float) -> TrinaryLabel:
    if score >= GOOD_MIN_SCORE:
        return TrinaryLabel.GOOD
    if score >= USABLE_MIN_SCORE:
        return TrinaryLabel.USABLE
    return TrinaryLabel.REJECT


def binary_from_score(score: float, threshold: float = BINARY_THRESHOLD) -> BinaryLabel:
    return BinaryLabel.GOOD if score >= threshold else BinaryLabel.POOR


def render_fundus(rng: np.random.Generator, size: int, n_vessels: int = 7) -> np.ndarray:
    """Draw a clean fundus-like raster: disc, optic disc blob, vessels.

    Returns a float64 (size, size, 3) array in [0, 255].
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = size / 2 + rng.uniform(-0.03, 0.03) * size
    cx = size / 2 + rng.uniform(-0.03, 0.03) * size
    radius = 0.46 * size

    img = np.full((size, size, 3), 6.0)
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    disc = dist <= radius
    # Retinal background: orange-red, slightly darker toward the rim.
    shade = 1.0 - 0.35 * (dist / radius).clip(0, 1) ** 2
    base = np.array([200.0, 110.0, 55.0])
    for c in range(3):
        img[..., c] = np.where(disc, base[c] * shade, img[..., c])

    # Optic disc: small bright blob offset from center.
    angle = rng.uniform(0, 2 * math.pi)
    od_y = cy + 0.45 * radius * math.sin(angle)
    od_x = cx + 0.45 * radius * math.cos(angle)
    od_r = 0.16 * radius
    od = np.exp(-(((yy - od_y) ** 2 + (xx - od_x) ** 2) / (2 * od_r**2)))
    bright = np.array([55.0, 95.0, 60.0])
    for c in range(3):
        img[..., c] = np.where(disc, img[..., c] + bright[c] * od, img[..., c])

    # Vessels: dark polylines radiating from the optic disc.
    for _ in range(n_vessels):
        theta = rng.uniform(0, 2 * math.pi)
        py, px = od_y, od_x
        step = size / 40.0
        for _ in range(60):
            theta += rng.uniform(-0.45, 0.45)
            py += step * math.sin(theta)
            px += step * math.cos(theta)
            if not (0 <= py < size and 0 <= px < size):
                break
            if (py - cy) ** 2 + (px - cx) ** 2 > radius**2:
                break
            iy, ix = int(py), int(px)
            y0, y1 = max(iy - 1, 0), min(iy + 1, size - 1)
            x0, x1 = max(ix - 1, 0), min(ix + 1, size - 1)
            img[y0 : y1 + 1, x0 : x1 + 1] *= 0.45

    return img.clip(0.0, 255.0)


def degrade(
    clean: np.ndarray,
    severity: float,
    rng: np.random.Generator,
    config: SynthConfig,
) -> np.ndarray:
    """Apply blur, dimming and noise scaled by severity in [0, 1]."""
    out = clean.astype(np.float64)
    sigma = severity * config.max_blur_sigma
    if sigma > 0:
        out = gaussian_filter(out, sigma=(sigma, sigma, 0.0))
    out = out * (1.0 - severity * config.max_brightness_drop)
    sd = severity * config.max_noise_sd
    if sd > 0:
        out = out + rng.normal(0.0, sd, size=out.shape)
    return out.clip(0.0, 255.0)


def _sample_severity(rng: np.random.Generator, margin: float) -> float:
    """Uniform severity, optionally resampled away from trinary boundaries."""
    # Severities at which the snapped score crosses the trinary thresholds.
    boundaries = ((10.0 - GOOD_MIN_SCORE) / 9.0, (10.0 - USABLE_MIN_SCORE) / 9.0)
    for _ in range(1000):
        s = float(rng.uniform(0.0, 1.0))
        if margin <= 0 or all(abs(s - b) > margin for b in boundaries):
            return s
    raise RuntimeError("could not sample severity outside margins")


def synth_corpus(
    out_dir: str | Path,
    n: int,
    seed: int = 0,
    config: SynthConfig | None = None,
    label_mode: str = "quality",
    id_prefix: str = "synth",
) -> SynthCorpus:
    """Generate ``n`` degraded fundus rasters plus a manifest.

    ``label_mode`` selects what the records carry: "quality" (continuous
    score), "trinary", "binary", or "none" (unlabeled). Images are written
    as PNG under ``out_dir``/images. Deterministic under ``seed``.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if label_mode not in ("quality", "trinary", "binary", "none"):
        raise ValueError(f"unknown label_mode {label_mode!r}")
    config = config or SynthConfig()

    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    records: list[FundusRecord] = []
    severities: dict[str, float] = {}
    for i in range(n):
        severity = _sample_severity(rng, config.severity_margin)
        clean = render_fundus(rng, config.image_size, config.n_vessels)
        raster = degrade(clean, severity, rng, config)
        rid = f"{id_prefix}-{i:05d}"
        path = img_dir / f"{rid}.png"
        save_image(ImageTensor(raster.astype(np.float32), normalized=False), path)

        score = severity_to_score(severity)
        rec = FundusRecord(id=rid, image_uri=str(path), source="synthetic")
        if label_mode == "quality":
            rec.quality = score
        elif label_mode == "trinary":
            rec.trinary = trinary_from_score(score)
        elif label_mode == "binary":
            rec.binary = binary_from_score(score)
        records.append(rec)
        severities[rid] = severity

    manifest = DatasetManifest(records=records, source="synthetic")
    return SynthCorpus(manifest=manifest, severities=severities, config=config)
