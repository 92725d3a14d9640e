"""Grad-CAM for the regression output, plus heatmap overlays.

Channel weights are spatially averaged gradients of the scalar score with
respect to a convolutional feature map; the rectified weighted channel sum
is upsampled to the input resolution and min-max normalized.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DimensionMismatch, NonScalarOutput, UnknownLayer
from .imaging import ImageTensor
from .qmodel import QualityModel

__all__ = ["CamHeatmap", "grad_cam", "overlay", "activation_gradients", "save_heatmap"]

# Perceptually-uniform colormap, pinned by a golden test.
CAM_COLORMAP = "inferno"


@dataclass
class CamHeatmap:
    """Normalized attention map over the input image plane."""

    values: np.ndarray  # (H, W) in [0, 1]
    source_layer: str
    image_ref: str = ""


def _find_layer(model: nn.Module, layer: str | None) -> tuple[str, nn.Module]:
    if layer is None:
        if isinstance(model, QualityModel):
            layer = model.default_cam_layer()
        else:
            last = None
            for name, module in model.named_modules():
                if isinstance(module, nn.Conv2d):
                    last = name
            if last is None:
                raise UnknownLayer("model has no convolutional layers")
            layer = last
    modules = dict(model.named_modules())
    if layer not in modules:
        raise UnknownLayer(f"no layer named {layer!r}")
    return layer, modules[layer]


def activation_gradients(
    model: nn.Module, image: ImageTensor, layer: str | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Feature maps of a layer and gradients of the scalar output w.r.t. them.

    Returns (activations, gradients), both shaped (C, h, w). This is the
    quantity Grad-CAM averages; exposed so gradient correctness can be
    checked against finite differences.

    Raises:
        UnknownLayer: no module with that name.
        NonScalarOutput: the model does not produce a single scalar.
    """
    if isinstance(model, QualityModel) and model.config.head != "regress1":
        raise NonScalarOutput("grad_cam needs the single-output regression head")
    if not image.normalized:
        raise ValueError("grad_cam expects a preprocessed (normalized) image")
    layer_name, module = _find_layer(model, layer)

    captured: dict[str, torch.Tensor] = {}

    def forward_hook(_module, _inputs, output):
        captured["act"] = output
        output.register_hook(lambda grad: captured.__setitem__("grad", grad))

    handle = module.register_forward_hook(forward_hook)
    try:
        dtype = next(model.parameters()).dtype
        x = torch.from_numpy(np.transpose(image.values, (2, 0, 1))).to(dtype).unsqueeze(0)
        model.eval()
        model.zero_grad(set_to_none=True)
        out = model(x)
        if out.numel() != 1:
            raise NonScalarOutput(f"expected scalar output, got shape {tuple(out.shape)}")
        out.reshape(()).backward()
    finally:
        handle.remove()

    act = captured["act"].detach()[0]
    grad = captured["grad"].detach()[0]
    return act.numpy(), grad.numpy()


def grad_cam(
    model: nn.Module,
    image: ImageTensor,
    layer: str | None = None,
    *,
    invert: bool = False,
    image_ref: str = "",
) -> CamHeatmap:
    """Gradient-weighted class activation map for a scalar-output model.

    ``invert`` flips the gradient sign to highlight quality-reducing
    regions instead of quality-supporting ones. Output values span exactly
    [0, 1] unless the raw map is constant, in which case it is all zeros.
    """
    layer_name, _ = _find_layer(model, layer)
    act, grad = activation_gradients(model, image, layer_name)
    if invert:
        grad = -grad
    weights = grad.mean(axis=(1, 2))  # (C,)
    raw = np.maximum((weights[:, None, None] * act).sum(axis=0), 0.0)

    t = torch.from_numpy(raw.astype(np.float32))[None, None]
    up = F.interpolate(
        t, size=(image.height, image.width), mode="bilinear", align_corners=False
    )[0, 0].numpy()

    lo, hi = float(up.min()), float(up.max())
    if hi > lo:
        values = (up - lo) / (hi - lo)
    else:
        values = np.zeros_like(up)
    return CamHeatmap(
        values=values.astype(np.float32), source_layer=layer_name, image_ref=image_ref
    )


def overlay(heatmap: CamHeatmap, image: ImageTensor, alpha: float) -> ImageTensor:
    """Blend a color-mapped heatmap over the image; alpha 0 returns the image.

    Raises:
        DimensionMismatch: heatmap and image spatial sizes differ.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    if heatmap.values.shape != (image.height, image.width):
        raise DimensionMismatch(
            f"heatmap {heatmap.values.shape} vs image {(image.height, image.width)}"
        )
    cmap = matplotlib.colormaps[CAM_COLORMAP]
    colored = cmap(heatmap.values)[..., :3].astype(np.float32)  # [0, 1]
    if not image.normalized:
        colored = colored * np.float32(255.0)
    blended = (
        np.float32(1.0 - alpha) * image.values.astype(np.float32)
        + np.float32(alpha) * colored
    )
    return ImageTensor(blended, normalized=image.normalized)


def save_heatmap(heatmap: CamHeatmap, path: str | Path) -> None:
    """Write the raw float map as a portable .npy array."""
    np.save(str(path), heatmap.values)
