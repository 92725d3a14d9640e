"""Quality network: convolutional backbone with a swappable head.

The classification head (3 classes) is used for pre-training, the
single-neuron regression head for quality scoring. Checkpoints carry the
model config, the preprocessing config and stage provenance together with
a content hash over the weights.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
import zipfile
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .errors import CorruptCheckpoint, ShapeMismatch, UnsupportedConfig, WrongHead
from .imaging import ImageTensor, PreprocessConfig

__all__ = [
    "ModelConfig",
    "ModelCheckpoint",
    "QualityModel",
    "build_model",
    "swap_head_regression",
    "predict_scores",
    "save_checkpoint",
    "load_checkpoint",
    "export_onnx",
]

BACKBONES = ("inception_v3_like", "small_cnn_test")
HEADS = ("classify3", "regress1")
INITS = ("random", "imagenet", "checkpoint")
STAGES = ("pretrain", "regression", "student")


@dataclass(frozen=True)
class ModelConfig:
    backbone: str = "inception_v3_like"
    input_size: int = 224
    head: str = "classify3"
    pretrained_init: str = "random"
    hidden_width: int = 256

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise UnsupportedConfig(f"unknown backbone {self.backbone!r}")
        if self.head not in HEADS:
            raise UnsupportedConfig(f"unknown head {self.head!r}")
        if self.pretrained_init not in INITS:
            raise UnsupportedConfig(f"unknown init {self.pretrained_init!r}")
        if self.input_size < 32:
            raise UnsupportedConfig("input_size must be >= 32")
        if self.backbone == "inception_v3_like" and self.input_size < 75:
            raise UnsupportedConfig("inception_v3_like needs input_size >= 75")
        if self.hidden_width < 1:
            raise UnsupportedConfig("hidden_width must be positive")

    def to_dict(self) -> dict:
        return {
            "backbone": self.backbone,
            "input_size": self.input_size,
            "head": self.head,
            "pretrained_init": self.pretrained_init,
            "hidden_width": self.hidden_width,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ModelCheckpoint:
    """Checkpoint metadata; the weights blob lives in the referenced file."""

    config: ModelConfig
    preprocess: PreprocessConfig
    stage: str
    weights_ref: str
    content_hash: str
    created: str
    metrics_snapshot: dict | None = None

    @property
    def model_version(self) -> str:
        return self.content_hash[:12]


class _SmallCnn(nn.Module):
    """Tiny three-conv backbone for fast tests and toy-scale training."""

    feature_dim = 64

    def __init__(self):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.flatten(self.pool(self.features(x)), 1)


class _InceptionBackbone(nn.Module):
    """Standard Inception-V3 topology with the classifier removed.

    The native global average pooling makes the published architecture
    accept the configured square input size unchanged.
    """

    feature_dim = 2048

    def __init__(self, imagenet: bool = False):
        super().__init__()
        from torchvision.models import inception_v3

        if imagenet:
            try:
                from torchvision.models import Inception_V3_Weights

                net = inception_v3(
                    weights=Inception_V3_Weights.IMAGENET1K_V1, aux_logits=True
                )
                net.aux_logits = False
                net.AuxLogits = None
            except Exception as e:  # weights not downloadable in this env
                raise UnsupportedConfig(
                    f"imagenet initialization unavailable: {e}"
                ) from e
        else:
            net = inception_v3(weights=None, aux_logits=False, init_weights=True)
        net.fc = nn.Identity()
        net.transform_input = False
        self.net = net

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.net(x)
        # Training-mode Inception3 may return an (logits, aux) named tuple.
        if isinstance(out, tuple):
            out = out[0]
        return out


def _build_head(config: ModelConfig, feature_dim: int) -> nn.Module:
    if config.head == "classify3":
        return nn.Linear(feature_dim, 3)
    return nn.Sequential(
        nn.Linear(feature_dim, config.hidden_width),
        nn.ReLU(inplace=True),
        nn.Linear(config.hidden_width, 1),
    )


class QualityModel(nn.Module):
    """Backbone + head pair; the unit that training and inference handle."""

    def __init__(self, config: ModelConfig, backbone: nn.Module, head: nn.Module):
        super().__init__()
        self.config = config
        self.backbone = backbone
        self.head = head

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.backbone(x))

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.backbone(x)

    @property
    def feature_dim(self) -> int:
        return self.backbone.feature_dim

    def default_cam_layer(self) -> str:
        """Name of the last convolutional feature map, for Grad-CAM."""
        last = None
        for name, module in self.named_modules():
            if isinstance(module, nn.Conv2d):
                last = name
        if last is None:
            raise UnsupportedConfig("model has no convolutional layers")
        return last


def build_model(config: ModelConfig, seed: int = 0) -> QualityModel:
    """Construct a model; random initialization is deterministic under seed."""
    torch.manual_seed(seed)
    if config.backbone == "small_cnn_test":
        if config.pretrained_init == "imagenet":
            raise UnsupportedConfig("small_cnn_test has no imagenet weights")
        backbone: nn.Module = _SmallCnn()
    else:
        backbone = _InceptionBackbone(imagenet=config.pretrained_init == "imagenet")
    head = _build_head(config, backbone.feature_dim)
    return QualityModel(config, backbone, head)


def swap_head_regression(model: QualityModel, seed: int = 0) -> QualityModel:
    """Replace the classifier with a fresh regression head, keeping the backbone.

    Raises:
        WrongHead: the model does not currently carry the classify3 head.
    """
    if model.config.head != "classify3":
        raise WrongHead(f"expected classify3 head, found {model.config.head!r}")
    new_config = replace(model.config, head="regress1")
    torch.manual_seed(seed)
    model.head = _build_head(new_config, model.feature_dim)
    model.config = new_config
    return model


def batch_to_tensor(images: Sequence[ImageTensor], input_size: int) -> torch.Tensor:
    """Stack normalized ImageTensors into a (B, 3, S, S) float tensor."""
    arrays = []
    for img in images:
        if not img.normalized:
            raise ShapeMismatch("model inputs must be preprocessed (normalized)")
        if img.height != input_size or img.width != input_size:
            raise ShapeMismatch(
                f"expected {input_size}x{input_size} input, got {img.height}x{img.width}"
            )
        arrays.append(np.transpose(img.values, (2, 0, 1)))
    return torch.from_numpy(np.stack(arrays).astype(np.float32))


def predict_scores(model: QualityModel, images: Sequence[ImageTensor]) -> list[float]:
    """Run the regression head over a batch; one finite real per image."""
    if model.config.head != "regress1":
        raise WrongHead("predict_scores needs a regress1 head")
    batch = batch_to_tensor(images, model.config.input_size)
    model.eval()
    with torch.no_grad():
        out = model(batch)
    return [float(v) for v in out.reshape(-1)]


# --- checkpoint container ----------------------------------------------------

_MANIFEST_NAME = "manifest.json"
_WEIGHTS_NAME = "weights.pt"


def save_checkpoint(
    model: QualityModel,
    path: str | Path,
    *,
    stage: str,
    preprocess: PreprocessConfig,
    metrics_snapshot: dict | None = None,
) -> ModelCheckpoint:
    """Write model weights plus metadata atomically and return the metadata."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    if preprocess.target_size != model.config.input_size:
        raise ValueError(
            f"preprocess target_size {preprocess.target_size} does not match "
            f"model input_size {model.config.input_size}"
        )
    path = Path(path)
    buf = io.BytesIO()
    torch.save(model.state_dict(), buf)
    weights_bytes = buf.getvalue()
    content_hash = hashlib.sha256(weights_bytes).hexdigest()
    manifest = {
        "config": model.config.to_dict(),
        "preprocess": preprocess.to_dict(),
        "stage": stage,
        "content_hash": content_hash,
        "created": datetime.now(timezone.utc).isoformat(),
        "metrics_snapshot": metrics_snapshot,
    }
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".tmp")
    os.close(fd)
    try:
        with zipfile.ZipFile(tmp, "w") as zf:
            zf.writestr(_MANIFEST_NAME, json.dumps(manifest, indent=2))
            zf.writestr(_WEIGHTS_NAME, weights_bytes)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return ModelCheckpoint(
        config=model.config,
        preprocess=preprocess,
        stage=stage,
        weights_ref=str(path),
        content_hash=content_hash,
        created=manifest["created"],
        metrics_snapshot=metrics_snapshot,
    )


def load_checkpoint(path: str | Path) -> tuple[QualityModel, ModelCheckpoint]:
    """Load a checkpoint; behavior of the model round-trips bit-exactly.

    Raises:
        CorruptCheckpoint: the file is unreadable or fails hash verification.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read(_MANIFEST_NAME))
            weights_bytes = zf.read(_WEIGHTS_NAME)
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, OSError) as e:
        raise CorruptCheckpoint(f"{path}: unreadable checkpoint: {e}") from e
    digest = hashlib.sha256(weights_bytes).hexdigest()
    if digest != manifest.get("content_hash"):
        raise CorruptCheckpoint(f"{path}: content hash mismatch")
    config = ModelConfig.from_dict(manifest["config"])
    preprocess = PreprocessConfig.from_dict(manifest["preprocess"])
    model = build_model(config)
    state = torch.load(io.BytesIO(weights_bytes), weights_only=True)
    model.load_state_dict(state)
    meta = ModelCheckpoint(
        config=config,
        preprocess=preprocess,
        stage=manifest["stage"],
        weights_ref=str(path),
        content_hash=digest,
        created=manifest.get("created", ""),
        metrics_snapshot=manifest.get("metrics_snapshot"),
    )
    return model, meta


def export_onnx(model: QualityModel, path: str | Path) -> None:
    """Export to ONNX for the serving path (requires the onnx package)."""
    model.eval()
    dummy = torch.zeros(1, 3, model.config.input_size, model.config.input_size)
    torch.onnx.export(
        model,
        (dummy,),
        str(path),
        input_names=["image"],
        output_names=["output"],
        dynamo=False,
    )
