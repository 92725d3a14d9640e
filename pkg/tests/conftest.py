import numpy as np
import pytest
import torch

from fundusq.datasets import SplitSpec, stratified_split
from fundusq.imaging import ImageTensor, PreprocessConfig
from fundusq.qmodel import ModelConfig, build_model, save_checkpoint
from fundusq.synth import SynthConfig, synth_corpus


def random_raster(rng: np.random.Generator, h: int, w: int) -> ImageTensor:
    """Raw random RGB image with a guaranteed bright interior pixel."""
    arr = rng.uniform(0.0, 255.0, size=(h, w, 3)).astype(np.float32)
    arr[h // 2, w // 2] = 255.0
    return ImageTensor(arr, normalized=False)


def fundus_like_raster(
    rng: np.random.Generator, h: int, w: int, border: int = 0
) -> ImageTensor:
    """Bright disc on a dark field, optionally framed by a black border."""
    arr = np.zeros((h, w, 3), dtype=np.float32)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    cy, cx = h / 2, w / 2
    r = min(h, w) / 2 - border - 1
    disc = (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2
    for c, base in enumerate((190.0, 110.0, 60.0)):
        arr[..., c] = np.where(disc, base + rng.uniform(-30, 30, size=(h, w)), 0.0)
    return ImageTensor(arr.clip(0, 255), normalized=False)


@pytest.fixture(scope="session")
def quality_corpus(tmp_path_factory):
    """300 quality-labeled synthetic images at 96px with a 70/15/15 split."""
    root = tmp_path_factory.mktemp("quality_corpus")
    corpus = synth_corpus(
        root, 300, seed=11, config=SynthConfig(image_size=96), label_mode="quality"
    )
    manifest = stratified_split(
        corpus.manifest, SplitSpec(fractions=(0.7, 0.15, 0.15), seed=11)
    )
    return corpus, manifest


@pytest.fixture(scope="session")
def small_regression_checkpoint(tmp_path_factory):
    """Untrained regress1 checkpoint at 64px, for plumbing tests."""
    path = tmp_path_factory.mktemp("ckpt") / "regression-0.ckpt"
    model = build_model(
        ModelConfig(backbone="small_cnn_test", input_size=64, head="regress1"), seed=3
    )
    meta = save_checkpoint(
        model, path, stage="regression", preprocess=PreprocessConfig(target_size=64)
    )
    return path, meta


@pytest.fixture(scope="session")
def constant_score_checkpoint(tmp_path_factory):
    """Checkpoint whose model outputs exactly 6.5 for any input."""
    path = tmp_path_factory.mktemp("ckpt65") / "regression-const.ckpt"
    model = build_model(
        ModelConfig(backbone="small_cnn_test", input_size=64, head="regress1"), seed=0
    )
    with torch.no_grad():
        final = model.head[-1]
        final.weight.zero_()
        final.bias.fill_(6.5)
    save_checkpoint(
        model, path, stage="regression", preprocess=PreprocessConfig(target_size=64)
    )
    return path
