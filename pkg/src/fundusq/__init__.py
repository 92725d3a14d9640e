"""Continuous fundus image quality grading toolkit.

Deterministic preprocessing, three-stage model development (classification
pre-training, regression fine-tuning, pseudo-label semi-supervised
learning), evaluation statistics, Grad-CAM explainability and an
annotation/scoring service for the 1-10 half-step quality scale.
"""

from . import datasets, errors, explain, imaging, metrics, qmodel, scale, synth
from .imaging import ImageTensor, PreprocessConfig, load_image, preprocess, save_image
from .datasets import (
    BinaryLabel,
    DatasetManifest,
    FundusRecord,
    SplitSpec,
    TrinaryLabel,
    load_manifest,
    save_manifest,
    stratified_split,
)
from .qmodel import ModelConfig, build_model, load_checkpoint, predict_scores, save_checkpoint

__version__ = "0.1.0"
