"""Three-stage model development pipeline.

Stage I pre-trains the classification head on trinary quality labels with
categorical cross-entropy. Stage II swaps in the regression head and
fine-tunes with a per-batch RMSE loss. Stage III generates pseudo-labels
for unlabeled data with the stage-II teacher and trains a student on the
union. The held-out test split never contributes a gradient in any stage;
data loaders keep an audit log so tests can assert this.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader, Dataset

from .datasets import DatasetManifest, FundusRecord, TrinaryLabel, merge_pseudo
from .errors import EmptySplit, MissingLabels, ValidationError, WrongStage
from .imaging import PreprocessConfig, load_image, preprocess
from .qmodel import (
    ModelCheckpoint,
    ModelConfig,
    QualityModel,
    build_model,
    load_checkpoint,
    predict_scores,
    save_checkpoint,
    swap_head_regression,
)

__all__ = [
    "TrainConfig",
    "StageReport",
    "pretrain_classification",
    "train_regression",
    "generate_pseudo_labels",
    "train_student",
]

TRINARY_TO_INDEX = {
    TrinaryLabel.GOOD: 0,
    TrinaryLabel.USABLE: 1,
    TrinaryLabel.REJECT: 2,
}

RMSE_EPS = 1e-8


@dataclass
class TrainConfig:
    """Optimizer, loop and stage options shared by all three stages."""

    loss: str = "rmse"
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    freeze_backbone: bool = False
    student_init: str = "teacher"  # or "random"
    # When set, stage III re-draws train/validation over labeled + pseudo
    # records (published split arithmetic). None keeps labeled splits and
    # sends pseudo records to train only.
    pseudo_validation_fraction: float | None = None

    def __post_init__(self):
        if self.loss not in ("categorical_cross_entropy", "rmse"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.student_init not in ("teacher", "random"):
            raise ValueError(f"unknown student_init {self.student_init!r}")


@dataclass
class StageReport:
    """Outcome of one training stage."""

    stage: str
    epochs_run: int
    best_val_objective: float
    checkpoint_ref: str
    wall_time_s: float
    history: list[dict] = field(default_factory=list)
    train_ids: set[str] = field(default_factory=set)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "epochs_run": self.epochs_run,
            "best_val_objective": self.best_val_objective,
            "checkpoint_ref": self.checkpoint_ref,
            "wall_time_s": self.wall_time_s,
            "n_train_records": len(self.train_ids),
            "history": self.history,
        }


class _ManifestDataset(Dataset):
    """Preprocessed images and targets for one split of a manifest.

    Images are decoded and preprocessed once up front; the sizes this
    package trains at fit comfortably in memory.
    """

    def __init__(
        self,
        records: list[FundusRecord],
        preprocess_config: PreprocessConfig,
        label_kind: str,  # "trinary" or "quality"
    ):
        self.ids = [r.id for r in records]
        self.label_kind = label_kind
        images = []
        targets = []
        for r in records:
            img = preprocess(load_image(r.image_uri), preprocess_config)
            images.append(np.transpose(img.values, (2, 0, 1)))
            if label_kind == "trinary":
                targets.append(TRINARY_TO_INDEX[r.trinary])
            else:
                targets.append(r.quality)
        self.images = torch.from_numpy(np.stack(images).astype(np.float32))
        if label_kind == "trinary":
            self.targets = torch.tensor(targets, dtype=torch.long)
        else:
            self.targets = torch.tensor(targets, dtype=torch.float32)

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, idx: int):
        return self.images[idx], self.targets[idx], idx


def _split_records(
    manifest: DatasetManifest, split: str, label_kind: str
) -> list[FundusRecord]:
    records = manifest.split_records(split)
    if not records:
        raise EmptySplit(f"split {split!r} has no records")
    for r in records:
        if label_kind == "trinary" and r.trinary is None:
            raise MissingLabels(f"record {r.id!r} has no trinary label")
        if label_kind == "quality" and r.quality is None:
            raise MissingLabels(f"record {r.id!r} has no quality score")
    return records


def _rmse_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return torch.sqrt(F.mse_loss(pred, target) + RMSE_EPS)


def _evaluate(model: QualityModel, ds: _ManifestDataset, batch_size: int) -> float:
    """Validation objective: accuracy for trinary, MAE for quality."""
    model.eval()
    loader = DataLoader(ds, batch_size=batch_size, shuffle=False)
    hits = 0
    abs_err = 0.0
    with torch.no_grad():
        for x, y, _ in loader:
            out = model(x)
            if ds.label_kind == "trinary":
                hits += int((out.argmax(dim=1) == y).sum())
            else:
                abs_err += float((out.reshape(-1) - y).abs().sum())
    if ds.label_kind == "trinary":
        return hits / len(ds)
    return abs_err / len(ds)


def _fit(
    model: QualityModel,
    train_ds: _ManifestDataset,
    val_ds: _ManifestDataset,
    config: TrainConfig,
    stage: str,
    workdir: Path,
) -> tuple[QualityModel, StageReport]:
    """Shared loop: Adam, early stopping, best-epoch checkpointing, CSV log."""
    torch.manual_seed(config.seed)
    maximize = val_ds.label_kind == "trinary"
    params = (
        model.head.parameters() if config.freeze_backbone else model.parameters()
    )
    if config.freeze_backbone:
        for p in model.backbone.parameters():
            p.requires_grad_(False)
    optimizer = torch.optim.Adam(
        params,
        lr=config.learning_rate,
        betas=(config.beta1, config.beta2),
        eps=config.epsilon,
    )
    loader = DataLoader(
        train_ds,
        batch_size=config.batch_size,
        shuffle=True,
        generator=torch.Generator().manual_seed(config.seed),
    )

    best_obj = -np.inf if maximize else np.inf
    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    since_best = 0
    history: list[dict] = []
    train_ids: set[str] = set()
    started = time.monotonic()

    for epoch in range(config.max_epochs):
        model.train()
        total_loss = 0.0
        n_batches = 0
        for x, y, idx in loader:
            optimizer.zero_grad()
            out = model(x)
            if train_ds.label_kind == "trinary":
                loss = F.cross_entropy(out, y)
            else:
                loss = _rmse_loss(out.reshape(-1), y)
            loss.backward()
            optimizer.step()
            total_loss += float(loss.detach())
            n_batches += 1
            train_ids.update(train_ds.ids[int(i)] for i in idx)
        train_loss = total_loss / max(n_batches, 1)
        val_obj = _evaluate(model, val_ds, config.batch_size)
        history.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_objective": val_obj,
                "wall_time": time.monotonic() - started,
            }
        )
        improved = val_obj > best_obj if maximize else val_obj < best_obj
        if improved:
            best_obj = val_obj
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
            since_best = 0
        else:
            since_best += 1
            if since_best > config.patience:
                break

    model.load_state_dict(best_state)
    workdir.mkdir(parents=True, exist_ok=True)
    log_path = workdir / f"{stage}-log.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["epoch", "train_loss", "val_objective", "wall_time"]
        )
        writer.writeheader()
        writer.writerows(history)

    report = StageReport(
        stage=stage,
        epochs_run=len(history),
        best_val_objective=float(best_obj),
        checkpoint_ref="",  # filled by the stage wrapper after saving
        wall_time_s=time.monotonic() - started,
        history=history,
        train_ids=train_ids,
    )
    return model, report


def pretrain_classification(
    config: TrainConfig,
    manifest: DatasetManifest,
    *,
    model_config: ModelConfig,
    preprocess_config: PreprocessConfig,
    workdir: str | Path,
) -> tuple[ModelCheckpoint, StageReport]:
    """Stage I: train the 3-class head with categorical cross-entropy.

    Selects the epoch with best validation accuracy.
    """
    if config.loss != "categorical_cross_entropy":
        raise ValueError("pretraining uses loss='categorical_cross_entropy'")
    if model_config.head != "classify3":
        raise ValueError("pretraining needs a classify3 head")
    if model_config.input_size != preprocess_config.target_size:
        raise ValueError(
            "model input_size must equal preprocess target_size"
        )
    workdir = Path(workdir)
    train_recs = _split_records(manifest, "train", "trinary")
    val_recs = _split_records(manifest, "validation", "trinary")
    train_ds = _ManifestDataset(train_recs, preprocess_config, "trinary")
    val_ds = _ManifestDataset(val_recs, preprocess_config, "trinary")

    model = build_model(model_config, seed=config.seed)
    model, report = _fit(model, train_ds, val_ds, config, "pretrain", workdir)
    ckpt_path = workdir / f"pretrain-{config.seed}.ckpt"
    meta = save_checkpoint(
        model,
        ckpt_path,
        stage="pretrain",
        preprocess=preprocess_config,
        metrics_snapshot={"val_accuracy": report.best_val_objective},
    )
    report.checkpoint_ref = str(ckpt_path)
    return meta, report


def _resolve_init(
    init: ModelCheckpoint | ModelConfig | str | Path,
    allowed_stages: tuple[str, ...],
) -> tuple[QualityModel, ModelCheckpoint | None]:
    """Load a checkpoint init or build a fresh model for ablations."""
    if isinstance(init, ModelConfig):
        return build_model(init), None
    if isinstance(init, (str, Path)):
        model, meta = load_checkpoint(init)
    else:
        model, meta = load_checkpoint(init.weights_ref)
    if meta.stage not in allowed_stages:
        raise WrongStage(
            f"init checkpoint has stage {meta.stage!r}, expected one of {allowed_stages}"
        )
    return model, meta


def train_regression(
    init: ModelCheckpoint | ModelConfig | str | Path,
    config: TrainConfig,
    manifest: DatasetManifest,
    *,
    workdir: str | Path,
    preprocess_config: PreprocessConfig | None = None,
) -> tuple[ModelCheckpoint, StageReport]:
    """Stage II: swap to the regression head and fine-tune with RMSE loss.

    ``init`` is a stage-I checkpoint, or a ModelConfig for random/imagenet
    ablations. Selects the epoch with best validation MAE.

    Raises:
        WrongStage: init checkpoint is not from pre-training.
    """
    if config.loss != "rmse":
        raise ValueError("regression training uses loss='rmse'")
    workdir = Path(workdir)
    model, meta = _resolve_init(init, allowed_stages=("pretrain",))
    if meta is not None:
        preprocess_config = meta.preprocess
    if preprocess_config is None:
        raise ValueError("preprocess_config required when initializing from config")
    if model.config.input_size != preprocess_config.target_size:
        raise ValueError("model input_size must equal preprocess target_size")
    if model.config.head == "classify3":
        swap_head_regression(model, seed=config.seed)

    train_recs = _split_records(manifest, "train", "quality")
    val_recs = _split_records(manifest, "validation", "quality")
    train_ds = _ManifestDataset(train_recs, preprocess_config, "quality")
    val_ds = _ManifestDataset(val_recs, preprocess_config, "quality")

    model, report = _fit(model, train_ds, val_ds, config, "regression", workdir)
    ckpt_path = workdir / f"regression-{config.seed}.ckpt"
    ckpt = save_checkpoint(
        model,
        ckpt_path,
        stage="regression",
        preprocess=preprocess_config,
        metrics_snapshot={"val_mae": report.best_val_objective},
    )
    report.checkpoint_ref = str(ckpt_path)
    return ckpt, report


def generate_pseudo_labels(
    teacher: ModelCheckpoint | str | Path,
    unlabeled: DatasetManifest,
    *,
    batch_size: int = 64,
) -> DatasetManifest:
    """Have the stage-II teacher score unlabeled records.

    Every record gains quality = clamp(prediction, 1, 10) and pseudo=true;
    the output has exactly one record per input record.

    Raises:
        WrongStage: teacher checkpoint is not from the regression stage.
        ValidationError: a record already carries a quality score.
    """
    model, meta = _resolve_init(teacher, allowed_stages=("regression",))
    for r in unlabeled.records:
        if r.quality is not None:
            raise ValidationError(
                f"record {r.id!r} already has a quality score", r.id
            )
    out_records: list[FundusRecord] = []
    records = unlabeled.records
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        images = [
            preprocess(load_image(r.image_uri), meta.preprocess) for r in chunk
        ]
        scores = predict_scores(model, images)
        for r, score in zip(chunk, scores):
            out_records.append(
                replace(r, quality=float(min(max(score, 1.0), 10.0)), pseudo=True)
            )
    return DatasetManifest(records=out_records, source=unlabeled.source)


def train_student(
    teacher: ModelCheckpoint | str | Path,
    labeled: DatasetManifest,
    pseudo: DatasetManifest,
    config: TrainConfig,
    *,
    workdir: str | Path,
) -> tuple[ModelCheckpoint, StageReport]:
    """Stage III: train a student on labeled plus pseudo-labeled records.

    The student starts from the teacher's weights by default. The labeled
    test split is untouched; pseudo records go to train (or into a re-drawn
    train/validation pool when config.pseudo_validation_fraction is set).

    Raises:
        WrongStage: teacher checkpoint is not from the regression stage.
        IdCollision: labeled and pseudo manifests share ids.
    """
    if config.loss != "rmse":
        raise ValueError("student training uses loss='rmse'")
    workdir = Path(workdir)
    teacher_model, teacher_meta = _resolve_init(teacher, allowed_stages=("regression",))
    merged = merge_pseudo(
        labeled,
        pseudo,
        validation_fraction=config.pseudo_validation_fraction,
        seed=config.seed,
    )

    if config.student_init == "teacher":
        model = teacher_model
    else:
        model = build_model(
            replace(teacher_model.config, head="regress1"), seed=config.seed
        )

    train_recs = _split_records(merged, "train", "quality")
    val_recs = _split_records(merged, "validation", "quality")
    train_ds = _ManifestDataset(train_recs, teacher_meta.preprocess, "quality")
    val_ds = _ManifestDataset(val_recs, teacher_meta.preprocess, "quality")

    model, report = _fit(model, train_ds, val_ds, config, "student", workdir)
    ckpt_path = workdir / f"student-{config.seed}.ckpt"
    ckpt = save_checkpoint(
        model,
        ckpt_path,
        stage="student",
        preprocess=teacher_meta.preprocess,
        metrics_snapshot={"val_mae": report.best_val_objective},
    )
    report.checkpoint_ref = str(ckpt_path)
    return ckpt, report
