"""The full three-stage development pipeline at toy scale.

Stage I pre-trains a 3-class quality classifier (categorical
cross-entropy), stage II swaps in the single-neuron regression head and
fine-tunes with RMSE loss, stage III has the stage-II teacher pseudo-label
an unlabeled pool and trains a student on the union. A few minutes on CPU.
"""

from pathlib import Path

from fundusq.datasets import SplitSpec, stratified_split
from fundusq.imaging import PreprocessConfig, load_image, preprocess
from fundusq.metrics import regression_report
from fundusq.qmodel import ModelConfig, load_checkpoint, predict_scores
from fundusq.synth import SynthConfig, synth_corpus
from fundusq.training import (
    TrainConfig,
    generate_pseudo_labels,
    pretrain_classification,
    train_regression,
    train_student,
)

root = Path("demo-output/training")
pc = PreprocessConfig(target_size=64)

print("generating corpora ...")
trinary = synth_corpus(
    root / "tri", 300, seed=1,
    config=SynthConfig(image_size=96, severity_margin=0.1),
    label_mode="trinary", id_prefix="tri",
).manifest
trinary = stratified_split(
    trinary, SplitSpec(fractions=(0.8, 0.1, 0.1), stratify=False, seed=1)
)
quality = synth_corpus(
    root / "q", 600, seed=2, config=SynthConfig(image_size=96),
    label_mode="quality", id_prefix="q",
).manifest
quality = stratified_split(quality, SplitSpec(fractions=(0.8, 0.1, 0.1), seed=2))
unlabeled = synth_corpus(
    root / "u", 300, seed=3, config=SynthConfig(image_size=96),
    label_mode="none", id_prefix="u",
).manifest


def test_mae(ckpt):
    model, meta = load_checkpoint(ckpt.weights_ref)
    records = quality.split_records("test")
    images = [preprocess(load_image(r.image_uri), meta.preprocess) for r in records]
    return regression_report(
        predict_scores(model, images), [r.quality for r in records]
    ).mae


print("\nstage I: classification pre-training")
ckpt1, rep1 = pretrain_classification(
    TrainConfig(loss="categorical_cross_entropy", learning_rate=2e-3,
                batch_size=32, max_epochs=10, patience=10, seed=0),
    trinary,
    model_config=ModelConfig(backbone="small_cnn_test", input_size=64, head="classify3"),
    preprocess_config=pc,
    workdir=root / "work",
)
print(f"  best validation accuracy: {rep1.best_val_objective:.3f} "
      f"({rep1.epochs_run} epochs)")

print("\nstage II: regression fine-tuning (head swap + RMSE loss)")
ckpt2, rep2 = train_regression(
    ckpt1,
    TrainConfig(loss="rmse", learning_rate=1e-3, batch_size=32,
                max_epochs=25, patience=6, seed=0),
    quality,
    workdir=root / "work",
)
teacher_mae = test_mae(ckpt2)
print(f"  best validation MAE: {rep2.best_val_objective:.3f}; "
      f"held-out test MAE: {teacher_mae:.3f}")

print("\nstage III: pseudo-labeling + student training")
pseudo = generate_pseudo_labels(ckpt2, unlabeled, batch_size=64)
print(f"  teacher scored {len(pseudo)} unlabeled images "
      f"(all pseudo-labels clamped to [1, 10])")
ckpt3, rep3 = train_student(
    ckpt2, quality, pseudo,
    TrainConfig(loss="rmse", learning_rate=5e-4, batch_size=32,
                max_epochs=15, patience=5, seed=0),
    workdir=root / "work",
)
student_mae = test_mae(ckpt3)
print(f"  student held-out test MAE: {student_mae:.3f} "
      f"(teacher was {teacher_mae:.3f})")

print("\ncheckpoint provenance:")
for ckpt in (ckpt1, ckpt2, ckpt3):
    print(f"  {ckpt.stage:10s} -> {ckpt.weights_ref}")
