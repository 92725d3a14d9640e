"""Grad-CAM heatmaps for the regression output.

Trains a quick toy regressor on the synthetic corpus, then renders
attention overlays for a high-quality and a low-quality image. The
heatmap is the rectified, gradient-weighted channel sum of the last
convolutional feature map, upsampled and min-max normalized.
"""

from pathlib import Path

from fundusq.datasets import SplitSpec, stratified_split
from fundusq.explain import grad_cam, overlay, save_heatmap
from fundusq.imaging import PreprocessConfig, load_image, preprocess, save_image
from fundusq.qmodel import ModelConfig, load_checkpoint
from fundusq.synth import SynthConfig, synth_corpus
from fundusq.training import TrainConfig, train_regression

root = Path("demo-output/gradcam")

corpus = synth_corpus(
    root / "q", 300, seed=5, config=SynthConfig(image_size=96), label_mode="quality"
)
manifest = stratified_split(corpus.manifest, SplitSpec(fractions=(0.8, 0.1, 0.1), seed=5))

print("training a toy regressor ...")
ckpt, report = train_regression(
    ModelConfig(backbone="small_cnn_test", input_size=64, head="regress1"),
    TrainConfig(loss="rmse", learning_rate=2e-3, batch_size=32,
                max_epochs=15, patience=15, seed=0),
    manifest,
    workdir=root / "work",
    preprocess_config=PreprocessConfig(target_size=64),
)
print(f"  validation MAE {report.best_val_objective:.3f}")

model, meta = load_checkpoint(ckpt.weights_ref)
by_score = sorted(manifest.records, key=lambda r: r.quality)
examples = {"low-quality": by_score[0], "high-quality": by_score[-1]}

for name, record in examples.items():
    img = preprocess(load_image(record.image_uri), meta.preprocess)
    heat = grad_cam(model, img, image_ref=record.id)
    blended = overlay(heat, img, alpha=0.5)
    save_image(blended, root / f"{name}-overlay.png")
    save_heatmap(heat, root / f"{name}-heatmap.npy")
    print(f"{name}: score {record.quality}, CAM layer {heat.source_layer!r}, "
          f"overlay -> {root / (name + '-overlay.png')}")

print("\nthe raw float maps are saved alongside as .npy for further analysis")
