"""Generate the synthetic fundus corpus used for desk-scale development.

The clinical corpora are not redistributable, so development and tests run
on generated images: a rendered retina degraded by blur, dimming and noise,
with a ground-truth quality score that falls monotonically with the
degradation severity.
"""

from collections import Counter
from pathlib import Path

from fundusq.datasets import SplitSpec, save_manifest, stratified_split
from fundusq.synth import SynthConfig, severity_to_score, synth_corpus

out_dir = Path("demo-output/corpus")

print("severity -> score mapping (monotone, snapped to the 0.5 grid):")
for severity in (0.0, 0.1, 0.25, 0.5, 0.75, 1.0):
    print(f"  severity {severity:4.2f} -> score {severity_to_score(severity):4.1f}")

corpus = synth_corpus(
    out_dir, n=200, seed=7, config=SynthConfig(image_size=96), label_mode="quality"
)
scores = sorted(r.quality for r in corpus.manifest.records)
print(f"\ngenerated {len(corpus.manifest)} images under {out_dir}/images")
print(f"score range: {scores[0]} .. {scores[-1]}")

histogram = Counter(r.quality for r in corpus.manifest.records)
print("score histogram:")
for score in sorted(histogram):
    print(f"  {score:4.1f}: {'#' * histogram[score]}")

# Stratified splitting keeps each score bin proportionally represented.
split = stratified_split(
    corpus.manifest, SplitSpec(fractions=(0.8, 0.1, 0.1), seed=7)
)
print(f"\nsplit sizes: {split.split_sizes()}")
save_manifest(split, out_dir / "manifest.jsonl")
print(f"manifest written to {out_dir / 'manifest.jsonl'}")
