"""Walk through the deterministic preprocessing chain, stage by stage.

Builds a fundus-like raster with a black border, then shows what border
cropping, square padding, bilinear resizing and normalization each do.
Outputs land in ./demo-output/preprocessing.
"""

from pathlib import Path

import numpy as np

from fundusq.imaging import (
    ImageTensor,
    PreprocessConfig,
    crop_black_borders,
    preprocess,
    resize,
    save_image,
    square_pad,
)

out_dir = Path("demo-output/preprocessing")
out_dir.mkdir(parents=True, exist_ok=True)

# A 300x400 "photograph": bright retinal disc, black frame all around.
h, w, border = 300, 400, 24
arr = np.zeros((h, w, 3), dtype=np.float32)
yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
disc = (yy - h / 2) ** 2 + (xx - w / 2) ** 2 <= (h / 2 - border) ** 2
arr[disc] = np.stack(
    [
        np.full((h, w), 195.0),
        np.full((h, w), 115.0),
        np.full((h, w), 55.0),
    ],
    axis=-1,
)[disc]
raw = ImageTensor(arr)
save_image(raw, out_dir / "0-raw.png")
print(f"raw image:      {raw.height}x{raw.width}")

cropped = crop_black_borders(raw, threshold=10)
save_image(cropped, out_dir / "1-cropped.png")
print(f"after crop:     {cropped.height}x{cropped.width} (black frame gone)")

padded = square_pad(cropped)
save_image(padded, out_dir / "2-padded.png")
print(f"after pad:      {padded.height}x{padded.width} (square again)")
print(f"  pixel sum conserved: {padded.values.sum() == cropped.values.sum()}")

resized = resize(padded, 224)
save_image(resized, out_dir / "3-resized.png")
print(f"after resize:   {resized.height}x{resized.width} (bilinear)")

# The one-call version, ending normalized to [0, 1].
final = preprocess(raw, PreprocessConfig(target_size=224))
print(f"preprocess():   {final.height}x{final.width}, "
      f"values in [{final.values.min():.3f}, {final.values.max():.3f}]")

rerun = preprocess(raw, PreprocessConfig(target_size=224))
print(f"deterministic:  {np.array_equal(final.values, rerun.values)} "
      "(bit-identical on rerun; no augmentation anywhere)")
