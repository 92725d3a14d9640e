"""The scoring + annotation service, exercised end to end in-process.

Starts the FastAPI app against a tiny synthetic queue, scores an image,
walks the grader workflow (next task -> submit score -> export labels),
and demonstrates that acknowledged annotations survive a restart.

For a real deployment: ``fundusq serve --checkpoint ... --scale ...``.
"""

import io
import json
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient
from PIL import Image

from fundusq.datasets import save_manifest
from fundusq.imaging import PreprocessConfig
from fundusq.qmodel import ModelConfig, build_model, save_checkpoint
from fundusq.scale import save_scale, shipped_scale
from fundusq.service import ServiceConfig, create_app
from fundusq.synth import SynthConfig, synth_corpus

root = Path("demo-output/service")
root.mkdir(parents=True, exist_ok=True)

# Assets: a checkpoint, the packaged reference scale, a 3-image queue.
model = build_model(
    ModelConfig(backbone="small_cnn_test", input_size=64, head="regress1"), seed=0
)
save_checkpoint(
    model, root / "model.ckpt", stage="regression",
    preprocess=PreprocessConfig(target_size=64),
)
save_scale(shipped_scale(), root / "scale.json")
queue = synth_corpus(
    root / "queue", 3, seed=9, config=SynthConfig(image_size=96), label_mode="none"
).manifest
save_manifest(queue, root / "queue.jsonl")

config = ServiceConfig(
    checkpoint_path=str(root / "model.ckpt"),
    scale_path=str(root / "scale.json"),
    queue_manifest_path=str(root / "queue.jsonl"),
    annotation_log_path=str(root / "annotations.jsonl"),
    artifacts_dir=str(root / "artifacts"),
)
client = TestClient(create_app(config))

# --- scoring ---------------------------------------------------------------
rng = np.random.default_rng(1)
arr = np.zeros((96, 96, 3), dtype=np.uint8)
yy, xx = np.mgrid[0:96, 0:96]
arr[(yy - 48) ** 2 + (xx - 48) ** 2 <= 40**2] = rng.integers(
    80, 220, (96, 96, 3)
)[(yy - 48) ** 2 + (xx - 48) ** 2 <= 40**2]
buf = io.BytesIO()
Image.fromarray(arr).save(buf, format="PNG")

resp = client.post("/v1/score?cam=true", files={"file": ("dfi.png", buf.getvalue())})
body = resp.json()
print("POST /v1/score ->")
print(f"  score {body['score']:.2f}, label {body['label']} at threshold "
      f"{body['threshold']}, model {body['model_version']}")
print(f"  Grad-CAM artifact: {body['cam_uri']}")

# --- reference scale ---------------------------------------------------------
scale = client.get("/v1/reference-scale").json()
print(f"\nGET /v1/reference-scale -> {len(scale['exemplars'])} exemplars, "
      f"version {scale['version']}")

# --- grading workflow --------------------------------------------------------
print("\ngrading workflow:")
version = scale["version"]
while True:
    task = client.get("/v1/annotation/next", headers={"X-Grader-Id": "demo"})
    if task.status_code == 204:
        print("  queue exhausted (204)")
        break
    info = task.json()
    score = 7.5
    client.post(
        "/v1/annotation",
        json={"image_id": info["task_id"], "score": score, "scale_version": version},
        headers={"X-Grader-Id": "demo"},
    )
    print(f"  graded {info['task_id']} -> {score} ({info['remaining']} were open)")

# --- durability --------------------------------------------------------------
restarted = TestClient(create_app(config))
lines = restarted.get("/v1/annotation/export").text.strip().splitlines()
print(f"\nafter restart, export still has {len(lines)} label(s):")
for line in lines:
    rec = json.loads(line)
    print(f"  {rec['id']}: quality {rec['quality']}")
