import importlib.util

import numpy as np
import pytest
import torch

from fundusq.errors import CorruptCheckpoint, ShapeMismatch, UnsupportedConfig, WrongHead
from fundusq.imaging import ImageTensor, PreprocessConfig
from fundusq.qmodel import (
    ModelConfig,
    build_model,
    export_onnx,
    load_checkpoint,
    predict_scores,
    save_checkpoint,
    swap_head_regression,
)

SMALL3 = ModelConfig(backbone="small_cnn_test", input_size=64, head="classify3")
SMALL1 = ModelConfig(backbone="small_cnn_test", input_size=64, head="regress1")


def norm_images(n, size=64, seed=0):
    rng = np.random.default_rng(seed)
    return [
        ImageTensor(rng.uniform(0, 1, (size, size, 3)).astype(np.float32), normalized=True)
        for _ in range(n)
    ]


class TestBuildModel:
    def test_classify3_shape(self):
        model = build_model(SMALL3, seed=0)
        out = model(torch.randn(4, 3, 64, 64))
        assert out.shape == (4, 3)

    def test_regress1_shape(self):
        model = build_model(SMALL1, seed=0)
        out = model(torch.randn(2, 3, 64, 64))
        assert out.shape == (2, 1)

    def test_seed_determinism(self):
        a = build_model(SMALL3, seed=42)
        b = build_model(SMALL3, seed=42)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)
        c = build_model(SMALL3, seed=43)
        assert any(
            not torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters())
        )

    def test_inception_shapes_at_224(self):
        model = build_model(ModelConfig(head="classify3"), seed=0)
        model.eval()
        with torch.no_grad():
            out = model(torch.randn(2, 3, 224, 224))
        assert out.shape == (2, 3)

    def test_unsupported_configs(self):
        with pytest.raises(UnsupportedConfig):
            ModelConfig(backbone="resnet50")
        with pytest.raises(UnsupportedConfig):
            ModelConfig(head="classify7")
        with pytest.raises(UnsupportedConfig):
            ModelConfig(backbone="inception_v3_like", input_size=64)
        with pytest.raises(UnsupportedConfig):
            build_model(
                ModelConfig(backbone="small_cnn_test", input_size=64, pretrained_init="imagenet")
            )


class TestHeadSwap:
    def test_backbone_preserved_bit_exact(self):
        model = build_model(SMALL3, seed=1)
        x = torch.randn(3, 3, 64, 64)
        model.eval()
        with torch.no_grad():
            before = model.features(x).clone()
        swap_head_regression(model, seed=2)
        model.eval()
        with torch.no_grad():
            after = model.features(x)
            out = model(torch.randn(8, 3, 64, 64))
        assert torch.equal(before, after)
        assert out.shape == (8, 1)
        assert model.config.head == "regress1"

    def test_wrong_head(self):
        model = build_model(SMALL1, seed=0)
        with pytest.raises(WrongHead):
            swap_head_regression(model)

    def test_new_head_seed_deterministic(self):
        a = swap_head_regression(build_model(SMALL3, seed=1), seed=7)
        b = swap_head_regression(build_model(SMALL3, seed=1), seed=7)
        for pa, pb in zip(a.head.parameters(), b.head.parameters()):
            assert torch.equal(pa, pb)


class TestPredictScores:
    def test_contract(self):
        model = build_model(SMALL1, seed=0)
        scores = predict_scores(model, norm_images(5))
        assert len(scores) == 5
        assert all(np.isfinite(s) for s in scores)

    def test_deterministic(self):
        model = build_model(SMALL1, seed=0)
        imgs = norm_images(4)
        assert predict_scores(model, imgs) == predict_scores(model, imgs)

    def test_batch_order_invariance(self):
        model = build_model(SMALL1, seed=0)
        imgs = norm_images(6)
        base = predict_scores(model, imgs)
        perm = [3, 0, 5, 1, 4, 2]
        shuffled = predict_scores(model, [imgs[i] for i in perm])
        assert shuffled == pytest.approx([base[i] for i in perm], abs=1e-6)

    def test_raw_input_rejected(self):
        model = build_model(SMALL1, seed=0)
        raw = ImageTensor(np.full((64, 64, 3), 128.0, dtype=np.float32))
        with pytest.raises(ShapeMismatch):
            predict_scores(model, [raw])

    def test_wrong_size_rejected(self):
        model = build_model(SMALL1, seed=0)
        img = ImageTensor(np.zeros((96, 96, 3), dtype=np.float32), normalized=True)
        with pytest.raises(ShapeMismatch):
            predict_scores(model, [img])

    def test_classify_head_rejected(self):
        model = build_model(SMALL3, seed=0)
        with pytest.raises(WrongHead):
            predict_scores(model, norm_images(1))


class TestCheckpoint:
    def test_roundtrip_identical_predictions(self, tmp_path):
        model = build_model(SMALL1, seed=5)
        imgs = norm_images(4, seed=5)
        before = predict_scores(model, imgs)
        path = tmp_path / "m.ckpt"
        meta = save_checkpoint(
            model, path, stage="regression", preprocess=PreprocessConfig(target_size=64)
        )
        loaded, loaded_meta = load_checkpoint(path)
        assert predict_scores(loaded, imgs) == before
        assert loaded_meta.stage == "regression"
        assert loaded_meta.content_hash == meta.content_hash
        assert loaded_meta.preprocess == PreprocessConfig(target_size=64)
        assert loaded_meta.config == SMALL1

    def test_truncated_file_is_corrupt(self, tmp_path):
        model = build_model(SMALL1, seed=0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(
            model, path, stage="regression", preprocess=PreprocessConfig(target_size=64)
        )
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(path)

    def test_tampered_weights_fail_hash(self, tmp_path):
        import zipfile

        model = build_model(SMALL1, seed=0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(
            model, path, stage="regression", preprocess=PreprocessConfig(target_size=64)
        )
        with zipfile.ZipFile(path) as zf:
            manifest = zf.read("manifest.json")
            weights = bytearray(zf.read("weights.pt"))
        weights[100] ^= 0xFF
        with zipfile.ZipFile(path, "w") as zf:
            zf.writestr("manifest.json", manifest)
            zf.writestr("weights.pt", bytes(weights))
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(path)

    def test_loaded_model_rejects_other_sizes(self, tmp_path):
        model = build_model(SMALL1, seed=0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(
            model, path, stage="regression", preprocess=PreprocessConfig(target_size=64)
        )
        loaded, _ = load_checkpoint(path)
        img = ImageTensor(np.zeros((96, 96, 3), dtype=np.float32), normalized=True)
        with pytest.raises(ShapeMismatch):
            predict_scores(loaded, [img])

    def test_metrics_snapshot_persisted(self, tmp_path):
        model = build_model(SMALL1, seed=0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(
            model,
            path,
            stage="student",
            preprocess=PreprocessConfig(target_size=64),
            metrics_snapshot={"val_mae": 0.5},
        )
        _, meta = load_checkpoint(path)
        assert meta.metrics_snapshot == {"val_mae": 0.5}
        assert len(meta.model_version) == 12


@pytest.mark.skipif(
    importlib.util.find_spec("onnx") is None,
    reason="onnx package not available in this environment",
)
def test_onnx_export(tmp_path):
    model = build_model(SMALL1, seed=0)
    export_onnx(model, tmp_path / "m.onnx")
    assert (tmp_path / "m.onnx").exists()
