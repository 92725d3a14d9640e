"""Single entry point exposing the full pipeline.

Usage: ``fundusq <subcommand> --config <file> [overrides]``. Values are
resolved with precedence CLI flags > environment (FUNDUSQ_*) > config
file > built-in defaults. JSON reports go to stdout and, with a work/out
directory, to deterministically named ``<stage>-<seed>.json`` files.
"""

from __future__ import annotations

import json
import sys
from contextlib import contextmanager
from pathlib import Path

import click
from click.core import ParameterSource

from . import metrics, plots, service
from .datasets import (
    DatasetManifest,
    SplitSpec,
    load_manifest,
    save_manifest,
    stratified_split,
)
from .errors import FundusQError
from .explain import grad_cam, overlay, save_heatmap
from .imaging import PreprocessConfig, load_image, preprocess, save_image
from .qmodel import ModelConfig, load_checkpoint, predict_scores
from .scale import AnnotationRecord, export_labels
from .synth import SynthConfig, synth_corpus
from .training import (
    TrainConfig,
    generate_pseudo_labels,
    pretrain_classification,
    train_regression,
    train_student,
)

THRESHOLD_SWEEP = [5.0 + 0.5 * i for i in range(7)]  # 5.0 .. 8.0


def _merged(ctx: click.Context) -> dict:
    """Apply the config file under CLI-flag and env precedence."""
    params = dict(ctx.params)
    cfg_path = params.pop("config", None)
    if cfg_path:
        with open(cfg_path, encoding="utf-8") as fh:
            data = json.load(fh)
        known = {p.name for p in ctx.command.params} - {"config"}
        unknown = set(data) - known
        if unknown:
            raise click.ClickException(
                f"unknown config keys for {ctx.command.name}: {sorted(unknown)}"
            )
        for key, value in data.items():
            if ctx.get_parameter_source(key) == ParameterSource.DEFAULT:
                params[key] = value
    return params


def _require(params: dict, *keys: str) -> None:
    missing = [k for k in keys if params.get(k) is None]
    if missing:
        raise click.ClickException(
            f"missing required parameter(s): {', '.join(missing)}"
        )


def _emit(report: dict, out_path: Path | None) -> None:
    text = json.dumps(report, indent=2, default=str)
    if out_path is not None:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(text + "\n", encoding="utf-8")
    click.echo(text)


def _parse_triple(value: str | None, kind: type):
    if value is None:
        return None
    parts = [kind(v) for v in str(value).split(",")]
    if len(parts) != 3:
        raise click.ClickException(f"expected three comma-separated values, got {value!r}")
    return tuple(parts)


config_option = click.option(
    "--config", type=click.Path(exists=True, dir_okay=False), default=None,
    help="JSON config file supplying defaults for this subcommand.",
)


@click.group()
def cli():
    """Fundus image quality grading toolkit."""


@cli.command()
@config_option
@click.option("--out", default=None, help="Output directory for images + manifest.")
@click.option("--n", default=100, type=int, help="Number of images to generate.")
@click.option("--seed", default=0, type=int)
@click.option("--label-mode", default="quality",
              type=click.Choice(["quality", "trinary", "binary", "none"]))
@click.option("--image-size", default=96, type=int)
@click.option("--severity-margin", default=0.0, type=float,
              help="Keep severities away from trinary class boundaries.")
@click.pass_context
def synth(ctx, **_kwargs):
    """Generate a synthetic fundus-like corpus with ground-truth scores."""
    p = _merged(ctx)
    _require(p, "out")
    cfg = SynthConfig(image_size=p["image_size"], severity_margin=p["severity_margin"])
    corpus = synth_corpus(
        p["out"], p["n"], seed=p["seed"], config=cfg, label_mode=p["label_mode"]
    )
    manifest_path = Path(p["out"]) / "manifest.jsonl"
    save_manifest(corpus.manifest, manifest_path)
    _emit(
        {"manifest": str(manifest_path), "n": p["n"], "label_mode": p["label_mode"]},
        None,
    )


@cli.command("preprocess")
@config_option
@click.option("--image", default=None, help="Input PNG/JPEG file.")
@click.option("--out", default=None, help="Output image path.")
@click.option("--target-size", default=224, type=int)
@click.option("--border-threshold", default=10, type=int)
@click.pass_context
def preprocess_cmd(ctx, **_kwargs):
    """Crop black borders, square-pad, resize and normalize one image."""
    p = _merged(ctx)
    _require(p, "image", "out")
    cfg = PreprocessConfig(
        target_size=p["target_size"], border_threshold=p["border_threshold"]
    )
    result = preprocess(load_image(p["image"]), cfg)
    save_image(result, p["out"])
    _emit({"out": p["out"], "size": result.height, "normalized": True}, None)


@cli.command()
@config_option
@click.option("--manifest", default=None)
@click.option("--out", default=None, help="Path for the manifest with splits.")
@click.option("--counts", default=None, help="train,validation,test counts.")
@click.option("--fractions", default=None, help="train,validation,test fractions.")
@click.option("--bin-width", default=0.5, type=float)
@click.option("--seed", default=0, type=int)
@click.option("--no-stratify", is_flag=True, default=False)
@click.pass_context
def split(ctx, **_kwargs):
    """Assign stratified train/validation/test splits to a manifest."""
    p = _merged(ctx)
    _require(p, "manifest", "out")
    spec = SplitSpec(
        counts=_parse_triple(p["counts"], int),
        fractions=_parse_triple(p["fractions"], float),
        stratify=not p["no_stratify"],
        bin_width=p["bin_width"],
        seed=p["seed"],
    )
    result = stratified_split(load_manifest(p["manifest"]), spec)
    save_manifest(result, p["out"])
    _emit({"out": p["out"], "sizes": result.split_sizes()}, None)


def _train_options(fn):
    for deco in reversed(
        [
            click.option("--batch-size", default=32, type=int),
            click.option("--learning-rate", default=1e-4, type=float),
            click.option("--max-epochs", default=100, type=int),
            click.option("--patience", default=10, type=int),
            click.option("--seed", default=0, type=int),
        ]
    ):
        fn = deco(fn)
    return fn


@cli.command()
@config_option
@click.option("--manifest", default=None, help="Manifest with trinary labels + splits.")
@click.option("--workdir", default=None)
@click.option("--backbone", default="inception_v3_like",
              type=click.Choice(["inception_v3_like", "small_cnn_test"]))
@click.option("--input-size", default=224, type=int)
@_train_options
@click.pass_context
def pretrain(ctx, **_kwargs):
    """Stage I: classification pre-training with categorical cross-entropy."""
    p = _merged(ctx)
    _require(p, "manifest", "workdir")
    tc = TrainConfig(
        loss="categorical_cross_entropy",
        learning_rate=p["learning_rate"],
        batch_size=p["batch_size"],
        max_epochs=p["max_epochs"],
        patience=p["patience"],
        seed=p["seed"],
    )
    mc = ModelConfig(backbone=p["backbone"], input_size=p["input_size"], head="classify3")
    pc = PreprocessConfig(target_size=p["input_size"])
    ckpt, report = pretrain_classification(
        tc, load_manifest(p["manifest"]), model_config=mc,
        preprocess_config=pc, workdir=p["workdir"],
    )
    _emit(report.to_dict(), Path(p["workdir"]) / f"pretrain-{p['seed']}.json")


@cli.command()
@config_option
@click.option("--init", default=None, help="Stage-I checkpoint to fine-tune from.")
@click.option("--random-init", is_flag=True, default=False,
              help="Ablation: skip pre-training, start from random weights.")
@click.option("--imagenet-init", is_flag=True, default=False,
              help="Ablation: start from ImageNet weights (if available).")
@click.option("--manifest", default=None, help="Manifest with quality scores + splits.")
@click.option("--workdir", default=None)
@click.option("--backbone", default="inception_v3_like",
              type=click.Choice(["inception_v3_like", "small_cnn_test"]))
@click.option("--input-size", default=224, type=int)
@_train_options
@click.pass_context
def train(ctx, **_kwargs):
    """Stage II: regression fine-tuning with RMSE loss."""
    p = _merged(ctx)
    _require(p, "manifest", "workdir")
    tc = TrainConfig(
        loss="rmse",
        learning_rate=p["learning_rate"],
        batch_size=p["batch_size"],
        max_epochs=p["max_epochs"],
        patience=p["patience"],
        seed=p["seed"],
    )
    pc = None
    if p["random_init"] or p["imagenet_init"]:
        init = ModelConfig(
            backbone=p["backbone"],
            input_size=p["input_size"],
            head="regress1",
            pretrained_init="imagenet" if p["imagenet_init"] else "random",
        )
        pc = PreprocessConfig(target_size=p["input_size"])
    else:
        _require(p, "init")
        init = p["init"]
    ckpt, report = train_regression(
        init, tc, load_manifest(p["manifest"]),
        workdir=p["workdir"], preprocess_config=pc,
    )
    _emit(report.to_dict(), Path(p["workdir"]) / f"regression-{p['seed']}.json")


@cli.command("pseudo-label")
@config_option
@click.option("--teacher", default=None, help="Stage-II checkpoint.")
@click.option("--manifest", default=None, help="Unlabeled manifest.")
@click.option("--out", default=None, help="Path for the pseudo-labeled manifest.")
@click.option("--plot", default=None, help="Optional histogram plot path.")
@click.option("--batch-size", default=64, type=int)
@click.pass_context
def pseudo_label(ctx, **_kwargs):
    """Stage III prep: score unlabeled records with the teacher."""
    p = _merged(ctx)
    _require(p, "teacher", "manifest", "out")
    pseudo = generate_pseudo_labels(
        p["teacher"], load_manifest(p["manifest"]), batch_size=p["batch_size"]
    )
    save_manifest(pseudo, p["out"])
    if p["plot"]:
        plots.score_histogram_plot(
            [r.quality for r in pseudo.records], p["plot"], title="pseudo-labels"
        )
    _emit({"out": p["out"], "n": len(pseudo)}, None)


@cli.command("train-student")
@config_option
@click.option("--teacher", default=None, help="Stage-II checkpoint.")
@click.option("--labeled", default=None, help="Quality manifest with splits.")
@click.option("--pseudo", default=None, help="Pseudo-labeled manifest.")
@click.option("--workdir", default=None)
@click.option("--student-init", default="teacher", type=click.Choice(["teacher", "random"]))
@click.option("--pseudo-validation-fraction", default=None, type=float,
              help="Re-draw train/validation over labeled + pseudo records.")
@_train_options
@click.pass_context
def train_student_cmd(ctx, **_kwargs):
    """Stage III: train the student on labeled plus pseudo-labeled data."""
    p = _merged(ctx)
    _require(p, "teacher", "labeled", "pseudo", "workdir")
    tc = TrainConfig(
        loss="rmse",
        learning_rate=p["learning_rate"],
        batch_size=p["batch_size"],
        max_epochs=p["max_epochs"],
        patience=p["patience"],
        seed=p["seed"],
        student_init=p["student_init"],
        pseudo_validation_fraction=p["pseudo_validation_fraction"],
    )
    ckpt, report = train_student(
        p["teacher"], load_manifest(p["labeled"]), load_manifest(p["pseudo"]),
        tc, workdir=p["workdir"],
    )
    _emit(report.to_dict(), Path(p["workdir"]) / f"student-{p['seed']}.json")


def _predict_split(checkpoint: str, manifest: DatasetManifest, split: str | None):
    model, meta = load_checkpoint(checkpoint)
    records = manifest.split_records(split) if split else list(manifest.records)
    if not records:
        raise click.ClickException(f"no records in split {split!r}")
    images = [preprocess(load_image(r.image_uri), meta.preprocess) for r in records]
    scores = predict_scores(model, images)
    return model, meta, records, scores


@cli.command()
@config_option
@click.option("--checkpoint", default=None)
@click.option("--manifest", default=None, help="Quality manifest with a test split.")
@click.option("--split", "split_name", default="test",
              type=click.Choice(["train", "validation", "test"]))
@click.option("--out", default=None, help="Output directory.")
@click.option("--compare", default=None, help="Second checkpoint for a paired Wilcoxon test.")
@click.option("--cutoff", default=1.5, type=float, help="Outlier |error| cutoff.")
@click.option("--seed", default=0, type=int)
@click.pass_context
def evaluate(ctx, **_kwargs):
    """Regression evaluation: MAE/RMSE/CI, linear fit, outliers, plots."""
    p = _merged(ctx)
    _require(p, "checkpoint", "manifest")
    manifest = load_manifest(p["manifest"])
    _, meta, records, scores = _predict_split(p["checkpoint"], manifest, p["split_name"])
    refs = [r.quality for r in records]
    if any(v is None for v in refs):
        raise click.ClickException("evaluation requires quality labels on the split")
    report = metrics.regression_report(scores, refs, seed=p["seed"])
    slope, intercept, r2 = metrics.linear_fit_r2(scores, refs)
    outl = metrics.outliers(scores, refs, [r.id for r in records], cutoff=p["cutoff"])
    body = {
        "checkpoint": p["checkpoint"],
        "model_version": meta.model_version,
        "split": p["split_name"],
        "report": report.to_dict(),
        "linear_fit": {"slope": slope, "intercept": intercept, "r2": r2},
        "outliers": [
            {"id": i, "predicted": pr, "reference": rf, "delta": d}
            for i, pr, rf, d in outl
        ],
    }
    if p["compare"]:
        _, _, _, other_scores = _predict_split(p["compare"], manifest, p["split_name"])
        other = metrics.regression_report(other_scores, refs, seed=p["seed"])
        stat, pval = metrics.wilcoxon_signed_rank(
            report.per_sample_abs_errors, other.per_sample_abs_errors
        )
        body["wilcoxon"] = {
            "statistic": stat,
            "p_two_sided": pval,
            "compare_checkpoint": p["compare"],
            "compare_mae": other.mae,
        }
    out_dir = Path(p["out"]) if p["out"] else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        plots.scatter_fit_plot(
            scores, refs, slope, intercept, r2,
            out_dir / f"evaluate-scatter-{p['seed']}.png",
        )
    _emit(body, out_dir / f"evaluate-{p['seed']}.json" if out_dir else None)


@cli.command("external-eval")
@config_option
@click.option("--checkpoint", default=None)
@click.option("--manifest", default=None, help="Manifest with binary labels.")
@click.option("--threshold", default=6.5, type=float)
@click.option("--sweep", is_flag=True, default=False,
              help="Also report thresholds 5.0, 5.5, ... 8.0.")
@click.option("--out", default=None, help="Output directory.")
@click.option("--seed", default=0, type=int)
@click.pass_context
def external_eval(ctx, **_kwargs):
    """Binary external validation at a score threshold (default 6.5)."""
    p = _merged(ctx)
    _require(p, "checkpoint", "manifest")
    manifest = load_manifest(p["manifest"])
    records = [r for r in manifest.records if r.binary is not None]
    if not records:
        raise click.ClickException("manifest has no binary labels")
    model, meta = load_checkpoint(p["checkpoint"])
    images = [preprocess(load_image(r.image_uri), meta.preprocess) for r in records]
    scores = predict_scores(model, images)
    labels = [r.binary for r in records]
    report = metrics.binary_report(scores, labels, threshold=p["threshold"])
    body = {
        "checkpoint": p["checkpoint"],
        "model_version": meta.model_version,
        "report": report.to_dict(),
        "class_stats": metrics.class_score_stats(scores, labels),
    }
    if p["sweep"]:
        body["sweep"] = [
            metrics.binary_report(scores, labels, threshold=t).to_dict()
            for t in THRESHOLD_SWEEP
        ]
    out_dir = Path(p["out"]) if p["out"] else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        plots.class_histogram_plot(
            scores, labels, out_dir / f"external-eval-hist-{p['seed']}.png"
        )
    _emit(body, out_dir / f"external-eval-{p['seed']}.json" if out_dir else None)


@cli.command()
@config_option
@click.option("--checkpoint", default=None)
@click.option("--image", default=None)
@click.option("--out", default=None, help="Overlay PNG path.")
@click.option("--layer", default=None, help="CAM source layer (default: last conv).")
@click.option("--alpha", default=0.5, type=float)
@click.option("--invert", is_flag=True, default=False,
              help="Highlight quality-reducing regions instead.")
@click.option("--save-raw", default=None, help="Also write the raw map as .npy.")
@click.pass_context
def gradcam(ctx, **_kwargs):
    """Render a Grad-CAM overlay for one image."""
    p = _merged(ctx)
    _require(p, "checkpoint", "image", "out")
    model, meta = load_checkpoint(p["checkpoint"])
    prepped = preprocess(load_image(p["image"]), meta.preprocess)
    heat = grad_cam(
        model, prepped, p["layer"], invert=p["invert"], image_ref=p["image"]
    )
    save_image(overlay(heat, prepped, alpha=p["alpha"]), p["out"])
    if p["save_raw"]:
        save_heatmap(heat, p["save_raw"])
    _emit({"out": p["out"], "layer": heat.source_layer}, None)


@cli.command("export-labels")
@config_option
@click.option("--log", "log_path", default=None, help="Annotation log (JSONL).")
@click.option("--queue", default=None, help="Queue manifest, for image URIs.")
@click.option("--out", default=None, help="Output manifest path.")
@click.option("--policy", default="latest", type=click.Choice(["latest", "average"]))
@click.pass_context
def export_labels_cmd(ctx, **_kwargs):
    """Resolve an annotation log into a quality-labeled manifest."""
    p = _merged(ctx)
    _require(p, "log_path", "out")
    annotations = []
    with open(p["log_path"], encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                annotations.append(AnnotationRecord.from_dict(json.loads(line)))
    lookup = {}
    if p["queue"]:
        queue = load_manifest(p["queue"])
        lookup = {r.id: r.image_uri for r in queue.records}
    records = export_labels(annotations, policy=p["policy"], image_uri_lookup=lookup)
    save_manifest(DatasetManifest(records=records, source="annotation"), p["out"])
    _emit({"out": p["out"], "n": len(records)}, None)


@cli.command("serve")
@config_option
@click.option("--checkpoint", default=None)
@click.option("--scale", default=None)
@click.option("--queue", default=None)
@click.option("--annotation-log", default=None)
@click.option("--artifacts", default=None)
@click.option("--threshold", default=6.5, type=float)
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
@click.pass_context
def serve_cmd(ctx, **_kwargs):
    """Run the scoring + annotation HTTP service."""
    p = _merged(ctx)
    cfg = service.ServiceConfig(
        checkpoint_path=p["checkpoint"],
        scale_path=p["scale"],
        queue_manifest_path=p["queue"],
        annotation_log_path=p["annotation_log"],
        artifacts_dir=p["artifacts"],
        default_threshold=p["threshold"],
        host=p["host"],
        port=p["port"],
    ).with_env_overrides()
    service.serve(cfg)


@cli.command()
@config_option
@click.option("--trinary-manifest", default=None)
@click.option("--quality-manifest", default=None)
@click.option("--unlabeled-manifest", default=None)
@click.option("--workdir", default=None)
@click.option("--backbone", default="inception_v3_like",
              type=click.Choice(["inception_v3_like", "small_cnn_test"]))
@click.option("--input-size", default=224, type=int)
@click.option("--pretrain-epochs", default=30, type=int)
@click.option("--regression-epochs", default=60, type=int)
@click.option("--student-epochs", default=40, type=int)
@click.option("--student-init", default="teacher", type=click.Choice(["teacher", "random"]))
@click.option("--pseudo-validation-fraction", default=None, type=float)
@click.option("--batch-size", default=32, type=int)
@click.option("--learning-rate", default=1e-4, type=float)
@click.option("--patience", default=10, type=int)
@click.option("--seed", default=0, type=int)
@click.pass_context
def pipeline(ctx, **_kwargs):
    """Run stages I -> II -> III end to end.

    Manifests without split assignments get a default 80/10/10 split. If no
    unlabeled manifest is given, the pipeline stops cleanly after stage II.
    """
    p = _merged(ctx)
    _require(p, "trinary_manifest", "quality_manifest", "workdir")
    workdir = Path(p["workdir"])
    seed = p["seed"]

    def ensure_split(manifest: DatasetManifest, stratify: bool) -> DatasetManifest:
        if manifest.split_assignment:
            return manifest
        spec = SplitSpec(fractions=(0.8, 0.1, 0.1), stratify=stratify, seed=seed)
        return stratified_split(manifest, spec)

    common = dict(
        learning_rate=p["learning_rate"], batch_size=p["batch_size"],
        patience=p["patience"], seed=seed,
    )
    stages = []

    @contextmanager
    def stage(name):
        try:
            yield
        except Exception as e:
            raise click.ClickException(f"pipeline stage {name} failed: {e}") from e

    with stage("I (pretrain)"):
        trinary = ensure_split(load_manifest(p["trinary_manifest"]), stratify=False)
        mc = ModelConfig(
            backbone=p["backbone"], input_size=p["input_size"], head="classify3"
        )
        pc = PreprocessConfig(target_size=p["input_size"])
        tc1 = TrainConfig(
            loss="categorical_cross_entropy", max_epochs=p["pretrain_epochs"], **common
        )
        ckpt1, rep1 = pretrain_classification(
            tc1, trinary, model_config=mc, preprocess_config=pc, workdir=workdir
        )
        _emit(rep1.to_dict(), workdir / f"pretrain-{seed}.json")
        stages.append(rep1.to_dict())

    with stage("II (regression)"):
        quality = ensure_split(load_manifest(p["quality_manifest"]), stratify=True)
        tc2 = TrainConfig(loss="rmse", max_epochs=p["regression_epochs"], **common)
        ckpt2, rep2 = train_regression(ckpt1, tc2, quality, workdir=workdir)
        _emit(rep2.to_dict(), workdir / f"regression-{seed}.json")
        stages.append(rep2.to_dict())

    if not p["unlabeled_manifest"]:
        click.echo("no unlabeled manifest configured; stopping after stage II")
        _emit(
            {"stages": stages, "final_checkpoint": rep2.checkpoint_ref},
            workdir / f"pipeline-{seed}.json",
        )
        return

    with stage("III (student)"):
        unlabeled = load_manifest(p["unlabeled_manifest"])
        pseudo = generate_pseudo_labels(ckpt2, unlabeled, batch_size=p["batch_size"])
        pseudo_path = workdir / f"pseudo-{seed}.jsonl"
        save_manifest(pseudo, pseudo_path)
        tc3 = TrainConfig(
            loss="rmse", max_epochs=p["student_epochs"],
            student_init=p["student_init"],
            pseudo_validation_fraction=p["pseudo_validation_fraction"], **common,
        )
        ckpt3, rep3 = train_student(ckpt2, quality, pseudo, tc3, workdir=workdir)
        _emit(rep3.to_dict(), workdir / f"student-{seed}.json")
        stages.append(rep3.to_dict())
    _emit(
        {"stages": stages, "final_checkpoint": rep3.checkpoint_ref},
        workdir / f"pipeline-{seed}.json",
    )


def main():
    try:
        cli(auto_envvar_prefix="FUNDUSQ")
    except FundusQError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
