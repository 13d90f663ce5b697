"""Command-line entry points.

Exit codes: 0 ok, 2 config error, 3 input error, 4 backend error,
5 invariant violation, 1 unexpected crash.
"""

import json
import logging
import os
import sys
from pathlib import Path

import click

from surgforge import contrastive, dataset as ds, evaluation
from surgforge.config import load_config
from surgforge.errors import ConfigError, SurgForgeError
from surgforge.pipeline import PipelineRunner

logger = logging.getLogger(__name__)


def _fail(exc: SurgForgeError) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(exc.exit_code)


def _runner(config_path, corpus, workdir, mock, seed, workers, **toggles) -> PipelineRunner:
    overrides = dict(
        corpus_dir=corpus,
        workdir=workdir,
        seed=seed,
        workers=workers,
        **{k: v for k, v in toggles.items() if v is not None},
    )
    config = load_config(config_path, **{k: v for k, v in overrides.items() if v is not None})
    if mock:
        config.endpoints = {kind: "mock" for kind in config.endpoints}
    return PipelineRunner(config)


_common = [
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="YAML config file."),
    click.option("--corpus", type=click.Path(), default=None, help="Corpus directory."),
    click.option("--workdir", type=click.Path(), default=None, help="Output directory."),
    click.option("--mock", is_flag=True, help="Force in-process mock backends."),
    click.option("--seed", type=int, default=None, help="Seed for all randomness."),
    click.option("--workers", type=int, default=None, help="Video worker count."),
]


def common_options(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _stage_command(name: str, method: str, help_text: str):
    @main.command(name=name, help=help_text)
    @common_options
    def cmd(config_path, corpus, workdir, mock, seed, workers):
        try:
            runner = _runner(config_path, corpus, workdir, mock, seed, workers)
            info = getattr(runner, method)()
            click.echo(json.dumps(info))
            runner.close()
        except SurgForgeError as exc:
            _fail(exc)

    return cmd


_stage_command("ingest", "ingest", "Stage 1: transcript ingestion (file or speech backend).")
_stage_command("segment", "segment", "Stage 2a: hierarchical segmentation of transcripts.")
_stage_command("align", "align", "Stage 2b: clip-caption alignment at all levels.")
_stage_command("filter", "filter", "Stage 3: dual-modality filtering.")
_stage_command("enrich", "enrich", "Stage 4: contextual caption enrichment.")
_stage_command("taxonomy", "taxonomy", "Classify each video into the taxonomy tree.")


@main.command(help="Run every stage end to end and assemble the manifest.")
@common_options
@click.option("--no-mlsc", "mlsc", flag_value=False, default=None,
              help="Disable hierarchical captioning (sentence-level pairs only).")
@click.option("--no-dmf", "dmf", flag_value=False, default=None,
              help="Disable dual-modality filtering (retain everything).")
@click.option("--no-ce", "ce", flag_value=False, default=None,
              help="Disable contextual enrichment.")
def pipeline(config_path, corpus, workdir, mock, seed, workers, mlsc, dmf, ce):
    try:
        runner = _runner(
            config_path, corpus, workdir, mock, seed, workers,
            enable_mlsc=mlsc, enable_dmf=dmf, enable_ce=ce,
        )
        summary = runner.run_all()
        click.echo(json.dumps(summary))
        runner.close()
    except SurgForgeError as exc:
        _fail(exc)


@main.command(help="Aggregate a manifest into machine- and human-readable stats.")
@click.option("--manifest", type=click.Path(exists=False), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the JSON report here (default: alongside the manifest).")
def stats(manifest, out_path):
    try:
        manifest = Path(manifest)
        if not manifest.exists():
            raise ds.EmptyManifest(f"manifest not found: {manifest}")
        records = ds.read_manifest(manifest)
        report = ds.compute_stats(records)
        out = Path(out_path) if out_path else manifest.with_name("stats.json")
        out.write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
        table = ds.format_stats_table(report)
        out.with_suffix(".txt").write_text(table + "\n", encoding="utf-8")
        click.echo(table)
    except SurgForgeError as exc:
        _fail(exc)


@main.command(name="train-toy", help="Train the toy contrastive model on synthetic pairs.")
@click.option("--steps", type=int, default=500)
@click.option("--lr", type=float, default=0.1)
@click.option("--seed", type=int, default=0)
@click.option("--clusters", type=int, default=4)
@click.option("--trace-out", type=click.Path(), default=None,
              help="Write the loss trace as line-delimited records.")
def train_toy_cmd(steps, lr, seed, clusters, trace_out):
    try:
        cfg = contrastive.SyntheticPairConfig(n_clusters=clusters, seed=seed)
        train_v, train_t, eval_v, eval_t = contrastive.make_synthetic_pairs(cfg)
        encoders = contrastive.init_toy_encoders(cfg.video_dim, cfg.text_dim, 16, seed)
        result = contrastive.train_toy(
            train_v, train_t, encoders, steps=steps, lr=lr, rng_seed=seed,
            eval_video=eval_v, eval_text=eval_t,
        )
        if trace_out:
            contrastive.write_loss_trace(result.loss_trace, trace_out)
        click.echo(json.dumps({
            "steps": steps,
            "final_loss": result.loss_trace[-1] if result.loss_trace else None,
            "tau": result.temperature.tau,
            "recall_at_1": result.recall_at_1,
        }))
    except SurgForgeError as exc:
        _fail(exc)


@main.command(name="eval", help="Zero-shot inference and/or recognition metrics.")
@click.option("--predictions", type=click.Path(exists=True), default=None,
              help="Line-delimited {video_id, frame, label} or {..., scores}.")
@click.option("--features", type=click.Path(exists=True), default=None,
              help="Line-delimited {video_id, frame, vector}: run zero-shot inference.")
@click.option("--prompts", "prompts_path", type=click.Path(exists=True), default=None,
              help="Class -> prompt-list YAML for zero-shot inference.")
@click.option("--window", type=int, default=16,
              help="Frames pooled around each evaluation frame (zero-shot mode).")
@click.option("--ground-truth", type=click.Path(exists=True), required=True,
              help="Line-delimited {video_id, frame, label} or multi-label {..., labels}.")
@click.option("--mock", is_flag=True, help="Force the mock embedder (zero-shot mode).")
@click.option("--out", "out_path", type=click.Path(), default=None)
def eval_cmd(predictions, features, prompts_path, window, ground_truth, mock, out_path):
    try:
        if (predictions is None) == (features is None):
            raise ConfigError("pass exactly one of --predictions or --features")
        if features is not None:
            if prompts_path is None:
                raise ConfigError("--features requires --prompts")
            preds_docs = _zero_shot_predict(features, prompts_path, window, mock)
        else:
            preds_docs = _read_jsonl(predictions)
        gt_docs = _read_jsonl(ground_truth)
        report: dict = {}
        if "scores" in (preds_docs[0] if preds_docs else {}):
            per_class_scores, per_class_labels = _multilabel_tables(preds_docs, gt_docs)
            mean_ap, aps = evaluation.map_over_classes(per_class_scores, per_class_labels)
            report["mAP"] = mean_ap
            report["per_class_ap"] = aps
        else:
            preds = _sequences(preds_docs)
            gts = _sequences(gt_docs)
            metrics = evaluation.videowise_accuracy_f1(preds, gts)
            report["mean_accuracy"] = metrics.mean_accuracy
            report["mean_f1"] = metrics.mean_f1
            report["per_video"] = metrics.per_video
        text = json.dumps(report, indent=2, sort_keys=True)
        if out_path:
            Path(out_path).write_text(text, encoding="utf-8")
        click.echo(text)
    except SurgForgeError as exc:
        _fail(exc)


def _read_jsonl(path) -> list[dict]:
    docs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            docs.append(json.loads(line))
    return docs


def _zero_shot_predict(features_path, prompts_path, window, mock) -> list[dict]:
    """Window-pool per-frame features and classify them against the prompt
    ensembles, yielding prediction records for the metrics stage."""
    import numpy as np

    from surgforge.backend.client import BackendClient, make_endpoint
    from surgforge.backend.protocol import Kind
    from surgforge.config import load_prompt_sets
    from surgforge.filtering import build_class_embedding

    by_video: dict[str, list[dict]] = {}
    for doc in sorted(_read_jsonl(features_path), key=lambda d: (d["video_id"], d["frame"])):
        by_video.setdefault(doc["video_id"], []).append(doc)
    prompt_sets = load_prompt_sets(Path(prompts_path))
    spec = "mock" if mock else os.environ.get(Kind.env_var(Kind.EMBED_TEXT), "mock")
    client = BackendClient({Kind.EMBED_TEXT: make_endpoint(spec)})
    dim = len(next(iter(by_video.values()))[0]["vector"])
    classes = [
        build_class_embedding(name, prompts, client, dim)
        for name, prompts in prompt_sets.items()
    ]
    out = []
    for video_id, rows in by_video.items():
        track = evaluation.FrameFeatureTrack(
            video_id=video_id,
            features=np.asarray([r["vector"] for r in rows], dtype=float),
        )
        for i, row in enumerate(rows):
            pooled = evaluation.window_embedding(track, i, window)
            record = evaluation.zero_shot_classify(pooled, classes, video_id, row["frame"])
            out.append(
                {
                    "video_id": video_id,
                    "frame": row["frame"],
                    "label": classes[record.predicted].label,
                }
            )
    client.close()
    return out


def _sequences(docs: list[dict]) -> dict[str, list]:
    by_video: dict[str, list] = {}
    for doc in sorted(docs, key=lambda d: (d["video_id"], d["frame"])):
        by_video.setdefault(doc["video_id"], []).append(doc["label"])
    return by_video


def _multilabel_tables(preds_docs, gt_docs):
    gt_by_key = {(d["video_id"], d["frame"]): set(d["labels"]) for d in gt_docs}
    classes = sorted({c for d in preds_docs for c in d["scores"]})
    scores: dict[str, list[float]] = {c: [] for c in classes}
    labels: dict[str, list[int]] = {c: [] for c in classes}
    for doc in sorted(preds_docs, key=lambda d: (d["video_id"], d["frame"])):
        present = gt_by_key.get((doc["video_id"], doc["frame"]), set())
        for cls in classes:
            scores[cls].append(float(doc["scores"][cls]))
            labels[cls].append(1 if cls in present else 0)
    return scores, labels


if __name__ == "__main__":
    main()
