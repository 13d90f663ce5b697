"""Stage orchestration over a corpus directory.

Each stage processes one video at a time and writes one output file per
video (atomic tmp+rename), recording completion in a checkpoint ledger
keyed by (video_id, stage). Re-runs skip completed videos, so interrupted
runs resume where they stopped; backend calls are the cost center and are
never repeated for a finished video. Videos are processed by a configurable
worker pool; all outputs are keyed and sorted so results are byte-identical
regardless of worker count or completion order.

Workdir layout:

    transcripts/<vid>.json        canonical transcript (or .discarded.json)
    hierarchies/<vid>.json        validated segmentation
    pairs/<vid>.json              aligned pairs + empty-caption drop count
    filter/<vid>.json             per-segment labels and per-pair verdicts
    enrich/<vid>.json             enriched captions for retained pairs
    taxonomy/<vid>.json           per-video taxonomy triple
    manifest.jsonl                assembled dataset (sorted, deterministic)
    checkpoints.jsonl             ledger of completed (video_id, stage)
"""

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from surgforge import dataset as ds
from surgforge import enrichment, filtering, hierarchy as hi
from surgforge.backend.client import BackendClient, make_endpoint
from surgforge.backend.protocol import Kind
from surgforge.config import PipelineConfig, default_data_path, load_prompt_sets
from surgforge.errors import EmptyTranscription, InputError
from surgforge.media import FrameDecodeError, OpenCVDecoder, SceneScriptDecoder
from surgforge.transcript import Transcript, ingest_transcript

logger = logging.getLogger(__name__)

_LEVEL_RANK = {"phase": 0, "step": 1, "task": 2}


@dataclass(frozen=True)
class CorpusVideo:
    video_id: str
    meta: enrichment.VideoMeta
    transcript_path: Optional[Path]
    scenes_path: Optional[Path]
    video_path: Optional[Path]
    audio_path: Optional[Path]


def discover_corpus(corpus_dir: Path) -> list[CorpusVideo]:
    """Scan for ``<vid>.meta.json`` files and their sidecars."""
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise InputError(f"corpus directory not found: {corpus_dir}")
    videos = []
    for meta_path in sorted(corpus_dir.glob("*.meta.json")):
        doc = json.loads(meta_path.read_text(encoding="utf-8"))
        vid = doc["video_id"]
        meta = enrichment.VideoMeta(
            video_id=vid,
            title=doc.get("title", ""),
            procedure_type=doc.get("procedure_type", ""),
            fps=float(doc.get("fps", 30.0)),
            source=doc.get("source", "public"),
            duration_ms=int(doc["duration_ms"]),
        )

        def sidecar(suffix: str) -> Optional[Path]:
            p = corpus_dir / f"{vid}{suffix}"
            return p if p.exists() else None

        audio = doc.get("audio_path")
        video = doc.get("video_path")
        videos.append(
            CorpusVideo(
                video_id=vid,
                meta=meta,
                transcript_path=sidecar(".transcript.json"),
                scenes_path=sidecar(".scenes.json"),
                video_path=corpus_dir / video if video else None,
                audio_path=corpus_dir / audio if audio else None,
            )
        )
    if not videos:
        raise InputError(f"no *.meta.json files in {corpus_dir}")
    return videos


class CheckpointLedger:
    """Append-only record of completed (video_id, stage) work items."""

    def __init__(self, path: Path):
        self._path = path
        self._lock = threading.Lock()
        self._done: set[tuple[str, str]] = set()
        if path.exists():
            for line in path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    doc = json.loads(line)
                    self._done.add((doc["video_id"], doc["stage"]))

    def is_done(self, video_id: str, stage: str) -> bool:
        return (video_id, stage) in self._done

    def mark(self, video_id: str, stage: str) -> None:
        with self._lock:
            if (video_id, stage) in self._done:
                return
            self._done.add((video_id, stage))
            with self._path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps({"video_id": video_id, "stage": stage}) + "\n")


def _write_json(path: Path, doc) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(
        json.dumps(doc, ensure_ascii=False, separators=(",", ":"), indent=None),
        encoding="utf-8",
    )
    tmp.replace(path)


class PipelineRunner:
    def __init__(self, config: PipelineConfig, handler_factory: Callable | None = None):
        self.config = config
        self.workdir = Path(config.workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)
        for sub in ("transcripts", "hierarchies", "pairs", "filter", "enrich", "taxonomy"):
            (self.workdir / sub).mkdir(exist_ok=True)
        self.ledger = CheckpointLedger(self.workdir / "checkpoints.jsonl")
        self.videos = discover_corpus(config.corpus_dir)
        endpoints = {
            kind: make_endpoint(spec, handler_factory)
            for kind, spec in config.endpoints.items()
        }
        self.client = BackendClient(endpoints)
        self._class_lock = threading.Lock()
        self._classes: Optional[tuple[filtering.ClassEmbedding, filtering.ClassEmbedding]] = None

    # --- helpers -------------------------------------------------------------

    def _out(self, stage_dir: str, video_id: str) -> Path:
        return self.workdir / stage_dir / f"{video_id}.json"

    def _discard_marker(self, video_id: str) -> Path:
        return self.workdir / "transcripts" / f"{video_id}.discarded.json"

    def _is_discarded(self, video_id: str) -> bool:
        return self._discard_marker(video_id).exists()

    def _run_stage(self, stage: str, fn: Callable[[CorpusVideo], None]) -> dict:
        """Apply a per-video stage function over the corpus with the pool."""
        todo, skipped = [], 0
        for video in self.videos:
            if self.ledger.is_done(video.video_id, stage) and (
                self._out_path_for(stage, video.video_id).exists()
                or self._is_discarded(video.video_id)
            ):
                skipped += 1
                continue
            todo.append(video)

        def run_one(video: CorpusVideo) -> None:
            if stage != "ingest" and self._is_discarded(video.video_id):
                self.ledger.mark(video.video_id, stage)
                return
            fn(video)
            self.ledger.mark(video.video_id, stage)

        if self.config.workers == 1 or len(todo) <= 1:
            for video in todo:
                run_one(video)
        else:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                for future in [pool.submit(run_one, v) for v in todo]:
                    future.result()
        logger.info("stage %s: %d processed, %d skipped", stage, len(todo), skipped)
        return {"stage": stage, "processed": len(todo), "skipped": skipped}

    def _out_path_for(self, stage: str, video_id: str) -> Path:
        sub = {
            "ingest": "transcripts",
            "segment": "hierarchies",
            "align": "pairs",
            "filter": "filter",
            "enrich": "enrich",
            "taxonomy": "taxonomy",
        }[stage]
        return self._out(sub, video_id)

    def _load_transcript(self, video: CorpusVideo) -> Transcript:
        path = self._out("transcripts", video.video_id)
        if not path.exists():
            raise InputError(
                f"no ingested transcript for {video.video_id}; run `ingest` first"
            )
        doc = json.loads(path.read_text(encoding="utf-8"))
        return ingest_transcript(doc, doc["duration_ms"])

    def _load_hierarchy(self, video: CorpusVideo) -> hi.HierarchySegmentation:
        path = self._out("hierarchies", video.video_id)
        if not path.exists():
            raise InputError(
                f"no segmentation for {video.video_id}; run `segment` first"
            )
        return hi.proposal_from_result(json.loads(path.read_text(encoding="utf-8")))

    def _load_pairs(self, video: CorpusVideo) -> list[hi.ClipCaptionPair]:
        path = self._out("pairs", video.video_id)
        if not path.exists():
            raise InputError(f"no aligned pairs for {video.video_id}; run `align` first")
        doc = json.loads(path.read_text(encoding="utf-8"))
        return [
            hi.ClipCaptionPair(
                video_id=p["video_id"],
                level=hi.GranularityLevel(p["level"]),
                clip_index=p["clip_index"],
                t_start=p["t_start_ms"],
                t_end=p["t_end_ms"],
                caption=p["caption"],
                parent_step=p.get("parent_step"),
                parent_phase=p.get("parent_phase"),
            )
            for p in doc["pairs"]
        ]

    # --- stages ----------------------------------------------------------------

    def ingest(self) -> dict:
        def run(video: CorpusVideo) -> None:
            if video.transcript_path is not None:
                raw = json.loads(video.transcript_path.read_text(encoding="utf-8"))
            else:
                if video.audio_path is None:
                    raise InputError(
                        f"{video.video_id}: no transcript file and no audio_path in meta"
                    )
                raw = self.client.invoke(
                    Kind.ASR_TRANSCRIBE,
                    {
                        "video_id": video.video_id,
                        "audio_path": str(video.audio_path),
                        "duration_ms": video.meta.duration_ms,
                    },
                )
            try:
                transcript = ingest_transcript(raw, video.meta.duration_ms)
            except EmptyTranscription as exc:
                logger.info("discarding %s: %s", video.video_id, exc)
                _write_json(
                    self._discard_marker(video.video_id),
                    {"video_id": video.video_id, "reason": str(exc)},
                )
                return
            _write_json(self._out("transcripts", video.video_id), transcript.to_doc())

        return self._run_stage("ingest", run)

    def segment(self) -> dict:
        def run(video: CorpusVideo) -> None:
            transcript = self._load_transcript(video)
            if self.config.enable_mlsc:
                seg = hi.segment_transcript(transcript, self.client)
                doc = {
                    level_name: [
                        {"t_start_ms": s.t_start, "t_end_ms": s.t_end, "topic": s.topic or ""}
                        for s in segments
                    ]
                    for level_name, segments in (
                        ("phases", seg.phases),
                        ("steps", seg.steps),
                        ("tasks", seg.tasks),
                    )
                }
            else:
                # Baseline without hierarchical captioning: one task-level
                # segment per transcriber sentence, no coarser levels.
                doc = {
                    "phases": [],
                    "steps": [],
                    "tasks": [
                        {"t_start_ms": s.t_start, "t_end_ms": s.t_end, "topic": ""}
                        for s in transcript.sentences
                        if s.t_start < s.t_end
                    ],
                }
            _write_json(self._out("hierarchies", video.video_id), doc)

        return self._run_stage("segment", run)

    def align(self) -> dict:
        def run(video: CorpusVideo) -> None:
            transcript = self._load_transcript(video)
            h = self._load_hierarchy(video)
            pairs, dropped = [], 0
            for level in (
                hi.GranularityLevel.PHASE,
                hi.GranularityLevel.STEP,
                hi.GranularityLevel.TASK,
            ):
                if not h.at(level):
                    continue
                level_pairs, level_dropped = hi.align_segments(transcript, h, level)
                pairs.extend(level_pairs)
                dropped += level_dropped
            _write_json(
                self._out("pairs", video.video_id),
                {
                    "video_id": video.video_id,
                    "dropped_empty": dropped,
                    "pairs": [
                        {
                            "video_id": p.video_id,
                            "level": p.level.value,
                            "clip_index": p.clip_index,
                            "t_start_ms": p.t_start,
                            "t_end_ms": p.t_end,
                            "caption": p.caption,
                            "parent_step": p.parent_step,
                            "parent_phase": p.parent_phase,
                        }
                        for p in pairs
                    ],
                },
            )

        return self._run_stage("align", run)

    # --- filter stage ------------------------------------------------------------

    def _class_embeddings(self):
        with self._class_lock:
            if self._classes is None:
                prompts = load_prompt_sets(self.config.prompts_path)
                self._classes = (
                    filtering.build_class_embedding(
                        "surgical", prompts["surgical"], self.client, self.config.embed_dim
                    ),
                    filtering.build_class_embedding(
                        "non_surgical",
                        prompts["non_surgical"],
                        self.client,
                        self.config.embed_dim,
                    ),
                )
            return self._classes

    def _decoder_for(self, video: CorpusVideo):
        if video.scenes_path is not None:
            return SceneScriptDecoder(video.scenes_path)
        if video.video_path is not None and video.video_path.exists():
            return OpenCVDecoder(video.video_path)
        return None

    def _classify_task_clip(self, video: CorpusVideo, decoder, seg: hi.Segment):
        """Visual label for one task segment; failed frames vote non-surgical."""
        plan = filtering.plan_frame_samples(seg.t_start, seg.t_end, self.config.n_frames)
        frames, failed = [], 0
        for ts in plan.timestamps:
            if decoder is None:
                failed += 1
                continue
            try:
                frames.append(decoder.decode(video.video_id, ts))
            except FrameDecodeError:
                failed += 1
        vectors: list = []
        if frames:
            result = self.client.invoke(
                Kind.EMBED_IMAGE,
                {
                    "images": [f.to_payload_item() for f in frames],
                    "dim": self.config.embed_dim,
                },
            )
            vectors = [np.asarray(v, dtype=float) for v in result["vectors"]]
        surgical, non_surgical = self._class_embeddings()
        if self.config.visual_strategy == "mean_pool":
            if not vectors:
                return filtering.VisualLabel.NON_SURGICAL
            return filtering.classify_clip_mean_pool(vectors, surgical, non_surgical)
        labels = [
            filtering.VisualLabel.SURGICAL
            if filtering.classify_frame(v, (surgical, non_surgical)) == "surgical"
            else filtering.VisualLabel.NON_SURGICAL
            for v in vectors
        ]
        labels.extend([filtering.VisualLabel.NON_SURGICAL] * failed)
        return filtering.vote_clip(labels, self.config.vote_threshold)

    def filter(self) -> dict:
        if self.config.enable_dmf:
            self._class_embeddings()  # build once, outside the worker pool

        def run(video: CorpusVideo) -> None:
            pairs = self._load_pairs(video)
            if not self.config.enable_dmf:
                # Filtering bypassed: every pair passes both checks.
                verdicts = [
                    {
                        "level": p.level.value,
                        "clip_index": p.clip_index,
                        "visual": "surgical",
                        "textual": "descriptive",
                        "retained": True,
                    }
                    for p in pairs
                ]
                _write_json(
                    self._out("filter", video.video_id),
                    {"video_id": video.video_id, "dmf": False, "verdicts": verdicts},
                )
                return
            h = self._load_hierarchy(video)
            decoder = self._decoder_for(video)
            task_labels = {
                seg.index: self._classify_task_clip(video, decoder, seg)
                for seg in h.tasks
            }
            step_labels, phase_labels = filtering.propagate_labels(task_labels, h)
            by_level = {
                "task": task_labels,
                "step": step_labels,
                "phase": phase_labels,
            }
            verdicts = []
            for p in pairs:
                visual = by_level[p.level.value].get(
                    p.clip_index, filtering.VisualLabel.NON_SURGICAL
                )
                textual = filtering.judge_descriptive(p.caption, self.client)
                verdict = filtering.apply_filter(visual, textual)
                verdicts.append(
                    {
                        "level": p.level.value,
                        "clip_index": p.clip_index,
                        "visual": verdict.visual.value,
                        "textual": verdict.textual.value,
                        "retained": verdict.retained,
                    }
                )
            _write_json(
                self._out("filter", video.video_id),
                {"video_id": video.video_id, "dmf": True, "verdicts": verdicts},
            )

        return self._run_stage("filter", run)

    def _load_verdicts(self, video: CorpusVideo) -> dict[tuple[str, int], filtering.FilterVerdict]:
        path = self._out("filter", video.video_id)
        if not path.exists():
            raise InputError(
                f"no filter verdicts for {video.video_id}; run `filter` first"
            )
        doc = json.loads(path.read_text(encoding="utf-8"))
        out = {}
        for v in doc["verdicts"]:
            out[(v["level"], v["clip_index"])] = filtering.FilterVerdict(
                visual=filtering.VisualLabel(v["visual"]),
                textual=filtering.TextualLabel(v["textual"]),
                retained=v["retained"],
            )
        return out

    def enrich(self) -> dict:
        def run(video: CorpusVideo) -> None:
            pairs = self._load_pairs(video)
            verdicts = self._load_verdicts(video)
            entries = []
            if self.config.enable_ce:
                for level in ("phase", "step", "task"):
                    at_level = sorted(
                        (q for q in pairs if q.level.value == level),
                        key=lambda q: q.clip_index,
                    )
                    retained = [
                        p for p in at_level if verdicts[(level, p.clip_index)].retained
                    ]
                    for j, pair in enumerate(retained):
                        ctx = enrichment.build_context(retained, j, self.config.context_window)
                        enriched, failed = enrichment.enrich_caption(
                            pair, ctx, video.meta, self.client
                        )
                        entries.append(
                            {
                                "level": level,
                                "clip_index": pair.clip_index,
                                "caption_enriched": enriched,
                                "enrichment_failed": failed,
                            }
                        )
            _write_json(
                self._out("enrich", video.video_id),
                {"video_id": video.video_id, "ce": self.config.enable_ce, "entries": entries},
            )

        result = self._run_stage("enrich", run)
        self.assemble_manifest()
        return result

    def taxonomy(self) -> dict:
        tree = ds.TaxonomyTree.load(
            self.config.taxonomy_path or default_data_path("taxonomy.json")
        )

        def run(video: CorpusVideo) -> None:
            pairs = self._load_pairs(video)
            captions = []
            for level in ("phase", "step", "task"):
                captions = [
                    p.caption
                    for p in sorted(
                        (q for q in pairs if q.level.value == level),
                        key=lambda q: q.clip_index,
                    )
                ]
                if captions:
                    break
            summary = ds.build_transcript_summary(captions, self.config.summary_chars)
            triple, flagged = ds.classify_taxonomy(summary, tree, self.client)
            _write_json(
                self._out("taxonomy", video.video_id),
                {"video_id": video.video_id, "taxonomy": triple, "flagged": flagged},
            )

        result = self._run_stage("taxonomy", run)
        self.assemble_manifest()
        return result

    # --- assembly ----------------------------------------------------------------

    def _active_videos(self) -> list[CorpusVideo]:
        return [v for v in self.videos if not self._is_discarded(v.video_id)]

    def assemble_manifest(self) -> Optional[Path]:
        """Write manifest.jsonl if pairs, verdicts, and enrichment outputs
        exist for every non-discarded video; no-op otherwise."""
        videos = self._active_videos()
        for video in videos:
            for stage_dir in ("pairs", "filter", "enrich"):
                if not self._out(stage_dir, video.video_id).exists():
                    logger.debug(
                        "manifest not assembled: %s missing for %s",
                        stage_dir, video.video_id,
                    )
                    return None
        all_pairs, verdicts, enrichments, metas, taxonomies = [], {}, {}, {}, {}
        for video in videos:
            metas[video.video_id] = video.meta
            pairs = self._load_pairs(video)
            all_pairs.extend(pairs)
            for key, verdict in self._load_verdicts(video).items():
                verdicts[(video.video_id, key[0], key[1])] = verdict
            enrich_doc = json.loads(
                self._out("enrich", video.video_id).read_text(encoding="utf-8")
            )
            for entry in enrich_doc["entries"]:
                enrichments[(video.video_id, entry["level"], entry["clip_index"])] = (
                    entry["caption_enriched"],
                    entry["enrichment_failed"],
                )
            tax_path = self._out("taxonomy", video.video_id)
            if tax_path.exists():
                taxonomies[video.video_id] = json.loads(
                    tax_path.read_text(encoding="utf-8")
                )["taxonomy"]
        all_pairs.sort(key=lambda p: (p.video_id, _LEVEL_RANK[p.level.value], p.clip_index))
        records = ds.assemble_manifest(all_pairs, verdicts, enrichments, metas, taxonomies)
        manifest_path = self.workdir / "manifest.jsonl"
        ds.write_manifest(records, manifest_path)
        logger.info("manifest assembled: %d records", len(records))
        return manifest_path

    def run_all(self) -> dict:
        summary = {}
        for stage_fn in (self.ingest, self.segment, self.align, self.filter,
                         self.enrich, self.taxonomy):
            info = stage_fn()
            summary[info["stage"]] = info
        return summary

    def close(self) -> None:
        self.client.close()
