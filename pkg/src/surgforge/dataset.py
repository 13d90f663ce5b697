"""Manifest assembly, dataset statistics, and taxonomy classification.

The manifest is the pipeline's canonical output: line-delimited UTF-8 JSON,
one record per line, keys always emitted in MANIFEST_KEY_ORDER (absent
optionals are null) so identical inputs produce byte-identical files.
Non-retained pairs stay in the manifest with retained=false, which lets
filter-ablation variants be materialized without re-running earlier stages.
"""

import json
import logging
import statistics
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Optional

from surgforge.backend.protocol import Kind
from surgforge.errors import EmptyManifest, InputError, KeyMismatch

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1"

MANIFEST_KEY_ORDER = (
    "schema_version",
    "video_id",
    "level",
    "clip_index",
    "t_start_ms",
    "t_end_ms",
    "caption",
    "caption_enriched",
    "enrichment_failed",
    "visual_label",
    "textual_label",
    "retained",
    "parent_step",
    "parent_phase",
    "fps",
    "source",
    "taxonomy",
)

LEVELS = ("phase", "step", "task")


@dataclass(frozen=True)
class ManifestRecord:
    video_id: str
    level: str
    clip_index: int
    t_start_ms: int
    t_end_ms: int
    caption: str
    visual_label: str
    textual_label: str
    retained: bool
    fps: float
    source: str
    taxonomy: dict
    caption_enriched: Optional[str] = None
    enrichment_failed: bool = False
    parent_step: Optional[int] = None
    parent_phase: Optional[int] = None
    schema_version: str = SCHEMA_VERSION

    def __post_init__(self):
        if self.level not in LEVELS:
            raise InputError(f"bad level {self.level!r}")
        if self.t_start_ms >= self.t_end_ms:
            raise InputError(
                f"record {self.video_id}/{self.level}/{self.clip_index} has empty span"
            )
        should_retain = self.visual_label == "surgical" and self.textual_label == "descriptive"
        if self.retained != should_retain:
            raise InputError(
                f"record {self.video_id}/{self.level}/{self.clip_index}: retained flag "
                "inconsistent with labels"
            )

    def to_line(self) -> str:
        doc = {key: getattr(self, key) for key in MANIFEST_KEY_ORDER}
        return json.dumps(doc, ensure_ascii=False, separators=(",", ":"))

    @staticmethod
    def from_line(line: str) -> "ManifestRecord":
        doc = json.loads(line)
        kwargs = {f.name: doc[f.name] for f in fields(ManifestRecord) if f.name in doc}
        return ManifestRecord(**kwargs)


def write_manifest(records: Iterable[ManifestRecord], path: str | Path) -> int:
    """Write records in the given order; returns the record count."""
    path = Path(path)
    n = 0
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_line())
            fh.write("\n")
            n += 1
    return n


def read_manifest(path: str | Path) -> list[ManifestRecord]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(ManifestRecord.from_line(line))
    return out


def assemble_manifest(
    pairs,
    verdicts: dict,
    enrichments: dict,
    metas: dict,
    taxonomies: dict,
) -> list[ManifestRecord]:
    """Join pipeline outputs into manifest records.

    All inputs are keyed by (video_id, level value, clip_index) except metas
    and taxonomies, which are per-video. A pair without a verdict is a
    KeyMismatch: filtering must have covered every surviving pair.
    """
    records = []
    for pair in pairs:
        key = (pair.video_id, pair.level.value, pair.clip_index)
        if key not in verdicts:
            raise KeyMismatch(f"pair {key} has no filter verdict")
        verdict = verdicts[key]
        meta = metas[pair.video_id]
        enriched, failed = enrichments.get(key, (None, False))
        records.append(
            ManifestRecord(
                video_id=pair.video_id,
                level=pair.level.value,
                clip_index=pair.clip_index,
                t_start_ms=pair.t_start,
                t_end_ms=pair.t_end,
                caption=pair.caption,
                caption_enriched=enriched,
                enrichment_failed=failed,
                visual_label=verdict.visual.value,
                textual_label=verdict.textual.value,
                retained=verdict.retained,
                parent_step=pair.parent_step,
                parent_phase=pair.parent_phase,
                fps=meta.fps,
                source=meta.source,
                taxonomy=taxonomies.get(
                    pair.video_id,
                    {"specialty": "unknown", "subject": "unknown", "procedure": "unknown"},
                ),
            )
        )
    return records


# --- statistics ---------------------------------------------------------------


@dataclass
class StatsAccumulator:
    """Mergeable raw aggregates; shard-and-merge equals whole-file stats."""

    durations_ms: dict = field(default_factory=lambda: {lv: [] for lv in LEVELS})
    clips_per_video: dict = field(default_factory=lambda: {lv: {} for lv in LEVELS})
    pass_visual: dict = field(default_factory=lambda: {lv: 0 for lv in LEVELS})
    pass_textual: dict = field(default_factory=lambda: {lv: 0 for lv in LEVELS})
    retained: dict = field(default_factory=lambda: {lv: 0 for lv in LEVELS})
    taxonomy_counts: dict = field(
        default_factory=lambda: {"specialty": {}, "subject": {}, "procedure": {}}
    )

    def add(self, rec: ManifestRecord) -> None:
        lv = rec.level
        self.durations_ms[lv].append(rec.t_end_ms - rec.t_start_ms)
        per_video = self.clips_per_video[lv]
        per_video[rec.video_id] = per_video.get(rec.video_id, 0) + 1
        if rec.visual_label == "surgical":
            self.pass_visual[lv] += 1
        if rec.textual_label == "descriptive":
            self.pass_textual[lv] += 1
        if rec.retained:
            self.retained[lv] += 1
        for axis in ("specialty", "subject", "procedure"):
            name = rec.taxonomy.get(axis, "unknown")
            bucket = self.taxonomy_counts[axis]
            bucket[name] = bucket.get(name, 0) + 1

    def merge(self, other: "StatsAccumulator") -> None:
        for lv in LEVELS:
            self.durations_ms[lv].extend(other.durations_ms[lv])
            for vid, n in other.clips_per_video[lv].items():
                self.clips_per_video[lv][vid] = self.clips_per_video[lv].get(vid, 0) + n
            self.pass_visual[lv] += other.pass_visual[lv]
            self.pass_textual[lv] += other.pass_textual[lv]
            self.retained[lv] += other.retained[lv]
        for axis, counts in other.taxonomy_counts.items():
            bucket = self.taxonomy_counts[axis]
            for name, n in counts.items():
                bucket[name] = bucket.get(name, 0) + n


def _summary(values: list[int]) -> dict:
    if not values:
        return {"count": 0, "mean_s": None, "median_s": None, "min_s": None, "max_s": None}
    return {
        "count": len(values),
        # millisecond-exact sums; only the final division is float
        "mean_s": sum(values) / len(values) / 1000.0,
        "median_s": statistics.median(values) / 1000.0,
        "min_s": min(values) / 1000.0,
        "max_s": max(values) / 1000.0,
    }


def compute_stats(records: list[ManifestRecord]) -> dict:
    """Deterministic aggregation of a manifest into a report dict."""
    if not records:
        raise EmptyManifest("no records to aggregate")
    acc = StatsAccumulator()
    for rec in records:
        acc.add(rec)
    return finalize_stats(acc)


def finalize_stats(acc: StatsAccumulator) -> dict:
    report: dict = {"levels": {}, "retention": {}, "taxonomy": {}}
    total = {"pairs": 0, "retained": 0}
    for lv in LEVELS:
        durs = sorted(acc.durations_ms[lv])
        per_video = sorted(acc.clips_per_video[lv].values())
        report["levels"][lv] = {
            "pairs": len(durs),
            "duration": _summary(durs),
            "clips_per_video": _summary_counts(per_video),
        }
        report["retention"][lv] = {
            "pairs": len(durs),
            "pass_visual": acc.pass_visual[lv],
            "pass_textual": acc.pass_textual[lv],
            "retained": acc.retained[lv],
        }
        total["pairs"] += len(durs)
        total["retained"] += acc.retained[lv]
    report["retention"]["total"] = total
    for axis in ("specialty", "subject", "procedure"):
        report["taxonomy"][axis] = dict(sorted(acc.taxonomy_counts[axis].items()))
    return report


def _summary_counts(values: list[int]) -> dict:
    if not values:
        return {"videos": 0, "mean": None, "median": None, "min": None, "max": None}
    return {
        "videos": len(values),
        "mean": sum(values) / len(values),
        "median": statistics.median(values),
        "min": min(values),
        "max": max(values),
    }


def format_stats_table(report: dict) -> str:
    """Human-readable companion to the machine-readable report."""
    lines = []
    header = f"{'level':<8}{'pairs':>8}{'mean s':>10}{'median s':>10}{'retained':>10}"
    lines.append(header)
    lines.append("-" * len(header))
    for lv in LEVELS:
        level = report["levels"][lv]
        ret = report["retention"][lv]
        mean_s = level["duration"]["mean_s"]
        median_s = level["duration"]["median_s"]
        lines.append(
            f"{lv:<8}{level['pairs']:>8}"
            f"{(f'{mean_s:.1f}' if mean_s is not None else '-'):>10}"
            f"{(f'{median_s:.1f}' if median_s is not None else '-'):>10}"
            f"{ret['retained']:>10}"
        )
    total = report["retention"]["total"]
    lines.append("-" * len(header))
    lines.append(f"{'total':<8}{total['pairs']:>8}{'':>10}{'':>10}{total['retained']:>10}")
    return "\n".join(lines)


# --- taxonomy -----------------------------------------------------------------


@dataclass(frozen=True)
class TaxonomyTree:
    """specialty -> subject -> [procedure]; every procedure has one path."""

    tree: dict

    def __post_init__(self):
        seen: dict[str, tuple[str, str]] = {}
        for specialty, subjects in self.tree.items():
            if not isinstance(subjects, dict):
                raise InputError(f"specialty {specialty!r} must map to subjects")
            for subject, procedures in subjects.items():
                for proc in procedures:
                    if proc in seen:
                        raise InputError(
                            f"procedure {proc!r} appears under both {seen[proc]} "
                            f"and {(specialty, subject)}"
                        )
                    seen[proc] = (specialty, subject)

    @staticmethod
    def load(path: str | Path) -> "TaxonomyTree":
        return TaxonomyTree(json.loads(Path(path).read_text(encoding="utf-8")))

    def is_path(self, specialty: str, subject: str, procedure: str) -> bool:
        return procedure in self.tree.get(specialty, {}).get(subject, ())


UNKNOWN_TAXONOMY = {"specialty": "unknown", "subject": "unknown", "procedure": "unknown"}


def classify_taxonomy(
    transcript_summary: str, tree: TaxonomyTree, client
) -> tuple[dict, bool]:
    """Classify a video's summary into a root-to-leaf taxonomy path.

    Returns (triple dict, flagged). Anything the backend returns that is not
    a valid path in the tree maps to the unknown triple with the flag set;
    an empty summary short-circuits to unknown without a backend call.
    """
    if not tree.tree:
        raise InputError("taxonomy tree is empty")
    if not transcript_summary.strip():
        return dict(UNKNOWN_TAXONOMY), True
    result = client.invoke(
        Kind.TEXT_TAXONOMY, {"summary": transcript_summary, "tree": tree.tree}
    )
    triple = {
        "specialty": result["specialty"],
        "subject": result["subject"],
        "procedure": result["procedure"],
    }
    if not tree.is_path(**triple):
        logger.info("taxonomy answer %s is not a tree path; flagged unknown", triple)
        return dict(UNKNOWN_TAXONOMY), True
    return triple, False


def build_transcript_summary(phase_captions: list[str], char_budget: int = 2000) -> str:
    """The classification input: concatenated phase captions, truncated."""
    return " ".join(phase_captions)[:char_budget]
