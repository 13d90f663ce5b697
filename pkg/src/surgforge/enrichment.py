"""Contextual caption enrichment from preceding captions and video metadata.

Enrichment is non-destructive (the raw caption is always kept) and
fail-open: a backend failure flags the pair and the pipeline moves on, so a
single flaky call can never discard a retained pair.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

from surgforge.backend.protocol import Kind
from surgforge.errors import BackendFailure, SchemaViolation
from surgforge.hierarchy import ClipCaptionPair, GranularityLevel

logger = logging.getLogger(__name__)

DEFAULT_CONTEXT_WINDOW = 5


@dataclass(frozen=True)
class VideoMeta:
    video_id: str
    title: str
    procedure_type: str
    fps: float
    source: str  # "public" | "private"
    duration_ms: int = 0

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if self.source not in ("public", "private"):
            raise ValueError(f"source must be public or private, got {self.source!r}")
        if not self.title:
            logger.warning("video %s has an empty title", self.video_id)


@dataclass(frozen=True)
class ContextWindow:
    level: GranularityLevel
    captions: tuple[str, ...]


def build_context(
    pairs_at_level: Sequence[ClipCaptionPair], j: int, n: int = DEFAULT_CONTEXT_WINDOW
) -> ContextWindow:
    """The min(j, n) raw captions immediately preceding index j, oldest first.

    ``pairs_at_level`` must already be one video's pairs at one level, in
    temporal order; the window never includes index j itself.
    """
    if not 0 <= j < len(pairs_at_level):
        raise IndexError(f"index {j} out of range for {len(pairs_at_level)} pairs")
    if n < 0:
        raise ValueError("window size must be >= 0")
    window = pairs_at_level[max(0, j - n) : j]
    return ContextWindow(
        level=pairs_at_level[j].level,
        captions=tuple(p.caption for p in window),
    )


def enrich_caption(
    pair: ClipCaptionPair, ctx: ContextWindow, meta: VideoMeta, client
) -> tuple[str | None, bool]:
    """Returns (enriched caption or None, enrichment_failed flag).

    The enriched text is stored alongside the raw caption, never replacing
    it. On backend failure the raw caption stands and the flag is set.
    """
    payload = {
        "caption": pair.caption,
        "context": list(ctx.captions),
        "title": meta.title,
        "procedure_type": meta.procedure_type,
        "level": pair.level.value,
    }
    try:
        result = client.invoke(Kind.TEXT_ENRICH, payload)
    except (BackendFailure, SchemaViolation) as exc:
        logger.warning(
            "enrichment failed for %s %s/%d: %s",
            pair.video_id, pair.level.value, pair.clip_index, exc,
        )
        return None, True
    return result["caption_enriched"], False
