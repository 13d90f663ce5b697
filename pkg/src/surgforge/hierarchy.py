"""Phase/step/task segmentation of a transcript and clip-caption alignment.

A segmenter backend proposes boundaries; this module repairs them into a
strictly nested, non-overlapping hierarchy and then pairs each segment with
the transcript words fully contained in its span (both word endpoints inside
the segment). Pairs whose span captures no words are dropped and counted.
"""

import bisect
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from surgforge.backend.protocol import Kind
from surgforge.errors import EmptyLevel, SchemaViolation, UnparseableProposal
from surgforge.transcript import Transcript

logger = logging.getLogger(__name__)


class GranularityLevel(Enum):
    """Coarse-to-fine granularity; PHASE is coarser than STEP than TASK."""

    PHASE = "phase"
    STEP = "step"
    TASK = "task"

    @property
    def coarseness(self) -> int:
        return {"phase": 2, "step": 1, "task": 0}[self.value]


@dataclass(frozen=True)
class Segment:
    level: GranularityLevel
    index: int
    t_start: int
    t_end: int
    topic: Optional[str] = None

    def __post_init__(self):
        if self.t_start >= self.t_end:
            raise ValueError(f"segment span empty: [{self.t_start}, {self.t_end}]")

    def overlap(self, other: "Segment") -> int:
        return max(0, min(self.t_end, other.t_end) - max(self.t_start, other.t_start))


@dataclass(frozen=True)
class HierarchySegmentation:
    phases: tuple[Segment, ...]
    steps: tuple[Segment, ...]
    tasks: tuple[Segment, ...]

    def at(self, level: GranularityLevel) -> tuple[Segment, ...]:
        return {
            GranularityLevel.PHASE: self.phases,
            GranularityLevel.STEP: self.steps,
            GranularityLevel.TASK: self.tasks,
        }[level]


@dataclass(frozen=True)
class ClipCaptionPair:
    """One segment plus the space-joined words its span fully contains."""

    video_id: str
    level: GranularityLevel
    clip_index: int
    t_start: int
    t_end: int
    caption: str
    parent_step: Optional[int] = None
    parent_phase: Optional[int] = None


def _clamp_level(
    segments: list[Segment], level: GranularityLevel, duration: int
) -> list[Segment]:
    """Clamp spans to [0, duration], drop emptied, sort, de-overlap."""
    clamped = []
    for seg in segments:
        t_start = max(0, seg.t_start)
        t_end = min(duration, seg.t_end)
        if t_start < t_end:
            clamped.append((t_start, t_end, seg.topic))
    clamped.sort(key=lambda s: (s[0], s[1]))
    out: list[Segment] = []
    for t_start, t_end, topic in clamped:
        if out and t_start < out[-1].t_end:
            # Later segment yields: its start moves to the earlier one's end.
            t_start = out[-1].t_end
            if t_start >= t_end:
                logger.debug("dropping %s segment emptied by overlap repair", level.value)
                continue
        out.append(Segment(level, len(out), t_start, t_end, topic))
    return out


def _snap_into_parents(
    children: list[Segment], parents: list[Segment], level: GranularityLevel
) -> list[Segment]:
    """Assign each child to one parent and clamp it inside that parent.

    The parent is the one with maximal overlap; a child overlapping no parent
    is assigned to the nearest parent by gap distance (and usually drops out
    once clamped). Children are then re-de-overlapped; because each survivor
    lies inside a single parent and parents are disjoint, this preserves
    nesting.
    """
    snapped: list[tuple[int, int, Optional[str]]] = []
    for child in children:
        best = max(
            parents,
            key=lambda p: (
                child.overlap(p),
                -_gap(child, p),
                -p.index,  # prefer the earlier parent on exact ties
            ),
        )
        t_start = max(child.t_start, best.t_start)
        t_end = min(child.t_end, best.t_end)
        if t_start < t_end:
            snapped.append((t_start, t_end, child.topic))
        else:
            logger.debug("dropping %s segment with no room in any parent", level.value)
    snapped.sort(key=lambda s: (s[0], s[1]))
    out: list[Segment] = []
    for t_start, t_end, topic in snapped:
        if out and t_start < out[-1].t_end:
            t_start = out[-1].t_end
            if t_start >= t_end:
                continue
        out.append(Segment(level, len(out), t_start, t_end, topic))
    return out


def _gap(a: Segment, b: Segment) -> int:
    if a.t_end <= b.t_start:
        return b.t_start - a.t_end
    if b.t_end <= a.t_start:
        return a.t_start - b.t_end
    return 0


def validate_hierarchy(
    proposal: HierarchySegmentation, transcript: Transcript
) -> HierarchySegmentation:
    """Repair a proposed segmentation into a valid nested hierarchy.

    Within each level, overlaps are resolved in favor of the earlier segment;
    spans are clamped to the video; steps and tasks are snapped into their
    maximal-overlap parent. Raises EmptyLevel if any level ends up empty.
    The function is idempotent: valid hierarchies pass through unchanged.
    """
    duration = transcript.duration
    phases = _clamp_level(list(proposal.phases), GranularityLevel.PHASE, duration)
    steps = _clamp_level(list(proposal.steps), GranularityLevel.STEP, duration)
    tasks = _clamp_level(list(proposal.tasks), GranularityLevel.TASK, duration)
    if phases:
        steps = _snap_into_parents(steps, phases, GranularityLevel.STEP)
    if steps:
        tasks = _snap_into_parents(tasks, steps, GranularityLevel.TASK)
    for name, level in (("phase", phases), ("step", steps), ("task", tasks)):
        if not level:
            raise EmptyLevel(f"no {name} segments survive repair")
    return HierarchySegmentation(tuple(phases), tuple(steps), tuple(tasks))


def proposal_from_result(result: dict) -> HierarchySegmentation:
    """Build an (unvalidated) segmentation from a segmenter wire result."""

    def build(items: list[dict], level: GranularityLevel) -> tuple[Segment, ...]:
        out = []
        for i, seg in enumerate(items):
            if seg["t_start_ms"] >= seg["t_end_ms"]:
                continue  # empty proposals carry no information
            out.append(
                Segment(level, i, seg["t_start_ms"], seg["t_end_ms"], seg.get("topic"))
            )
        return tuple(out)

    return HierarchySegmentation(
        phases=build(result["phases"], GranularityLevel.PHASE),
        steps=build(result["steps"], GranularityLevel.STEP),
        tasks=build(result["tasks"], GranularityLevel.TASK),
    )


def segment_transcript(transcript: Transcript, client) -> HierarchySegmentation:
    """One segmenter call per video, then repair. Raises UnparseableProposal
    when the backend's output violates the response schema."""
    payload = {
        "video_id": transcript.video_id,
        "sentences": [
            {"text": s.text, "t_start_ms": s.t_start, "t_end_ms": s.t_end}
            for s in transcript.sentences
        ],
        "duration_ms": transcript.duration,
    }
    try:
        result = client.invoke(Kind.SEG_HIERARCHY, payload)
    except SchemaViolation as exc:
        raise UnparseableProposal(str(exc)) from exc
    return validate_hierarchy(proposal_from_result(result), transcript)


def find_parent(child: Segment, parents: tuple[Segment, ...]) -> Optional[Segment]:
    """Parent whose span contains the child (maximal overlap on validated
    hierarchies, where containment is guaranteed)."""
    best, best_ov = None, 0
    for p in parents:
        ov = child.overlap(p)
        if ov > best_ov:
            best, best_ov = p, ov
    return best


def align_segments(
    transcript: Transcript,
    hierarchy: HierarchySegmentation,
    level: GranularityLevel,
) -> tuple[list[ClipCaptionPair], int]:
    """Pair each segment at ``level`` with its fully-contained words.

    A word belongs to a segment iff segment.t_start <= word.t_start and
    word.t_end <= segment.t_end (containment on both ends, so boundary
    straddlers are excluded). Returns (pairs, dropped_empty_count); segments
    capturing no words produce no pair.
    """
    words = transcript.words
    starts = [w.t_start for w in words]
    pairs: list[ClipCaptionPair] = []
    dropped = 0
    for seg in hierarchy.at(level):
        lo = bisect.bisect_left(starts, seg.t_start)
        captured = []
        for w in words[lo:]:
            if w.t_start > seg.t_end:
                break
            if w.t_end <= seg.t_end:
                captured.append(w.text)
        if not captured:
            dropped += 1
            continue
        parent_step = parent_phase = None
        if level is GranularityLevel.TASK:
            step = find_parent(seg, hierarchy.steps)
            parent_step = step.index if step else None
        if level is not GranularityLevel.PHASE:
            phase = find_parent(seg, hierarchy.phases)
            parent_phase = phase.index if phase else None
        pairs.append(
            ClipCaptionPair(
                video_id=transcript.video_id,
                level=level,
                clip_index=seg.index,
                t_start=seg.t_start,
                t_end=seg.t_end,
                caption=" ".join(captured),
                parent_step=parent_step,
                parent_phase=parent_phase,
            )
        )
    return pairs, dropped
