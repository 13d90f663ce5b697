"""Dual-modality filtering: visual content classification with majority
voting and hierarchical label propagation, plus caption descriptiveness.

Visual classification runs only on task-level clips and propagates upward;
a parent segment inherits the unanimous label of its constituent tasks,
takes the strict majority otherwise, and falls to NON_SURGICAL on an exact
tie (conservative: ambiguous parents are rejected rather than kept). A pair
is retained iff it is surgical AND descriptive.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from surgforge.backend.protocol import Kind
from surgforge.errors import (
    DegenerateClip,
    DimensionMismatch,
    MissingChildLabel,
    SchemaViolation,
    UnparseableVerdict,
    ZeroVector,
)
from surgforge.hierarchy import HierarchySegmentation, Segment

logger = logging.getLogger(__name__)

DEFAULT_N_FRAMES = 24
DEFAULT_VOTE_THRESHOLD = 0.5


class VisualLabel(Enum):
    SURGICAL = "surgical"
    NON_SURGICAL = "non_surgical"


class TextualLabel(Enum):
    DESCRIPTIVE = "descriptive"
    NON_DESCRIPTIVE = "non_descriptive"


@dataclass(frozen=True)
class FrameSamplePlan:
    t_start: int
    t_end: int
    n_frames: int
    timestamps: tuple[int, ...]


@dataclass(frozen=True)
class ClassEmbedding:
    """A class represented by the re-normalized mean of its prompt embeddings."""

    label: str
    vector: np.ndarray


@dataclass(frozen=True)
class FilterVerdict:
    visual: VisualLabel
    textual: TextualLabel
    retained: bool


def plan_frame_samples(t_start: int, t_end: int, n_frames: int = DEFAULT_N_FRAMES) -> FrameSamplePlan:
    """Uniform center-of-bin sampling: timestamp_k = t_start +
    floor((k + 0.5) * span / n).

    Spans shorter than the requested frame count are sampled once per
    millisecond with n reduced accordingly.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    span = t_end - t_start
    if span < 1:
        raise DegenerateClip(f"clip [{t_start}, {t_end}] has no sampleable span")
    if span < n_frames:
        timestamps = tuple(range(t_start, t_end))
        return FrameSamplePlan(t_start, t_end, span, timestamps)
    timestamps = tuple(t_start + (2 * k + 1) * span // (2 * n_frames) for k in range(n_frames))
    return FrameSamplePlan(t_start, t_end, n_frames, timestamps)


def build_class_embedding(label: str, prompts: Sequence[str], client, dim: int | None = None) -> ClassEmbedding:
    """Embed each prompt, normalize each, average, re-normalize."""
    if not prompts:
        raise ValueError("prompt list is empty")
    payload: dict = {"texts": list(prompts)}
    if dim is not None:
        payload["dim"] = dim
    result = client.invoke(Kind.EMBED_TEXT, payload)
    vectors = np.asarray(result["vectors"], dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if np.any(norms < 1e-9):
        raise ZeroVector(f"class {label!r}: a prompt embedded to zero")
    mean = (vectors / norms).mean(axis=0)
    mean_norm = float(np.linalg.norm(mean))
    if mean_norm < 1e-9:
        raise ZeroVector(f"class {label!r}: prompt average collapsed to zero")
    return ClassEmbedding(label=label, vector=mean / mean_norm)


def classify_frame(frame_vec: np.ndarray, classes: Sequence[ClassEmbedding]) -> str:
    """Label of the class with highest cosine similarity; ties go to the
    first class in list order. Invariant under positive rescaling of the
    frame vector."""
    if len(classes) < 2:
        raise ValueError("need at least 2 classes")
    frame_vec = np.asarray(frame_vec, dtype=np.float64)
    for c in classes:
        if c.vector.shape != frame_vec.shape:
            raise DimensionMismatch(
                f"frame dim {frame_vec.shape} vs class {c.label!r} dim {c.vector.shape}"
            )
    norm = float(np.linalg.norm(frame_vec))
    if norm < 1e-12:
        return classes[0].label  # degenerate frame: all similarities equal
    best_i, best_sim = 0, -np.inf
    for i, c in enumerate(classes):
        sim = float(frame_vec @ c.vector) / norm
        if sim > best_sim:
            best_i, best_sim = i, sim
    return classes[best_i].label


def vote_clip(frame_labels: Sequence[VisualLabel], threshold: float = DEFAULT_VOTE_THRESHOLD) -> VisualLabel:
    """SURGICAL iff strictly more than ``threshold`` of the frames are
    surgical (at the default 0.5, exactly half is not enough)."""
    if not frame_labels:
        raise ValueError("no frame labels to vote on")
    n_surgical = sum(1 for lab in frame_labels if lab is VisualLabel.SURGICAL)
    if n_surgical / len(frame_labels) > threshold:
        return VisualLabel.SURGICAL
    return VisualLabel.NON_SURGICAL


def classify_clip_vote(
    frame_vecs: Sequence[np.ndarray],
    surgical: ClassEmbedding,
    non_surgical: ClassEmbedding,
    threshold: float = DEFAULT_VOTE_THRESHOLD,
) -> VisualLabel:
    """Per-frame classification followed by majority vote (the default)."""
    labels = []
    for vec in frame_vecs:
        label = classify_frame(vec, (surgical, non_surgical))
        labels.append(VisualLabel.SURGICAL if label == surgical.label else VisualLabel.NON_SURGICAL)
    return vote_clip(labels, threshold)


def classify_clip_mean_pool(
    frame_vecs: Sequence[np.ndarray],
    surgical: ClassEmbedding,
    non_surgical: ClassEmbedding,
) -> VisualLabel:
    """Alternative strategy: classify the mean-pooled frame embedding."""
    if not frame_vecs:
        raise ValueError("no frame vectors to pool")
    mean = np.mean(np.asarray(frame_vecs, dtype=np.float64), axis=0)
    label = classify_frame(mean, (surgical, non_surgical))
    return VisualLabel.SURGICAL if label == surgical.label else VisualLabel.NON_SURGICAL


def _aggregate(child_labels: list[VisualLabel]) -> VisualLabel:
    """Unanimous label, else strict majority, else NON_SURGICAL.

    A parent with no labeled children is NON_SURGICAL (fail-closed; the
    unanimity rule is vacuous there)."""
    if not child_labels:
        return VisualLabel.NON_SURGICAL
    n_surg = sum(1 for lab in child_labels if lab is VisualLabel.SURGICAL)
    n_non = len(child_labels) - n_surg
    if n_non == 0:
        return VisualLabel.SURGICAL
    if n_surg == 0:
        return VisualLabel.NON_SURGICAL
    if n_surg > n_non:
        return VisualLabel.SURGICAL
    return VisualLabel.NON_SURGICAL


def _contained(child: Segment, parent: Segment) -> bool:
    return parent.t_start <= child.t_start and child.t_end <= parent.t_end


def propagate_labels(
    task_labels: dict[int, VisualLabel], hierarchy: HierarchySegmentation
) -> tuple[dict[int, VisualLabel], dict[int, VisualLabel]]:
    """Propagate task-level labels to steps and phases.

    Steps aggregate over the tasks they contain; phases aggregate over their
    constituent tasks directly (not over step labels), so a phase's majority
    is taken at the finest granularity.
    """
    for task in hierarchy.tasks:
        if task.index not in task_labels:
            raise MissingChildLabel(f"task {task.index} has no visual label")
    step_labels: dict[int, VisualLabel] = {}
    for step in hierarchy.steps:
        children = [task_labels[t.index] for t in hierarchy.tasks if _contained(t, step)]
        step_labels[step.index] = _aggregate(children)
    phase_labels: dict[int, VisualLabel] = {}
    for phase in hierarchy.phases:
        children = [task_labels[t.index] for t in hierarchy.tasks if _contained(t, phase)]
        phase_labels[phase.index] = _aggregate(children)
    return step_labels, phase_labels


def judge_descriptive(caption: str, client) -> TextualLabel:
    """Binary descriptiveness verdict from the judge backend, unmodified."""
    if not caption:
        raise ValueError("caption is empty; empty-caption pairs are dropped upstream")
    try:
        result = client.invoke(Kind.TEXT_JUDGE, {"caption": caption})
    except SchemaViolation as exc:
        raise UnparseableVerdict(str(exc)) from exc
    if result["label"] == "descriptive":
        return TextualLabel.DESCRIPTIVE
    return TextualLabel.NON_DESCRIPTIVE


def apply_filter(visual: VisualLabel, textual: TextualLabel) -> FilterVerdict:
    """Retained iff surgical and descriptive."""
    return FilterVerdict(
        visual=visual,
        textual=textual,
        retained=(visual is VisualLabel.SURGICAL) and (textual is TextualLabel.DESCRIPTIVE),
    )
