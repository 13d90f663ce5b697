"""Zero-shot inference protocol, recognition metrics, and a linear probe
over frozen feature vectors.

Metric conventions (documented because aggregation details vary between
evaluation protocols): accuracy and F1 are computed per video and averaged
unweighted across videos; a video's F1 is the unweighted mean of per-class
F1 over the classes present in that video's ground truth. Average precision
is all-points (no interpolation) over a stable descending sort of scores.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from surgforge.errors import (
    DimensionMismatch,
    Divergence,
    EmptyTrack,
    InputError,
    LengthMismatch,
    NoPositives,
    ZeroVector,
)
from surgforge.filtering import ClassEmbedding

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 16


@dataclass(frozen=True)
class FrameFeatureTrack:
    video_id: str
    features: np.ndarray  # T x D
    frame_times_ms: tuple[int, ...] = ()

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise EmptyTrack(f"track {self.video_id!r} has no frames")


@dataclass(frozen=True)
class PredictionRecord:
    video_id: str
    frame_index: int
    scores: tuple[float, ...]
    predicted: int


@dataclass
class MetricsReport:
    per_video: dict[str, dict[str, float]] = field(default_factory=dict)
    mean_accuracy: float = 0.0
    mean_f1: float = 0.0
    per_class_ap: dict[str, float] = field(default_factory=dict)
    mean_ap: Optional[float] = None


def window_embedding(
    track: FrameFeatureTrack, center: int, window: int = DEFAULT_WINDOW
) -> np.ndarray:
    """Mean-pooled, re-normalized embedding of a fixed window centered on a
    frame; out-of-range indices replicate the edge frames so the window size
    never shrinks."""
    if window < 1:
        raise ValueError("window must be >= 1")
    n_frames = track.features.shape[0]
    lo = center - window // 2
    hi = center + (window + 1) // 2  # exclusive
    idx = np.clip(np.arange(lo, hi), 0, n_frames - 1)
    mean = track.features[idx].mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-12:
        raise ZeroVector(f"window at frame {center} pooled to zero")
    return mean / norm


def zero_shot_classify(
    vec: np.ndarray,
    class_embeddings: Sequence[ClassEmbedding],
    video_id: str = "",
    frame_index: int = 0,
) -> PredictionRecord:
    """Cosine scores against every class; argmax with first-index tie-break.

    For multi-label tasks the scores pass through as per-class confidences;
    the caller ranks or thresholds them."""
    if len(class_embeddings) < 2:
        raise ValueError("need at least 2 classes")
    vec = np.asarray(vec, dtype=np.float64)
    dims = {c.vector.shape for c in class_embeddings}
    if len(dims) != 1 or vec.shape not in dims:
        raise DimensionMismatch(f"vector dim {vec.shape} vs class dims {dims}")
    norm = float(np.linalg.norm(vec))
    scores = []
    for c in class_embeddings:
        denom = norm * float(np.linalg.norm(c.vector))
        scores.append(float(vec @ c.vector) / denom if denom > 0 else 0.0)
    predicted = int(np.argmax(scores))  # argmax returns the first maximum
    return PredictionRecord(
        video_id=video_id,
        frame_index=frame_index,
        scores=tuple(scores),
        predicted=predicted,
    )


def _video_f1(preds: Sequence, gts: Sequence) -> float:
    """Unweighted mean of per-class F1 over classes present in the ground
    truth; classes with neither predictions nor positives are skipped."""
    classes = sorted(set(gts), key=lambda c: str(c))
    f1s = []
    for cls in classes:
        tp = sum(1 for p, g in zip(preds, gts) if p == cls and g == cls)
        fp = sum(1 for p, g in zip(preds, gts) if p == cls and g != cls)
        fn = sum(1 for p, g in zip(preds, gts) if p != cls and g == cls)
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom > 0 else 0.0)
    return sum(f1s) / len(f1s) if f1s else 0.0


def videowise_accuracy_f1(
    predictions: dict[str, Sequence], ground_truth: dict[str, Sequence]
) -> MetricsReport:
    """Per-video accuracy and macro-F1, averaged unweighted over videos."""
    if set(predictions) != set(ground_truth):
        raise LengthMismatch("prediction and ground-truth video sets differ")
    report = MetricsReport()
    for video_id in sorted(ground_truth):
        preds, gts = predictions[video_id], ground_truth[video_id]
        if len(preds) != len(gts):
            raise LengthMismatch(
                f"video {video_id!r}: {len(preds)} predictions vs {len(gts)} labels"
            )
        if not gts:
            raise LengthMismatch(f"video {video_id!r} has no frames")
        acc = sum(1 for p, g in zip(preds, gts) if p == g) / len(gts)
        report.per_video[video_id] = {"accuracy": acc, "f1": _video_f1(preds, gts)}
    videos = report.per_video.values()
    report.mean_accuracy = sum(v["accuracy"] for v in videos) / len(report.per_video)
    report.mean_f1 = sum(v["f1"] for v in videos) / len(report.per_video)
    return report


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float:
    """All-points AP: stable sort by descending score, then the mean of
    precision-at-rank over the positive ranks."""
    if len(scores) != len(labels):
        raise LengthMismatch(f"{len(scores)} scores vs {len(labels)} labels")
    n_pos = sum(1 for lab in labels if lab)
    if n_pos == 0:
        raise NoPositives("no positive labels for this class")
    order = sorted(range(len(scores)), key=lambda i: -scores[i])  # stable
    tp = 0
    ap = 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i]:
            tp += 1
            ap += tp / rank
    return ap / n_pos


def map_over_classes(
    scores_per_class: dict[str, Sequence[float]],
    labels_per_class: dict[str, Sequence[int]],
) -> tuple[float, dict[str, float]]:
    """Mean AP over classes that have at least one positive; classes without
    positives are skipped and logged. Raises NoPositives when every class
    lacks positives."""
    aps: dict[str, float] = {}
    for cls in sorted(scores_per_class):
        try:
            aps[cls] = average_precision(scores_per_class[cls], labels_per_class[cls])
        except NoPositives:
            logger.info("class %r has no positives; skipped from mAP", cls)
    if not aps:
        raise NoPositives("no class has a positive label")
    return sum(aps.values()) / len(aps), aps


# --- linear probe -----------------------------------------------------------


@dataclass
class ProbeConfig:
    lr: float = 0.5
    epochs: int = 300
    l2: float = 0.0
    holdout_fraction: float = 0.25
    seed: int = 0


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def probe_loss_grad(
    W: np.ndarray, X: np.ndarray, Y: np.ndarray, l2: float
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax(X W) with isotropic l2 on W, and its
    gradient. Y is one-hot (N x C)."""
    n = X.shape[0]
    logits = X @ W
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-(Y * log_probs).sum() / n + 0.5 * l2 * (W**2).sum())
    grad = X.T @ (_softmax_rows(logits) - Y) / n + l2 * W
    return loss, grad


@dataclass
class ProbeResult:
    weights: np.ndarray
    classes: list
    holdout_accuracy: float
    holdout_f1: float
    loss_trace: list[float]


def linear_probe(features: np.ndarray, labels: Sequence, config: ProbeConfig) -> ProbeResult:
    """Multinomial logistic regression on frozen features by full-batch
    gradient descent from zero-initialized weights.

    A deterministic seeded shuffle carves out the holdout split; holdout
    accuracy/F1 are computed with the video-wise metric over the holdout
    treated as a single sequence."""
    features = np.asarray(features, dtype=np.float64)
    if not np.isfinite(features).all():
        raise InputError("features contain non-finite values")
    classes = sorted(set(labels), key=lambda c: str(c))
    if len(classes) < 2:
        raise InputError("need at least 2 classes present")
    class_index = {c: i for i, c in enumerate(classes)}
    y = np.array([class_index[lab] for lab in labels])
    Y = np.eye(len(classes))[y]

    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(y))
    n_holdout = max(1, int(round(len(y) * config.holdout_fraction)))
    holdout, train = order[:n_holdout], order[n_holdout:]
    if len(train) == 0:
        raise InputError("holdout fraction leaves no training data")

    W = np.zeros((features.shape[1], len(classes)))
    trace: list[float] = []
    for epoch in range(config.epochs):
        loss, grad = probe_loss_grad(W, features[train], Y[train], config.l2)
        if not np.isfinite(loss):
            raise Divergence(f"probe loss non-finite at epoch {epoch}", step=epoch)
        trace.append(loss)
        W -= config.lr * grad
    preds = [classes[i] for i in (features[holdout] @ W).argmax(axis=1)]
    gts = [labels[i] for i in holdout]
    report = videowise_accuracy_f1({"holdout": preds}, {"holdout": gts})
    return ProbeResult(
        weights=W,
        classes=classes,
        holdout_accuracy=report.mean_accuracy,
        holdout_f1=report.mean_f1,
        loss_trace=trace,
    )
