"""Desk-scale contrastive training math: mixed-level batch sampling, dynamic
temporal sampling, the symmetric InfoNCE objective with learnable temperature,
closed-form gradients, and a toy trainer over linear-projection encoders.

The loss over a batch of B paired rows is

    L = 1/2 (L_v2t + L_t2v)
    L_v2t = -1/B sum_i log softmax_j(S_ij / tau)[i]     S = Zv @ Zt.T
    L_t2v = -1/B sum_i log softmax_j(S_ji / tau)[i]

with tau optimized in log-space so it stays positive without projection.
"""

import json
import logging
import random
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from surgforge.errors import (
    DimensionMismatch,
    Divergence,
    InsufficientPairs,
    NonFinite,
)
from surgforge.filtering import plan_frame_samples

logger = logging.getLogger(__name__)

INITIAL_TAU = 0.07  # common contrastive-learning starting point


@dataclass
class EmbeddingBatch:
    """Unit-normalized row embeddings for B (video, text) pairs."""

    Zv: np.ndarray
    Zt: np.ndarray
    levels: tuple[str, ...]

    def __post_init__(self):
        if self.Zv.shape != self.Zt.shape or self.Zv.ndim != 2 or self.Zv.shape[0] < 1:
            raise DimensionMismatch(f"bad batch shapes {self.Zv.shape} vs {self.Zt.shape}")
        if len(self.levels) != self.Zv.shape[0]:
            raise DimensionMismatch("levels length does not match batch size")
        for name, Z in (("Zv", self.Zv), ("Zt", self.Zt)):
            norms = np.linalg.norm(Z, axis=1)
            if not np.allclose(norms, 1.0, atol=1e-6):
                raise ValueError(f"{name} rows are not unit-normalized")


@dataclass
class Temperature:
    log_tau: float

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_tau))

    @staticmethod
    def from_tau(tau: float) -> "Temperature":
        if tau <= 0:
            raise ValueError("tau must be positive")
        return Temperature(log_tau=float(np.log(tau)))


@dataclass
class FrameSchedule:
    duration_ms: int
    n_frames: int
    timestamps: tuple[int, ...]
    stride_ms: float


def sample_mixed_batch(
    index: Sequence, batch_size: int, rng_seed: int
) -> list:
    """Uniform sampling without replacement over the union of all levels.

    Levels are deliberately not stratified: sampling the pooled index mirrors
    drawing pairs from different granularities into one batch. Deterministic
    for a given seed.
    """
    if not index:
        raise InsufficientPairs("pair index is empty")
    if batch_size > len(index):
        raise InsufficientPairs(
            f"batch size {batch_size} exceeds index size {len(index)}"
        )
    rng = random.Random(rng_seed)
    chosen = rng.sample(range(len(index)), batch_size)
    return [index[i] for i in chosen]


def dynamic_frame_schedule(t_start: int, t_end: int, n_frames: int) -> FrameSchedule:
    """Fixed frame count, stride proportional to clip duration.

    Shares the center-of-bin rule with the filter stage's frame sampler, so
    short task clips are sampled densely and long phase clips sparsely.
    """
    plan = plan_frame_samples(t_start, t_end, n_frames)
    duration = t_end - t_start
    return FrameSchedule(
        duration_ms=duration,
        n_frames=plan.n_frames,
        timestamps=plan.timestamps,
        stride_ms=duration / plan.n_frames,
    )


def similarity_matrix(Zv: np.ndarray, Zt: np.ndarray) -> np.ndarray:
    """Cosine similarities between unit rows: entry (i, j) = Zv_i . Zt_j."""
    Zv = np.asarray(Zv, dtype=np.float64)
    Zt = np.asarray(Zt, dtype=np.float64)
    if Zv.ndim != 2 or Zt.ndim != 2 or Zv.shape[1] != Zt.shape[1]:
        raise DimensionMismatch(f"shapes {Zv.shape} and {Zt.shape} are incompatible")
    return Zv @ Zt.T


def _log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def info_nce(Zv: np.ndarray, Zt: np.ndarray, tau: float) -> float:
    """Symmetric InfoNCE: average of the video-to-text and text-to-video
    directions, computed with row-max-shifted log-sum-exp."""
    Zv = np.asarray(Zv, dtype=np.float64)
    Zt = np.asarray(Zt, dtype=np.float64)
    if tau <= 0:
        raise ValueError("tau must be positive")
    if not (np.isfinite(Zv).all() and np.isfinite(Zt).all()):
        raise NonFinite("embeddings contain non-finite values")
    logits = similarity_matrix(Zv, Zt) / tau
    batch = logits.shape[0]
    if logits.shape[0] != logits.shape[1]:
        raise DimensionMismatch("batch sizes differ between modalities")
    diag = np.arange(batch)
    loss_v2t = -_log_softmax_rows(logits)[diag, diag].mean()
    loss_t2v = -_log_softmax_rows(logits.T)[diag, diag].mean()
    return float(0.5 * (loss_v2t + loss_t2v))


def info_nce_grad(
    Zv: np.ndarray, Zt: np.ndarray, tau: float
) -> tuple[np.ndarray, np.ndarray, float]:
    """Closed-form gradients (dL/dZv, dL/dZt, dL/dlog_tau).

    With P = row-softmax(S/tau) and C = column-softmax(S/tau), the gradient
    through the logits is G = (P + C - 2I) / (2B); the rest is the chain rule
    through S = Zv Zt^T and logits = S * exp(-log tau).
    """
    Zv = np.asarray(Zv, dtype=np.float64)
    Zt = np.asarray(Zt, dtype=np.float64)
    if tau <= 0:
        raise ValueError("tau must be positive")
    if not (np.isfinite(Zv).all() and np.isfinite(Zt).all()):
        raise NonFinite("embeddings contain non-finite values")
    S = similarity_matrix(Zv, Zt)
    batch = S.shape[0]
    if S.shape[0] != S.shape[1]:
        raise DimensionMismatch("batch sizes differ between modalities")
    logits = S / tau
    P = np.exp(_log_softmax_rows(logits))
    C = np.exp(_log_softmax_rows(logits.T)).T
    G = (P + C - 2.0 * np.eye(batch)) / (2.0 * batch)
    d_Zv = (G / tau) @ Zt
    d_Zt = (G.T / tau) @ Zv
    d_log_tau = float(-(G * S).sum() / tau)
    return d_Zv, d_Zt, d_log_tau


# --- toy trainer ----------------------------------------------------------------


@dataclass
class ToyEncoders:
    """Linear projections followed by row normalization; the smallest
    structure that makes the objective end-to-end trainable."""

    W_video: np.ndarray
    W_text: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.W_video).all() and np.isfinite(self.W_text).all()):
            raise NonFinite("encoder weights contain non-finite values")

    def encode(self, video_feats: np.ndarray, text_feats: np.ndarray):
        return _project_normalize(video_feats, self.W_video), _project_normalize(
            text_feats, self.W_text
        )

    def copy(self) -> "ToyEncoders":
        return ToyEncoders(self.W_video.copy(), self.W_text.copy())


def _project_normalize(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    U = X @ W
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    return U / np.maximum(norms, 1e-12)


def _normalize_backward(X: np.ndarray, W: np.ndarray, dZ: np.ndarray) -> np.ndarray:
    """Gradient through z = u/||u||, u = X W, back to W."""
    U = X @ W
    norms = np.maximum(np.linalg.norm(U, axis=1, keepdims=True), 1e-12)
    Z = U / norms
    dU = (dZ - Z * (dZ * Z).sum(axis=1, keepdims=True)) / norms
    return X.T @ dU


@dataclass
class SyntheticPairConfig:
    """Latent-aligned paired features with cluster structure: each sample's
    latent (cluster center + jitter) is mapped into both modalities.

    Defaults keep the set separable pair by pair: the jitter gives each
    sample a distinct latent, and modality noise stays well below it."""

    n_clusters: int = 4
    latent_dim: int = 8
    video_dim: int = 12
    text_dim: int = 10
    n_train: int = 48
    n_eval: int = 32
    center_scale: float = 3.0
    latent_jitter: float = 2.0
    modality_noise: float = 0.02
    seed: int = 0


def make_synthetic_pairs(cfg: SyntheticPairConfig):
    """Returns (train_video, train_text, eval_video, eval_text) matrices."""
    rng = np.random.default_rng(cfg.seed)
    centers = rng.normal(0.0, cfg.center_scale, size=(cfg.n_clusters, cfg.latent_dim))
    A_video = rng.normal(0.0, 1.0, size=(cfg.latent_dim, cfg.video_dim))
    A_text = rng.normal(0.0, 1.0, size=(cfg.latent_dim, cfg.text_dim))

    def draw(n: int):
        assignments = rng.integers(0, cfg.n_clusters, size=n)
        latents = centers[assignments] + rng.normal(
            0.0, cfg.latent_jitter, size=(n, cfg.latent_dim)
        )
        video = latents @ A_video + rng.normal(0.0, cfg.modality_noise, size=(n, cfg.video_dim))
        text = latents @ A_text + rng.normal(0.0, cfg.modality_noise, size=(n, cfg.text_dim))
        return video, text

    train_v, train_t = draw(cfg.n_train)
    eval_v, eval_t = draw(cfg.n_eval)
    return train_v, train_t, eval_v, eval_t


def retrieval_recall_at_1(Zv: np.ndarray, Zt: np.ndarray) -> float:
    """Fraction of rows whose matching column wins the similarity argmax."""
    sims = similarity_matrix(Zv, Zt)
    return float((sims.argmax(axis=1) == np.arange(sims.shape[0])).mean())


@dataclass
class TrainResult:
    encoders: ToyEncoders
    temperature: Temperature
    loss_trace: list[float]
    recall_at_1: float


TAU_BOUNDS = (0.01, 100.0)  # learnable temperature stays in a sane band
TAU_LR_SCALE = 0.1  # the temperature moves slower than the projections


def train_toy(
    train_video: np.ndarray,
    train_text: np.ndarray,
    encoders: ToyEncoders,
    steps: int = 500,
    lr: float = 0.1,
    rng_seed: int = 0,
    eval_video: np.ndarray | None = None,
    eval_text: np.ndarray | None = None,
    initial_tau: float = INITIAL_TAU,
    trace_sink: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Full-batch gradient descent on the projections and log-temperature.

    The temperature learns at a tenth of the projection rate and its log is
    clamped to a fixed band; letting it race outpaces the encoders (blowing
    it up flattens the loss to log B, collapsing it sharpens the landscape
    past what a fixed step can follow). On the default synthetic config the
    trailing 50 steps of the trace are non-increasing and held-out
    retrieval recall@1 reaches 1.0 within 500 steps.

    ``rng_seed`` pins any tie-breaking randomness source for reproducibility;
    the optimization itself is deterministic. Raises Divergence (with the
    step index) if the loss goes non-finite.
    """
    del rng_seed  # full-batch descent is deterministic; kept for interface stability
    enc = encoders.copy()
    temp = Temperature.from_tau(initial_tau)
    log_lo, log_hi = float(np.log(TAU_BOUNDS[0])), float(np.log(TAU_BOUNDS[1]))
    trace: list[float] = []
    for step in range(steps):
        Zv, Zt = enc.encode(train_video, train_text)
        loss = info_nce(Zv, Zt, temp.tau)
        if not np.isfinite(loss):
            raise Divergence(f"loss became non-finite at step {step}", step=step)
        trace.append(loss)
        if trace_sink is not None:
            trace_sink({"step": step, "loss": loss, "tau": temp.tau})
        d_Zv, d_Zt, d_log_tau = info_nce_grad(Zv, Zt, temp.tau)
        enc.W_video -= lr * _normalize_backward(train_video, enc.W_video, d_Zv)
        enc.W_text -= lr * _normalize_backward(train_text, enc.W_text, d_Zt)
        temp.log_tau = min(max(temp.log_tau - lr * TAU_LR_SCALE * d_log_tau, log_lo), log_hi)
    if eval_video is None:
        eval_video, eval_text = train_video, train_text
    Zv_eval, Zt_eval = enc.encode(eval_video, eval_text)
    recall = retrieval_recall_at_1(Zv_eval, Zt_eval)
    return TrainResult(encoders=enc, temperature=temp, loss_trace=trace, recall_at_1=recall)


def init_toy_encoders(video_dim: int, text_dim: int, embed_dim: int, seed: int) -> ToyEncoders:
    rng = np.random.default_rng(seed)
    return ToyEncoders(
        W_video=rng.normal(0.0, 0.2, size=(video_dim, embed_dim)),
        W_text=rng.normal(0.0, 0.2, size=(text_dim, embed_dim)),
    )


def write_loss_trace(trace: list[float], path) -> None:
    """Line-delimited records for plotting."""
    with open(path, "w", encoding="utf-8") as fh:
        for step, loss in enumerate(trace):
            fh.write(json.dumps({"step": step, "loss": loss}) + "\n")
