"""Zero-shot protocol, recognition metrics, and the linear probe."""

import itertools
import math

import numpy as np
import pytest

from surgforge.errors import LengthMismatch, NoPositives
from surgforge.evaluation import (
    FrameFeatureTrack,
    ProbeConfig,
    average_precision,
    linear_probe,
    map_over_classes,
    probe_loss_grad,
    videowise_accuracy_f1,
    window_embedding,
    zero_shot_classify,
)
from surgforge.filtering import ClassEmbedding


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def track(features, video_id="v"):
    return FrameFeatureTrack(video_id=video_id, features=np.asarray(features, dtype=float))


class TestWindowEmbedding:
    def test_constant_track_returns_the_constant(self):
        t = track([[3.0, 4.0]] * 10)
        assert np.allclose(window_embedding(t, center=4, window=16), [0.6, 0.8])

    def test_window_one_is_center_frame(self):
        t = track([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        assert np.allclose(window_embedding(t, center=1, window=1), [0.0, 1.0])

    def test_edge_replication_weights(self):
        # T=4, center=0, window=16: indices -8..7 clamp to frame 0 nine
        # times, frames 1 and 2 once each, frame 3 five times.
        feats = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 0.0]])
        t = track(feats)
        expected = (9 * feats[0] + feats[1] + feats[2] + 5 * feats[3]) / 16
        expected = expected / np.linalg.norm(expected)
        assert np.allclose(window_embedding(t, center=0, window=16), expected)

    def test_full_window_equals_global_mean(self):
        rng = np.random.default_rng(0)
        feats = rng.normal(size=(8, 5))
        t = track(feats)
        got = window_embedding(t, center=4, window=8)
        assert np.allclose(got, unit(feats.mean(axis=0)))


class TestZeroShotClassify:
    def classes(self, n=5, d=6, seed=0):
        rng = np.random.default_rng(seed)
        return [ClassEmbedding(str(i), unit(rng.normal(size=d))) for i in range(n)]

    def test_exact_class_match(self):
        classes = self.classes()
        rec = zero_shot_classify(classes[3].vector, classes)
        assert rec.predicted == 3

    def test_tie_breaks_to_first_index(self):
        classes = [
            ClassEmbedding("a", np.array([1.0, 0.0])),
            ClassEmbedding("b", np.array([1.0, 0.0])),
        ]
        rec = zero_shot_classify(np.array([0.3, 0.1]), classes)
        assert rec.predicted == 0

    def test_matches_brute_force_argmax(self):
        rng = np.random.default_rng(4)
        classes = self.classes(n=6, d=8, seed=5)
        for _ in range(100):
            v = rng.normal(size=8)
            rec = zero_shot_classify(v, classes)
            brute = max(
                range(6), key=lambda i: float(unit(v) @ classes[i].vector) - 1e-12 * i
            )
            assert rec.predicted == brute

    def test_rank_order_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(9)
        classes = self.classes(n=4, d=5, seed=2)
        v = rng.normal(size=5)
        rec = zero_shot_classify(v, classes)
        transformed = [math.tanh(3.0 * s) + 2.0 for s in rec.scores]
        assert np.argsort(transformed).tolist() == np.argsort(rec.scores).tolist()


class TestVideowiseAccuracyF1:
    def test_perfect_predictions(self):
        report = videowise_accuracy_f1({"v": ["a", "b", "a"]}, {"v": ["a", "b", "a"]})
        assert report.mean_accuracy == 1.0
        assert report.mean_f1 == 1.0

    def test_hand_computed_confusion(self):
        report = videowise_accuracy_f1(
            {"v": ["A", "B", "B", "B"]}, {"v": ["A", "A", "B", "B"]}
        )
        assert report.per_video["v"]["accuracy"] == pytest.approx(0.75)
        assert report.per_video["v"]["f1"] == pytest.approx(11.0 / 15.0, abs=1e-9)

    def test_two_videos_average_unweighted(self):
        report = videowise_accuracy_f1(
            {"a": ["x"] * 10, "b": ["x", "y"]},
            {"a": ["x"] * 10, "b": ["y", "y"]},
        )
        # video a: acc 1.0; video b: acc 0.5 despite different lengths
        assert report.mean_accuracy == pytest.approx((1.0 + 0.5) / 2)

    def test_class_absent_from_gt_excluded_from_f1(self):
        # prediction invents class C; F1 averages over gt classes {A, B} only
        report = videowise_accuracy_f1(
            {"v": ["A", "C", "B"]}, {"v": ["A", "A", "B"]}
        )
        f1_a = 2 * 1 / (2 * 1 + 0 + 1)
        f1_b = 1.0
        assert report.per_video["v"]["f1"] == pytest.approx((f1_a + f1_b) / 2)

    def test_f1_is_one_iff_predictions_equal_gt(self):
        import random

        rng = random.Random(0)
        for _ in range(200):
            n = rng.randint(1, 12)
            gt = [rng.choice("abc") for _ in range(n)]
            preds = [rng.choice("abc") for _ in range(n)]
            report = videowise_accuracy_f1({"v": preds}, {"v": gt})
            if preds == gt:
                assert report.mean_f1 == 1.0
            else:
                assert report.mean_f1 < 1.0

    def test_length_mismatch_raises(self):
        with pytest.raises(LengthMismatch):
            videowise_accuracy_f1({"v": ["a"]}, {"v": ["a", "b"]})


def oracle_ap(scores, labels):
    """From the definition, counting from scratch at every positive rank."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    positives = [r for r in range(len(order)) if labels[order[r]]]
    total = 0.0
    for r in positives:
        hits = sum(1 for q in range(r + 1) if labels[order[q]])
        total += hits / (r + 1)
    return total / len(positives)


class TestAveragePrecision:
    def test_worked_example(self):
        assert average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(
            (1.0 + 2.0 / 3.0) / 2.0
        )

    def test_all_positives_ranked_first(self):
        assert average_precision([0.9, 0.8, 0.1, 0.0], [1, 1, 0, 0]) == 1.0

    def test_single_positive_ranked_last(self):
        n = 6
        scores = [float(n - i) for i in range(n)]
        labels = [0] * (n - 1) + [1]
        assert average_precision(scores, labels) == pytest.approx(1.0 / n)

    def test_no_positives_raises(self):
        with pytest.raises(NoPositives):
            average_precision([0.5, 0.4], [0, 0])

    def test_exhaustive_up_to_length_six(self):
        values = (0.2, 0.5, 0.8)
        for n in range(1, 7):
            for score_idx in itertools.product(range(3), repeat=n):
                scores = [values[i] for i in score_idx]
                for mask in range(1, 2**n):
                    labels = [(mask >> i) & 1 for i in range(n)]
                    assert average_precision(scores, labels) == pytest.approx(
                        oracle_ap(scores, labels), abs=1e-12
                    )

    def test_map_skips_classes_without_positives(self):
        mean_ap, aps = map_over_classes(
            {"a": [0.9, 0.1], "b": [0.4, 0.6], "c": [0.2, 0.3]},
            {"a": [1, 0], "b": [0, 1], "c": [0, 0]},
        )
        assert set(aps) == {"a", "b"}
        assert mean_ap == pytest.approx(1.0)

    def test_map_with_no_positives_anywhere(self):
        with pytest.raises(NoPositives):
            map_over_classes({"a": [0.5]}, {"a": [0]})


class TestLinearProbe:
    def blobs(self, n=80, d=4, seed=0):
        rng = np.random.default_rng(seed)
        half = n // 2
        X = np.vstack(
            [
                rng.normal(loc=+2.0, scale=0.3, size=(half, d)),
                rng.normal(loc=-2.0, scale=0.3, size=(half, d)),
            ]
        )
        y = ["pos"] * half + ["neg"] * half
        return X, y

    def test_separable_blobs_reach_perfect_holdout(self):
        X, y = self.blobs()
        result = linear_probe(X, y, ProbeConfig(lr=0.5, epochs=200, seed=0))
        assert result.holdout_accuracy == 1.0
        assert result.holdout_f1 == 1.0

    def test_zero_lr_keeps_zero_weights_and_uniform_probabilities(self):
        X, y = self.blobs()
        result = linear_probe(X, y, ProbeConfig(lr=0.0, epochs=10, seed=0))
        assert np.array_equal(result.weights, np.zeros_like(result.weights))
        logits = X @ result.weights
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        assert np.allclose(probs, 0.5)

    def test_prediction_invariant_under_orthonormal_rotation(self):
        X, y = self.blobs(seed=3)
        rng = np.random.default_rng(7)
        Q, _ = np.linalg.qr(rng.normal(size=(X.shape[1], X.shape[1])))
        cfg = ProbeConfig(lr=0.3, epochs=150, l2=0.01, seed=1)
        plain = linear_probe(X, y, cfg)
        rotated = linear_probe(X @ Q, y, cfg)
        preds_plain = (X @ plain.weights).argmax(axis=1)
        preds_rot = ((X @ Q) @ rotated.weights).argmax(axis=1)
        assert np.array_equal(preds_plain, preds_rot)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(12, 5))
        y = rng.integers(0, 3, size=12)
        Y = np.eye(3)[y]
        W = rng.normal(size=(5, 3)) * 0.5
        _, grad = probe_loss_grad(W, X, Y, l2=0.1)
        h = 1e-6
        for i in range(W.shape[0]):
            for j in range(W.shape[1]):
                W[i, j] += h
                up, _ = probe_loss_grad(W, X, Y, l2=0.1)
                W[i, j] -= 2 * h
                down, _ = probe_loss_grad(W, X, Y, l2=0.1)
                W[i, j] += h
                numeric = (up - down) / (2 * h)
                denom = max(1.0, abs(numeric), abs(grad[i, j]))
                assert abs(grad[i, j] - numeric) / denom < 1e-5
