"""Shared builders for tests: hand-rolled transcripts, random transcripts,
and random valid hierarchies with independent brute-force oracles."""

import random
from pathlib import Path

import pytest

from surgforge.hierarchy import GranularityLevel, HierarchySegmentation, Segment
from surgforge.transcript import SentenceSpan, Transcript, WordToken

FIXTURE_CORPUS = Path(__file__).resolve().parent.parent / "fixtures" / "corpus"


def make_transcript(words, sentences=None, duration=None, video_id="vid"):
    """words: list of (text, t_start, t_end)."""
    word_objs = tuple(WordToken(t, s, e) for t, s, e in words)
    if duration is None:
        duration = max((w.t_end for w in word_objs), default=1000)
    if sentences is None:
        sentences = [("all of it", 0, duration)]
    sentence_objs = tuple(SentenceSpan(t, s, e) for t, s, e in sentences)
    return Transcript(
        video_id=video_id, sentences=sentence_objs, words=word_objs, duration=duration
    )


def random_transcript(rng: random.Random, max_words=200, video_id="rand"):
    """Non-overlapping words with random gaps; at least one word."""
    n_words = rng.randint(1, max_words)
    words = []
    t = rng.randint(0, 500)
    for i in range(n_words):
        length = rng.randint(1, 800)
        words.append((f"w{i}", t, t + length))
        t += length + rng.randint(0, 400)
    duration = t + rng.randint(0, 1000)
    return make_transcript(
        words, sentences=[("x", 0, duration)], duration=duration, video_id=video_id
    )


def random_cuts(rng: random.Random, lo: int, hi: int, n_parts: int) -> list[tuple[int, int]]:
    """Split [lo, hi) into n_parts non-empty contiguous spans."""
    n_parts = min(n_parts, hi - lo)
    cuts = sorted(rng.sample(range(lo + 1, hi), n_parts - 1)) if n_parts > 1 else []
    bounds = [lo] + cuts + [hi]
    return [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]


def random_valid_hierarchy(
    rng: random.Random,
    duration: int,
    max_phases=5,
    max_steps=4,
    max_tasks=6,
    min_tasks=1,
) -> HierarchySegmentation:
    """A nested hierarchy built from random cuts; always valid."""
    duration = max(duration, 200)
    phases, steps, tasks = [], [], []
    for p_span in random_cuts(rng, 0, duration, rng.randint(1, max_phases)):
        p = Segment(GranularityLevel.PHASE, len(phases), *p_span)
        phases.append(p)
        for s_span in random_cuts(rng, p.t_start, p.t_end, rng.randint(1, max_steps)):
            s = Segment(GranularityLevel.STEP, len(steps), *s_span)
            steps.append(s)
            n_tasks = rng.randint(min_tasks, max_tasks)
            if n_tasks == 0:
                continue
            for t_span in random_cuts(rng, s.t_start, s.t_end, n_tasks):
                tasks.append(Segment(GranularityLevel.TASK, len(tasks), *t_span))
    return HierarchySegmentation(tuple(phases), tuple(steps), tuple(tasks))


def brute_force_words_in_span(transcript, t_start, t_end):
    """The alignment oracle: scan every (word, segment) combination."""
    return [
        w.text
        for w in transcript.words
        if t_start <= w.t_start and w.t_end <= t_end
    ]


@pytest.fixture
def fixture_corpus() -> Path:
    assert FIXTURE_CORPUS.is_dir(), "fixture corpus missing"
    return FIXTURE_CORPUS
