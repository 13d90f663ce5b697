"""Stage 2: hierarchy validation/repair and clip-caption alignment."""

import random

import pytest

from conftest import (
    brute_force_words_in_span,
    make_transcript,
    random_transcript,
    random_valid_hierarchy,
)
from surgforge.backend.client import BackendClient, InProcessEndpoint
from surgforge.backend.mock import MockBackend
from surgforge.backend.protocol import BackendResponse, Kind
from surgforge.errors import EmptyLevel, UnparseableProposal
from surgforge.hierarchy import (
    GranularityLevel,
    HierarchySegmentation,
    Segment,
    align_segments,
    segment_transcript,
    validate_hierarchy,
)

P, S, T = GranularityLevel.PHASE, GranularityLevel.STEP, GranularityLevel.TASK


def seg(level, index, t_start, t_end):
    return Segment(level, index, t_start, t_end)


def hier(phases, steps, tasks):
    return HierarchySegmentation(
        tuple(seg(P, i, *sp) for i, sp in enumerate(phases)),
        tuple(seg(S, i, *sp) for i, sp in enumerate(steps)),
        tuple(seg(T, i, *sp) for i, sp in enumerate(tasks)),
    )


def mock_client():
    return BackendClient({Kind.SEG_HIERARCHY: InProcessEndpoint(MockBackend().handle)})


def six_sentence_transcript():
    sentences = [(f"sentence {k}", 10_000 * k, 10_000 * k + 9_000) for k in range(6)]
    words = []
    for k in range(6):
        for j in range(3):
            start = 10_000 * k + 2_000 * j
            words.append((f"s{k}w{j}", start, start + 1_500))
    return make_transcript(words, sentences=sentences, duration=60_000)


class TestSegmentTranscript:
    def test_six_sentences_give_1_2_3_nested(self):
        # mock groups 2 sentences/task, 2 tasks/step, 2 steps/phase:
        # tasks (s0 s1)(s2 s3)(s4 s5), steps (t0 t1)(t2), one phase
        h = segment_transcript(six_sentence_transcript(), mock_client())
        assert [len(h.phases), len(h.steps), len(h.tasks)] == [1, 2, 3]
        assert [(t.t_start, t.t_end) for t in h.tasks] == [
            (0, 19_000), (20_000, 39_000), (40_000, 59_000)
        ]
        assert [(s.t_start, s.t_end) for s in h.steps] == [(0, 39_000), (40_000, 59_000)]
        assert (h.phases[0].t_start, h.phases[0].t_end) == (0, 59_000)

    def test_single_sentence_degenerates_to_identical_spans(self):
        t = make_transcript(
            [("only", 0, 800)], sentences=[("only", 0, 900)], duration=1_000
        )
        h = segment_transcript(t, mock_client())
        spans = {(lvl[0].t_start, lvl[0].t_end) for lvl in (h.phases, h.steps, h.tasks)}
        assert spans == {(0, 900)}
        assert [len(h.phases), len(h.steps), len(h.tasks)] == [1, 1, 1]

    def test_overlapping_backend_tasks_are_repaired(self):
        class OverlappingSegmenter:
            def handle(self, req):
                return BackendResponse(
                    request_id=req.request_id,
                    status="ok",
                    result={
                        "phases": [{"t_start_ms": 0, "t_end_ms": 9_000}],
                        "steps": [{"t_start_ms": 0, "t_end_ms": 9_000}],
                        "tasks": [
                            {"t_start_ms": 0, "t_end_ms": 5_000},
                            {"t_start_ms": 4_000, "t_end_ms": 9_000},
                        ],
                    },
                )

        t = make_transcript([("w", 0, 500)], sentences=[("w", 0, 9_000)], duration=9_000)
        client = BackendClient(
            {Kind.SEG_HIERARCHY: InProcessEndpoint(OverlappingSegmenter().handle)}
        )
        h = segment_transcript(t, client)
        assert [(x.t_start, x.t_end) for x in h.tasks] == [(0, 5_000), (5_000, 9_000)]

    def test_off_schema_backend_raises_unparseable(self):
        class BadSegmenter:
            def handle(self, req):
                return BackendResponse(
                    request_id=req.request_id, status="ok", result={"phases": []}
                )

        t = make_transcript([("w", 0, 500)], sentences=[("w", 0, 900)], duration=1_000)
        client = BackendClient(
            {Kind.SEG_HIERARCHY: InProcessEndpoint(BadSegmenter().handle)}
        )
        with pytest.raises(UnparseableProposal):
            segment_transcript(t, client)


class TestValidateHierarchy:
    def transcript(self, duration=10_000):
        return make_transcript(
            [("w", 0, 100)], sentences=[("w", 0, duration)], duration=duration
        )

    def test_overlap_repair_example(self):
        h = hier([(0, 9_000)], [(0, 9_000)], [(0, 5_000), (4_000, 9_000)])
        out = validate_hierarchy(h, self.transcript())
        assert [(t.t_start, t.t_end) for t in out.tasks] == [(0, 5_000), (5_000, 9_000)]

    def test_valid_hierarchy_is_fixed_point(self):
        h = hier(
            [(0, 6_000), (6_000, 10_000)],
            [(0, 3_000), (3_000, 6_000), (6_000, 10_000)],
            [(0, 1_500), (1_500, 3_000), (3_000, 6_000), (6_000, 10_000)],
        )
        out = validate_hierarchy(h, self.transcript())
        assert out == h

    def test_orphan_task_snaps_to_maximal_overlap_step(self):
        # task [0, 100] is inside no step; steps [0, 80] and [80, 500]
        # overlap it by 80 and 20, so it snaps into the first and clamps.
        h = hier([(0, 500)], [(0, 80), (80, 500)], [(0, 100)])
        out = validate_hierarchy(h, self.transcript(500))
        assert [(t.t_start, t.t_end) for t in out.tasks] == [(0, 80)]

    def test_spans_clamped_to_video(self):
        h = hier([(0, 20_000)], [(0, 20_000)], [(0, 20_000)])
        out = validate_hierarchy(h, self.transcript(10_000))
        assert out.phases[0].t_end == 10_000
        assert out.tasks[0].t_end == 10_000

    def test_empty_level_after_repair_raises(self):
        # the only task has no room inside the only step once clamped
        h = hier([(0, 1_000)], [(0, 1_000)], [(5_000, 6_000)])
        t = make_transcript([("w", 0, 100)], sentences=[("w", 0, 1_000)], duration=1_000)
        with pytest.raises(EmptyLevel):
            validate_hierarchy(h, t)

    def test_validate_is_idempotent_on_random_proposals(self):
        rng = random.Random(42)
        t = self.transcript(50_000)
        for _ in range(200):
            def rand_segs(level, n):
                out = []
                for i in range(n):
                    a = rng.randint(0, 49_000)
                    b = a + rng.randint(1, 20_000)
                    out.append(Segment(level, i, a, b))
                return tuple(out)

            proposal = HierarchySegmentation(
                rand_segs(P, rng.randint(1, 4)),
                rand_segs(S, rng.randint(1, 6)),
                rand_segs(T, rng.randint(1, 10)),
            )
            try:
                once = validate_hierarchy(proposal, t)
            except EmptyLevel:
                continue
            twice = validate_hierarchy(once, t)
            assert twice == once

    def test_nesting_enforced_on_random_proposals(self):
        rng = random.Random(7)
        t = self.transcript(50_000)
        for _ in range(200):
            proposal = HierarchySegmentation(
                tuple(
                    Segment(P, i, a, a + rng.randint(1, 25_000))
                    for i, a in enumerate(sorted(rng.sample(range(0, 40_000), 3)))
                ),
                tuple(
                    Segment(S, i, a, a + rng.randint(1, 12_000))
                    for i, a in enumerate(sorted(rng.sample(range(0, 45_000), 5)))
                ),
                tuple(
                    Segment(T, i, a, a + rng.randint(1, 6_000))
                    for i, a in enumerate(sorted(rng.sample(range(0, 48_000), 8)))
                ),
            )
            try:
                h = validate_hierarchy(proposal, t)
            except EmptyLevel:
                continue
            for step in h.steps:
                assert sum(
                    1 for p in h.phases if p.t_start <= step.t_start and step.t_end <= p.t_end
                ) == 1
            for task in h.tasks:
                assert sum(
                    1 for s in h.steps if s.t_start <= task.t_start and task.t_end <= s.t_end
                ) == 1


class TestAlignSegments:
    def test_words_fully_contained_join(self):
        t = make_transcript(
            [("alpha", 0, 1_000), ("beta", 1_200, 2_000), ("gamma", 2_500, 3_000)],
            sentences=[("x", 0, 3_000)],
            duration=3_000,
        )
        h = hier([(0, 2_200)], [(0, 2_200)], [(0, 2_200)])
        pairs, dropped = align_segments(t, h, T)
        assert dropped == 0
        assert pairs[0].caption == "alpha beta"

    def test_boundary_straddler_excluded(self):
        t = make_transcript(
            [("inside", 0, 1_000), ("straddle", 1_800, 2_400)],
            sentences=[("x", 0, 3_000)],
            duration=3_000,
        )
        h = hier([(0, 2_200)], [(0, 2_200)], [(0, 2_200)])
        pairs, _ = align_segments(t, h, T)
        assert pairs[0].caption == "inside"

    def test_wordless_segment_dropped_and_counted(self):
        t = make_transcript(
            [("w", 0, 500)], sentences=[("x", 0, 4_000)], duration=4_000
        )
        h = hier([(0, 4_000)], [(0, 4_000)], [(0, 1_000), (2_000, 3_000)])
        pairs, dropped = align_segments(t, h, T)
        assert len(pairs) == 1 and dropped == 1

    def test_parent_indices_recorded(self):
        t = six_sentence_transcript()
        h = segment_transcript(t, mock_client())
        tasks, _ = align_segments(t, h, T)
        assert [p.parent_step for p in tasks] == [0, 0, 1]
        assert all(p.parent_phase == 0 for p in tasks)
        steps, _ = align_segments(t, h, S)
        assert all(p.parent_step is None for p in steps)
        assert [p.parent_phase for p in steps] == [0, 0]

    def test_alignment_matches_brute_force_on_random_inputs(self):
        rng = random.Random(1234)
        for _ in range(100):
            t = random_transcript(rng, max_words=120)
            h = random_valid_hierarchy(rng, t.duration)
            for level in (P, S, T):
                pairs, dropped = align_segments(t, h, level)
                by_index = {p.clip_index: p for p in pairs}
                n_empty = 0
                for segment in h.at(level):
                    expected = brute_force_words_in_span(
                        t, segment.t_start, segment.t_end
                    )
                    if not expected:
                        n_empty += 1
                        assert segment.index not in by_index
                    else:
                        assert by_index[segment.index].caption == " ".join(expected)
                assert dropped == n_empty

    def test_coverage_monotone_up_the_hierarchy(self):
        rng = random.Random(99)
        for _ in range(50):
            t = random_transcript(rng, max_words=80)
            h = random_valid_hierarchy(rng, t.duration)

            def captured(level):
                out = set()
                for segment in h.at(level):
                    for i, w in enumerate(t.words):
                        if segment.t_start <= w.t_start and w.t_end <= segment.t_end:
                            out.add(i)
                return out

            assert captured(T) <= captured(S) <= captured(P)
