"""Stage 1: transcript ingestion, timestamp repair, and rejection rules."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surgforge.errors import EmptyTranscription, MalformedTimestamps, SchemaViolation
from surgforge.transcript import ingest_transcript


def doc(words, sentences, video_id="v1"):
    return {
        "video_id": video_id,
        "sentences": [
            {"text": t, "t_start_ms": s, "t_end_ms": e} for t, s, e in sentences
        ],
        "words": [{"text": t, "t_start_ms": s, "t_end_ms": e} for t, s, e in words],
    }


def test_empty_sentence_list_rejected():
    with pytest.raises(EmptyTranscription):
        ingest_transcript(doc([], []), 10000)


def test_minimal_single_word_transcript():
    t = ingest_transcript(doc([("grasp", 0, 500)], [("grasp", 0, 500)]), 1000)
    assert len(t.words) == 1 and len(t.sentences) == 1
    assert t.words[0].text == "grasp"
    assert (t.words[0].t_start, t.words[0].t_end) == (0, 500)


def test_small_overlap_clamped():
    t = ingest_transcript(
        doc([("a", 0, 1000), ("b", 980, 1500)], [("ab", 0, 1500)]), 2000
    )
    assert [(w.t_start, w.t_end) for w in t.words] == [(0, 1000), (1000, 1500)]


def test_overlap_beyond_tolerance_rejected():
    with pytest.raises(MalformedTimestamps):
        ingest_transcript(
            doc([("a", 0, 1000), ("b", 900, 1500)], [("ab", 0, 1500)]), 2000
        )


def test_repair_that_inverts_span_rejected():
    # the clamp would put the second word's start past its own end
    with pytest.raises(MalformedTimestamps):
        ingest_transcript(
            doc([("a", 0, 1000), ("b", 980, 990)], [("ab", 0, 1000)]), 2000
        )


def test_words_past_duration_clamped_not_dropped():
    t = ingest_transcript(
        doc([("a", 0, 900), ("b", 950, 4000)], [("ab", 0, 1000)]), 1000
    )
    assert len(t.words) == 2
    assert t.words[1].t_end == 1000


def test_unsorted_words_are_sorted():
    t = ingest_transcript(
        doc([("b", 600, 900), ("a", 0, 500)], [("ab", 0, 900)]), 1000
    )
    assert [w.text for w in t.words] == ["a", "b"]


def test_schema_violation_on_missing_fields():
    with pytest.raises(SchemaViolation):
        ingest_transcript({"video_id": "v1", "sentences": []}, 1000)


def test_empty_word_text_rejected():
    with pytest.raises(MalformedTimestamps):
        ingest_transcript(doc([("   ", 0, 100)], [("s", 0, 100)]), 1000)


word_lists = st.lists(
    st.tuples(st.integers(0, 50_000), st.integers(0, 2_000), st.integers(0, 60)),
    min_size=0,
    max_size=40,
)


@settings(max_examples=200, deadline=None)
@given(word_lists)
def test_accepted_transcripts_are_sorted_and_overlap_free(raw):
    """Whatever gets accepted satisfies the ordering invariant; border cases
    either repair cleanly or raise MalformedTimestamps, never both."""
    words = []
    for start, length, jitter in raw:
        words.append((f"w{len(words)}", start, start + length + jitter))
    duration = 200_000
    try:
        t = ingest_transcript(doc(words, [("s", 0, duration)]), duration)
    except MalformedTimestamps:
        return
    for a, b in zip(t.words, t.words[1:]):
        assert a.t_start <= b.t_start
        assert a.t_end <= b.t_start  # no residual overlap
    for w in t.words:
        assert 0 <= w.t_start <= w.t_end <= duration


@settings(max_examples=100, deadline=None)
@given(word_lists)
def test_ingest_idempotent_on_own_output(raw):
    words = [(f"w{i}", s, s + d + j) for i, (s, d, j) in enumerate(raw)]
    duration = 200_000
    try:
        first = ingest_transcript(doc(words, [("s", 0, duration)]), duration)
    except MalformedTimestamps:
        return
    second = ingest_transcript(first.to_doc(), duration)
    assert second == first


@given(st.integers(0, 10))
def test_empty_sentences_always_rejected(n_words):
    words = [(f"w{i}", i * 100, i * 100 + 50) for i in range(n_words)]
    with pytest.raises(EmptyTranscription):
        ingest_transcript(doc(words, []), 10_000)


def test_roundtrip_through_json():
    t = ingest_transcript(
        doc([("a", 0, 500), ("b", 600, 900)], [("ab", 0, 900)]), 1000
    )
    import json

    again = ingest_transcript(json.loads(t.to_json()), 1000)
    assert again == t
