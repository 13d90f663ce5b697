"""Canonical per-video transcript model and ASR-output ingestion.

All timestamps are integer milliseconds so interval math downstream never
touches float equality. Forced aligners routinely emit tiny overlaps between
consecutive words; overlaps up to 50 ms are repaired by clamping the later
word's start to the earlier word's end, anything larger is rejected.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import jsonschema

from surgforge.backend.protocol import RESULT_SCHEMAS, Kind
from surgforge.errors import EmptyTranscription, MalformedTimestamps, SchemaViolation

OVERLAP_TOLERANCE_MS = 50


@dataclass(frozen=True)
class WordToken:
    """One word with millisecond boundaries."""

    text: str
    t_start: int
    t_end: int

    def __post_init__(self):
        if not self.text.strip():
            raise MalformedTimestamps("word text empty after trimming")
        if self.t_start < 0 or self.t_end < self.t_start:
            raise MalformedTimestamps(
                f"word {self.text!r} has invalid span [{self.t_start}, {self.t_end}]"
            )


@dataclass(frozen=True)
class SentenceSpan:
    """One sentence with millisecond boundaries."""

    text: str
    t_start: int
    t_end: int

    def __post_init__(self):
        if not self.text.strip():
            raise MalformedTimestamps("sentence text empty")
        if self.t_start < 0 or self.t_end < self.t_start:
            raise MalformedTimestamps(
                f"sentence has invalid span [{self.t_start}, {self.t_end}]"
            )


@dataclass(frozen=True)
class Transcript:
    """A video's sentence- and word-level transcription.

    Words are sorted by (t_start, t_end) with no residual overlap; every word
    span lies within [0, duration]. The sentence list is never empty.
    """

    video_id: str
    sentences: tuple[SentenceSpan, ...]
    words: tuple[WordToken, ...]
    duration: int

    def to_doc(self) -> dict[str, Any]:
        """Serialize back to the ASR wire schema (plus duration)."""
        return {
            "video_id": self.video_id,
            "duration_ms": self.duration,
            "sentences": [
                {"text": s.text, "t_start_ms": s.t_start, "t_end_ms": s.t_end}
                for s in self.sentences
            ],
            "words": [
                {"text": w.text, "t_start_ms": w.t_start, "t_end_ms": w.t_end}
                for w in self.words
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_doc(), ensure_ascii=False, separators=(",", ":"))


_DOC_SCHEMA = dict(RESULT_SCHEMAS[Kind.ASR_TRANSCRIBE])
_DOC_SCHEMA["properties"] = dict(_DOC_SCHEMA["properties"])
_DOC_SCHEMA["properties"]["duration_ms"] = {"type": "integer", "minimum": 0}


def ingest_transcript(raw_doc: dict[str, Any], video_duration: int) -> Transcript:
    """Validate and repair one ASR output document into a Transcript.

    Raises EmptyTranscription when the sentence list is empty (such videos
    are discarded outright) and MalformedTimestamps when word timing cannot
    be repaired within the 50 ms overlap tolerance.
    """
    try:
        jsonschema.validate(instance=raw_doc, schema=_DOC_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SchemaViolation(f"ASR document: {exc.message}") from exc
    if video_duration < 0:
        raise MalformedTimestamps("video duration is negative")
    if not raw_doc["sentences"]:
        raise EmptyTranscription(f"video {raw_doc['video_id']!r} has no sentences")

    sentences = sorted(
        (
            SentenceSpan(s["text"], s["t_start_ms"], s["t_end_ms"])
            for s in raw_doc["sentences"]
        ),
        key=lambda s: (s.t_start, s.t_end),
    )

    raw_words = sorted(
        ((w["text"], w["t_start_ms"], w["t_end_ms"]) for w in raw_doc["words"]),
        key=lambda w: (w[1], w[2]),
    )
    words: list[WordToken] = []
    for text, t_start, t_end in raw_words:
        # ASR drift near the tail: clamp to the video, never drop words.
        t_start = min(t_start, video_duration)
        t_end = min(t_end, video_duration)
        if words:
            overlap = words[-1].t_end - t_start
            if overlap > OVERLAP_TOLERANCE_MS:
                raise MalformedTimestamps(
                    f"word {text!r} overlaps its predecessor by {overlap} ms "
                    f"(tolerance {OVERLAP_TOLERANCE_MS} ms)"
                )
            if overlap > 0:
                t_start = words[-1].t_end
        if t_end < t_start:
            raise MalformedTimestamps(
                f"word {text!r} has t_end < t_start after repair "
                f"([{t_start}, {t_end}])"
            )
        words.append(WordToken(text, t_start, t_end))

    return Transcript(
        video_id=raw_doc["video_id"],
        sentences=tuple(sentences),
        words=tuple(words),
        duration=video_duration,
    )


def load_transcript_file(path, video_duration: int | None = None) -> Transcript:
    """File-ingestion mode: read a pre-computed transcript in the wire schema.

    The duration comes from the file's ``duration_ms`` unless overridden.
    """
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    duration = video_duration if video_duration is not None else doc.get("duration_ms")
    if duration is None:
        raise MalformedTimestamps(f"{path}: no duration_ms and none supplied")
    return ingest_transcript(doc, duration)
