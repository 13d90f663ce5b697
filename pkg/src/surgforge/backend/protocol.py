"""Wire protocol: one request/response envelope, seven service kinds.

Every model service (speech recognition, hierarchical segmenter,
descriptiveness judge, caption enricher, taxonomy classifier, text/image
embedders) sits behind the same envelope so backends can be swapped without
touching engine code. Messages are JSON objects carried either one-per-line
over a local pipe or as HTTP POST bodies; the payload is identical in both
transports.
"""

import json
import uuid
from dataclasses import dataclass, field
from typing import Any

import jsonschema

from surgforge.errors import SchemaViolation

PROTOCOL_VERSION = "1"


class Kind:
    """The seven service kinds, as wire strings."""

    ASR_TRANSCRIBE = "asr.transcribe"
    SEG_HIERARCHY = "seg.hierarchy"
    TEXT_JUDGE = "text.judge"
    TEXT_ENRICH = "text.enrich"
    TEXT_TAXONOMY = "text.taxonomy"
    EMBED_TEXT = "embed.text"
    EMBED_IMAGE = "embed.image"

    ALL = (
        ASR_TRANSCRIBE,
        SEG_HIERARCHY,
        TEXT_JUDGE,
        TEXT_ENRICH,
        TEXT_TAXONOMY,
        EMBED_TEXT,
        EMBED_IMAGE,
    )

    @staticmethod
    def env_var(kind: str) -> str:
        """Environment variable that overrides the endpoint for a kind."""
        return "SURGFORGE_ENDPOINT_" + kind.upper().replace(".", "_")


_MS = {"type": "integer", "minimum": 0}
_NONEMPTY_STR = {"type": "string", "minLength": 1}

_SENTENCE = {
    "type": "object",
    "properties": {"text": _NONEMPTY_STR, "t_start_ms": _MS, "t_end_ms": _MS},
    "required": ["text", "t_start_ms", "t_end_ms"],
    "additionalProperties": False,
}

_WORD = _SENTENCE  # same shape, finer granularity

_SEGMENT = {
    "type": "object",
    "properties": {
        "t_start_ms": _MS,
        "t_end_ms": _MS,
        "topic": {"type": "string"},
    },
    "required": ["t_start_ms", "t_end_ms"],
    "additionalProperties": False,
}

_VECTOR = {"type": "array", "items": {"type": "number"}, "minItems": 2}

# Request payload schema per kind.
REQUEST_SCHEMAS: dict[str, dict] = {
    Kind.ASR_TRANSCRIBE: {
        "type": "object",
        "properties": {
            "video_id": _NONEMPTY_STR,
            "audio_path": _NONEMPTY_STR,
            "duration_ms": _MS,
        },
        "required": ["video_id", "audio_path"],
        "additionalProperties": False,
    },
    Kind.SEG_HIERARCHY: {
        "type": "object",
        "properties": {
            "video_id": _NONEMPTY_STR,
            "sentences": {"type": "array", "items": _SENTENCE, "minItems": 1},
            "duration_ms": _MS,
        },
        "required": ["video_id", "sentences", "duration_ms"],
        "additionalProperties": False,
    },
    Kind.TEXT_JUDGE: {
        "type": "object",
        "properties": {"caption": _NONEMPTY_STR},
        "required": ["caption"],
        "additionalProperties": False,
    },
    Kind.TEXT_ENRICH: {
        "type": "object",
        "properties": {
            "caption": _NONEMPTY_STR,
            "context": {"type": "array", "items": {"type": "string"}},
            "title": {"type": "string"},
            "procedure_type": {"type": "string"},
            "level": {"enum": ["phase", "step", "task"]},
        },
        "required": ["caption", "context", "title", "procedure_type", "level"],
        "additionalProperties": False,
    },
    Kind.TEXT_TAXONOMY: {
        "type": "object",
        "properties": {
            "summary": {"type": "string"},
            "tree": {"type": "object"},
        },
        "required": ["summary", "tree"],
        "additionalProperties": False,
    },
    Kind.EMBED_TEXT: {
        "type": "object",
        "properties": {
            "texts": {"type": "array", "items": _NONEMPTY_STR, "minItems": 1},
            "dim": {"type": "integer", "minimum": 2},
        },
        "required": ["texts"],
        "additionalProperties": False,
    },
    Kind.EMBED_IMAGE: {
        "type": "object",
        "properties": {
            "images": {
                "type": "array",
                "minItems": 1,
                "items": {
                    "type": "object",
                    "properties": {
                        "id": _NONEMPTY_STR,
                        "data_b64": {"type": "string"},
                        "descriptor": {"type": "string"},
                    },
                    "required": ["id"],
                    "anyOf": [{"required": ["data_b64"]}, {"required": ["descriptor"]}],
                    "additionalProperties": False,
                },
            },
            "dim": {"type": "integer", "minimum": 2},
        },
        "required": ["images"],
        "additionalProperties": False,
    },
}

# Result schema per kind (the "result" field of an ok response).
RESULT_SCHEMAS: dict[str, dict] = {
    Kind.ASR_TRANSCRIBE: {
        "type": "object",
        "properties": {
            "video_id": _NONEMPTY_STR,
            "sentences": {"type": "array", "items": _SENTENCE},
            "words": {"type": "array", "items": _WORD},
        },
        "required": ["video_id", "sentences", "words"],
        "additionalProperties": False,
    },
    Kind.SEG_HIERARCHY: {
        "type": "object",
        "properties": {
            "phases": {"type": "array", "items": _SEGMENT},
            "steps": {"type": "array", "items": _SEGMENT},
            "tasks": {"type": "array", "items": _SEGMENT},
        },
        "required": ["phases", "steps", "tasks"],
        "additionalProperties": False,
    },
    Kind.TEXT_JUDGE: {
        "type": "object",
        "properties": {"label": {"enum": ["descriptive", "non_descriptive"]}},
        "required": ["label"],
        "additionalProperties": False,
    },
    Kind.TEXT_ENRICH: {
        "type": "object",
        "properties": {"caption_enriched": _NONEMPTY_STR},
        "required": ["caption_enriched"],
        "additionalProperties": False,
    },
    Kind.TEXT_TAXONOMY: {
        "type": "object",
        "properties": {
            "specialty": _NONEMPTY_STR,
            "subject": _NONEMPTY_STR,
            "procedure": _NONEMPTY_STR,
        },
        "required": ["specialty", "subject", "procedure"],
        "additionalProperties": False,
    },
    Kind.EMBED_TEXT: {
        "type": "object",
        "properties": {
            "vectors": {"type": "array", "items": _VECTOR, "minItems": 1},
            "dim": {"type": "integer", "minimum": 2},
        },
        "required": ["vectors", "dim"],
        "additionalProperties": False,
    },
    Kind.EMBED_IMAGE: {
        "type": "object",
        "properties": {
            "vectors": {"type": "array", "items": _VECTOR, "minItems": 1},
            "dim": {"type": "integer", "minimum": 2},
        },
        "required": ["vectors", "dim"],
        "additionalProperties": False,
    },
}

ERROR_CODES = ("invalid_request", "unsupported_kind", "refused", "internal")

_ERROR_OBJ = {
    "type": "object",
    "properties": {
        "code": {"enum": list(ERROR_CODES)},
        "message": {"type": "string"},
    },
    "required": ["code", "message"],
    "additionalProperties": False,
}

REQUEST_ENVELOPE = {
    "type": "object",
    "properties": {
        "protocol_version": {"const": PROTOCOL_VERSION},
        "kind": {"enum": list(Kind.ALL)},
        "request_id": _NONEMPTY_STR,
        "payload": {"type": "object"},
    },
    "required": ["protocol_version", "kind", "request_id", "payload"],
    "additionalProperties": False,
}

RESPONSE_ENVELOPE = {
    "type": "object",
    "properties": {
        "protocol_version": {"const": PROTOCOL_VERSION},
        "request_id": _NONEMPTY_STR,
        "status": {"enum": ["ok", "error"]},
        "result": {"type": "object"},
        "error": _ERROR_OBJ,
    },
    "required": ["protocol_version", "request_id", "status"],
    "additionalProperties": False,
}


@dataclass
class BackendRequest:
    kind: str
    payload: dict[str, Any]
    request_id: str = field(default_factory=lambda: uuid.uuid4().hex)

    def to_wire(self) -> dict[str, Any]:
        return {
            "protocol_version": PROTOCOL_VERSION,
            "kind": self.kind,
            "request_id": self.request_id,
            "payload": self.payload,
        }


@dataclass
class BackendResponse:
    request_id: str
    status: str
    result: dict[str, Any] | None = None
    error: dict[str, Any] | None = None

    def to_wire(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "protocol_version": PROTOCOL_VERSION,
            "request_id": self.request_id,
            "status": self.status,
        }
        if self.result is not None:
            doc["result"] = self.result
        if self.error is not None:
            doc["error"] = self.error
        return doc


def _check(instance: Any, schema: dict, what: str) -> None:
    try:
        jsonschema.validate(instance=instance, schema=schema)
    except jsonschema.ValidationError as exc:
        raise SchemaViolation(f"{what}: {exc.message}") from exc


def validate_request(req: BackendRequest) -> None:
    """Reject requests whose payload does not match their kind."""
    _check(req.to_wire(), REQUEST_ENVELOPE, "request envelope")
    _check(req.payload, REQUEST_SCHEMAS[req.kind], f"{req.kind} request payload")


def validate_response(resp: BackendResponse, kind: str, expected_request_id: str) -> None:
    """Reject responses that are malformed, mis-addressed, or off-schema."""
    _check(resp.to_wire(), RESPONSE_ENVELOPE, "response envelope")
    if resp.request_id != expected_request_id:
        raise SchemaViolation(
            f"response request_id {resp.request_id!r} does not echo {expected_request_id!r}"
        )
    if resp.status == "ok":
        if resp.result is None:
            raise SchemaViolation("ok response missing result")
        _check(resp.result, RESULT_SCHEMAS[kind], f"{kind} result")
    else:
        if resp.error is None:
            raise SchemaViolation("error response missing error object")


def serialize_message(msg: BackendRequest | BackendResponse) -> str:
    """One message per line; newline-free compact JSON."""
    return json.dumps(msg.to_wire(), ensure_ascii=False, separators=(",", ":"))


def parse_message(line: str) -> BackendRequest | BackendResponse:
    """Parse a wire line into the matching envelope dataclass."""
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaViolation("message is not a JSON object")
    if "kind" in doc:
        _check(doc, REQUEST_ENVELOPE, "request envelope")
        return BackendRequest(
            kind=doc["kind"], payload=doc["payload"], request_id=doc["request_id"]
        )
    _check(doc, RESPONSE_ENVELOPE, "response envelope")
    return BackendResponse(
        request_id=doc["request_id"],
        status=doc["status"],
        result=doc.get("result"),
        error=doc.get("error"),
    )
