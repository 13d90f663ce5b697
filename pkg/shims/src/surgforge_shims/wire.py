"""Wire-level message handling, standalone from the engine package.

The protocol: JSON request {protocol_version, kind, request_id, payload},
JSON response {protocol_version, request_id, status, result|error}, carried
one-per-line over stdio or as HTTP POST bodies. A shim must answer every
line with a schema-valid response: malformed input yields a protocol error
envelope, never a crash or silence.
"""

import json
from typing import Any, Callable

PROTOCOL_VERSION = "1"

KINDS = (
    "asr.transcribe",
    "seg.hierarchy",
    "text.judge",
    "text.enrich",
    "text.taxonomy",
    "embed.text",
    "embed.image",
)

# minimal per-kind payload requirements: field -> type check
_PAYLOAD_CHECKS: dict[str, dict[str, Callable[[Any], bool]]] = {
    "asr.transcribe": {
        "video_id": lambda v: isinstance(v, str) and v,
        "audio_path": lambda v: isinstance(v, str) and v,
    },
    "seg.hierarchy": {
        "video_id": lambda v: isinstance(v, str) and v,
        "sentences": lambda v: isinstance(v, list)
        and v
        and all(
            isinstance(s, dict)
            and isinstance(s.get("text"), str)
            and isinstance(s.get("t_start_ms"), int)
            and isinstance(s.get("t_end_ms"), int)
            for s in v
        ),
        "duration_ms": lambda v: isinstance(v, int) and v >= 0,
    },
    "text.judge": {"caption": lambda v: isinstance(v, str) and v},
    "text.enrich": {
        "caption": lambda v: isinstance(v, str) and v,
        "context": lambda v: isinstance(v, list) and all(isinstance(c, str) for c in v),
        "title": lambda v: isinstance(v, str),
        "procedure_type": lambda v: isinstance(v, str),
        "level": lambda v: v in ("phase", "step", "task"),
    },
    "text.taxonomy": {
        "summary": lambda v: isinstance(v, str),
        "tree": lambda v: isinstance(v, dict),
    },
    "embed.text": {
        "texts": lambda v: isinstance(v, list)
        and v
        and all(isinstance(t, str) and t for t in v),
    },
    "embed.image": {
        "images": lambda v: isinstance(v, list)
        and v
        and all(
            isinstance(i, dict)
            and isinstance(i.get("id"), str)
            and ("data_b64" in i or "descriptor" in i)
            for i in v
        ),
    },
}


class RequestError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def parse_request(line: str, served_kind: str) -> dict:
    """Parse and check one request line for the kind this shim serves."""
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RequestError("invalid_request", f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise RequestError("invalid_request", "request is not a JSON object")
    if doc.get("protocol_version") != PROTOCOL_VERSION:
        raise RequestError(
            "invalid_request", f"unsupported protocol_version {doc.get('protocol_version')!r}"
        )
    if not isinstance(doc.get("request_id"), str) or not doc["request_id"]:
        raise RequestError("invalid_request", "missing request_id")
    kind = doc.get("kind")
    if kind not in KINDS:
        raise RequestError("unsupported_kind", f"unknown kind {kind!r}")
    if kind != served_kind:
        raise RequestError(
            "unsupported_kind", f"this shim serves {served_kind}, not {kind}"
        )
    payload = doc.get("payload")
    if not isinstance(payload, dict):
        raise RequestError("invalid_request", "payload must be an object")
    for field, check in _PAYLOAD_CHECKS[kind].items():
        if field not in payload:
            raise RequestError("invalid_request", f"payload missing {field!r}")
        if not check(payload[field]):
            raise RequestError("invalid_request", f"payload field {field!r} is invalid")
    return doc


def extract_request_id(line: str) -> str:
    """Best-effort request_id recovery for error responses."""
    try:
        doc = json.loads(line)
        rid = doc.get("request_id") if isinstance(doc, dict) else None
        if isinstance(rid, str) and rid:
            return rid
    except (json.JSONDecodeError, AttributeError):
        pass
    return "unparseable"


def ok_response(request_id: str, result: dict) -> str:
    return json.dumps(
        {
            "protocol_version": PROTOCOL_VERSION,
            "request_id": request_id,
            "status": "ok",
            "result": result,
        },
        ensure_ascii=False,
        separators=(",", ":"),
    )


def error_response(request_id: str, code: str, message: str) -> str:
    return json.dumps(
        {
            "protocol_version": PROTOCOL_VERSION,
            "request_id": request_id,
            "status": "error",
            "error": {"code": code, "message": message},
        },
        ensure_ascii=False,
        separators=(",", ":"),
    )


def handle_line(line: str, served_kind: str, engine) -> str:
    """The full request -> response-line path shared by both transports."""
    request_id = extract_request_id(line)
    try:
        doc = parse_request(line, served_kind)
    except RequestError as exc:
        return error_response(request_id, exc.code, str(exc))
    try:
        result = engine.run(doc["payload"])
    except RequestError as exc:
        return error_response(doc["request_id"], exc.code, str(exc))
    except Exception as exc:  # engines must never take the server down
        return error_response(doc["request_id"], "internal", f"{type(exc).__name__}: {exc}")
    return ok_response(doc["request_id"], result)
