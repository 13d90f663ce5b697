"""Protocol conformance suite, runnable against any endpoint.

Drives a live endpoint (in-process mock, HTTP server, or stdio pipe) through
schema checks, the error taxonomy, and numeric bounds, so alternative
backends can prove they are drop-in replacements. Also runnable as a module:

    python -m surgforge.backend.conformance --endpoint http://127.0.0.1:8701 \
        --kind embed.text
"""

import argparse
import math
from dataclasses import dataclass

from surgforge.backend.client import call, make_endpoint
from surgforge.backend.protocol import (
    ERROR_CODES,
    BackendRequest,
    BackendResponse,
    Kind,
    validate_response,
)
from surgforge.errors import SchemaViolation, SurgForgeError


@dataclass
class CheckResult:
    kind: str
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ConformanceContext:
    """Inputs some kinds need (a real speech backend needs real audio)."""

    audio_path: str = "conformance-probe.json"  # mock substitutes a placeholder
    audio_duration_ms: int = 3000
    embed_dim: int = 64
    image_b64: str | None = None


def _probe_payload(kind: str, ctx: ConformanceContext) -> dict:
    if kind == Kind.ASR_TRANSCRIBE:
        return {
            "video_id": "probe",
            "audio_path": ctx.audio_path,
            "duration_ms": ctx.audio_duration_ms,
        }
    if kind == Kind.SEG_HIERARCHY:
        return {
            "video_id": "probe",
            "sentences": [
                {"text": "we expose the field", "t_start_ms": 0, "t_end_ms": 1000},
                {"text": "the tissue is divided", "t_start_ms": 1000, "t_end_ms": 2000},
                {"text": "bleeding is controlled", "t_start_ms": 2000, "t_end_ms": 3000},
                {"text": "we close the wound", "t_start_ms": 3000, "t_end_ms": 4000},
            ],
            "duration_ms": 4000,
        }
    if kind == Kind.TEXT_JUDGE:
        return {"caption": "the grasper retracts the liver tissue"}
    if kind == Kind.TEXT_ENRICH:
        return {
            "caption": "the duct is clipped",
            "context": ["the field is exposed"],
            "title": "probe video",
            "procedure_type": "probe procedure",
            "level": "task",
        }
    if kind == Kind.TEXT_TAXONOMY:
        return {
            "summary": "a procedure on the gallbladder",
            "tree": {"General Surgery": {"Hepatobiliary": ["Laparoscopic Cholecystectomy"]}},
        }
    if kind == Kind.EMBED_TEXT:
        return {"texts": ["surgical field with tissue", "a lecture hall"], "dim": ctx.embed_dim}
    if kind == Kind.EMBED_IMAGE:
        images = [{"id": "probe-0", "descriptor": "surgical field tissue"}]
        if ctx.image_b64:
            images.append({"id": "probe-1", "data_b64": ctx.image_b64})
        return {"images": images, "dim": ctx.embed_dim}
    raise ValueError(f"unknown kind {kind!r}")


def _check_ok_response(kind: str, result: dict, payload: dict, ctx: ConformanceContext) -> list[str]:
    """Kind-specific bounds beyond what the result schema already enforces."""
    problems = []
    if kind in (Kind.EMBED_TEXT, Kind.EMBED_IMAGE):
        n_inputs = len(payload.get("texts") or payload.get("images"))
        vectors = result["vectors"]
        if len(vectors) != n_inputs:
            problems.append(f"{len(vectors)} vectors for {n_inputs} inputs")
        for i, vec in enumerate(vectors):
            if len(vec) != result["dim"]:
                problems.append(f"vector {i} has dim {len(vec)} != {result['dim']}")
            norm = math.sqrt(sum(v * v for v in vec))
            if abs(norm - 1.0) > 1e-4:
                problems.append(f"vector {i} norm {norm:.6f} outside 1 +/- 1e-4")
        if "dim" in payload and result["dim"] != payload["dim"]:
            problems.append(f"dim {result['dim']} != requested {payload['dim']}")
    if kind == Kind.ASR_TRANSCRIBE:
        if not result["words"]:
            problems.append("no words transcribed from probe audio")
        if not result["sentences"]:
            problems.append("no sentences transcribed from probe audio")
        duration = payload.get("duration_ms")
        for group in ("sentences", "words"):
            for item in result[group]:
                if item["t_start_ms"] > item["t_end_ms"]:
                    problems.append(f"{group} item has t_start > t_end")
                if duration is not None and item["t_end_ms"] > duration:
                    problems.append(f"{group} item ends after {duration} ms")
    if kind == Kind.SEG_HIERARCHY:
        for level in ("phases", "steps", "tasks"):
            if not result[level]:
                problems.append(f"segmenter returned no {level}")
    return problems


def check_kind(endpoint, kind: str, ctx: ConformanceContext | None = None) -> list[CheckResult]:
    ctx = ctx or ConformanceContext()
    results: list[CheckResult] = []

    payload = _probe_payload(kind, ctx)
    try:
        resp = call(endpoint, BackendRequest(kind=kind, payload=payload))
        if resp.status != "ok":
            results.append(
                CheckResult(kind, "valid_request_ok", False, f"status=error: {resp.error}")
            )
        else:
            problems = _check_ok_response(kind, resp.result, payload, ctx)
            results.append(
                CheckResult(kind, "valid_request_ok", not problems, "; ".join(problems))
            )
    except SurgForgeError as exc:
        results.append(CheckResult(kind, "valid_request_ok", False, str(exc)))

    # A malformed payload must yield a protocol error envelope with a
    # taxonomy code -- never a crash, never an off-schema answer.
    bad_req = BackendRequest(kind=kind, payload={"not": "the schema"})
    try:
        raw: BackendResponse = endpoint.send(bad_req, 30.0)
        validate_response(raw, kind, raw.request_id)  # envelope shape only
        if raw.status != "error":
            results.append(
                CheckResult(kind, "malformed_request_error", False, "answered ok")
            )
        elif raw.error["code"] not in ERROR_CODES:
            results.append(
                CheckResult(
                    kind, "malformed_request_error", False,
                    f"code {raw.error['code']!r} not in taxonomy",
                )
            )
        else:
            results.append(CheckResult(kind, "malformed_request_error", True))
    except SchemaViolation as exc:
        results.append(CheckResult(kind, "malformed_request_error", False, str(exc)))
    except SurgForgeError as exc:
        results.append(
            CheckResult(kind, "malformed_request_error", False, f"transport failure: {exc}")
        )
    return results


def run_conformance(
    endpoint, kinds=None, ctx: ConformanceContext | None = None
) -> list[CheckResult]:
    kinds = kinds or Kind.ALL
    out: list[CheckResult] = []
    for kind in kinds:
        out.extend(check_kind(endpoint, kind, ctx))
    return out


def assert_conformant(endpoint, kinds=None, ctx: ConformanceContext | None = None) -> None:
    failures = [r for r in run_conformance(endpoint, kinds, ctx) if not r.passed]
    if failures:
        lines = [f"{r.kind} {r.name}: {r.detail}" for r in failures]
        raise AssertionError("conformance failures:\n" + "\n".join(lines))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Run the protocol conformance suite.")
    parser.add_argument("--endpoint", required=True, help="mock | http://... | pipe:<cmd>")
    parser.add_argument("--kind", action="append", help="restrict to these kinds")
    parser.add_argument("--audio", default=None, help="audio file for asr.transcribe")
    parser.add_argument("--audio-duration-ms", type=int, default=3000)
    args = parser.parse_args(argv)
    ctx = ConformanceContext()
    if args.audio:
        ctx.audio_path = args.audio
        ctx.audio_duration_ms = args.audio_duration_ms
    endpoint = make_endpoint(args.endpoint)
    results = run_conformance(endpoint, args.kind, ctx)
    worst = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.kind:16s} {r.name}" + (f"  ({r.detail})" if r.detail else ""))
        worst = max(worst, 0 if r.passed else 1)
    return worst


if __name__ == "__main__":
    raise SystemExit(main())
