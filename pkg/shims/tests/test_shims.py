"""Shim conformance: every kind served by a live shim must pass the engine
package's contract suite over both transports, plus engine-level checks.

The engine package (surgforge) is used here only through its external
surfaces: the wire protocol, its endpoint transports, and the published
conformance suite.
"""

import base64
import io
import json
import math
import struct
import sys
import threading
import wave
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from surgforge.backend.client import HttpEndpoint, PipeEndpoint, call
from surgforge.backend.conformance import ConformanceContext, assert_conformant
from surgforge.backend.protocol import BackendRequest, Kind
from surgforge.errors import TransportError

from surgforge_shims.engines import (
    HashgramTextEmbedder,
    PixelImageEmbedder,
    RuleJudge,
    VadTranscriber,
    build_engine,
)
from surgforge_shims.server import serve_http
from surgforge_shims.wire import handle_line

ALL_KINDS = list(Kind.ALL)


@pytest.fixture(scope="session")
def tone_wav(tmp_path_factory) -> Path:
    """3-second 16 kHz mono WAV: silence, a 1-second 440 Hz burst, silence."""
    path = tmp_path_factory.mktemp("audio") / "tone.wav"
    rate = 16_000
    samples = []
    for i in range(3 * rate):
        t = i / rate
        if 0.5 <= t < 1.5:
            samples.append(int(12_000 * math.sin(2 * math.pi * 440 * t)))
        else:
            samples.append(0)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(struct.pack(f"<{len(samples)}h", *samples))
    return path


def conformance_ctx(tone_wav: Path) -> ConformanceContext:
    png = tiny_png()
    return ConformanceContext(
        audio_path=str(tone_wav),
        audio_duration_ms=3_000,
        image_b64=base64.b64encode(png).decode("ascii"),
    )


def tiny_png() -> bytes:
    from PIL import Image

    img = Image.new("L", (16, 16))
    img.putdata([(i * 13) % 256 for i in range(256)])
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


class TestStdioConformance:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_contract_suite_over_pipe(self, kind, tone_wav):
        endpoint = PipeEndpoint(
            f"{sys.executable} -m surgforge_shims.cli serve --kind {kind} --transport stdio"
        )
        try:
            assert_conformant(endpoint, kinds=[kind], ctx=conformance_ctx(tone_wav))
        finally:
            endpoint.close()


class TestHttpConformance:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_contract_suite_over_http(self, kind, tone_wav):
        server = serve_http(kind, build_engine(kind), host="127.0.0.1", port=0)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            host, port = server.server_address
            endpoint = HttpEndpoint(f"http://{host}:{port}/")
            assert_conformant(endpoint, kinds=[kind], ctx=conformance_ctx(tone_wav))
        finally:
            server.shutdown()
            thread.join(timeout=5)

    def test_bearer_token_enforced(self):
        kind = Kind.TEXT_JUDGE
        server = serve_http(kind, build_engine(kind), host="127.0.0.1", port=0,
                            token="sesame")
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            host, port = server.server_address
            req = BackendRequest(kind=kind, payload={"caption": "tissue and duct"})
            with pytest.raises(TransportError):
                call(HttpEndpoint(f"http://{host}:{port}/"), req)
            good = HttpEndpoint(f"http://{host}:{port}/", bearer_token="sesame")
            assert call(good, req).status == "ok"
        finally:
            server.shutdown()
            thread.join(timeout=5)


class TestVadTranscriber:
    def test_tone_burst_yields_bounded_words(self, tone_wav):
        result = VadTranscriber().run(
            {"video_id": "fx", "audio_path": str(tone_wav), "duration_ms": 3_000}
        )
        assert len(result["words"]) >= 1
        assert len(result["sentences"]) >= 1
        for word in result["words"]:
            assert 0 <= word["t_start_ms"] <= word["t_end_ms"] <= 3_000
        # the burst sits in [500, 1500]; detection should be in that vicinity
        first = result["sentences"][0]
        assert 300 <= first["t_start_ms"] <= 700
        assert 1_300 <= first["t_end_ms"] <= 1_700

    def test_silent_audio_has_no_words(self, tmp_path):
        path = tmp_path / "silence.wav"
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(2)
            fh.setframerate(16_000)
            fh.writeframes(struct.pack("<16000h", *([0] * 16_000)))
        result = VadTranscriber().run({"video_id": "s", "audio_path": str(path)})
        assert result["words"] == [] and result["sentences"] == []


class TestEmbedders:
    def test_text_vectors_unit_norm_and_deterministic(self):
        out = HashgramTextEmbedder().run({"texts": ["surgical field", "a slide"], "dim": 64})
        assert out["dim"] == 64
        for vec in out["vectors"]:
            assert abs(math.sqrt(sum(v * v for v in vec)) - 1.0) < 1e-4
        again = HashgramTextEmbedder().run({"texts": ["surgical field"], "dim": 64})
        assert again["vectors"][0] == out["vectors"][0]

    def test_image_bytes_and_descriptors_both_embed(self):
        payload = {
            "images": [
                {"id": "a", "data_b64": base64.b64encode(tiny_png()).decode("ascii")},
                {"id": "b", "descriptor": "surgical field tissue"},
            ],
            "dim": 32,
        }
        out = PixelImageEmbedder().run(payload)
        assert len(out["vectors"]) == 2
        for vec in out["vectors"]:
            assert abs(math.sqrt(sum(v * v for v in vec)) - 1.0) < 1e-4

    def test_related_texts_closer_than_unrelated(self):
        embed = HashgramTextEmbedder()
        a = embed.run({"texts": ["the surgical field shows tissue"], "dim": 128})["vectors"][0]
        b = embed.run({"texts": ["surgical field with tissue visible"], "dim": 128})["vectors"][0]
        c = embed.run({"texts": ["quarterly budget planning meeting"], "dim": 128})["vectors"][0]
        dot = lambda x, y: sum(p * q for p, q in zip(x, y))
        assert dot(a, b) > dot(a, c)


class TestWireErrors:
    def test_malformed_json_gets_error_envelope(self):
        line = handle_line("{broken", Kind.TEXT_JUDGE, RuleJudge())
        doc = json.loads(line)
        assert doc["status"] == "error"
        assert doc["error"]["code"] == "invalid_request"
        assert doc["request_id"] == "unparseable"

    def test_wrong_kind_is_unsupported(self):
        req = json.dumps(
            {
                "protocol_version": "1",
                "kind": "embed.text",
                "request_id": "r1",
                "payload": {"texts": ["x"]},
            }
        )
        doc = json.loads(handle_line(req, Kind.TEXT_JUDGE, RuleJudge()))
        assert doc["status"] == "error"
        assert doc["error"]["code"] == "unsupported_kind"
        assert doc["request_id"] == "r1"

    def test_engine_crash_is_internal_error(self):
        class Boom:
            def run(self, payload):
                raise RuntimeError("kaput")

        req = json.dumps(
            {
                "protocol_version": "1",
                "kind": "text.judge",
                "request_id": "r2",
                "payload": {"caption": "x"},
            }
        )
        doc = json.loads(handle_line(req, Kind.TEXT_JUDGE, Boom()))
        assert doc["status"] == "error"
        assert doc["error"]["code"] == "internal"


class _StubOpenAI(BaseHTTPRequestHandler):
    """Minimal OpenAI-compatible stub: canned chat + embeddings answers."""

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        if self.path.endswith("/chat/completions"):
            content = json.dumps({"label": "descriptive"})
            reply = {"choices": [{"message": {"content": content}}]}
        else:
            reply = {
                "data": [
                    {"index": i, "embedding": [1.0, 2.0, 2.0, 4.0]}
                    for i in range(len(body["input"]))
                ]
            }
        payload = json.dumps(reply).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, fmt, *args):
        pass


class TestOpenAIAdapters:
    @pytest.fixture
    def stub_api(self):
        server = ThreadingHTTPServer(("127.0.0.1", 0), _StubOpenAI)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        host, port = server.server_address
        yield f"http://{host}:{port}/v1"
        server.shutdown()
        thread.join(timeout=5)

    def test_chat_adapter_parses_result_json(self, stub_api):
        engine = build_engine(Kind.TEXT_JUDGE, "openai", base_url=stub_api,
                              model="stub-model", api_key="k")
        assert engine.run({"caption": "liver and duct"}) == {"label": "descriptive"}

    def test_embedding_adapter_normalizes(self, stub_api):
        engine = build_engine(Kind.EMBED_TEXT, "openai", base_url=stub_api,
                              model="stub-embed")
        out = engine.run({"texts": ["a", "b"], "dim": 4})
        assert out["dim"] == 4
        for vec in out["vectors"]:
            assert abs(math.sqrt(sum(v * v for v in vec)) - 1.0) < 1e-9


class TestEngineIntegration:
    def test_full_pipeline_runs_on_shim_endpoints(self, tmp_path):
        """The engine, pointed at stdio shims for every kind, completes the
        fixture corpus and produces a structurally identical manifest."""
        from surgforge.config import load_config
        from surgforge.pipeline import PipelineRunner

        corpus = Path(__file__).resolve().parent.parent.parent / "fixtures" / "corpus"
        pipe = (
            lambda kind: f"pipe:{sys.executable} -m surgforge_shims.cli serve "
            f"--kind {kind} --transport stdio"
        )
        config = load_config(
            None, corpus_dir=str(corpus), workdir=str(tmp_path / "run"), seed=7
        )
        config.endpoints = {kind: pipe(kind) for kind in Kind.ALL}
        runner = PipelineRunner(config)
        runner.run_all()
        runner.close()
        lines = (tmp_path / "run" / "manifest.jsonl").read_text().splitlines()
        docs = [json.loads(l) for l in lines]
        assert len(docs) == 23  # same structural grouping rules as the mock
        assert all(d["visual_label"] in ("surgical", "non_surgical") for d in docs)
        assert all(d["textual_label"] in ("descriptive", "non_descriptive") for d in docs)
        levels = {d["level"] for d in docs}
        assert levels == {"phase", "step", "task"}
