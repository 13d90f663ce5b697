"""Deterministic, rule-based mock for every service kind.

The mocks exist so the whole pipeline runs offline and every expected value
in the test suite can be computed by hand. The rules:

* ``embed.*``   -- a vector is derived from a SHA-256 counter stream seeded by
  the input string, then biased toward a fixed per-class anchor vector for
  each configured affinity token found in the input (weight added per
  distinct token), then unit-normalized. Identical input, identical vector.
* ``asr.transcribe`` -- if ``audio_path`` names an existing ``.json`` file it
  is returned as the transcript verbatim (sidecar mode); otherwise a single
  placeholder sentence spanning the clip is synthesized.
* ``seg.hierarchy`` -- structural grouping: consecutive sentences are chunked
  into tasks (2 sentences each by default), tasks into steps (2 tasks), and
  steps into phases (2 steps); each group spans first start to last end.
* ``text.judge``  -- a caption is ``descriptive`` iff it contains at least 2
  distinct keywords from the anatomy/instrument list.
* ``text.enrich`` -- template ``"In this {procedure_type}: {caption}
  [context={n}]"`` where ``n`` is the context window length.
* ``text.taxonomy`` -- leaves of the request's tree are scored by distinct
  token hits (leaf-name tokens plus configured synonyms); best leaf wins,
  ties resolved by tree order; zero hits yields the ``unknown`` triple.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from surgforge.backend.protocol import BackendRequest, BackendResponse
from surgforge.errors import SchemaViolation

DEFAULT_DIM = 64
DEFAULT_AFFINITY_WEIGHT = 6.0

# Tokens that pull an embedding toward the "surgical" anchor.
SURGICAL_TOKENS = frozenset(
    {
        "surgical", "surgery", "laparoscopic", "endoscopic", "operative",
        "tissue", "grasper", "cautery", "instrument", "anatomy", "field",
        "uterus", "gallbladder", "suture", "dissection", "retraction",
    }
)

# Tokens that pull an embedding toward the "nonsurgical" anchor.
NONSURGICAL_TOKENS = frozenset(
    {
        "presenter", "slide", "title", "lecture", "interview", "stage",
        "speaker", "conference", "room", "staff", "discussion", "logo",
        "audience", "office", "whiteboard",
    }
)

# Extra tokens that count as a hit for a taxonomy leaf (leaf-name tokens
# always count). Matches the leaves of the shipped default tree.
DEFAULT_TAXONOMY_SYNONYMS: dict[str, list[str]] = {
    "Laparoscopic Cholecystectomy": ["gallbladder", "cystic", "cholecystectomy"],
    "Laparoscopic Colectomy": ["colon", "colectomy", "mesentery", "bowel", "sigmoid"],
    "Inguinal Hernia Repair": ["hernia", "mesh", "inguinal"],
    "Total Laparoscopic Hysterectomy": ["uterus", "uterine", "hysterectomy"],
    "Partial Nephrectomy": ["kidney", "renal", "nephrectomy"],
    "Robotic Prostatectomy": ["prostate", "prostatectomy"],
}

# Anatomy/instrument vocabulary for the descriptiveness judge.
JUDGE_KEYWORDS = frozenset(
    {
        "gallbladder", "liver", "artery", "duct", "tissue", "fascia",
        "vessel", "peritoneum", "uterus", "colon", "bowel", "stomach",
        "kidney", "bladder", "mesentery", "hernia", "grasper", "cautery",
        "trocar", "scissors", "needle", "suture", "clip", "retractor",
        "dissect", "dissection", "retract", "incision", "hemostasis",
        "ligate", "cystic", "mesh",
    }
)


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric tokens; the tokenization every rule uses."""
    out, cur = [], []
    for ch in text.lower():
        if ch.isalnum():
            cur.append(ch)
        elif cur:
            out.append("".join(cur))
            cur = []
    if cur:
        out.append("".join(cur))
    return out


def _drbg_floats(seed_text: str, n: int) -> list[float]:
    """n floats in [-1, 1) from a SHA-256 counter stream; stable forever."""
    seed = hashlib.sha256(seed_text.encode("utf-8")).digest()
    out: list[float] = []
    counter = 0
    while len(out) < n:
        block = hashlib.sha256(seed + counter.to_bytes(8, "big")).digest()
        for i in range(0, 32, 8):
            val = int.from_bytes(block[i : i + 8], "big")
            out.append(val / 2**63 - 1.0)
        counter += 1
    return out[:n]


def _normalize(vec: list[float]) -> list[float]:
    norm = math.sqrt(sum(v * v for v in vec))
    if norm == 0.0:
        raise ValueError("zero vector from DRBG (astronomically unlikely)")
    return [v / norm for v in vec]


def anchor_vector(name: str, dim: int) -> list[float]:
    """Fixed unit vector a class anchor; independent of any input text."""
    return _normalize(_drbg_floats("anchor::" + name, dim))


def mock_embed(
    text: str,
    dim: int = DEFAULT_DIM,
    affinity: dict[str, tuple[str, float]] | None = None,
) -> list[float]:
    """Deterministic unit embedding of a string with keyword-affinity bias.

    ``affinity`` maps a token to (anchor name, weight); each *distinct*
    matching token adds ``weight * anchor`` before re-normalization.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if affinity is None:
        affinity = default_affinity()
    vec = _normalize(_drbg_floats("embed::" + text, dim))
    hits: dict[str, float] = {}
    seen: set[str] = set()
    for tok in tokenize(text):
        if tok in seen:
            continue
        seen.add(tok)
        if tok in affinity:
            anchor_name, weight = affinity[tok]
            hits[anchor_name] = hits.get(anchor_name, 0.0) + weight
    for anchor_name, weight in sorted(hits.items()):
        anc = anchor_vector(anchor_name, dim)
        vec = [v + weight * a for v, a in zip(vec, anc)]
    return _normalize(vec)


def default_affinity(weight: float = DEFAULT_AFFINITY_WEIGHT) -> dict[str, tuple[str, float]]:
    table: dict[str, tuple[str, float]] = {}
    for tok in SURGICAL_TOKENS:
        table[tok] = ("surgical", weight)
    for tok in NONSURGICAL_TOKENS:
        table[tok] = ("nonsurgical", weight)
    return table


@dataclass
class MockConfig:
    dim: int = DEFAULT_DIM
    affinity_weight: float = DEFAULT_AFFINITY_WEIGHT
    judge_keywords: frozenset[str] = JUDGE_KEYWORDS
    sentences_per_task: int = 2
    tasks_per_step: int = 2
    steps_per_phase: int = 2
    # leaf procedure name -> extra matching tokens
    taxonomy_synonyms: dict[str, list[str]] = field(
        default_factory=lambda: dict(DEFAULT_TAXONOMY_SYNONYMS)
    )


class MockBackend:
    """In-process handler serving all seven kinds with the documented rules."""

    def __init__(self, config: MockConfig | None = None):
        self.config = config or MockConfig()
        self._affinity = default_affinity(self.config.affinity_weight)

    # The in-process endpoint interface: request in, response out.
    def handle(self, req: BackendRequest) -> BackendResponse:
        try:
            handler = getattr(self, "_" + req.kind.replace(".", "_"))
        except AttributeError:
            return BackendResponse(
                request_id=req.request_id,
                status="error",
                error={"code": "unsupported_kind", "message": req.kind},
            )
        try:
            result = handler(req.payload)
        except SchemaViolation:
            raise
        except Exception as exc:  # rule errors become protocol errors
            return BackendResponse(
                request_id=req.request_id,
                status="error",
                error={"code": "internal", "message": str(exc)},
            )
        return BackendResponse(request_id=req.request_id, status="ok", result=result)

    # --- kind rules ---------------------------------------------------------

    def _asr_transcribe(self, payload: dict[str, Any]) -> dict[str, Any]:
        path = Path(payload["audio_path"])
        if path.suffix == ".json" and path.exists():
            doc = json.loads(path.read_text(encoding="utf-8"))
            return {
                "video_id": doc.get("video_id", payload["video_id"]),
                "sentences": doc["sentences"],
                "words": doc["words"],
            }
        duration = int(payload.get("duration_ms", 1000))
        text = f"placeholder narration for {payload['video_id']}"
        words = text.split()
        span = max(1, duration // len(words))
        word_objs = [
            {
                "text": w,
                "t_start_ms": i * span,
                "t_end_ms": min(duration, i * span + max(1, span - 100)),
            }
            for i, w in enumerate(words)
        ]
        return {
            "video_id": payload["video_id"],
            "sentences": [{"text": text, "t_start_ms": 0, "t_end_ms": duration}],
            "words": word_objs,
        }

    def _seg_hierarchy(self, payload: dict[str, Any]) -> dict[str, Any]:
        sentences = payload["sentences"]

        def group(items: list[dict], size: int) -> list[dict]:
            out = []
            for i in range(0, len(items), size):
                chunk = items[i : i + size]
                topic_src = chunk[0].get("text") or chunk[0].get("topic", "")
                out.append(
                    {
                        "t_start_ms": chunk[0]["t_start_ms"],
                        "t_end_ms": chunk[-1]["t_end_ms"],
                        "topic": " ".join(tokenize(topic_src)[:3]),
                    }
                )
            return out

        tasks = group(sentences, self.config.sentences_per_task)
        steps = group(tasks, self.config.tasks_per_step)
        phases = group(steps, self.config.steps_per_phase)
        return {"phases": phases, "steps": steps, "tasks": tasks}

    def _text_judge(self, payload: dict[str, Any]) -> dict[str, Any]:
        hits = {t for t in tokenize(payload["caption"]) if t in self.config.judge_keywords}
        label = "descriptive" if len(hits) >= 2 else "non_descriptive"
        return {"label": label}

    def _text_enrich(self, payload: dict[str, Any]) -> dict[str, Any]:
        enriched = (
            f"In this {payload['procedure_type']}: {payload['caption']} "
            f"[context={len(payload['context'])}]"
        )
        return {"caption_enriched": enriched}

    def _text_taxonomy(self, payload: dict[str, Any]) -> dict[str, Any]:
        summary_tokens = set(tokenize(payload["summary"]))
        best: tuple[int, tuple[str, str, str]] | None = None
        for specialty, subjects in payload["tree"].items():
            for subject, procedures in subjects.items():
                for proc in procedures:
                    match_tokens = set(tokenize(proc))
                    match_tokens.update(
                        tokenize(" ".join(self.config.taxonomy_synonyms.get(proc, [])))
                    )
                    score = len(match_tokens & summary_tokens)
                    if score > 0 and (best is None or score > best[0]):
                        best = (score, (specialty, subject, proc))
        if best is None:
            return {"specialty": "unknown", "subject": "unknown", "procedure": "unknown"}
        specialty, subject, proc = best[1]
        return {"specialty": specialty, "subject": subject, "procedure": proc}

    def _embed_text(self, payload: dict[str, Any]) -> dict[str, Any]:
        dim = int(payload.get("dim", self.config.dim))
        vectors = [mock_embed(t, dim, self._affinity) for t in payload["texts"]]
        return {"vectors": vectors, "dim": dim}

    def _embed_image(self, payload: dict[str, Any]) -> dict[str, Any]:
        dim = int(payload.get("dim", self.config.dim))
        vectors = []
        for img in payload["images"]:
            source = img.get("descriptor")
            if source is None:
                # Raw bytes are hashed so identical images embed identically.
                source = "sha256:" + hashlib.sha256(img["data_b64"].encode("ascii")).hexdigest()
            vectors.append(mock_embed(source, dim, self._affinity))
        return {"vectors": vectors, "dim": dim}
