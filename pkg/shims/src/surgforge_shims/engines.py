"""The model engines behind each shim kind.

Every kind has a self-contained local engine so shims run with no network
and no model downloads:

* ``vad``       -- energy-based voice activity detection over WAV audio;
  emits millisecond word/sentence spans with placeholder tokens (it detects
  speech, it does not recognize it).
* ``hashgram``  -- signed character-n-gram feature hashing, unit-normalized;
  a real deterministic text featurizer.
* ``pixels``    -- 8x8 grayscale thumbnail folded into the requested
  dimension for image bytes; descriptor strings fall back to hashgram.
* ``rules``     -- deterministic text models: structural sentence grouping
  for the segmenter, keyword counting for the judge, template composition
  for the enricher, token-overlap scoring for the taxonomist.

Remote engines (``openai``) wrap an OpenAI-compatible API for the language
and embedding kinds using the credentials in the shim config.
"""

import base64
import hashlib
import io
import json
import math
import struct
import wave

from surgforge_shims.wire import RequestError

# --- speech ---------------------------------------------------------------------


class VadTranscriber:
    """Voice-activity transcription: finds voiced spans in a WAV file.

    Emits one sentence per voiced region and one placeholder word per
    ~300 ms voiced slice. Honest about its limits: tokens are "[speech]";
    the value is the millisecond timing, which downstream alignment needs.
    """

    def __init__(self, window_ms: int = 20, min_region_ms: int = 60, merge_gap_ms: int = 120):
        self.window_ms = window_ms
        self.min_region_ms = min_region_ms
        self.merge_gap_ms = merge_gap_ms

    def run(self, payload: dict) -> dict:
        path = payload["audio_path"]
        try:
            with wave.open(path, "rb") as fh:
                n_channels = fh.getnchannels()
                width = fh.getsampwidth()
                rate = fh.getframerate()
                raw = fh.readframes(fh.getnframes())
        except (OSError, wave.Error) as exc:
            raise RequestError("invalid_request", f"cannot read WAV {path!r}: {exc}") from exc
        if width != 2:
            raise RequestError("invalid_request", f"only 16-bit PCM supported, got width {width}")
        samples = struct.unpack(f"<{len(raw) // 2}h", raw)
        if n_channels > 1:
            samples = samples[::n_channels]
        duration_ms = int(len(samples) * 1000 / rate)
        limit = payload.get("duration_ms")
        if isinstance(limit, int) and limit > 0:
            duration_ms = min(duration_ms, limit)

        window = max(1, int(rate * self.window_ms / 1000))
        energies = [
            sum(abs(s) for s in samples[i : i + window]) / window
            for i in range(0, len(samples), window)
        ]
        if not energies:
            return {"video_id": payload["video_id"], "sentences": [], "words": []}
        threshold = max(1.0, 2.0 * sum(energies) / len(energies) * 0.5)

        regions: list[list[int]] = []
        for idx, energy in enumerate(energies):
            t0 = idx * self.window_ms
            t1 = min(duration_ms, t0 + self.window_ms)
            if t0 >= duration_ms:
                break
            if energy > threshold:
                if regions and t0 - regions[-1][1] <= self.merge_gap_ms:
                    regions[-1][1] = t1
                else:
                    regions.append([t0, t1])
        regions = [r for r in regions if r[1] - r[0] >= self.min_region_ms]

        sentences, words = [], []
        for k, (t0, t1) in enumerate(regions):
            sentences.append(
                {"text": f"[speech segment {k}]", "t_start_ms": t0, "t_end_ms": t1}
            )
            step = 300
            for w0 in range(t0, t1, step):
                w1 = min(t1, w0 + step)
                if w1 > w0:
                    words.append({"text": "[speech]", "t_start_ms": w0, "t_end_ms": w1})
        return {"video_id": payload["video_id"], "sentences": sentences, "words": words}


# --- embeddings ------------------------------------------------------------------

DEFAULT_DIM = 64


def _hashgram_vector(text: str, dim: int) -> list[float]:
    """Signed feature hashing over word tokens and character trigrams."""
    vec = [0.0] * dim
    tokens = text.lower().split()
    grams = list(tokens)
    padded = f"  {text.lower()}  "
    grams.extend(padded[i : i + 3] for i in range(len(padded) - 2))
    for gram in grams:
        digest = hashlib.sha256(gram.encode("utf-8")).digest()
        index = int.from_bytes(digest[:8], "big") % dim
        sign = 1.0 if digest[8] & 1 else -1.0
        vec[index] += sign
    norm = math.sqrt(sum(v * v for v in vec))
    if norm == 0.0:
        vec[0] = 1.0
        return vec
    return [v / norm for v in vec]


class HashgramTextEmbedder:
    def run(self, payload: dict) -> dict:
        dim = payload.get("dim", DEFAULT_DIM)
        if not isinstance(dim, int) or dim < 2:
            raise RequestError("invalid_request", f"bad dim {dim!r}")
        return {"vectors": [_hashgram_vector(t, dim) for t in payload["texts"]], "dim": dim}


class PixelImageEmbedder:
    """Thumbnail statistics for raw images; hashgram for descriptors."""

    def run(self, payload: dict) -> dict:
        dim = payload.get("dim", DEFAULT_DIM)
        if not isinstance(dim, int) or dim < 2:
            raise RequestError("invalid_request", f"bad dim {dim!r}")
        vectors = []
        for image in payload["images"]:
            if image.get("data_b64"):
                vectors.append(self._pixels(image["data_b64"], dim))
            else:
                vectors.append(_hashgram_vector(image["descriptor"], dim))
        return {"vectors": vectors, "dim": dim}

    @staticmethod
    def _pixels(data_b64: str, dim: int) -> list[float]:
        from PIL import Image

        try:
            raw = base64.b64decode(data_b64, validate=True)
            img = Image.open(io.BytesIO(raw)).convert("L").resize((8, 8))
        except Exception as exc:
            raise RequestError("invalid_request", f"undecodable image: {exc}") from exc
        values = [b / 255.0 - 0.5 for b in img.tobytes()]  # mode L: 1 byte/pixel
        vec = [0.0] * dim
        for i, v in enumerate(values):
            vec[i % dim] += v
        norm = math.sqrt(sum(v * v for v in vec))
        if norm == 0.0:
            vec[0] = 1.0
            return vec
        return [v / norm for v in vec]


# --- rule-based text models -------------------------------------------------------


class RuleSegmenter:
    """Structural grouping: fixed sentence counts per task/step/phase."""

    def __init__(self, sentences_per_task=2, tasks_per_step=2, steps_per_phase=2):
        self.sizes = (sentences_per_task, tasks_per_step, steps_per_phase)

    def run(self, payload: dict) -> dict:
        def group(items, size):
            out = []
            for i in range(0, len(items), size):
                chunk = items[i : i + size]
                topic = str(chunk[0].get("text", chunk[0].get("topic", "")))
                out.append(
                    {
                        "t_start_ms": chunk[0]["t_start_ms"],
                        "t_end_ms": chunk[-1]["t_end_ms"],
                        "topic": " ".join(topic.split()[:3]),
                    }
                )
            return out

        tasks = group(payload["sentences"], self.sizes[0])
        steps = group(tasks, self.sizes[1])
        phases = group(steps, self.sizes[2])
        return {"phases": phases, "steps": steps, "tasks": tasks}


JUDGE_KEYWORDS = frozenset(
    {
        "gallbladder", "liver", "artery", "duct", "tissue", "fascia", "vessel",
        "peritoneum", "uterus", "colon", "bowel", "stomach", "kidney", "bladder",
        "mesentery", "hernia", "grasper", "cautery", "trocar", "scissors",
        "needle", "suture", "clip", "retractor", "dissect", "dissection",
        "retract", "incision", "hemostasis", "ligate", "cystic", "mesh",
    }
)


def _tokens(text: str) -> list[str]:
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


class RuleJudge:
    def __init__(self, keywords=JUDGE_KEYWORDS, min_hits=2):
        self.keywords = frozenset(keywords)
        self.min_hits = min_hits

    def run(self, payload: dict) -> dict:
        hits = {t for t in _tokens(payload["caption"]) if t in self.keywords}
        label = "descriptive" if len(hits) >= self.min_hits else "non_descriptive"
        return {"label": label}


class RuleEnricher:
    def run(self, payload: dict) -> dict:
        return {
            "caption_enriched": (
                f"In this {payload['procedure_type']}: {payload['caption']} "
                f"[context={len(payload['context'])}]"
            )
        }


class RuleTaxonomist:
    def __init__(self, synonyms: dict[str, list[str]] | None = None):
        self.synonyms = synonyms or {}

    def run(self, payload: dict) -> dict:
        summary_tokens = set(_tokens(payload["summary"]))
        best_score, best = 0, None
        for specialty, subjects in payload["tree"].items():
            for subject, procedures in subjects.items():
                for proc in procedures:
                    match = set(_tokens(proc))
                    match.update(_tokens(" ".join(self.synonyms.get(proc, []))))
                    score = len(match & summary_tokens)
                    if score > best_score:
                        best_score, best = score, (specialty, subject, proc)
        if best is None:
            return {"specialty": "unknown", "subject": "unknown", "procedure": "unknown"}
        return {"specialty": best[0], "subject": best[1], "procedure": best[2]}


# --- OpenAI-compatible remote engines ---------------------------------------------


class OpenAIChatEngine:
    """Chat-completions adapter for the language kinds.

    The model is instructed to answer with the result JSON for the kind;
    off-JSON or off-schema answers become protocol internal errors (the
    engine client will not retry them).
    """

    PROMPTS = {
        "text.judge": (
            "Decide whether the caption describes a visual scene. Answer with "
            'JSON {{"label": "descriptive"}} or {{"label": "non_descriptive"}}.\n'
            "Caption: {caption}"
        ),
        "text.enrich": (
            "Rewrite the caption with the given context. Answer with JSON "
            '{{"caption_enriched": "..."}}.\n'
            "Caption: {caption}\nPreceding captions: {context}\nTitle: {title}\n"
            "Procedure type: {procedure_type}\nGranularity: {level}"
        ),
        "text.taxonomy": (
            "Classify the summary into the taxonomy tree. Answer with JSON "
            '{{"specialty": "...", "subject": "...", "procedure": "..."}}.\n'
            "Taxonomy: {tree}\nSummary: {summary}"
        ),
        "seg.hierarchy": (
            "Group the timestamped sentences into nested tasks, steps, and "
            "phases. Answer with JSON {{\"phases\": [...], \"steps\": [...], "
            "\"tasks\": [...]}} where each item has t_start_ms, t_end_ms, "
            "topic.\nSentences: {sentences}"
        ),
    }

    def __init__(self, kind: str, base_url: str, model: str, api_key: str = "",
                 timeout_s: float = 60.0):
        if kind not in self.PROMPTS:
            raise ValueError(f"no chat adapter for kind {kind}")
        self.kind = kind
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout_s = timeout_s

    def run(self, payload: dict) -> dict:
        import requests

        prompt = self.PROMPTS[self.kind].format(
            **{k: json.dumps(v) if isinstance(v, (dict, list)) else v
               for k, v in payload.items()}
        )
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        resp = requests.post(
            f"{self.base_url}/chat/completions",
            json={
                "model": self.model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": 0,
            },
            headers=headers,
            timeout=self.timeout_s,
        )
        resp.raise_for_status()
        content = resp.json()["choices"][0]["message"]["content"]
        return json.loads(content)


class OpenAIEmbeddingEngine:
    """Embeddings adapter; vectors are re-normalized to unit length and the
    requested dimension is enforced by truncation-and-renormalize (APIs fix
    their own output width)."""

    def __init__(self, kind: str, base_url: str, model: str, api_key: str = "",
                 timeout_s: float = 60.0):
        self.kind = kind
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout_s = timeout_s

    def run(self, payload: dict) -> dict:
        import requests

        if self.kind == "embed.text":
            inputs = payload["texts"]
        else:
            inputs = [
                img.get("descriptor") or f"image bytes sha256 "
                f"{hashlib.sha256(img['data_b64'].encode()).hexdigest()}"
                for img in payload["images"]
            ]
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        resp = requests.post(
            f"{self.base_url}/embeddings",
            json={"model": self.model, "input": inputs},
            headers=headers,
            timeout=self.timeout_s,
        )
        resp.raise_for_status()
        data = resp.json()["data"]
        dim = payload.get("dim")
        vectors = []
        for item in sorted(data, key=lambda d: d.get("index", 0)):
            vec = item["embedding"]
            if dim is not None:
                vec = vec[:dim]
            norm = math.sqrt(sum(v * v for v in vec))
            vectors.append([v / norm for v in vec] if norm > 0 else [1.0] + [0.0] * (len(vec) - 1))
        return {"vectors": vectors, "dim": len(vectors[0])}


LOCAL_ENGINES = {
    "asr.transcribe": ("vad", VadTranscriber),
    "seg.hierarchy": ("rules", RuleSegmenter),
    "text.judge": ("rules", RuleJudge),
    "text.enrich": ("rules", RuleEnricher),
    "text.taxonomy": ("rules", RuleTaxonomist),
    "embed.text": ("hashgram", HashgramTextEmbedder),
    "embed.image": ("pixels", PixelImageEmbedder),
}


def build_engine(kind: str, engine_name: str = "local", base_url: str = "",
                 model: str = "", api_key: str = ""):
    """Instantiate the engine serving ``kind``."""
    local_name, local_cls = LOCAL_ENGINES[kind]
    if engine_name in ("local", local_name):
        return local_cls()
    if engine_name == "openai":
        if not base_url or not model:
            raise ValueError("openai engine needs --base-url and --model")
        if kind in OpenAIChatEngine.PROMPTS:
            return OpenAIChatEngine(kind, base_url, model, api_key)
        if kind in ("embed.text", "embed.image"):
            return OpenAIEmbeddingEngine(kind, base_url, model, api_key)
        raise ValueError(f"no openai adapter for kind {kind}")
    raise ValueError(f"unknown engine {engine_name!r} for kind {kind}")
