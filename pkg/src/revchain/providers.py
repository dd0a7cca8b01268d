"""Completion and embedding providers.

Every provider speaks one of two small interfaces:

- completion: ``complete(prompt_text, params) -> CompletionBatch``
- embedding:  ``embed_texts(texts) -> numpy array of shape (n, dim)``

Live providers talk a chat-completions style HTTP API with bearer-token auth,
bounded retries, and a concurrency cap. A recording wrapper appends every
request/response to a transcript file, and replay providers serve those
transcripts back verbatim, which is what makes whole runs reproducible
offline. Transcript records are keyed by a fingerprint of the exact prompt
text; repeated identical prompts replay in first-in-first-out order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
import zlib
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests

log = logging.getLogger(__name__)


def fingerprint_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.6
    max_tokens: int = 2048
    n: int = 20

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.n < 1:
            raise ValueError("n must be >= 1")


@dataclass
class CompletionBatch:
    prompt_fingerprint: str
    texts: list[str]
    provider_id: str
    latency_s: float = 0.0
    retry_count: int = 0
    shortfall: int = 0  # requested n minus delivered texts, live provider only


class ProviderError(RuntimeError):
    pass


class AuthError(ProviderError):
    pass


class TranscriptIncompleteError(ProviderError):
    def __init__(self, fingerprint: str, kind: str = "completion"):
        super().__init__(
            f"transcript incomplete: no remaining {kind} record for fingerprint {fingerprint}"
        )
        self.fingerprint = fingerprint


# ---------------------------------------------------------------------------
# Transcripts


class TranscriptWriter:
    """Exclusive-append JSONL channel shared by concurrent workers."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")


def _load_transcript(path: str | Path, kind: str) -> dict[str, deque]:
    queues: dict[str, deque] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            if record.get("kind") != kind:
                continue
            queues.setdefault(record["fingerprint"], deque()).append(record)
    return queues


# ---------------------------------------------------------------------------
# Completion providers


class ReplayCompletionProvider:
    """Serves recorded completions; any miss is fatal by design."""

    provider_id = "replay"

    def __init__(self, transcript_path: str | Path):
        self._queues = _load_transcript(transcript_path, "completion")
        self.requests_served = 0

    def complete(self, prompt_text: str, params: SamplingParams) -> CompletionBatch:
        fp = fingerprint_text(prompt_text)
        queue = self._queues.get(fp)
        if not queue:
            raise TranscriptIncompleteError(fp)
        record = queue.popleft()
        texts = list(record["texts"])
        if len(texts) != params.n:
            raise ProviderError(
                f"transcript record for {fp} holds {len(texts)} texts, request wants {params.n}"
            )
        self.requests_served += 1
        return CompletionBatch(prompt_fingerprint=fp, texts=texts, provider_id=self.provider_id)


class HttpCompletionProvider:
    """Chat-completions HTTP client with retries and a concurrency cap.

    Retry/timeout values are engineering defaults, configurable per run.
    Transient failures (connection errors, 429, 5xx) retry with exponential
    backoff; authentication failures abort immediately.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "REVCHAIN_API_KEY",
        max_retries: int = 3,
        backoff_base_s: float = 0.5,
        rate_cap: int = 4,
        request_timeout_s: float = 60.0,
        requests_per_sample: bool = False,
        transport=None,  # injectable for tests; defaults to requests.post
        sleep=time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.backoff_base_s = backoff_base_s
        self.request_timeout_s = request_timeout_s
        self.requests_per_sample = requests_per_sample
        self._transport = transport or self._default_transport
        self._sleep = sleep
        self._gate = threading.Semaphore(max(1, rate_cap))
        self.provider_id = f"http:{model}"

    def _default_transport(self, url: str, payload: dict, headers: dict):
        resp = requests.post(url, json=payload, headers=headers, timeout=self.request_timeout_s)
        return resp.status_code, resp.json() if resp.content else {}

    def _headers(self) -> dict:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise AuthError(f"missing API key: set ${self.api_key_env}")
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def _one_request(self, prompt_text: str, params: SamplingParams, n: int) -> tuple[list[str], int]:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt_text}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "n": n,
        }
        url = f"{self.base_url}/chat/completions"
        headers = self._headers()
        attempt = 0
        while True:
            try:
                with self._gate:
                    status, body = self._transport(url, payload, headers)
            except (requests.ConnectionError, requests.Timeout, OSError) as exc:
                status, body = -1, {"error": str(exc)}
            if status == 200:
                texts = [c["message"]["content"] for c in body.get("choices", [])]
                return texts, attempt
            if status in (401, 403):
                raise AuthError(f"authentication failed (HTTP {status})")
            if attempt >= self.max_retries:
                log.warning("completion request failed after %d retries (HTTP %s)", attempt, status)
                return [], attempt
            self._sleep(self.backoff_base_s * (2**attempt))
            attempt += 1

    def complete(self, prompt_text: str, params: SamplingParams) -> CompletionBatch:
        start = time.monotonic()
        texts: list[str] = []
        retries = 0
        if self.requests_per_sample:
            # for backends that cannot honor n > 1 natively
            for _ in range(params.n):
                got, attempts = self._one_request(prompt_text, params, 1)
                texts.extend(got)
                retries += attempts
        else:
            texts, retries = self._one_request(prompt_text, params, params.n)
        shortfall = params.n - len(texts)
        if shortfall:
            log.warning("completion batch short by %d of %d samples", shortfall, params.n)
        return CompletionBatch(
            prompt_fingerprint=fingerprint_text(prompt_text),
            texts=texts,
            provider_id=self.provider_id,
            latency_s=time.monotonic() - start,
            retry_count=retries,
            shortfall=shortfall,
        )


class RecordingCompletionProvider:
    """Wraps any completion provider and appends every batch to a transcript."""

    def __init__(self, inner, writer: TranscriptWriter):
        self.inner = inner
        self.writer = writer
        self.provider_id = getattr(inner, "provider_id", "unknown")

    def complete(self, prompt_text: str, params: SamplingParams) -> CompletionBatch:
        batch = self.inner.complete(prompt_text, params)
        self.writer.append(
            {
                "kind": "completion",
                "fingerprint": batch.prompt_fingerprint,
                "request": {
                    "model": getattr(self.inner, "model", self.provider_id),
                    "temperature": params.temperature,
                    "max_tokens": params.max_tokens,
                    "n": params.n,
                    "prompt": prompt_text,
                },
                "texts": batch.texts,
                "provider_id": batch.provider_id,
            }
        )
        return batch


# ---------------------------------------------------------------------------
# Embedding providers


def l2_normalize(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return matrix / norms


class LocalHashEmbedder:
    """Deterministic hashed sub-word frequency embedding.

    This is plumbing, not a model: tokens and their character trigrams are
    hashed (crc32, stable across processes) into a fixed number of buckets,
    counted, and L2-normalized. It gives the pipeline a zero-network way to
    separate structurally different code while keeping identical texts at
    cosine similarity exactly 1.
    """

    def __init__(self, dim: int = 256):
        if dim < 8:
            raise ValueError("dim must be >= 8")
        self.dim = dim
        self.provider_id = f"local-hash-{dim}"

    def _tokens(self, text: str):
        for token in re.findall(r"[A-Za-z_][A-Za-z_0-9]*|\d+|[^\sA-Za-z0-9_]", text):
            yield token
            if len(token) > 3:
                for i in range(len(token) - 2):
                    yield token[i : i + 3]

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for row, text in enumerate(texts):
            for token in self._tokens(text):
                bucket = zlib.crc32(token.encode("utf-8")) % self.dim
                out[row, bucket] += 1.0
        return l2_normalize(out)


def embedding_batch_fingerprint(texts: list[str]) -> str:
    return hashlib.sha256(json.dumps(list(texts)).encode("utf-8")).hexdigest()


class HttpEmbeddingProvider:
    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "REVCHAIN_API_KEY",
        max_retries: int = 3,
        backoff_base_s: float = 0.5,
        batch_size: int = 64,
        request_timeout_s: float = 60.0,
        transport=None,
        sleep=time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.backoff_base_s = backoff_base_s
        self.batch_size = batch_size
        self.request_timeout_s = request_timeout_s
        self._transport = transport or self._default_transport
        self._sleep = sleep
        self.provider_id = f"http-embed:{model}"

    def _default_transport(self, url: str, payload: dict, headers: dict):
        resp = requests.post(url, json=payload, headers=headers, timeout=self.request_timeout_s)
        return resp.status_code, resp.json() if resp.content else {}

    def _headers(self) -> dict:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise AuthError(f"missing API key: set ${self.api_key_env}")
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def _one_batch(self, texts: list[str]) -> np.ndarray:
        url = f"{self.base_url}/embeddings"
        payload = {"model": self.model, "input": texts}
        headers = self._headers()
        attempt = 0
        while True:
            try:
                status, body = self._transport(url, payload, headers)
            except (requests.ConnectionError, requests.Timeout, OSError) as exc:
                status, body = -1, {"error": str(exc)}
            if status == 200:
                rows = sorted(body.get("data", []), key=lambda d: d.get("index", 0))
                return np.asarray([r["embedding"] for r in rows], dtype=np.float64)
            if status in (401, 403):
                raise AuthError(f"authentication failed (HTTP {status})")
            if attempt >= self.max_retries:
                # embeddings are load-bearing for clustering: no silent fallback
                raise ProviderError(f"embedding request failed after {attempt} retries")
            self._sleep(self.backoff_base_s * (2**attempt))
            attempt += 1

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        chunks = []
        for i in range(0, len(texts), self.batch_size):
            chunks.append(self._one_batch(texts[i : i + self.batch_size]))
        return l2_normalize(np.vstack(chunks))


class ReplayEmbeddingProvider:
    provider_id = "replay-embed"

    def __init__(self, transcript_path: str | Path):
        self._queues = _load_transcript(transcript_path, "embedding")

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        fp = embedding_batch_fingerprint(texts)
        queue = self._queues.get(fp)
        if not queue:
            raise TranscriptIncompleteError(fp, kind="embedding")
        record = queue.popleft()
        return l2_normalize(np.asarray(record["vectors"], dtype=np.float64))


class RecordingEmbeddingProvider:
    def __init__(self, inner, writer: TranscriptWriter):
        self.inner = inner
        self.writer = writer
        self.provider_id = getattr(inner, "provider_id", "unknown")

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        vectors = self.inner.embed_texts(texts)
        self.writer.append(
            {
                "kind": "embedding",
                "fingerprint": embedding_batch_fingerprint(texts),
                "vectors": [list(map(float, row)) for row in vectors],
                "provider_id": self.provider_id,
            }
        )
        return vectors
