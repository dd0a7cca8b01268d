import json

import numpy as np
import pytest

from revchain.providers import (
    AuthError,
    CompletionBatch,
    HttpCompletionProvider,
    HttpEmbeddingProvider,
    LocalHashEmbedder,
    ProviderError,
    RecordingCompletionProvider,
    RecordingEmbeddingProvider,
    ReplayCompletionProvider,
    ReplayEmbeddingProvider,
    SamplingParams,
    TranscriptIncompleteError,
    TranscriptWriter,
    embedding_batch_fingerprint,
    fingerprint_text,
)


def test_sampling_params_defaults_and_validation():
    params = SamplingParams()
    assert params.temperature == 0.6
    assert params.max_tokens == 2048
    assert params.n == 20
    with pytest.raises(ValueError):
        SamplingParams(n=0)
    with pytest.raises(ValueError):
        SamplingParams(temperature=-0.1)
    with pytest.raises(ValueError):
        SamplingParams(max_tokens=0)


def test_fingerprint_text_stability():
    assert fingerprint_text("abc") == fingerprint_text("abc")
    assert fingerprint_text("abc") != fingerprint_text("abd")
    assert len(fingerprint_text("abc")) == 64


# ---------------------------------------------------------------------------
# Record then replay


class StubCompletion:
    provider_id = "stub"
    model = "stub-model"

    def __init__(self):
        self.calls = 0

    def complete(self, prompt_text, params):
        self.calls += 1
        return CompletionBatch(
            prompt_fingerprint=fingerprint_text(prompt_text),
            texts=[f"reply {self.calls}-{i}" for i in range(params.n)],
            provider_id=self.provider_id,
        )


def test_completion_record_replay_round_trip(tmp_path):
    transcript = tmp_path / "completions.jsonl"
    recorder = RecordingCompletionProvider(StubCompletion(), TranscriptWriter(transcript))
    params = SamplingParams(n=3)
    first = recorder.complete("prompt A", params)
    second = recorder.complete("prompt A", params)  # same prompt twice
    other = recorder.complete("prompt B", params)

    replay = ReplayCompletionProvider(transcript)
    assert replay.complete("prompt A", params).texts == first.texts
    assert replay.complete("prompt A", params).texts == second.texts  # FIFO order
    assert replay.complete("prompt B", params).texts == other.texts
    assert replay.requests_served == 3


def test_replay_miss_is_fatal(tmp_path):
    transcript = tmp_path / "completions.jsonl"
    RecordingCompletionProvider(StubCompletion(), TranscriptWriter(transcript)).complete(
        "known", SamplingParams(n=1)
    )
    replay = ReplayCompletionProvider(transcript)
    with pytest.raises(TranscriptIncompleteError) as excinfo:
        replay.complete("unknown prompt", SamplingParams(n=1))
    assert fingerprint_text("unknown prompt") in str(excinfo.value)
    # exhausting the queue for a known prompt is also a miss
    replay.complete("known", SamplingParams(n=1))
    with pytest.raises(TranscriptIncompleteError):
        replay.complete("known", SamplingParams(n=1))


def test_replay_n_mismatch(tmp_path):
    transcript = tmp_path / "completions.jsonl"
    RecordingCompletionProvider(StubCompletion(), TranscriptWriter(transcript)).complete(
        "p", SamplingParams(n=2)
    )
    replay = ReplayCompletionProvider(transcript)
    with pytest.raises(ProviderError):
        replay.complete("p", SamplingParams(n=5))


def test_transcript_records_are_self_describing(tmp_path):
    transcript = tmp_path / "completions.jsonl"
    RecordingCompletionProvider(StubCompletion(), TranscriptWriter(transcript)).complete(
        "prompt text", SamplingParams(n=2, temperature=0.3, max_tokens=64)
    )
    record = json.loads(transcript.read_text(encoding="utf-8").splitlines()[0])
    assert record["kind"] == "completion"
    assert record["fingerprint"] == fingerprint_text("prompt text")
    assert record["request"]["prompt"] == "prompt text"
    assert record["request"]["n"] == 2
    assert record["request"]["temperature"] == 0.3
    assert len(record["texts"]) == 2


# ---------------------------------------------------------------------------
# HTTP provider against a fake transport


def _choices(texts):
    return {"choices": [{"message": {"content": t}} for t in texts]}


def test_http_completion_success(monkeypatch):
    calls = []

    def transport(url, payload, headers):
        calls.append((url, payload, headers))
        return 200, _choices([f"t{i}" for i in range(payload["n"])])

    monkeypatch.setenv("TEST_KEY_ENV", "sk-test")
    provider = HttpCompletionProvider(
        "http://example.invalid/v1", "m", api_key_env="TEST_KEY_ENV", transport=transport
    )
    batch = provider.complete("hello", SamplingParams(n=3))
    assert batch.texts == ["t0", "t1", "t2"]
    assert batch.shortfall == 0
    assert calls[0][0] == "http://example.invalid/v1/chat/completions"
    assert calls[0][1]["model"] == "m"
    assert calls[0][2]["Authorization"] == "Bearer sk-test"


def test_http_completion_retries_then_succeeds(monkeypatch):
    attempts = []

    def transport(url, payload, headers):
        attempts.append(1)
        if len(attempts) < 3:
            return 500, {"error": "boom"}
        return 200, _choices(["ok"])

    monkeypatch.setenv("TEST_KEY_ENV", "sk-test")
    slept = []
    provider = HttpCompletionProvider(
        "http://example.invalid",
        "m",
        api_key_env="TEST_KEY_ENV",
        transport=transport,
        sleep=slept.append,
        backoff_base_s=0.25,
    )
    batch = provider.complete("p", SamplingParams(n=1))
    assert batch.texts == ["ok"]
    assert batch.retry_count == 2
    assert slept == [0.25, 0.5]  # exponential backoff


def test_http_completion_auth_error_aborts(monkeypatch):
    def transport(url, payload, headers):
        return 401, {"error": "no"}

    monkeypatch.setenv("TEST_KEY_ENV", "sk-test")
    provider = HttpCompletionProvider(
        "http://example.invalid", "m", api_key_env="TEST_KEY_ENV", transport=transport
    )
    with pytest.raises(AuthError):
        provider.complete("p", SamplingParams(n=1))


def test_http_completion_shortfall_after_retries(monkeypatch):
    def transport(url, payload, headers):
        return 503, {"error": "unavailable"}

    monkeypatch.setenv("TEST_KEY_ENV", "sk-test")
    provider = HttpCompletionProvider(
        "http://example.invalid",
        "m",
        api_key_env="TEST_KEY_ENV",
        transport=transport,
        sleep=lambda s: None,
        max_retries=2,
    )
    batch = provider.complete("p", SamplingParams(n=4))
    assert batch.texts == []
    assert batch.shortfall == 4


def test_http_completion_requests_per_sample(monkeypatch):
    sizes = []

    def transport(url, payload, headers):
        sizes.append(payload["n"])
        return 200, _choices(["x"] * payload["n"])

    monkeypatch.setenv("TEST_KEY_ENV", "sk-test")
    provider = HttpCompletionProvider(
        "http://example.invalid",
        "m",
        api_key_env="TEST_KEY_ENV",
        transport=transport,
        requests_per_sample=True,
    )
    batch = provider.complete("p", SamplingParams(n=3))
    assert len(batch.texts) == 3
    assert sizes == [1, 1, 1]


def test_http_completion_missing_key(monkeypatch):
    monkeypatch.delenv("NO_SUCH_KEY_ENV", raising=False)
    with pytest.raises(AuthError):
        HttpCompletionProvider(
            "http://example.invalid", "m", api_key_env="NO_SUCH_KEY_ENV"
        ).complete("p", SamplingParams(n=1))


# ---------------------------------------------------------------------------
# Embeddings


def test_local_hash_embedder_shape_and_determinism():
    emb = LocalHashEmbedder(dim=64)
    texts = ["def f():\n    return 1", "def g():\n    return 2", ""]
    a = emb.embed_texts(texts)
    b = emb.embed_texts(texts)
    assert a.shape == (3, 64)
    np.testing.assert_array_equal(a, b)
    # non-empty rows are unit length, identical texts map to identical rows
    assert abs(np.linalg.norm(a[0]) - 1.0) < 1e-12
    same = emb.embed_texts(["def f():\n    return 1"])
    np.testing.assert_array_equal(a[0], same[0])


def test_local_hash_embedder_separates_structures():
    emb = LocalHashEmbedder(dim=256)
    vecs = emb.embed_texts(
        ["def parse(s):\n    return s.split()", "class Tree:\n    pass"]
    )
    cosine = float(vecs[0] @ vecs[1])
    assert cosine < 0.9


def test_embedding_record_replay_round_trip(tmp_path):
    transcript = tmp_path / "embeddings.jsonl"
    inner = LocalHashEmbedder(dim=32)
    recorder = RecordingEmbeddingProvider(inner, TranscriptWriter(transcript))
    texts = ["alpha", "beta gamma", "delta"]
    recorded = recorder.embed_texts(texts)

    replay = ReplayEmbeddingProvider(transcript)
    replayed = replay.embed_texts(texts)
    assert np.allclose(recorded, replayed, atol=1e-12)
    with pytest.raises(TranscriptIncompleteError):
        replay.embed_texts(["never recorded"])


def test_embedding_batch_fingerprint_order_sensitivity():
    assert embedding_batch_fingerprint(["a", "b"]) != embedding_batch_fingerprint(["b", "a"])


def test_http_embedding_provider(monkeypatch):
    def transport(url, payload, headers):
        vectors = [[float(len(t)), 1.0] for t in payload["input"]]
        return 200, {"data": [{"index": i, "embedding": v} for i, v in enumerate(vectors)]}

    monkeypatch.setenv("TEST_KEY_ENV", "sk-test")
    provider = HttpEmbeddingProvider(
        "http://example.invalid", "emb", api_key_env="TEST_KEY_ENV", transport=transport
    )
    out = provider.embed_texts(["ab", "cdef"])
    assert out.shape == (2, 2)
    # rows come back L2-normalized
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), [1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(out[0], np.array([2.0, 1.0]) / np.sqrt(5.0), atol=1e-12)
    np.testing.assert_allclose(out[1], np.array([4.0, 1.0]) / np.sqrt(17.0), atol=1e-12)


def test_http_embedding_no_silent_fallback(monkeypatch):
    def transport(url, payload, headers):
        return 500, {"error": "down"}

    monkeypatch.setenv("TEST_KEY_ENV", "sk-test")
    provider = HttpEmbeddingProvider(
        "http://example.invalid",
        "emb",
        api_key_env="TEST_KEY_ENV",
        transport=transport,
        sleep=lambda s: None,
    )
    with pytest.raises(ProviderError):
        provider.embed_texts(["a"])
