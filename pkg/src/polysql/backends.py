"""Uniform access to chat-completion and embedding backends.

Every model role in the pipeline (the schema analyst, each SQL generator,
the candidate selector) is a named binding to either a live HTTP provider or
a deterministic scripted mock, so the whole pipeline can run offline with
reproducible transcripts.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

from .errors import (
    BackendFailure,
    DimensionMismatch,
    MockExhausted,
    ProviderExhausted,
    UnboundRole,
)

_VALID_SPEAKERS = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion call, addressed to a named role."""

    role_id: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("messages must be non-empty")
        for speaker, _text in self.messages:
            if speaker not in _VALID_SPEAKERS:
                raise ValueError(f"unknown speaker {speaker!r}")
        if self.messages[0][0] == "assistant":
            raise ValueError("first message must come from system or user")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")

    def prompt_text(self) -> str:
        return "\n".join(text for _speaker, text in self.messages)


@dataclass(frozen=True)
class EmbeddingVector:
    """A fixed-length real vector with its Euclidean norm cached."""

    values: tuple[float, ...]
    norm_cached: float

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "EmbeddingVector":
        tup = tuple(float(v) for v in values)
        norm = math.sqrt(sum(v * v for v in tup))
        if norm <= 0.0:
            raise ValueError("embedding vector must have positive norm")
        return cls(tup, norm)

    def cosine(self, other: "EmbeddingVector") -> float:
        if len(self.values) != len(other.values):
            raise DimensionMismatch(
                f"cosine over mismatched dimensions {len(self.values)} vs {len(other.values)}"
            )
        dot = sum(a * b for a, b in zip(self.values, other.values))
        value = dot / (self.norm_cached * other.norm_cached)
        return max(-1.0, min(1.0, value))


class ChatBackend(Protocol):
    def chat(self, request: ChatRequest) -> str: ...


class EmbeddingBackend(Protocol):
    dimension: int

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...


@dataclass(frozen=True)
class MockScriptEntry:
    matcher: str | None
    response: str


def load_mock_script(path: str | Path) -> list[MockScriptEntry]:
    """Load a line-delimited mock script: {"match": substring|null, "response": text}."""
    entries = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BackendFailure(f"{path}:{i + 1}: invalid mock script line: {exc}") from exc
        entries.append(MockScriptEntry(matcher=record.get("match"), response=str(record["response"])))
    return entries


class MockChatBackend:
    """Scripted chat backend; fully deterministic for a fixed script and inputs.

    Each call consumes one entry: the first unconsumed entry whose matcher is
    a substring of the prompt, else the next unconsumed entry in script
    order. Consumption is serialized behind a lock so scripted order is total
    even under concurrent callers.
    """

    def __init__(self, entries: Sequence[MockScriptEntry]):
        self._entries = list(entries)
        self._consumed = [False] * len(self._entries)
        self._lock = threading.Lock()
        self.calls: list[str] = []

    @property
    def cursor(self) -> int:
        with self._lock:
            return sum(self._consumed)

    def chat(self, request: ChatRequest) -> str:
        prompt = request.prompt_text()
        with self._lock:
            self.calls.append(prompt)
            hit = None
            for i, entry in enumerate(self._entries):
                if self._consumed[i]:
                    continue
                if entry.matcher is not None and entry.matcher in prompt:
                    hit = i
                    break
            if hit is None:
                for i in range(len(self._entries)):
                    if not self._consumed[i]:
                        hit = i
                        break
            if hit is None:
                raise MockExhausted(f"mock script for role {request.role_id!r} has no entries left")
            self._consumed[hit] = True
            return self._entries[hit].response


class HashedNgramEmbedder:
    """Offline embedding provider: hashed character-3-gram counts, L2-normalized.

    Deterministic by construction, so cosine similarities are reproducible
    without network access.
    """

    def __init__(self, dimension: int = 256, ngram: int = 3):
        self.dimension = dimension
        self._n = ngram

    def _grams(self, text: str) -> list[str]:
        padded = "^" + text.lower() + "$"
        if len(padded) <= self._n:
            return [padded]
        return [padded[i : i + self._n] for i in range(len(padded) - self._n + 1)]

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if not texts:
            raise ValueError("texts must be non-empty")
        out = []
        for text in texts:
            if not text:
                raise ValueError("cannot embed an empty text")
            counts = [0.0] * self.dimension
            for gram in self._grams(text):
                digest = hashlib.md5(gram.encode("utf-8")).digest()
                bucket = int.from_bytes(digest[:8], "big") % self.dimension
                counts[bucket] += 1.0
            out.append(EmbeddingVector.from_values(counts))
        return out


class HttpChatBackend:
    """OpenAI-style chat-completions client with bounded retries."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "",
        timeout_s: float = 60.0,
        retries: int = 2,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self.retries = retries

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            token = os.environ.get(self.api_key_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def chat(self, request: ChatRequest) -> str:
        import requests

        payload = {
            "model": self.model,
            "messages": [{"role": s, "content": t} for s, t in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        url = f"{self.base_url}/chat/completions"
        last_error = "no attempt made"
        for attempt in range(self.retries + 1):
            try:
                response = requests.post(
                    url, json=payload, headers=self._headers(), timeout=self.timeout_s
                )
            except requests.RequestException as exc:
                last_error = str(exc)
            else:
                if response.status_code == 200:
                    try:
                        return response.json()["choices"][0]["message"]["content"]
                    except (KeyError, IndexError, ValueError) as exc:
                        raise ProviderExhausted(f"malformed response from {url}: {exc}") from exc
                if 400 <= response.status_code < 500:
                    raise ProviderExhausted(f"{url} returned {response.status_code}: {response.text[:200]}")
                last_error = f"status {response.status_code}"
            if attempt < self.retries:
                time.sleep(0.5 * (2**attempt))
        raise ProviderExhausted(f"{url} failed after {self.retries + 1} attempts: {last_error}")


class HttpEmbeddingBackend:
    """OpenAI-style embeddings client with bounded retries."""

    def __init__(
        self,
        base_url: str,
        model: str,
        dimension: int,
        api_key_env: str = "",
        timeout_s: float = 60.0,
        retries: int = 2,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.dimension = dimension
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self.retries = retries

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        import requests

        if not texts:
            raise ValueError("texts must be non-empty")
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            token = os.environ.get(self.api_key_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        url = f"{self.base_url}/embeddings"
        payload = {"model": self.model, "input": list(texts)}
        last_error = "no attempt made"
        for attempt in range(self.retries + 1):
            try:
                response = requests.post(url, json=payload, headers=headers, timeout=self.timeout_s)
            except requests.RequestException as exc:
                last_error = str(exc)
            else:
                if response.status_code == 200:
                    rows = response.json().get("data", [])
                    vectors = [row["embedding"] for row in rows]
                    if len(vectors) != len(texts):
                        raise DimensionMismatch(
                            f"{url} returned {len(vectors)} vectors for {len(texts)} inputs"
                        )
                    for vec in vectors:
                        if len(vec) != self.dimension:
                            raise DimensionMismatch(
                                f"{url} returned dimension {len(vec)}, expected {self.dimension}"
                            )
                    return [EmbeddingVector.from_values(v) for v in vectors]
                if 400 <= response.status_code < 500:
                    raise ProviderExhausted(f"{url} returned {response.status_code}: {response.text[:200]}")
                last_error = f"status {response.status_code}"
            if attempt < self.retries:
                time.sleep(0.5 * (2**attempt))
        raise ProviderExhausted(f"{url} failed after {self.retries + 1} attempts: {last_error}")


@dataclass
class BackendRegistry:
    """Role-id to backend lookup used by every pipeline stage."""

    chat_backends: dict[str, ChatBackend] = field(default_factory=dict)
    embedder: EmbeddingBackend | None = None

    def chat(self, request: ChatRequest) -> str:
        backend = self.chat_backends.get(request.role_id)
        if backend is None:
            raise UnboundRole(f"no backend bound for role {request.role_id!r}")
        return backend.chat(request)

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if self.embedder is None:
            raise UnboundRole("no embedding backend configured")
        return self.embedder.embed(texts)
