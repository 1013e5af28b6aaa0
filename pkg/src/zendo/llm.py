"""Chat-completion HTTP client with retries, bounded concurrency and a record/replay cassette."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import httpx

from .errors import ZendoError
from .io import atomic_write_text

log = logging.getLogger(__name__)

CASSETTE_SCHEMA = "zendo-cassette/1"
CASSETTE_MODES = ("off", "record", "replay")
RETRY_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})

Message = dict  # {"role": ..., "content": ...}


class LlmError(ZendoError):
    pass


class CassetteMiss(LlmError):
    """Replay mode found no stored reply for a request."""


@dataclass(frozen=True)
class LlmEndpointConfig:
    base_url: str = "http://localhost:8000"
    model_name: str = "gpt-4-turbo"
    api_key_env: str = "ZENDO_LLM_API_KEY"
    path: str = "/v1/chat/completions"
    max_retries: int = 3
    request_timeout: float = 60.0
    max_concurrent_requests: int = 4
    temperature: float = 1.0
    backoff_base: float = 1.0
    # field names, so that any chat-style endpoint can be targeted
    messages_field: str = "messages"
    reply_path: tuple = ("choices", 0, "message", "content")

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrent_requests < 1:
            raise ValueError("max_concurrent_requests must be >= 1")
        if self.request_timeout <= 0:
            raise ValueError("request_timeout must be positive")
        object.__setattr__(self, "reply_path", tuple(self.reply_path))


def request_key(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Cassette:
    """request hash -> stored reply, persisted as one JSON document."""

    def __init__(self, path: str | os.PathLike, mode: str = "replay"):
        if mode not in CASSETTE_MODES:
            raise ValueError(f"unknown cassette mode {mode!r}")
        self.path = Path(path)
        self.mode = mode
        self._lock = threading.Lock()
        self.entries: dict[str, dict] = {}
        if self.path.exists():
            doc = json.loads(self.path.read_text(encoding="utf-8"))
            if doc.get("schema") != CASSETTE_SCHEMA:
                raise LlmError(f"{self.path}: not a {CASSETTE_SCHEMA} cassette")
            self.entries = dict(doc.get("entries", {}))
        elif mode == "replay":
            raise LlmError(f"cassette {self.path} does not exist")

    def lookup(self, key: str) -> str | None:
        entry = self.entries.get(key)
        return None if entry is None else entry["reply"]

    def store(self, key: str, payload: dict, reply: str) -> None:
        with self._lock:
            self.entries[key] = {"request": payload, "reply": reply}
            self.save()

    def save(self) -> None:
        doc = {"schema": CASSETTE_SCHEMA, "entries": dict(sorted(self.entries.items()))}
        atomic_write_text(self.path, json.dumps(doc, indent=1, sort_keys=True, ensure_ascii=False) + "\n")


@dataclass
class ChatClient:
    config: LlmEndpointConfig = field(default_factory=LlmEndpointConfig)
    cassette: Cassette | None = None
    transport: httpx.BaseTransport | None = None
    sleep: callable = time.sleep

    def __post_init__(self):
        self._http: httpx.Client | None = None

    def _client(self) -> httpx.Client:
        if self._http is None:
            headers = {}
            key = os.environ.get(self.config.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
            self._http = httpx.Client(
                base_url=self.config.base_url,
                headers=headers,
                timeout=self.config.request_timeout,
                transport=self.transport,
            )
        return self._http

    def close(self) -> None:
        if self._http is not None:
            self._http.close()
            self._http = None

    def payload(self, messages: Sequence[Message]) -> dict:
        return {
            "model": self.config.model_name,
            self.config.messages_field: [dict(m) for m in messages],
            "temperature": self.config.temperature,
        }

    def complete(self, messages: Sequence[Message]) -> str:
        payload = self.payload(messages)
        key = request_key(payload)
        if self.cassette is not None and self.cassette.mode != "off":
            stored = self.cassette.lookup(key)
            if stored is not None:
                return stored
            if self.cassette.mode == "replay":
                raise CassetteMiss(f"no recorded reply for request {key[:12]}")
        reply = self._post(payload)
        if self.cassette is not None and self.cassette.mode == "record":
            self.cassette.store(key, payload, reply)
        return reply

    def complete_many(self, conversations: Sequence[Sequence[Message]]) -> list[str | LlmError]:
        """Replies in input order; failed requests yield their LlmError instead of raising."""

        def one(messages):
            try:
                return self.complete(messages)
            except LlmError as exc:
                return exc

        if len(conversations) <= 1 or self.config.max_concurrent_requests == 1:
            return [one(m) for m in conversations]
        with ThreadPoolExecutor(max_workers=self.config.max_concurrent_requests) as pool:
            return list(pool.map(one, conversations))

    def _post(self, payload: dict) -> str:
        attempts = self.config.max_retries + 1
        last: Exception | None = None
        for attempt in range(attempts):
            try:
                response = self._client().post(self.config.path, json=payload)
            except httpx.TransportError as exc:
                last = exc
            else:
                if response.status_code < 400:
                    return self._extract(response)
                if response.status_code not in RETRY_STATUS:
                    raise LlmError(f"chat endpoint returned HTTP {response.status_code}: {response.text[:200]}")
                last = LlmError(f"HTTP {response.status_code}")
            if attempt + 1 < attempts:
                delay = self.config.backoff_base * 2**attempt
                log.warning("chat request failed (%s); retry %d/%d in %.1fs", last, attempt + 1, attempts - 1, delay)
                self.sleep(delay)
        raise LlmError(f"chat request failed after {attempts} attempts: {last}")

    def _extract(self, response: httpx.Response) -> str:
        try:
            node = response.json()
            for part in self.config.reply_path:
                node = node[part]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise LlmError(f"unexpected reply shape: {exc!r}") from None
        if not isinstance(node, str):
            raise LlmError("reply content is not a string")
        return node


def config_to_dict(cfg: LlmEndpointConfig) -> dict:
    doc = asdict(cfg)
    doc["reply_path"] = list(cfg.reply_path)
    return doc
