"""Text-completion clients used to query an LLM for layouts."""
from __future__ import annotations

import hashlib
import logging
import threading
import time
from typing import Callable, Mapping, Protocol, Sequence

import httpx

log = logging.getLogger(__name__)


class ClientError(RuntimeError):
    pass


class CompletionClient(Protocol):
    def complete(self, prompt: str) -> str: ...


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ScriptedClient:
    """Replays pre-registered completions keyed by ``prompt_hash(prompt)``.

    Each key maps to one completion or a sequence of them; successive calls
    with the same prompt walk the sequence and then keep returning its last
    entry. ``default`` answers prompts with no registered key.
    """

    def __init__(
        self,
        responses: Mapping[str, str | Sequence[str]] | None = None,
        default: str | Sequence[str] | None = None,
    ):
        def as_tuple(v):
            return (v,) if isinstance(v, str) else tuple(v)

        self._table = {k: as_tuple(v) for k, v in (responses or {}).items()}
        self._default = as_tuple(default) if default is not None else None
        self._calls: dict[str, int] = {}
        self._lock = threading.Lock()
        self.transcript: list[tuple[str, str]] = []

    @classmethod
    def for_prompts(cls, pairs: Mapping[str, str | Sequence[str]], default=None) -> "ScriptedClient":
        return cls({prompt_hash(p): r for p, r in pairs.items()}, default)

    @property
    def calls(self) -> int:
        return len(self.transcript)

    def complete(self, prompt: str) -> str:
        key = prompt_hash(prompt)
        script = self._table.get(key, self._default)
        if script is None:
            raise ClientError(f"no scripted completion for prompt {key[:12]}")
        with self._lock:
            i = self._calls.get(key, 0)
            self._calls[key] = i + 1
            out = script[min(i, len(script) - 1)]
            self.transcript.append((key, out))
        return out


class RemoteClient:
    """POSTs ``{"prompt": ...}`` and reads ``{"completion": ...}``.

    Transport errors, 429 and 5xx responses are retried up to
    ``max_retries`` times with exponential backoff (``backoff * 2**i``).
    At most ``max_in_flight`` requests run concurrently.
    """

    RETRY_STATUS = {429, 500, 502, 503, 504}

    def __init__(
        self,
        endpoint: str,
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        max_in_flight: int = 1,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.endpoint = endpoint
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._http = httpx.Client(timeout=timeout, transport=transport)

    def close(self) -> None:
        self._http.close()

    def _once(self, prompt: str) -> str:
        resp = self._http.post(self.endpoint, json={"prompt": prompt})
        if resp.status_code in self.RETRY_STATUS:
            raise _Retryable(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ClientError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            completion = resp.json()["completion"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ClientError(f"response has no 'completion' field: {resp.text[:200]}") from exc
        if not isinstance(completion, str):
            raise ClientError("'completion' must be a string")
        return completion

    def complete(self, prompt: str) -> str:
        last: Exception | None = None
        with self._slots:
            for attempt in range(self.max_retries + 1):
                if attempt:
                    delay = self.backoff * 2 ** (attempt - 1)
                    log.warning("completion request failed (%s); retry %d in %.2fs", last, attempt, delay)
                    self._sleep(delay)
                try:
                    return self._once(prompt)
                except (_Retryable, httpx.TransportError) as exc:
                    last = exc
        raise ClientError(f"completion failed after {self.max_retries} retries: {last}")


class _Retryable(Exception):
    pass
