"""Completion backends: a deterministic mock and a generic HTTP client."""

from __future__ import annotations

import hashlib
import os
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol
from urllib.parse import urlparse

import requests

from .parsing import FinishReason, RawCompletion
from .prompting import PromptRequest

API_KEY_ENV = "PROMPTLOOM_API_KEY"
BASE_URL_ENV = "PROMPTLOOM_BASE_URL"


class BackendError(Exception):
    pass


class Timeout(BackendError):
    pass


class HttpStatus(BackendError):
    def __init__(self, code: int, body: str = ""):
        super().__init__(f"HTTP {code}")
        self.code = code
        self.body = body


class NoRuleMatched(BackendError):
    pass


class MissingApiKey(BackendError):
    pass


class BadUrl(BackendError):
    pass


class Backend(Protocol):
    def complete(self, request: PromptRequest) -> RawCompletion: ...


class MatcherKind(Enum):
    EXACT_PROMPT = "exact"  # sha256 of the prompt
    CONTAINS = "contains"
    REGEX = "regex"


@dataclass
class MockRule:
    matcher: MatcherKind
    pattern: str
    completion: str
    priority: int = 0
    once: bool = False  # consumed after first match (scripted transcripts)
    _spent: bool = field(default=False, repr=False)

    def matches(self, prompt: str) -> bool:
        if self._spent:
            return False
        if self.matcher is MatcherKind.EXACT_PROMPT:
            return hashlib.sha256(prompt.encode("utf-8")).hexdigest() == self.pattern
        if self.matcher is MatcherKind.CONTAINS:
            return self.pattern in prompt
        return re.search(self.pattern, prompt) is not None


class MockBackend:
    """Rule-driven backend: first match by descending priority, then insertion order.

    Holds no transport handle, so no network traffic can ever originate here.
    """

    def __init__(self, rules: Optional[list[MockRule]] = None):
        self._rules: list[MockRule] = list(rules or [])
        self._lock = threading.Lock()

    def register_rule(self, rule: MockRule) -> None:
        with self._lock:
            self._rules.append(rule)

    def clear_rules(self) -> None:
        with self._lock:
            self._rules = []

    def complete(self, request: PromptRequest) -> RawCompletion:
        with self._lock:
            ordered = sorted(
                enumerate(self._rules), key=lambda pair: (-pair[1].priority, pair[0])
            )
            for _, rule in ordered:
                if rule.matches(request.prompt):
                    if rule.once:
                        rule._spent = True
                    return RawCompletion(rule.completion, FinishReason.STOP)
        raise NoRuleMatched(request.prompt[:120])


def load_rules(obj) -> list[MockRule]:
    """Deserialize a MockRule list from parsed JSON (the --rules file format)."""
    rules = []
    for item in obj:
        rules.append(
            MockRule(
                matcher=MatcherKind(item.get("matcher", "contains")),
                pattern=item["pattern"],
                completion=item["completion"],
                priority=int(item.get("priority", 0)),
                once=bool(item.get("once", False)),
            )
        )
    return rules


class HttpBackend:
    """Client for any completion-style HTTP API.

    POSTs ``{base_url}/completions`` with prompt/temperature/max_tokens/stop
    and expects a JSON body with a ``text`` field. Transport failures retry
    with exponential backoff; HTTP 4xx/5xx surface immediately.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str,
        timeout: float = 30.0,
        max_retries: int = 2,
        backoff: float = 0.5,
    ):
        parsed = urlparse(base_url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise BadUrl(base_url)
        self.base_url = base_url.rstrip("/")
        self._api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff

    def complete(self, request: PromptRequest) -> RawCompletion:
        body = {
            "prompt": request.prompt,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "stop": list(request.stop),
        }
        headers = {"Authorization": f"Bearer {self._api_key}"}
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = requests.post(
                    f"{self.base_url}/completions",
                    json=body,
                    headers=headers,
                    timeout=self.timeout,
                )
            except requests.Timeout as exc:
                last_exc = Timeout(str(exc))
            except requests.RequestException as exc:
                last_exc = BackendError(str(exc))
            else:
                if resp.status_code >= 400:
                    raise HttpStatus(resp.status_code, resp.text)
                payload = resp.json()
                reason = FinishReason(payload.get("finish_reason", "stop"))
                return RawCompletion(payload["text"], reason)
            if attempt < self.max_retries:
                time.sleep(self.backoff * (2**attempt))
        raise last_exc  # type: ignore[misc]


class BackendKind(Enum):
    MOCK = "mock"
    HTTP = "http"


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind
    base_url: Optional[str] = None
    api_key_ref: str = API_KEY_ENV
    timeout: float = 30.0
    max_retries: int = 2


def from_config(config: BackendConfig) -> Backend:
    if config.kind is BackendKind.MOCK:
        return MockBackend()
    base_url = config.base_url or os.environ.get(BASE_URL_ENV)
    if not base_url:
        raise BadUrl("http backend requires a base URL")
    api_key = os.environ.get(config.api_key_ref)
    if not api_key:
        raise MissingApiKey(config.api_key_ref)
    return HttpBackend(
        base_url,
        api_key,
        timeout=config.timeout,
        max_retries=config.max_retries,
    )
