"""Agent backends: generation, scoring, embedding, and classification.

Two backend kinds are provided behind one runtime facade:

* ``mock``: fully deterministic, scripted by JSON rule files plus a seeded
  fallback generator, so every collaboration mechanism can be exercised and
  asserted without any model.
* ``http_chat``: an OpenAI-compatible client (``/chat/completions`` and
  ``/embeddings``) with bearer auth, timeouts, and bounded retries.

Every call through :class:`ProviderRuntime` appends exactly one ``agent_call``
and one ``agent_reply`` (or one error) entry to the run ledger, in that order;
retries happen inside the backend and never duplicate ledger entries.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Sequence

import httpx

from .ledger import Ledger
from .model import EventKind, canonical_json


class Role(str, Enum):
    GENERATOR = "generator"
    INSPECTOR = "inspector"
    REVIEWER = "reviewer"
    PROMPT_ENGINEER = "prompt_engineer"
    PERSONA_ACTOR = "persona_actor"
    PERSONA_EVALUATOR = "persona_evaluator"
    JUDGE = "judge"


class BackendKind(str, Enum):
    MOCK = "mock"
    HTTP_CHAT = "http_chat"


class ProviderError(Exception):
    """Base for backend failures; always names the offending agent."""

    def __init__(self, agent_id: str, message: str):
        self.agent_id = agent_id
        super().__init__(f"[{agent_id}] {message}")


class BackendUnavailable(ProviderError):
    pass


class ProtocolError(ProviderError):
    pass


class Timeout(ProviderError):
    pass


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind
    endpoint_url: str | None = None
    model_name: str | None = None
    timeout_ms: int = 30_000
    max_retries: int = 2
    auth_token_env: str | None = None
    rules_path: str | None = None
    concurrency_cap: int | None = None

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")
        if self.kind == BackendKind.HTTP_CHAT:
            if not self.endpoint_url or not self.model_name:
                raise ValueError("http_chat backend requires endpoint_url and model_name")
        elif self.endpoint_url or self.model_name:
            raise ValueError("endpoint_url/model_name only apply to http_chat backends")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "endpoint_url": self.endpoint_url,
            "model_name": self.model_name,
            "timeout_ms": self.timeout_ms,
            "max_retries": self.max_retries,
            "auth_token_env": self.auth_token_env,
            "rules_path": self.rules_path,
            "concurrency_cap": self.concurrency_cap,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "BackendConfig":
        return cls(
            kind=BackendKind(d["kind"]),
            endpoint_url=d.get("endpoint_url"),
            model_name=d.get("model_name"),
            timeout_ms=d.get("timeout_ms", 30_000),
            max_retries=d.get("max_retries", 2),
            auth_token_env=d.get("auth_token_env"),
            rules_path=d.get("rules_path"),
            concurrency_cap=d.get("concurrency_cap"),
        )


@dataclass(frozen=True)
class AgentProfile:
    agent_id: str
    role: Role
    backend: BackendConfig
    system_prompt: str = ""
    temperature: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "agent_id": self.agent_id,
            "role": self.role.value,
            "backend": self.backend.to_dict(),
            "system_prompt": self.system_prompt,
            "temperature": self.temperature,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AgentProfile":
        return cls(
            agent_id=d["agent_id"],
            role=Role(d["role"]),
            backend=BackendConfig.from_dict(d["backend"]),
            system_prompt=d.get("system_prompt", ""),
            temperature=d.get("temperature", 0.0),
            seed=d.get("seed"),
        )


@dataclass(frozen=True)
class GenerationRequest:
    messages: tuple[tuple[str, str], ...]
    max_tokens: int = 512
    temperature: float | None = None
    seed: int | None = None

    def content_text(self) -> str:
        return "\n".join(text for _, text in self.messages)

    def to_dict(self) -> dict[str, Any]:
        return {
            "messages": [{"role": r, "content": t} for r, t in self.messages],
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class GenerationReply:
    text: str
    token_logprobs: tuple[float, ...] | None = None
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "token_logprobs": list(self.token_logprobs)
            if self.token_logprobs is not None
            else None,
            "usage": {
                "prompt_tokens": self.prompt_tokens,
                "completion_tokens": self.completion_tokens,
            },
        }


def _stable_hash(*parts: Any) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big")


# ---------------------------------------------------------------------------
# Mock backend
# ---------------------------------------------------------------------------

_TRANSFORMS: dict[str, Callable[[str], str]] = {
    "upper": str.upper,
    "lower": str.lower,
    "title": str.title,
}

_FALLBACK_WORDS = (
    "river", "lantern", "quiet", "meadow", "copper", "drift", "harbor",
    "violet", "ember", "stone", "willow", "morning", "echo", "garden",
    "amber", "cloud", "signal", "veil", "north", "timber",
)


@dataclass(frozen=True)
class GenerateRule:
    """Scripted reply: first rule whose regex matches the request text wins.

    ``template`` may reference capture groups as ``{0}``, ``{1}``, named
    groups as ``{name}``, and the whole match as ``{input}``.
    """

    pattern: str
    template: str
    role: str | None = None
    transform: str | None = None


@dataclass(frozen=True)
class ClassifyRule:
    contains: str
    label: str
    confidence: float = 1.0


@dataclass
class MockRules:
    generate: tuple[GenerateRule, ...] = ()
    classify: tuple[ClassifyRule, ...] = ()
    embed_dim: int = 32

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "MockRules":
        return cls(
            generate=tuple(
                GenerateRule(
                    pattern=r["pattern"],
                    template=r["template"],
                    role=r.get("role"),
                    transform=r.get("transform"),
                )
                for r in d.get("generate", ())
            ),
            classify=tuple(
                ClassifyRule(
                    contains=r["contains"],
                    label=r["label"],
                    confidence=r.get("confidence", 1.0),
                )
                for r in d.get("classify", ())
            ),
            embed_dim=d.get("embed_dim", 32),
        )

    @classmethod
    def load(cls, path: str | Path) -> "MockRules":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def hash_unit_vector(text: str, dim: int) -> list[float]:
    """Deterministic unit vector derived from the text alone."""
    raw = []
    for i in range(dim):
        h = _stable_hash("embed", text, i)
        raw.append((h % 2_000_001) / 1_000_000.0 - 1.0)
    norm = math.sqrt(sum(x * x for x in raw))
    if norm == 0:  # unreachable with this hash scheme, kept as a guard
        raw[0] = 1.0
        norm = 1.0
    return [x / norm for x in raw]


def _mock_logprobs(text: str, seed: Any) -> tuple[float, ...]:
    # one logprob per whitespace token, each in [-2, -1)
    return tuple(
        -1.0 - (_stable_hash("lp", seed, i, tok) % 1000) / 1000.0
        for i, tok in enumerate(text.split())
    )


class MockBackend:
    """Deterministic scripted backend.

    Replies are a pure function of (profile seed, request content): the same
    profile and request always produce byte-identical output.
    """

    def __init__(self, rules: MockRules | None = None):
        self.rules = rules or MockRules()

    def generate(self, profile: AgentProfile, request: GenerationRequest) -> GenerationReply:
        text = request.content_text()
        reply_text = ""
        for rule in self.rules.generate:
            if rule.role is not None and rule.role != profile.role.value:
                continue
            match = re.search(rule.pattern, text)
            if match is None:
                continue
            reply_text = _expand_template(rule.template, match)
            if rule.transform:
                reply_text = _TRANSFORMS[rule.transform](reply_text)
            break
        if not reply_text:
            reply_text = self._fallback_text(profile, request)
        return GenerationReply(
            text=reply_text,
            token_logprobs=_mock_logprobs(reply_text, profile.seed),
            prompt_tokens=len(text.split()),
            completion_tokens=len(reply_text.split()),
        )

    def _fallback_text(self, profile: AgentProfile, request: GenerationRequest) -> str:
        request_hash = hashlib.sha256(
            canonical_json(request.to_dict()).encode()
        ).hexdigest()
        h = _stable_hash("gen", profile.seed, request_hash)
        count = 8 + h % 6
        words = [
            _FALLBACK_WORDS[_stable_hash("w", profile.seed, request_hash, i) % len(_FALLBACK_WORDS)]
            for i in range(count)
        ]
        return " ".join(words) + "."

    def embed(self, profile: AgentProfile, text: str) -> list[float]:
        if not text:
            raise ValueError("cannot embed empty text")
        return hash_unit_vector(text, self.rules.embed_dim)

    def classify(
        self, profile: AgentProfile, text: str, label_set: Sequence[str]
    ) -> tuple[str, float]:
        lowered = text.lower()
        for rule in self.rules.classify:
            if rule.contains.lower() in lowered and rule.label in label_set:
                return rule.label, rule.confidence
        return label_set[_stable_hash("cls", text) % len(label_set)], 0.5

    def score(self, profile: AgentProfile, text: str) -> tuple[float, ...] | None:
        return _mock_logprobs(text, profile.seed)


def _expand_template(template: str, match: re.Match) -> str:
    values = {str(i): g or "" for i, g in enumerate(match.groups())}
    values.update({k: v or "" for k, v in match.groupdict().items()})
    values["input"] = match.group(0)

    def sub(m: re.Match) -> str:
        key = m.group(1)
        return values.get(key, m.group(0))

    return re.sub(r"\{(\w+)\}", sub, template)


class ScriptedBackend:
    """Programmatic backend for test fixtures.

    Any handler left as ``None`` falls back to the deterministic mock
    behaviour. Register per-agent via ``ProviderRuntime.register_backend``.
    """

    def __init__(
        self,
        generate_fn: Callable[[AgentProfile, GenerationRequest], str] | None = None,
        classify_fn: Callable[[AgentProfile, str, Sequence[str]], tuple[str, float]] | None = None,
        embed_fn: Callable[[AgentProfile, str], list[float]] | None = None,
        score_fn: Callable[[AgentProfile, str], Sequence[float] | None] | None = None,
    ):
        self._generate_fn = generate_fn
        self._classify_fn = classify_fn
        self._embed_fn = embed_fn
        self._score_fn = score_fn
        self._mock = MockBackend()

    def generate(self, profile: AgentProfile, request: GenerationRequest) -> GenerationReply:
        if self._generate_fn is None:
            return self._mock.generate(profile, request)
        text = self._generate_fn(profile, request)
        return GenerationReply(
            text=text,
            token_logprobs=_mock_logprobs(text, profile.seed),
            prompt_tokens=len(request.content_text().split()),
            completion_tokens=len(text.split()),
        )

    def classify(self, profile, text, label_set):
        if self._classify_fn is None:
            return self._mock.classify(profile, text, label_set)
        return self._classify_fn(profile, text, label_set)

    def embed(self, profile, text):
        if self._embed_fn is None:
            return self._mock.embed(profile, text)
        return self._embed_fn(profile, text)

    def score(self, profile, text):
        if self._score_fn is None:
            return self._mock.score(profile, text)
        return self._score_fn(profile, text)


# ---------------------------------------------------------------------------
# HTTP backend (OpenAI-compatible)
# ---------------------------------------------------------------------------


class HttpChatBackend:
    """Client for OpenAI-compatible chat-completion and embedding endpoints."""

    def __init__(self, config: BackendConfig, retry_base_delay: float = 0.2):
        self.config = config
        self._retry_base_delay = retry_base_delay

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.auth_token_env:
            token = os.environ.get(self.config.auth_token_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post(self, agent_id: str, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        url = self.config.endpoint_url.rstrip("/") + path
        timeout = self.config.timeout_ms / 1000.0
        last_err: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            try:
                resp = httpx.post(url, json=payload, headers=self._headers(), timeout=timeout)
            except httpx.TimeoutException as exc:
                last_err = exc
            except httpx.HTTPError as exc:
                last_err = exc
            else:
                if resp.status_code >= 500:
                    last_err = BackendUnavailable(agent_id, f"upstream {resp.status_code}")
                elif resp.status_code >= 400:
                    raise ProtocolError(agent_id, f"upstream {resp.status_code}: {resp.text[:200]}")
                else:
                    try:
                        body = resp.json()
                    except ValueError as exc:
                        raise ProtocolError(agent_id, f"non-JSON upstream payload: {exc}")
                    if not isinstance(body, dict):
                        raise ProtocolError(agent_id, "upstream payload is not an object")
                    return body
            if attempt < self.config.max_retries:
                time.sleep(self._retry_base_delay * (2**attempt))
        if isinstance(last_err, httpx.TimeoutException):
            raise Timeout(agent_id, f"no response within {self.config.timeout_ms}ms")
        raise BackendUnavailable(agent_id, f"transport failure after retries: {last_err}")

    def generate(self, profile: AgentProfile, request: GenerationRequest) -> GenerationReply:
        payload: dict[str, Any] = {
            "model": self.config.model_name,
            "messages": [{"role": r, "content": t} for r, t in request.messages],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature
            if request.temperature is not None
            else profile.temperature,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        body = self._post(profile.agent_id, "/chat/completions", payload)
        return _parse_chat_reply(profile.agent_id, body)

    def embed(self, profile: AgentProfile, text: str) -> list[float]:
        if not text:
            raise ValueError("cannot embed empty text")
        body = self._post(
            profile.agent_id,
            "/embeddings",
            {"model": self.config.model_name, "input": text},
        )
        try:
            vector = body["data"][0]["embedding"]
            return [float(x) for x in vector]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ProtocolError(profile.agent_id, f"malformed embedding payload: {exc}")

    def classify(
        self, profile: AgentProfile, text: str, label_set: Sequence[str]
    ) -> tuple[str, float]:
        instruction = (
            "Classify the text into exactly one of these labels: "
            + ", ".join(label_set)
            + '. Reply with JSON: {"label": "...", "score": 0..1}.'
        )
        request = GenerationRequest(
            messages=(("system", instruction), ("user", text)),
            temperature=0.0,
        )
        reply = self.generate(profile, request)
        parsed = _extract_json_object(reply.text)
        if parsed and parsed.get("label") in label_set:
            score = parsed.get("score", 1.0)
            try:
                confidence = min(1.0, max(0.0, float(score)))
            except (TypeError, ValueError):
                confidence = 1.0
            return parsed["label"], confidence
        lowered = reply.text.lower()
        for label in label_set:
            if label.lower() in lowered:
                return label, 1.0
        raise ProtocolError(
            profile.agent_id, f"classifier reply matched no label: {reply.text[:120]!r}"
        )

    def score(self, profile: AgentProfile, text: str) -> tuple[float, ...] | None:
        payload = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": text}],
            "logprobs": True,
            "temperature": 0.0,
        }
        body = self._post(profile.agent_id, "/chat/completions", payload)
        reply = _parse_chat_reply(profile.agent_id, body)
        return reply.token_logprobs


def _parse_chat_reply(agent_id: str, body: dict[str, Any]) -> GenerationReply:
    try:
        choice = body["choices"][0]
        text = choice["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(agent_id, f"malformed chat payload: {exc}")
    if not isinstance(text, str) or not text:
        raise ProtocolError(agent_id, "upstream reply text empty")
    logprobs: tuple[float, ...] | None = None
    lp = choice.get("logprobs")
    if isinstance(lp, dict) and isinstance(lp.get("content"), list):
        try:
            logprobs = tuple(float(item["logprob"]) for item in lp["content"])
        except (KeyError, TypeError, ValueError):
            logprobs = None
    usage = body.get("usage", {}) or {}
    return GenerationReply(
        text=text,
        token_logprobs=logprobs,
        prompt_tokens=int(usage.get("prompt_tokens", 0)),
        completion_tokens=int(usage.get("completion_tokens", 0)),
    )


def _extract_json_object(text: str) -> dict[str, Any] | None:
    text = text.strip()
    for candidate in (text, text[text.find("{") : text.rfind("}") + 1]):
        if not candidate:
            continue
        try:
            obj = json.loads(candidate)
        except ValueError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


# ---------------------------------------------------------------------------
# Admission control and the runtime facade
# ---------------------------------------------------------------------------


class FifoLimiter:
    """Concurrent-request cap with strict FIFO admission."""

    def __init__(self, cap: int):
        if cap < 1:
            raise ValueError("cap must be >= 1")
        self._cap = cap
        self._active = 0
        self._lock = threading.Lock()
        self._waiters: deque[threading.Event] = deque()

    def acquire(self) -> None:
        with self._lock:
            if self._active < self._cap and not self._waiters:
                self._active += 1
                return
            gate = threading.Event()
            self._waiters.append(gate)
        gate.wait()

    def release(self) -> None:
        with self._lock:
            if self._waiters:
                self._waiters.popleft().set()
            else:
                self._active -= 1

    def __enter__(self) -> "FifoLimiter":
        self.acquire()
        return self

    def __exit__(self, *exc) -> None:
        self.release()


_DEFAULT_CAP = 8


class ProviderRuntime:
    """Dispatches agent calls to backends and records them in the ledger.

    ``max_parallel`` governs ``fan_out``: 1 (the default) keeps all calls
    sequential, which is what makes mock runs byte-replayable; higher values
    trade that for throughput against real endpoints.
    """

    def __init__(self, ledger: Ledger | None = None, max_parallel: int = 1):
        self.ledger = ledger
        self.max_parallel = max_parallel
        self._backends: dict[BackendConfig, Any] = {}
        self._overrides: dict[str, Any] = {}
        self._limiters: dict[BackendConfig, FifoLimiter] = {}
        self._lock = threading.Lock()

    def register_backend(self, agent_id: str, backend: Any) -> None:
        self._overrides[agent_id] = backend

    def _backend_for(self, profile: AgentProfile) -> Any:
        if profile.agent_id in self._overrides:
            return self._overrides[profile.agent_id]
        with self._lock:
            backend = self._backends.get(profile.backend)
            if backend is None:
                if profile.backend.kind == BackendKind.MOCK:
                    rules = (
                        MockRules.load(profile.backend.rules_path)
                        if profile.backend.rules_path
                        else MockRules()
                    )
                    backend = MockBackend(rules)
                else:
                    backend = HttpChatBackend(profile.backend)
                self._backends[profile.backend] = backend
            return backend

    def _limiter_for(self, profile: AgentProfile) -> FifoLimiter:
        with self._lock:
            limiter = self._limiters.get(profile.backend)
            if limiter is None:
                limiter = FifoLimiter(profile.backend.concurrency_cap or _DEFAULT_CAP)
                self._limiters[profile.backend] = limiter
            return limiter

    def _call(
        self,
        profile: AgentProfile,
        operation: str,
        stage: str,
        request_payload: dict[str, Any],
        fn: Callable[[], Any],
        reply_payload: Callable[[Any], dict[str, Any]],
    ) -> Any:
        if self.ledger is not None:
            self.ledger.append(
                EventKind.AGENT_CALL,
                {
                    "schema": "agent_call",
                    "agent_id": profile.agent_id,
                    "operation": operation,
                    "stage": stage,
                    "request": request_payload,
                },
            )
        try:
            with self._limiter_for(profile):
                result = fn()
        except ProviderError as exc:
            if self.ledger is not None:
                self.ledger.append(
                    EventKind.AGENT_REPLY,
                    {
                        "schema": "error",
                        "agent_id": profile.agent_id,
                        "operation": operation,
                        "stage": stage,
                        "error": type(exc).__name__,
                        "message": str(exc),
                    },
                )
            raise
        if self.ledger is not None:
            self.ledger.append(
                EventKind.AGENT_REPLY,
                {
                    "schema": "agent_reply",
                    "agent_id": profile.agent_id,
                    "operation": operation,
                    "stage": stage,
                    "reply": reply_payload(result),
                },
            )
        return result

    def generate(
        self, profile: AgentProfile, request: GenerationRequest, stage: str = "generation"
    ) -> GenerationReply:
        if profile.system_prompt and (
            not request.messages or request.messages[0][0] != "system"
        ):
            request = GenerationRequest(
                messages=(("system", profile.system_prompt),) + request.messages,
                max_tokens=request.max_tokens,
                temperature=request.temperature,
                seed=request.seed,
            )
        if request.temperature is None:
            request = GenerationRequest(
                messages=request.messages,
                max_tokens=request.max_tokens,
                temperature=profile.temperature,
                seed=request.seed,
            )
        if request.seed is None and profile.seed is not None:
            request = GenerationRequest(
                messages=request.messages,
                max_tokens=request.max_tokens,
                temperature=request.temperature,
                seed=profile.seed,
            )
        backend = self._backend_for(profile)
        return self._call(
            profile,
            "generate",
            stage,
            request.to_dict(),
            lambda: backend.generate(profile, request),
            lambda reply: reply.to_dict(),
        )

    def embed(self, profile: AgentProfile, text: str, stage: str = "evaluation") -> list[float]:
        backend = self._backend_for(profile)
        return self._call(
            profile,
            "embed",
            stage,
            {"text": text},
            lambda: backend.embed(profile, text),
            lambda vec: {"dim": len(vec)},
        )

    def classify(
        self,
        profile: AgentProfile,
        text: str,
        label_set: Sequence[str],
        stage: str = "evaluation",
    ) -> tuple[str, float]:
        if not label_set:
            raise ValueError("label_set must be non-empty")
        backend = self._backend_for(profile)
        return self._call(
            profile,
            "classify",
            stage,
            {"text": text, "label_set": list(label_set)},
            lambda: backend.classify(profile, text, label_set),
            lambda res: {"label": res[0], "confidence": res[1]},
        )

    def score(
        self, profile: AgentProfile, text: str, stage: str = "evaluation"
    ) -> tuple[float, ...] | None:
        backend = self._backend_for(profile)
        result = self._call(
            profile,
            "score",
            stage,
            {"text": text},
            lambda: backend.score(profile, text),
            lambda lp: {"token_count": len(lp) if lp is not None else 0},
        )
        return tuple(result) if result is not None else None

    def fan_out(self, fn: Callable[[Any], Any], items: Sequence[Any]) -> list[Any]:
        """Apply ``fn`` to every item, preserving input order in the result."""
        if self.max_parallel <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.max_parallel) as pool:
            return list(pool.map(fn, items))
