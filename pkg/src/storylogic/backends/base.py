"""Uniform model-backend abstraction: requests, responses, retry, tracing."""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence


class Capability(str, Enum):
    CHAT = "chat"
    GENERATE_IMAGE = "generate_image"
    EDIT_IMAGE = "edit_image"
    CAPTION = "caption"
    EMBED = "embed"
    VQA = "vqa"


class BackendError(Exception):
    """Terminal backend failure (after retries, or non-retryable)."""

    def __init__(self, message: str, status: str = "error", retryable: bool = False):
        super().__init__(message)
        self.status = status
        self.retryable = retryable


class TransportError(BackendError):
    def __init__(self, message: str):
        super().__init__(message, status="transport", retryable=True)


class ProviderError(BackendError):
    def __init__(self, message: str, status_code: int):
        retryable = status_code == 429 or status_code >= 500
        super().__init__(message, status=str(status_code), retryable=retryable)
        self.status_code = status_code


@dataclass(frozen=True)
class ImageRef:
    """Image passed by content, fingerprinted by sha256 of the bytes."""

    sha256: str
    media_type: str
    data: bytes = field(repr=False, compare=False)

    @classmethod
    def from_bytes(cls, data: bytes, media_type: str = "image/png") -> "ImageRef":
        return cls(sha256=hashlib.sha256(data).hexdigest(), media_type=media_type, data=data)

    @classmethod
    def from_path(cls, path: str | Path) -> "ImageRef":
        p = Path(path)
        media = "image/png" if p.suffix.lower() == ".png" else "image/jpeg"
        return cls.from_bytes(p.read_bytes(), media_type=media)


@dataclass(frozen=True)
class BackendRequest:
    """One model call. The fingerprint is a stable hash of the semantic
    content (capability, prompt, image hashes, extras, model id), so equal
    requests collide on fixtures regardless of file paths or timing."""

    capability: Capability
    model_id: str
    prompt: str = ""
    images: tuple[ImageRef, ...] = ()
    extra: tuple[tuple[str, Any], ...] = ()

    @property
    def fingerprint(self) -> str:
        body = {
            "capability": self.capability.value,
            "model_id": self.model_id,
            "prompt": self.prompt,
            "images": [i.sha256 for i in self.images],
            "extra": sorted(self.extra),
        }
        blob = json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class BackendResponse:
    capability: Capability
    text: str | None = None
    image_bytes: bytes | None = field(default=None, repr=False)
    media_type: str | None = None
    embedding: tuple[float, ...] | None = None
    latency_ms: float = 0.0
    provider_meta: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self) -> None:
        if self.capability in (Capability.CHAT, Capability.CAPTION, Capability.VQA) and self.text is None:
            raise BackendError(f"{self.capability.value} response must carry text")
        if self.capability in (Capability.GENERATE_IMAGE, Capability.EDIT_IMAGE) and self.image_bytes is None:
            raise BackendError(f"{self.capability.value} response must carry image bytes")
        if self.capability is Capability.EMBED and self.embedding is None:
            raise BackendError("embed response must carry an embedding")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_backoff_ms: float = 200.0
    backoff_multiplier: float = 2.0
    retryable_statuses: frozenset[str] = frozenset({"transport", "429", "5xx"})

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def is_retryable(self, status: str) -> bool:
        if status in self.retryable_statuses:
            return True
        return status.isdigit() and status.startswith("5") and "5xx" in self.retryable_statuses

    def backoff_ms(self, attempt: int) -> float:
        return self.base_backoff_ms * (self.backoff_multiplier ** (attempt - 1))

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RetryPolicy":
        return cls(
            max_attempts=int(d.get("max_attempts", 3)),
            base_backoff_ms=float(d.get("base_backoff_ms", 200.0)),
            backoff_multiplier=float(d.get("backoff_multiplier", 2.0)),
            retryable_statuses=frozenset(d.get("retryable_statuses", ["transport", "429", "5xx"])),
        )


NO_RETRY = RetryPolicy(max_attempts=1)

TraceSink = Callable[[dict[str, Any]], None]


class Backend:
    """Base class; subclasses implement ``_call`` for all their capabilities."""

    def _call(self, req: BackendRequest) -> BackendResponse:  # pragma: no cover - abstract
        raise NotImplementedError

    def invoke(
        self,
        req: BackendRequest,
        policy: RetryPolicy = NO_RETRY,
        trace: TraceSink | None = None,
        sleeper: Callable[[float], None] = time.sleep,
    ) -> BackendResponse:
        """Call with retries; every attempt is appended to the trace sink."""
        last: BackendError | None = None
        for attempt in range(1, policy.max_attempts + 1):
            start = time.monotonic()
            try:
                resp = self._call(req)
            except BackendError as exc:
                if trace:
                    trace(
                        {
                            "kind": "backend_attempt",
                            "fingerprint": req.fingerprint,
                            "capability": req.capability.value,
                            "attempt": attempt,
                            "outcome": "error",
                            "status": exc.status,
                        }
                    )
                last = exc
                if not (exc.retryable and policy.is_retryable(exc.status)) or attempt == policy.max_attempts:
                    raise BackendError(
                        f"{req.capability.value} call failed after {attempt} attempt(s): {exc}",
                        status=exc.status,
                    ) from exc
                sleeper(policy.backoff_ms(attempt) / 1000.0)
                continue
            if resp.capability != req.capability:
                raise BackendError(
                    f"backend returned {resp.capability.value} content for a {req.capability.value} request"
                )
            if resp.latency_ms == 0.0:
                resp = BackendResponse(
                    capability=resp.capability,
                    text=resp.text,
                    image_bytes=resp.image_bytes,
                    media_type=resp.media_type,
                    embedding=resp.embedding,
                    latency_ms=(time.monotonic() - start) * 1000.0,
                    provider_meta=resp.provider_meta,
                )
            if trace:
                trace(
                    {
                        "kind": "backend_attempt",
                        "fingerprint": req.fingerprint,
                        "capability": req.capability.value,
                        "attempt": attempt,
                        "outcome": "ok",
                    }
                )
            return resp
        raise last  # pragma: no cover - loop always raises or returns


def embed_batch(
    backend: Backend,
    inputs: Sequence[str | ImageRef],
    model_id: str,
    policy: RetryPolicy = NO_RETRY,
    trace: TraceSink | None = None,
) -> list[tuple[float, ...]]:
    """One embedding per input; dimensionality must be uniform."""
    if not inputs:
        raise BackendError("embed_batch requires a non-empty input list")
    vectors: list[tuple[float, ...]] = []
    for item in inputs:
        if isinstance(item, ImageRef):
            req = BackendRequest(capability=Capability.EMBED, model_id=model_id, images=(item,))
        else:
            req = BackendRequest(capability=Capability.EMBED, model_id=model_id, prompt=str(item))
        resp = backend.invoke(req, policy=policy, trace=trace)
        assert resp.embedding is not None
        vectors.append(resp.embedding)
    dims = {len(v) for v in vectors}
    if len(dims) != 1:
        raise BackendError(f"provider returned mixed embedding dimensionality: {sorted(dims)}")
    return vectors


@dataclass
class BackendSet:
    """Role -> backend mapping used by the pipeline and evaluation suite.

    The optional ``rating`` role falls back to ``chat``; ``aesthetic`` has
    no fallback because absent aesthetic scoring is a reportable state.
    """

    roles: dict[str, Backend] = field(default_factory=dict)
    model_ids: dict[str, str] = field(default_factory=dict)
    policies: dict[str, RetryPolicy] = field(default_factory=dict)

    _FALLBACKS = {"rating": "chat"}

    def get(self, role: str) -> Backend | None:
        if role in self.roles:
            return self.roles[role]
        fb = self._FALLBACKS.get(role)
        return self.roles.get(fb) if fb else None

    def require(self, role: str) -> Backend:
        b = self.get(role)
        if b is None:
            raise BackendError(f"no backend configured for capability {role!r}", status="capability-not-configured")
        return b

    def model_id(self, role: str) -> str:
        return self.model_ids.get(role) or self.model_ids.get(self._FALLBACKS.get(role, ""), "") or "default"

    def policy(self, role: str) -> RetryPolicy:
        return self.policies.get(role) or self.policies.get(self._FALLBACKS.get(role, ""), NO_RETRY)
