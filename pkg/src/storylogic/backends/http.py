"""HTTP backend speaking an OpenAI-compatible JSON wire format.

Chat-style capabilities (chat, vqa, caption) go through /chat/completions
with image parts inlined as base64 data URLs; embeddings through
/embeddings; image generation and editing through /images/generations and
/images/edits. The transport is injectable so tests can count and script
requests without a server.
"""
from __future__ import annotations

import base64
from typing import Any, Callable, Mapping

from .base import (
    Backend,
    BackendError,
    BackendRequest,
    BackendResponse,
    Capability,
    ProviderError,
    TransportError,
)
from .ratelimit import SlidingWindowRateLimiter

# transport(method, url, json_body, headers, timeout_s) -> (status_code, parsed_json)
Transport = Callable[[str, str, Mapping[str, Any], Mapping[str, str], float], tuple[int, Any]]


def requests_transport(method: str, url: str, body: Mapping[str, Any], headers: Mapping[str, str], timeout: float):
    import requests

    try:
        resp = requests.request(method, url, json=body, headers=dict(headers), timeout=timeout)
    except requests.RequestException as exc:
        raise TransportError(f"transport failure calling {url}: {exc}") from exc
    try:
        payload = resp.json()
    except ValueError:
        payload = {"raw": resp.text}
    return resp.status_code, payload


def _data_url(media_type: str, data: bytes) -> str:
    return f"data:{media_type};base64," + base64.b64encode(data).decode("ascii")


class HttpBackend(Backend):
    def __init__(
        self,
        endpoint: str,
        model_id: str,
        api_key: str = "",
        timeout_ms: float = 60_000.0,
        rate_limiter: SlidingWindowRateLimiter | None = None,
        transport: Transport = requests_transport,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model_id = model_id
        self.api_key = api_key
        self.timeout_s = timeout_ms / 1000.0
        self.rate_limiter = rate_limiter
        self.transport = transport

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _post(self, path: str, body: Mapping[str, Any]) -> Any:
        if self.rate_limiter is not None:
            self.rate_limiter.acquire()
        status, payload = self.transport("POST", f"{self.endpoint}{path}", body, self._headers(), self.timeout_s)
        if status >= 400:
            message = payload.get("error", payload) if isinstance(payload, dict) else payload
            raise ProviderError(f"provider returned {status}: {message}", status_code=status)
        return payload

    def _chat_content(self, req: BackendRequest) -> list[dict[str, Any]] | str:
        if not req.images:
            return req.prompt
        parts: list[dict[str, Any]] = [{"type": "text", "text": req.prompt}]
        for img in req.images:
            parts.append({"type": "image_url", "image_url": {"url": _data_url(img.media_type, img.data)}})
        return parts

    def _call(self, req: BackendRequest) -> BackendResponse:
        model = req.model_id or self.model_id
        cap = req.capability
        if cap in (Capability.CHAT, Capability.VQA, Capability.CAPTION):
            payload = self._post(
                "/chat/completions",
                {"model": model, "messages": [{"role": "user", "content": self._chat_content(req)}]},
            )
            try:
                text = payload["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed chat completion payload: {payload!r}") from exc
            return BackendResponse(capability=cap, text=str(text))
        if cap is Capability.EMBED:
            body: dict[str, Any] = {"model": model}
            body["input"] = [_data_url(i.media_type, i.data) for i in req.images] if req.images else [req.prompt]
            payload = self._post("/embeddings", body)
            try:
                vec = payload["data"][0]["embedding"]
            except (KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed embeddings payload: {payload!r}") from exc
            return BackendResponse(capability=cap, embedding=tuple(float(x) for x in vec))
        if cap in (Capability.GENERATE_IMAGE, Capability.EDIT_IMAGE):
            body = {"model": model, "prompt": req.prompt, "response_format": "b64_json"}
            path = "/images/generations"
            if cap is Capability.EDIT_IMAGE:
                path = "/images/edits"
                if req.images:
                    body["image"] = _data_url(req.images[0].media_type, req.images[0].data)
            payload = self._post(path, body)
            try:
                b64 = payload["data"][0]["b64_json"]
            except (KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed image payload: {payload!r}") from exc
            return BackendResponse(capability=cap, image_bytes=base64.b64decode(b64), media_type="image/png")
        raise BackendError(f"capability {cap.value} not supported by this backend", status="capability-not-configured")
