"""Deterministic fixture-driven mock backend.

Lookup order per request: an exact fixture file named by the request
fingerprint (``<root>/<capability>/<fingerprint>.json``), then the first
matching rule of the human-readable ``manifest.json``. Rules match on
capability plus prompt substrings and either embed a response or name a
deterministic generator, so full pipeline runs can be scripted without
precomputing every fingerprint. Lookup is read-only after load and pure:
equal fingerprints always produce equal responses.
"""
from __future__ import annotations

import base64
import hashlib
import io
import json
from pathlib import Path
from typing import Any, Mapping

from .base import Backend, BackendError, BackendRequest, BackendResponse, Capability


def _decode_response(capability: Capability, body: Mapping[str, Any]) -> BackendResponse:
    if "capability" in body and body["capability"] != capability.value:
        raise BackendError(
            f"fixture declares capability {body['capability']!r} but request is {capability.value!r}"
        )
    if "image_b64" in body:
        return BackendResponse(
            capability=capability,
            image_bytes=base64.b64decode(body["image_b64"]),
            media_type=body.get("media_type", "image/png"),
        )
    if "embedding" in body:
        return BackendResponse(capability=capability, embedding=tuple(float(x) for x in body["embedding"]))
    if "text" in body:
        return BackendResponse(capability=capability, text=str(body["text"]))
    raise BackendError("fixture body has none of text / image_b64 / embedding")


def _solid_png(seed: str, size: int) -> bytes:
    from PIL import Image

    digest = hashlib.sha256(seed.encode("utf-8")).digest()
    color = (digest[0], digest[1], digest[2])
    img = Image.new("RGB", (size, size), color)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _stable_index(seed: str, dim: int) -> int:
    return int.from_bytes(hashlib.sha256(seed.encode("utf-8")).digest()[:8], "big") % dim


def _request_seed(req: BackendRequest) -> str:
    if req.images:
        return req.prompt + "|" + "|".join(i.sha256 for i in req.images)
    return req.prompt


def _run_generator(req: BackendRequest, gen: Mapping[str, Any]) -> BackendResponse:
    kind = gen.get("type")
    seed = _request_seed(req)
    if kind == "solid_png":
        data = _solid_png(seed, int(gen.get("size", 64)))
        return BackendResponse(capability=req.capability, image_bytes=data, media_type="image/png")
    if kind == "unit_basis":
        dim = int(gen.get("dim", 16))
        vocab = gen.get("vocab", {})
        index = int(vocab[seed]) if seed in vocab else _stable_index(seed, dim)
        vec = [0.0] * dim
        vec[index % dim] = 1.0
        return BackendResponse(capability=req.capability, embedding=tuple(vec))
    if kind == "echo_sha":
        prefix = str(gen.get("prefix", ""))
        text = prefix + hashlib.sha256(seed.encode("utf-8")).hexdigest()[:10]
        return BackendResponse(capability=req.capability, text=text)
    raise BackendError(f"unknown fixture generator {kind!r}")


class MockBackend(Backend):
    """Serves every capability from a fixture directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        manifest = json.loads(manifest_path.read_text(encoding="utf-8")) if manifest_path.exists() else {}
        self.aliases: dict[str, str] = dict(manifest.get("aliases", {}))
        self.rules: list[Mapping[str, Any]] = list(manifest.get("rules", []))

    def _fixture_file(self, req: BackendRequest) -> Path:
        return self.root / req.capability.value / f"{req.fingerprint}.json"

    def _call(self, req: BackendRequest) -> BackendResponse:
        path = self._fixture_file(req)
        if path.exists():
            return _decode_response(req.capability, json.loads(path.read_text(encoding="utf-8")))
        for rule in self.rules:
            if rule.get("capability") not in (None, req.capability.value):
                continue
            needles = rule.get("contains", [])
            if isinstance(needles, str):
                needles = [needles]
            if not all(n in req.prompt for n in needles):
                continue
            if "generator" in rule:
                return _run_generator(req, rule["generator"])
            if "response_file" in rule:
                body = json.loads((self.root / rule["response_file"]).read_text(encoding="utf-8"))
                return _decode_response(req.capability, body)
            if "response" in rule:
                return _decode_response(req.capability, rule["response"])
            raise BackendError(f"manifest rule {rule.get('alias', '?')!r} has no response or generator")
        raise BackendError(
            f"no fixture for fingerprint {req.fingerprint} (capability={req.capability.value})",
            status="no-fixture",
        )


def write_fixture(root: str | Path, req: BackendRequest, resp: BackendResponse, alias: str | None = None) -> Path:
    """Persist a response as an exact-fingerprint fixture file."""
    root = Path(root)
    body: dict[str, Any] = {"capability": resp.capability.value}
    if resp.text is not None:
        body["text"] = resp.text
    if resp.image_bytes is not None:
        body["image_b64"] = base64.b64encode(resp.image_bytes).decode("ascii")
        body["media_type"] = resp.media_type or "image/png"
    if resp.embedding is not None:
        body["embedding"] = list(resp.embedding)
    path = root / req.capability.value / f"{req.fingerprint}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(body, indent=2), encoding="utf-8")
    if alias:
        manifest_path = root / "manifest.json"
        manifest = json.loads(manifest_path.read_text(encoding="utf-8")) if manifest_path.exists() else {}
        manifest.setdefault("aliases", {})[alias] = req.fingerprint
        manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return path


class RecordingBackend(Backend):
    """Wraps a live backend and captures every response into fixtures."""

    def __init__(self, inner: Backend, root: str | Path):
        self.inner = inner
        self.root = Path(root)

    def _call(self, req: BackendRequest) -> BackendResponse:
        resp = self.inner._call(req)
        write_fixture(self.root, req, resp)
        return resp
