"""Shared test helpers: scripted backends and synthetic plans."""
from __future__ import annotations

import hashlib
import io
from typing import Callable, Sequence

from storylogic.backends.base import Backend, BackendError, BackendRequest, BackendResponse, Capability
from storylogic.domain import (
    CameraSetup,
    EntityDef,
    EntityKind,
    EntitySet,
    KeyEvent,
    PanelSpec,
    PlanBundle,
    StatePredicate,
)


def tiny_png(seed: str = "x") -> bytes:
    from PIL import Image

    digest = hashlib.sha256(seed.encode()).digest()
    img = Image.new("RGB", (8, 8), (digest[0], digest[1], digest[2]))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


Responder = Callable[[BackendRequest], str | bytes | Sequence[float]]


class ScriptedBackend(Backend):
    """Per-capability scripts: a list is consumed in order, a callable is
    applied to the request, a constant is returned verbatim."""

    def __init__(self, **scripts):
        self.scripts = scripts
        self.calls: list[BackendRequest] = []

    def _next(self, req: BackendRequest):
        script = self.scripts.get(req.capability.value)
        if script is None:
            raise BackendError(f"no script for capability {req.capability.value}", status="capability-not-configured")
        if isinstance(script, list):
            if not script:
                raise BackendError(f"script for {req.capability.value} exhausted")
            return script.pop(0)
        if callable(script):
            return script(req)
        return script

    def _call(self, req: BackendRequest) -> BackendResponse:
        self.calls.append(req)
        payload = self._next(req)
        if isinstance(payload, BackendResponse):
            return payload
        if isinstance(payload, BackendError):
            raise payload
        if req.capability in (Capability.GENERATE_IMAGE, Capability.EDIT_IMAGE):
            data = payload if isinstance(payload, bytes) else tiny_png(str(payload))
            return BackendResponse(capability=req.capability, image_bytes=data, media_type="image/png")
        if req.capability is Capability.EMBED:
            return BackendResponse(capability=req.capability, embedding=tuple(float(x) for x in payload))
        return BackendResponse(capability=req.capability, text=str(payload))


def hero_entities() -> EntitySet:
    return EntitySet(
        characters=(EntityDef("Hero", EntityKind.CHARACTER, "a small brave hero"),),
        objects=(EntityDef("Stone", EntityKind.OBJECT, "a round gray stone"),),
        scenes=(EntityDef("Meadow", EntityKind.SCENE, "a sunny meadow"),),
    )


def make_plan(n_panels: int) -> PlanBundle:
    """n panels, n chained events, 1:1 coverage."""
    entities = hero_entities()
    events = tuple(
        KeyEvent(
            index=i,
            actor="Hero",
            action=f"does step {i}",
            target="Stone",
            result=f"step {i} done",
            preconditions=(StatePredicate("hero", "step", str(i - 1)),),
            effects=(StatePredicate("hero", "step", str(i)),),
        )
        for i in range(1, n_panels + 1)
    )
    panels = tuple(
        PanelSpec(
            index=i,
            scene_description=f"hero performs step {i}",
            characters_present=("Hero",),
            actions=f"step {i}",
            objects_present=("Stone",),
            spatial_layout="hero center frame",
            camera=CameraSetup(),
            rendering_prompt=f"hero doing step {i} in a meadow",
        )
        for i in range(1, n_panels + 1)
    )
    coverage = tuple((i, (i,)) for i in range(1, n_panels + 1))
    return PlanBundle(entities=entities, events=events, panels=panels, coverage=coverage)


def score_reply(value: float, justification: str = "fine") -> str:
    return f"Score: {value}\nJustification: {justification}"
