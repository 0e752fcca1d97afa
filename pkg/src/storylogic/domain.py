"""Shared domain types: story records, entities, events, panels.

All types are immutable after construction and JSON-serializable via
``to_dict`` / ``from_dict``. Validation is structural only; violations are
returned as values, never raised, so callers can aggregate them.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping

WEIGHT_SUM_TOLERANCE = 1e-6

_WS = re.compile(r"\s+")


class Level(str, Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"


class EntityKind(str, Enum):
    CHARACTER = "character"
    OBJECT = "object"
    SCENE = "scene"


class ImageOrigin(str, Enum):
    GENERATED = "generated"
    REGENERATED = "regenerated"
    EDITED = "edited"


# Camera vocabularies. Parsers normalize synonyms onto these tokens and keep
# unrecognized raw text as-is ("other" values stay descriptive).
SHOT_TYPES = frozenset({"wide", "medium", "close_up", "over_shoulder"})
CAMERA_ANGLES = frozenset({"eye_level", "low", "high"})


def _norm_text(s: str) -> str:
    return _WS.sub(" ", s.strip())


def canonical_name(name: str) -> str:
    """Case-folded, whitespace-normalized entity name used for matching."""
    return _norm_text(name).casefold()


@dataclass(frozen=True)
class Violation:
    """One failed structural rule, as a value."""

    field: str
    rule: str
    message: str

    def __str__(self) -> str:  # pragma: no cover - display helper
        return f"{self.field}: {self.rule}: {self.message}"


@dataclass(frozen=True)
class AnnotatedCausalEvent:
    action: str
    result: str
    weight: float

    def to_dict(self) -> dict[str, Any]:
        return {"action": self.action, "result": self.result, "weight": self.weight}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AnnotatedCausalEvent":
        return cls(action=str(d["action"]), result=str(d["result"]), weight=float(d["weight"]))


_STORY_FIELDS = ("id", "level", "title", "source", "story_outline", "character_list", "causal_event_chain")


@dataclass(frozen=True)
class StoryRecord:
    """One benchmark story with its annotated causal event chain.

    Unknown keys from source JSON are preserved in ``extra`` and re-emitted
    on serialization, so round-trips do not lose forward-compatible fields.
    """

    id: int
    level: Level
    title: str
    source: str
    story_outline: str
    character_list: tuple[str, ...]
    causal_event_chain: tuple[AnnotatedCausalEvent, ...]
    extra: tuple[tuple[str, Any], ...] = ()

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = dict(self.extra)
        out.update(
            {
                "id": self.id,
                "level": self.level.value,
                "title": self.title,
                "source": self.source,
                "story_outline": self.story_outline,
                "character_list": list(self.character_list),
                "causal_event_chain": [e.to_dict() for e in self.causal_event_chain],
            }
        )
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StoryRecord":
        extra = tuple(sorted((k, v) for k, v in d.items() if k not in _STORY_FIELDS))
        return cls(
            id=int(d["id"]),
            level=Level(str(d["level"])),
            title=str(d.get("title", "")),
            source=str(d.get("source", "")),
            story_outline=str(d.get("story_outline", "")),
            character_list=tuple(str(c) for c in d.get("character_list", [])),
            causal_event_chain=tuple(AnnotatedCausalEvent.from_dict(e) for e in d.get("causal_event_chain", [])),
            extra=extra,
        )


def validate_story_record(record: StoryRecord) -> list[Violation]:
    """Check every structural invariant; return one Violation per failure."""
    out: list[Violation] = []
    if record.id <= 0:
        out.append(Violation("id", "positive", f"id must be a positive integer, got {record.id}"))
    if not record.causal_event_chain:
        out.append(Violation("causal_event_chain", "non-empty-chain", "causal_event_chain must not be empty"))
    else:
        total = sum(e.weight for e in record.causal_event_chain)
        if abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
            out.append(
                Violation(
                    "causal_event_chain",
                    "weight-sum",
                    f"weights sum to {total!r}, |sum-1| exceeds {WEIGHT_SUM_TOLERANCE}",
                )
            )
        for i, ev in enumerate(record.causal_event_chain, start=1):
            if not (0.0 < ev.weight <= 1.0):
                out.append(Violation(f"causal_event_chain[{i}].weight", "weight-range", f"weight {ev.weight!r} not in (0, 1]"))
            if not ev.action.strip():
                out.append(Violation(f"causal_event_chain[{i}].action", "non-empty", "action is empty"))
            if not ev.result.strip():
                out.append(Violation(f"causal_event_chain[{i}].result", "non-empty", "result is empty"))
    seen: set[str] = set()
    for name in record.character_list:
        key = canonical_name(name)
        if key in seen:
            out.append(Violation("character_list", "unique-names", f"duplicate character {name!r}"))
        seen.add(key)
    return out


@dataclass(frozen=True)
class StatePredicate:
    """(entity, attribute, value) triple describing one visual state fact."""

    entity: str
    attribute: str
    value: str

    def canonical(self) -> str:
        return canonical_predicate(self)

    def to_dict(self) -> dict[str, str]:
        return {"entity": self.entity, "attribute": self.attribute, "value": self.value}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StatePredicate":
        return cls(entity=str(d["entity"]), attribute=str(d["attribute"]), value=str(d["value"]))

    @classmethod
    def from_canonical(cls, canon: str) -> "StatePredicate":
        entity, attribute, value = canon.split("|", 2)
        return cls(entity=entity, attribute=attribute, value=value)


def canonical_predicate(p: StatePredicate) -> str:
    """Lowercased, whitespace-normalized triple joined by ``|``.

    Equal predicates up to case and whitespace map to equal strings; the
    encoding is idempotent under re-parsing.
    """
    parts = []
    for fieldname, raw in (("entity", p.entity), ("attribute", p.attribute), ("value", p.value)):
        norm = _norm_text(raw).casefold()
        if not norm:
            raise ValueError(f"state predicate {fieldname} is empty")
        parts.append(norm)
    return "|".join(parts)


@dataclass(frozen=True)
class EntityDef:
    name: str
    kind: EntityKind
    description: str

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise ValueError("entity name must be non-empty")

    def to_dict(self) -> dict[str, str]:
        return {"name": self.name, "kind": self.kind.value, "description": self.description}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EntityDef":
        return cls(name=str(d["name"]), kind=EntityKind(str(d["kind"])), description=str(d.get("description", "")))


@dataclass(frozen=True)
class EntitySet:
    """Characters, objects and scenes with visual descriptions."""

    characters: tuple[EntityDef, ...]
    objects: tuple[EntityDef, ...] = ()
    scenes: tuple[EntityDef, ...] = ()

    def __post_init__(self) -> None:
        for group_name, group in (("characters", self.characters), ("objects", self.objects), ("scenes", self.scenes)):
            seen: set[str] = set()
            for e in group:
                key = canonical_name(e.name)
                if key in seen:
                    raise ValueError(f"duplicate {group_name} entity name {e.name!r}")
                seen.add(key)

    def all_entities(self) -> tuple[EntityDef, ...]:
        return self.characters + self.objects + self.scenes

    def resolve(self, name: str) -> EntityDef | None:
        """Case/whitespace-insensitive lookup, preserving stored spelling."""
        key = canonical_name(name)
        for e in self.all_entities():
            if canonical_name(e.name) == key:
                return e
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "characters": [e.to_dict() for e in self.characters],
            "objects": [e.to_dict() for e in self.objects],
            "scenes": [e.to_dict() for e in self.scenes],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EntitySet":
        return cls(
            characters=tuple(EntityDef.from_dict(e) for e in d.get("characters", [])),
            objects=tuple(EntityDef.from_dict(e) for e in d.get("objects", [])),
            scenes=tuple(EntityDef.from_dict(e) for e in d.get("scenes", [])),
        )


@dataclass(frozen=True)
class KeyEvent:
    """(actor, action, target, result) with pre/post-condition predicates."""

    index: int
    actor: str
    action: str
    target: str
    result: str
    preconditions: tuple[StatePredicate, ...] = ()
    effects: tuple[StatePredicate, ...] = ()

    def __post_init__(self) -> None:
        if not self.actor.strip():
            raise ValueError(f"event {self.index}: actor must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "actor": self.actor,
            "action": self.action,
            "target": self.target,
            "result": self.result,
            "preconditions": [p.to_dict() for p in self.preconditions],
            "effects": [p.to_dict() for p in self.effects],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "KeyEvent":
        return cls(
            index=int(d["index"]),
            actor=str(d["actor"]),
            action=str(d.get("action", "")),
            target=str(d.get("target", "")),
            result=str(d.get("result", "")),
            preconditions=tuple(StatePredicate.from_dict(p) for p in d.get("preconditions", [])),
            effects=tuple(StatePredicate.from_dict(p) for p in d.get("effects", [])),
        )


@dataclass(frozen=True)
class CameraSetup:
    shot_type: str = "medium"
    angle: str = "eye_level"
    perspective: str = ""

    def to_dict(self) -> dict[str, str]:
        return {"shot_type": self.shot_type, "angle": self.angle, "perspective": self.perspective}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CameraSetup":
        return cls(
            shot_type=str(d.get("shot_type", "medium")),
            angle=str(d.get("angle", "eye_level")),
            perspective=str(d.get("perspective", "")),
        )


@dataclass(frozen=True)
class PanelSpec:
    """Shot plan for one image slot in the sequence."""

    index: int
    scene_description: str
    characters_present: tuple[str, ...]
    actions: str
    objects_present: tuple[str, ...]
    spatial_layout: str
    camera: CameraSetup
    rendering_prompt: str

    def __post_init__(self) -> None:
        if not self.rendering_prompt.strip():
            raise ValueError(f"panel {self.index}: rendering_prompt must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "scene_description": self.scene_description,
            "characters_present": list(self.characters_present),
            "actions": self.actions,
            "objects_present": list(self.objects_present),
            "spatial_layout": self.spatial_layout,
            "camera": self.camera.to_dict(),
            "rendering_prompt": self.rendering_prompt,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PanelSpec":
        return cls(
            index=int(d["index"]),
            scene_description=str(d.get("scene_description", "")),
            characters_present=tuple(str(c) for c in d.get("characters_present", [])),
            actions=str(d.get("actions", "")),
            objects_present=tuple(str(o) for o in d.get("objects_present", [])),
            spatial_layout=str(d.get("spatial_layout", "")),
            camera=CameraSetup.from_dict(d.get("camera", {})),
            rendering_prompt=str(d["rendering_prompt"]),
        )


@dataclass(frozen=True)
class PanelImage:
    """A generated image artifact for one panel, at one revision."""

    panel_index: int
    artifact_path: str
    revision: int = 0
    origin: ImageOrigin = ImageOrigin.GENERATED

    def __post_init__(self) -> None:
        if self.revision < 0:
            raise ValueError("revision must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return {
            "panel_index": self.panel_index,
            "artifact_path": self.artifact_path,
            "revision": self.revision,
            "origin": self.origin.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PanelImage":
        return cls(
            panel_index=int(d["panel_index"]),
            artifact_path=str(d["artifact_path"]),
            revision=int(d.get("revision", 0)),
            origin=ImageOrigin(str(d.get("origin", "generated"))),
        )


@dataclass(frozen=True)
class PlanBundle:
    """Planner output: entities, key events, ordered panels, coverage map.

    ``coverage`` maps panel index to the key-event indices that panel
    depicts; every reference in events and panels resolves into ``entities``
    after canonical name matching.
    """

    entities: EntitySet
    events: tuple[KeyEvent, ...]
    panels: tuple[PanelSpec, ...]
    coverage: tuple[tuple[int, tuple[int, ...]], ...] = ()

    def coverage_map(self) -> dict[int, tuple[int, ...]]:
        return {k: v for k, v in self.coverage}

    def events_for_panel(self, panel_index: int) -> tuple[int, ...]:
        return self.coverage_map().get(panel_index, ())

    def dangling_references(self) -> list[str]:
        """Entity names referenced by panels that do not resolve."""
        out = []
        for panel in self.panels:
            for name in panel.characters_present + panel.objects_present:
                if self.entities.resolve(name) is None:
                    out.append(name)
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "entities": self.entities.to_dict(),
            "events": [e.to_dict() for e in self.events],
            "panels": [p.to_dict() for p in self.panels],
            "coverage": {str(k): list(v) for k, v in self.coverage},
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PlanBundle":
        cov = d.get("coverage", {})
        return cls(
            entities=EntitySet.from_dict(d["entities"]),
            events=tuple(KeyEvent.from_dict(e) for e in d.get("events", [])),
            panels=tuple(PanelSpec.from_dict(p) for p in d.get("panels", [])),
            coverage=tuple(sorted((int(k), tuple(int(i) for i in v)) for k, v in cov.items())),
        )
