"""Strict parsers for structured model output.

Every parser first tries a fenced JSON block, then falls back to the
sectioned-markdown grammar the planning agents are shown as an example.
Parsers are pure and deterministic; failures raise ParseError with a
message suitable for re-prompt feedback.
"""
from __future__ import annotations

import json
import re
from typing import Any, Iterable, Mapping, Sequence

from .domain import (
    CameraSetup,
    EntityDef,
    EntityKind,
    EntitySet,
    KeyEvent,
    PanelSpec,
    StatePredicate,
    canonical_name,
)


class ParseError(Exception):
    pass


_FENCE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


def extract_json(text: str) -> Any | None:
    """First parseable fenced JSON block, else the whole text as JSON."""
    for match in _FENCE.finditer(text):
        try:
            return json.loads(match.group(1))
        except json.JSONDecodeError:
            continue
    stripped = text.strip()
    if stripped.startswith(("{", "[")):
        try:
            return json.loads(stripped)
        except json.JSONDecodeError:
            return None
    return None


# ---------------------------------------------------------------------------
# state-predicate extraction from free text
# ---------------------------------------------------------------------------

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?;])\s+")
_ARTICLE = re.compile(r"^(?:the|a|an)\s+", re.IGNORECASE)
_LOCATION = re.compile(
    r"^(?P<e>.+?)\s+(?:is|are)\s+(?:(?:now|together|back|still|safely|trapped|hiding)\s+)?"
    r"(?:in|inside|at|on|under|near|beneath|behind)\s+(?P<v>.+)$",
    re.IGNORECASE,
)
_POSSESSION = re.compile(r"^(?P<e>.+?)\s+(?P<verb>has|have|owns?|carries|carry|holds?)\s+(?P<v>.+)$", re.IGNORECASE)
_EXISTS = re.compile(r"^(?P<e>.+?)\s+(?:exists?|appears?(?:\s+in\s+the\s+scene)?)$", re.IGNORECASE)
_IS_STATE = re.compile(r"^(?P<e>.+?)\s+(?:is|are)\s+(?P<v>.+)$", re.IGNORECASE)
_BARE_STATE = re.compile(r"^(?P<e>.+?)\s+(?P<v>destroyed|burned|defeated|ready|prepared|gone|broken)$", re.IGNORECASE)

_POSSESSION_ATTRS = {"has": "has", "have": "has", "own": "owns", "owns": "owns", "carries": "carries", "carry": "carries", "hold": "holds", "holds": "holds"}


def _strip_articles(v: str) -> str:
    return _ARTICLE.sub("", v.strip())


def predicates_from_text(text: str, default_entity: str = "story") -> list[StatePredicate]:
    """Deterministic conversion of state sentences into predicates.

    Recognizes location ("X is in Y"), possession ("X has/owns Y"),
    existence ("X exists"), and generic "X is Y" forms; anything else is
    preserved verbatim as a note predicate, never dropped.
    """
    out: list[StatePredicate] = []
    for raw in _SENTENCE_SPLIT.split(text.strip()):
        sentence = raw.strip().strip(".!?;").strip()
        if not sentence:
            continue
        if sentence.lower().startswith("and "):
            sentence = sentence[4:]
        m = _LOCATION.match(sentence)
        if m:
            out.append(StatePredicate(m.group("e"), "location", _strip_articles(m.group("v"))))
            continue
        m = _POSSESSION.match(sentence)
        if m:
            attr = _POSSESSION_ATTRS[m.group("verb").lower()]
            out.append(StatePredicate(m.group("e"), attr, _strip_articles(m.group("v"))))
            continue
        m = _EXISTS.match(sentence)
        if m:
            out.append(StatePredicate(m.group("e"), "exists", "yes"))
            continue
        m = _IS_STATE.match(sentence)
        if m:
            out.append(StatePredicate(m.group("e"), "state", m.group("v")))
            continue
        m = _BARE_STATE.match(sentence)
        if m:
            out.append(StatePredicate(m.group("e"), "state", m.group("v").lower()))
            continue
        out.append(StatePredicate(default_entity, "note", sentence))
    return out


# ---------------------------------------------------------------------------
# entity output (story -> characters / objects / scenes)
# ---------------------------------------------------------------------------

_SECTION_HEADS = {
    "characters": "characters",
    "key objects": "objects",
    "objects": "objects",
    "scene locations": "scenes",
    "scenes": "scenes",
}
_HEAD_RE = re.compile(r"^\W*(characters|key objects|objects|scene locations|scenes)\b\W*$", re.IGNORECASE)
_BULLET_RE = re.compile(r"^\s*[-*•]?\s*\**(?P<name>[^:*]+?)\**\s*:\s*(?P<desc>.+)$")

_KIND_BY_GROUP = {"characters": EntityKind.CHARACTER, "objects": EntityKind.OBJECT, "scenes": EntityKind.SCENE}


def _entities_from_json(data: Any) -> EntitySet:
    if not isinstance(data, Mapping):
        raise ParseError("entity JSON must be an object with characters/objects/scenes")
    groups: dict[str, list[EntityDef]] = {"characters": [], "objects": [], "scenes": []}
    for group in groups:
        for item in data.get(group, []):
            if isinstance(item, str):
                name, _, desc = item.partition(":")
                groups[group].append(EntityDef(name.strip(), _KIND_BY_GROUP[group], desc.strip()))
            elif isinstance(item, Mapping):
                groups[group].append(
                    EntityDef(str(item.get("name", "")).strip(), _KIND_BY_GROUP[group], str(item.get("description", "")).strip())
                )
            else:
                raise ParseError(f"unparseable {group} entry: {item!r}")
    return EntitySet(characters=tuple(groups["characters"]), objects=tuple(groups["objects"]), scenes=tuple(groups["scenes"]))


def _entities_from_markdown(text: str) -> EntitySet:
    groups: dict[str, list[EntityDef]] = {"characters": [], "objects": [], "scenes": []}
    current: str | None = None
    for line in text.splitlines():
        head = _HEAD_RE.match(line.strip())
        if head:
            current = _SECTION_HEADS[head.group(1).lower()]
            continue
        if current is None:
            continue
        m = _BULLET_RE.match(line)
        if m:
            name = m.group("name").strip().strip("-*• ").strip()
            if name and not _HEAD_RE.match(name):
                groups[current].append(EntityDef(name, _KIND_BY_GROUP[current], m.group("desc").strip()))
    return EntitySet(characters=tuple(groups["characters"]), objects=tuple(groups["objects"]), scenes=tuple(groups["scenes"]))


def parse_entity_output(text: str) -> EntitySet:
    """Parse SceneCrafter output; characters are mandatory."""
    data = extract_json(text)
    entities = _entities_from_json(data) if data is not None else _entities_from_markdown(text)
    if not entities.characters:
        raise ParseError(
            "no characters found; expected a Characters section (or JSON key) with 'Name: description' entries"
        )
    for e in entities.all_entities():
        if not e.description.strip():
            raise ParseError(f"entity {e.name!r} is missing a visual description")
    return entities


# ---------------------------------------------------------------------------
# key-event output
# ---------------------------------------------------------------------------

_EVENT_TUPLE_RE = re.compile(r"^\s*\d+\s*[.)]\s*\((?P<body>.+)\)\s*$")
_PRECOND_RE = re.compile(r"^\s*\**_*\s*preconditions?\s*:\s*_*\**\s*(?P<rest>.*)$", re.IGNORECASE)
_EFFECTS_RE = re.compile(r"^\s*\**_*\s*effects?\s*:\s*_*\**\s*(?P<rest>.*)$", re.IGNORECASE)


def _split_tuple(body: str) -> tuple[str, str, str, str]:
    parts = [p.strip() for p in body.split(",")]
    if len(parts) < 3:
        raise ParseError(f"event tuple needs at least (actor, action, target): {body!r}")
    actor, action, target = parts[0], parts[1], parts[2]
    result = ", ".join(parts[3:]) if len(parts) > 3 else ""
    return actor, action, target, result


def _predicates(entries: Iterable[Any], default_entity: str) -> tuple[StatePredicate, ...]:
    preds: list[StatePredicate] = []
    for entry in entries:
        if isinstance(entry, Mapping):
            preds.append(StatePredicate.from_dict(entry))
        else:
            preds.extend(predicates_from_text(str(entry), default_entity=default_entity))
    return tuple(preds)


def _resolve_name(name: str, entities: EntitySet) -> str:
    found = entities.resolve(name)
    return found.name if found is not None else name.strip()


def parse_events_output(text: str, entities: EntitySet) -> list[KeyEvent]:
    """Parse LogicMiner output into indexed events with predicates."""
    data = extract_json(text)
    raw_events: list[dict[str, Any]] = []
    if data is not None:
        if not isinstance(data, list):
            raise ParseError("event JSON must be a list of event objects")
        for item in data:
            if not isinstance(item, Mapping):
                raise ParseError(f"unparseable event entry: {item!r}")
            raw_events.append(
                {
                    "actor": str(item.get("actor", "")),
                    "action": str(item.get("action", "")),
                    "target": str(item.get("target", "")),
                    "result": str(item.get("result", "")),
                    "preconditions": item.get("preconditions", []),
                    "effects": item.get("effects", []),
                }
            )
    else:
        current: dict[str, Any] | None = None
        for line in text.splitlines():
            m = _EVENT_TUPLE_RE.match(line)
            if m:
                actor, action, target, result = _split_tuple(m.group("body"))
                current = {
                    "actor": actor,
                    "action": action,
                    "target": target,
                    "result": result,
                    "preconditions": [],
                    "effects": [],
                }
                raw_events.append(current)
                continue
            if current is None:
                continue
            pm = _PRECOND_RE.match(line)
            if pm:
                if pm.group("rest").strip():
                    current["preconditions"].append(pm.group("rest").strip())
                continue
            em = _EFFECTS_RE.match(line)
            if em:
                if em.group("rest").strip():
                    current["effects"].append(em.group("rest").strip())
                continue
    if not raw_events:
        raise ParseError("empty event list; expected numbered (actor, action, target, result) tuples or a JSON list")
    events: list[KeyEvent] = []
    for i, raw in enumerate(raw_events, start=1):
        actor = _resolve_name(raw["actor"], entities)
        if not actor:
            raise ParseError(f"event {i} has an empty actor")
        events.append(
            KeyEvent(
                index=i,
                actor=actor,
                action=raw["action"].strip(),
                target=_resolve_name(raw["target"], entities),
                result=raw["result"].strip(),
                preconditions=_predicates(raw["preconditions"], default_entity=actor),
                effects=_predicates(raw["effects"], default_entity=actor),
            )
        )
    return events


# ---------------------------------------------------------------------------
# shot-plan output
# ---------------------------------------------------------------------------

_SHOT_SPLIT = re.compile(r"^#*\s*\**shot\s+(\d+)\**\s*:?\s*$", re.IGNORECASE | re.MULTILINE)
_FIELD_RE = re.compile(r"^\s*[-*•]?\s*\**_*(?P<label>[A-Za-z][A-Za-z /()'-]*?)_*\**\s*:\s*(?P<value>.*)$")

_SHOT_TYPE_SYNONYMS = (
    ("over", "over_shoulder"),
    ("close", "close_up"),
    ("wide", "wide"),
    ("medium", "medium"),
)
_ANGLE_SYNONYMS = (("eye", "eye_level"), ("low", "low"), ("high", "high"))


def normalize_shot_type(raw: str) -> str:
    low = raw.strip().lower()
    for needle, token in _SHOT_TYPE_SYNONYMS:
        if needle in low:
            return token
    return low or "medium"


def normalize_angle(raw: str) -> str:
    low = raw.strip().lower()
    for needle, token in _ANGLE_SYNONYMS:
        if needle in low:
            return token
    return low or "eye_level"


def _names_in_text(text: str, pool: Sequence[EntityDef]) -> tuple[str, ...]:
    found: list[str] = []
    low = canonical_name(text)
    for e in pool:
        token = canonical_name(e.name)
        if re.search(rf"(?<![a-z0-9]){re.escape(token)}(?![a-z0-9])", low) and e.name not in found:
            found.append(e.name)
    return tuple(found)


def _filter_resolvable(names: Iterable[str], entities: EntitySet) -> tuple[str, ...]:
    out: list[str] = []
    for name in names:
        resolved = entities.resolve(str(name))
        if resolved is not None and resolved.name not in out:
            out.append(resolved.name)
    return tuple(out)


def _shot_from_json(i: int, item: Mapping[str, Any], entities: EntitySet) -> tuple[PanelSpec, tuple[int, ...]]:
    camera = item.get("camera", {})
    spec = PanelSpec(
        index=i,
        scene_description=str(item.get("scene_description", "")).strip(),
        characters_present=_filter_resolvable(item.get("characters", []), entities),
        actions=str(item.get("actions", "")).strip(),
        objects_present=_filter_resolvable(item.get("objects", []), entities),
        spatial_layout=str(item.get("spatial_layout", "")).strip(),
        camera=CameraSetup(
            shot_type=normalize_shot_type(str(camera.get("shot_type", ""))),
            angle=normalize_angle(str(camera.get("angle", ""))),
            perspective=str(camera.get("perspective", "")).strip(),
        ),
        rendering_prompt=str(item.get("rendering_prompt", "")).strip(),
    )
    covered = tuple(int(e) for e in item.get("events", []))
    return spec, covered


_LABEL_FIELDS = {
    "scene description": "scene_description",
    "characters and actions": "actions",
    "objects and scene elements": "objects_text",
    "spatial layout": "spatial_layout",
    "shot type": "shot_type",
    "camera angle": "angle",
    "angle": "angle",
    "perspective": "perspective",
    "event": "events",
    "events": "events",
}


def _shot_from_markdown(i: int, block: str, entities: EntitySet) -> tuple[PanelSpec, tuple[int, ...]]:
    fields: dict[str, str] = {}
    for line in block.splitlines():
        m = _FIELD_RE.match(line)
        if not m:
            continue
        label = m.group("label").strip().lower()
        value = m.group("value").strip()
        if label.startswith("rendering prompt"):
            fields["rendering_prompt"] = value.strip().strip('"')
        elif label in _LABEL_FIELDS:
            fields[_LABEL_FIELDS[label]] = value
    covered: tuple[int, ...] = ()
    if "events" in fields:
        covered = tuple(int(n) for n in re.findall(r"\d+", fields["events"]))
    searchable = " ".join(fields.get(k, "") for k in ("scene_description", "actions", "objects_text", "spatial_layout"))
    spec = PanelSpec(
        index=i,
        scene_description=fields.get("scene_description", ""),
        characters_present=_names_in_text(searchable, entities.characters),
        actions=fields.get("actions", ""),
        objects_present=_names_in_text(searchable, entities.objects),
        spatial_layout=fields.get("spatial_layout", ""),
        camera=CameraSetup(
            shot_type=normalize_shot_type(fields.get("shot_type", "")),
            angle=normalize_angle(fields.get("angle", "")),
            perspective=fields.get("perspective", ""),
        ),
        rendering_prompt=fields.get("rendering_prompt", ""),
    )
    return spec, covered


def parse_shots_output(
    text: str, entities: EntitySet, n_events: int
) -> tuple[list[PanelSpec], dict[int, tuple[int, ...]]]:
    """Parse ShotPlanner output into ordered panels plus a coverage map.

    Shots without explicit event references get the default assignment:
    shot i covers event i, and the last shot absorbs any remaining events,
    so every event is covered unless the model says otherwise.
    """
    data = extract_json(text)
    shots: list[tuple[PanelSpec, tuple[int, ...]]] = []
    try:
        if data is not None:
            if not isinstance(data, list):
                raise ParseError("shot JSON must be a list of shot objects")
            for i, item in enumerate(data, start=1):
                if not isinstance(item, Mapping):
                    raise ParseError(f"unparseable shot entry: {item!r}")
                shots.append(_shot_from_json(i, item, entities))
        else:
            pieces = _SHOT_SPLIT.split(text)
            # pieces = [prefix, num1, block1, num2, block2, ...]
            for j in range(1, len(pieces) - 1, 2):
                shots.append(_shot_from_markdown((j + 1) // 2, pieces[j + 1], entities))
    except ValueError as exc:  # e.g. PanelSpec rejecting an empty rendering prompt
        raise ParseError(str(exc)) from exc
    if not shots:
        raise ParseError("no shots found; expected 'Shot N:' blocks or a JSON list")

    explicit = any(covered for _, covered in shots)
    coverage: dict[int, tuple[int, ...]] = {}
    if explicit:
        for spec, covered in shots:
            coverage[spec.index] = tuple(e for e in covered if 1 <= e <= n_events)
    else:
        for spec, _ in shots:
            t = spec.index
            if t < len(shots) or len(shots) >= n_events:
                coverage[t] = (t,) if t <= n_events else ()
            else:  # last shot absorbs the tail
                coverage[t] = tuple(range(t, n_events + 1))
    return [spec for spec, _ in shots], coverage


def uncovered_events(coverage: Mapping[int, tuple[int, ...]], n_events: int) -> list[int]:
    covered = {e for events in coverage.values() for e in events}
    return [e for e in range(1, n_events + 1) if e not in covered]


# ---------------------------------------------------------------------------
# scored replies
# ---------------------------------------------------------------------------

_SCORE_LINE = re.compile(r"^\s*\**score\**\s*[:=]\s*(?P<num>-?[0-9]+(?:\.[0-9]+)?)\s*\**\s*$", re.IGNORECASE)
_JUSTIFICATION_LINE = re.compile(r"^\s*\**justification\**\s*[:=]\s*(?P<rest>.*)$", re.IGNORECASE)


def parse_score_reply(text: str) -> tuple[float, str]:
    """Parse a `Score: <float in [0,1]>` reply; out-of-range is an error."""
    value: float | None = None
    justification = ""
    for line in text.splitlines():
        if value is None:
            m = _SCORE_LINE.match(line)
            if m:
                value = float(m.group("num"))
                continue
        jm = _JUSTIFICATION_LINE.match(line)
        if jm:
            justification = jm.group("rest").strip()
    if value is None:
        raise ParseError("no 'Score: <float between 0 and 1>' line found")
    if not (0.0 <= value <= 1.0):
        raise ParseError(f"score out of range: {value} not in [0, 1]")
    return value, justification


_RATING_RE = re.compile(
    r"^\s*\**(?:score|rating)?\**\s*[:=]?\s*(?P<num>[1-5](?:\.[05])?)\s*(?:[-–:]\s*(?P<label>.*))?$",
    re.IGNORECASE,
)


def parse_rating_reply(text: str) -> float:
    """Parse a 1-5 rubric rating; accepts `N`, `N - Label`, `Score: N`."""
    for line in text.splitlines():
        if not line.strip():
            continue
        m = _RATING_RE.match(line.strip())
        if m:
            return float(m.group("num"))
        break  # only the first non-empty line may carry the rating
    raise ParseError("no leading 1-5 rating found")


_YES_RE = re.compile(r"^\W*yes\b", re.IGNORECASE)
_NO_RE = re.compile(r"^\W*no\b", re.IGNORECASE)


def parse_yes_no(text: str) -> bool | None:
    stripped = text.strip()
    if _YES_RE.match(stripped):
        return True
    if _NO_RE.match(stripped):
        return False
    return None


_FLOAT_RE = re.compile(r"-?[0-9]+(?:\.[0-9]+)?")


def parse_float_reply(text: str) -> float:
    """First decimal number anywhere in the reply (for score services)."""
    m = _FLOAT_RE.search(text)
    if not m:
        raise ParseError("no numeric score found in reply")
    return float(m.group(0))


_SUB_SCORE_RE = re.compile(r"(clarity|coherence|plausibility)\s*[:=]\s*(-?[0-9]+(?:\.[0-9]+)?)", re.IGNORECASE)


def parse_rubric_subscores(text: str) -> float:
    """Mean of clarity/coherence/plausibility sub-scores, each in [0,1]."""
    found = {name.lower(): float(num) for name, num in _SUB_SCORE_RE.findall(text)}
    missing = {"clarity", "coherence", "plausibility"} - set(found)
    if missing:
        raise ParseError(f"missing rubric sub-scores: {sorted(missing)}")
    for name, v in found.items():
        if not (0.0 <= v <= 1.0):
            raise ParseError(f"rubric sub-score {name} out of range: {v}")
    return sum(found.values()) / 3.0
