"""Multi-agent story planning: entity grounding, key-event mining, shot
planning. Each agent is one templated chat call followed by strict parsing,
with a bounded re-prompt loop that feeds the parser's error back."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from .backends.base import BackendRequest, BackendSet, Capability, TraceSink
from .domain import EntitySet, KeyEvent, PanelSpec, PlanBundle, StoryRecord
from .parsing import ParseError, parse_entity_output, parse_events_output, parse_shots_output, uncovered_events
from .templates import load_template

log = logging.getLogger(__name__)

PARSE_RETRIES = 2

_RETRY_SUFFIX = (
    "\n\nYour previous reply could not be parsed: {error}\n"
    "Reply again following the required output format exactly."
)


class PlanningError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def render_entities_block(entities: EntitySet) -> str:
    lines = ["Characters:"]
    lines += [f"- {e.name}: {e.description}" for e in entities.characters]
    lines.append("Key Objects:")
    lines += [f"- {e.name}: {e.description}" for e in entities.objects]
    lines.append("Scene Locations:")
    lines += [f"- {e.name}: {e.description}" for e in entities.scenes]
    return "\n".join(lines)


def render_events_block(events: list[KeyEvent] | tuple[KeyEvent, ...]) -> str:
    return "\n".join(f"{e.index}. ({e.actor}, {e.action}, {e.target}, {e.result})" for e in events)


@dataclass
class StoryPlanner:
    backends: BackendSet
    parse_retries: int = PARSE_RETRIES
    trace: TraceSink | None = None
    templates_dir: str | Path | None = None

    def _chat(self, stage: str, prompt: str) -> str:
        backend = self.backends.require("chat")
        req = BackendRequest(capability=Capability.CHAT, model_id=self.backends.model_id("chat"), prompt=prompt)
        resp = backend.invoke(req, policy=self.backends.policy("chat"), trace=self.trace)
        text = resp.text or ""
        if self.trace:
            self.trace({"kind": "agent_call", "stage": stage, "fingerprint": req.fingerprint, "raw_text": text})
        return text

    def _parse_with_retries(self, stage: str, prompt: str, parse):
        last_error = ""
        for attempt in range(self.parse_retries + 1):
            full_prompt = prompt if attempt == 0 else prompt + _RETRY_SUFFIX.format(error=last_error)
            text = self._chat(stage, full_prompt)
            try:
                return parse(text)
            except ParseError as exc:
                last_error = str(exc)
                log.warning("%s output failed to parse (attempt %d): %s", stage, attempt + 1, exc)
        raise PlanningError(stage, f"output unparseable after {self.parse_retries} re-prompt(s): {last_error}")

    def craft_entities(self, story: StoryRecord) -> EntitySet:
        if not story.story_outline.strip():
            raise PlanningError("craft", "story outline is empty")
        template = load_template("scenecrafter", self.templates_dir)
        entities = self._parse_with_retries("craft", template.render(story=story.story_outline), parse_entity_output)
        if not entities.objects or not entities.scenes:
            log.warning("story %s: entity set has no %s", story.id, "objects" if not entities.objects else "scenes")
        return entities

    def mine_events(self, story: StoryRecord, entities: EntitySet) -> list[KeyEvent]:
        template = load_template("logicminer", self.templates_dir)
        prompt = template.render(story=story.story_outline, entities=render_entities_block(entities))
        return self._parse_with_retries("mine", prompt, lambda text: parse_events_output(text, entities))

    def plan_shots(self, events: list[KeyEvent], entities: EntitySet, story: StoryRecord) -> tuple[list[PanelSpec], dict[int, tuple[int, ...]]]:
        if not events:
            raise PlanningError("shot", "cannot plan shots for an empty event list")
        template = load_template("shotplanner", self.templates_dir)
        prompt = template.render(
            story=story.story_outline,
            entities=render_entities_block(entities),
            events=render_events_block(events),
        )
        panels, coverage = self._parse_with_retries(
            "shot", prompt, lambda text: parse_shots_output(text, entities, n_events=len(events))
        )
        missing = uncovered_events(coverage, len(events))
        if missing:
            log.warning("events not covered by any panel: %s", missing)
        return panels, coverage

    def plan(self, story: StoryRecord) -> PlanBundle:
        entities = self.craft_entities(story)
        events = self.mine_events(story, entities)
        panels, coverage = self.plan_shots(events, entities, story)
        bundle = PlanBundle(
            entities=entities,
            events=tuple(events),
            panels=tuple(panels),
            coverage=tuple(sorted(coverage.items())),
        )
        dangling = bundle.dangling_references()
        if dangling:  # parsers resolve against the entity set, so this is a bug guard
            raise PlanningError("shot", f"dangling entity references: {dangling}")
        return bundle
