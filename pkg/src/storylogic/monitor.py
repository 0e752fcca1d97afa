"""Panel-by-panel plausibility monitoring with a textual memory buffer.

The monitor captions what was actually drawn, asks the chat backend to
judge it against the accumulated context, and parses the scored reply
strictly: a malformed or out-of-range score is re-prompted once and then
raised, never clamped.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path

from .backends.base import BackendError, BackendRequest, BackendSet, Capability, ImageRef, TraceSink
from .domain import PanelImage, StatePredicate
from .parsing import ParseError, parse_score_reply, predicates_from_text
from .templates import load_template

log = logging.getLogger(__name__)

DEFAULT_MAX_CHARS = 4000
EMPTY_CONTEXT = "No prior panels."

_FORMAT_REMINDER = (
    "\n\nYour previous reply was rejected: {error}\n"
    "Reply exactly in the format:\nScore: <float between 0 and 1>\nJustification: <one or two sentences>"
)

_CAPTION_PROMPT = (
    "Describe this story panel in two or three sentences, focusing on the characters present, "
    "their actions and emotional state, and any important objects or changes of state."
)


class MonitorError(Exception):
    pass


@dataclass(frozen=True)
class PlausibilityScore:
    value: float
    justification: str
    raw_reply: str

    def __post_init__(self) -> None:
        if not (0.0 <= self.value <= 1.0):
            raise MonitorError(f"plausibility score {self.value} outside [0, 1]")


@dataclass(frozen=True)
class MemoryEntry:
    panel_index: int
    caption: str
    predicates: tuple[StatePredicate, ...]
    summary: str
    summarized: bool = False
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class MemoryBuffer:
    entries: tuple[MemoryEntry, ...] = ()
    max_chars: int = DEFAULT_MAX_CHARS


def _first_sentence(text: str) -> str:
    m = re.split(r"(?<=[.!?])\s+", text.strip(), maxsplit=1)
    return m[0] if m and m[0] else text.strip()


def summarize_entry(entry: MemoryEntry) -> str:
    """First sentence plus the extracted state facts, one line."""
    facts = "; ".join(f"{p.entity} {p.attribute} {p.value}" for p in entry.predicates[:4])
    head = _first_sentence(entry.caption)
    return f"{head} [{facts}]" if facts else head


def render_context(buffer: MemoryBuffer) -> str:
    """Deterministic textual rendering, entries in panel order."""
    if not buffer.entries:
        return EMPTY_CONTEXT
    lines = []
    for e in buffer.entries:
        body = e.summary if e.summarized else e.caption
        lines.append(f"Panel {e.panel_index}: {body}")
    return "\n".join(lines)


def _enforce_budget(buffer: MemoryBuffer) -> MemoryBuffer:
    entries = list(buffer.entries)
    i = 0
    while len(render_context(MemoryBuffer(tuple(entries), buffer.max_chars))) > buffer.max_chars and i < len(entries):
        if not entries[i].summarized:
            entries[i] = replace(entries[i], summarized=True)
        i += 1
    return MemoryBuffer(entries=tuple(entries), max_chars=buffer.max_chars)


@dataclass
class LocalMonitor:
    backends: BackendSet
    trace: TraceSink | None = None
    templates_dir: str | Path | None = None

    def caption_image(self, image: PanelImage) -> str:
        backend = self.backends.require("caption")
        req = BackendRequest(
            capability=Capability.CAPTION,
            model_id=self.backends.model_id("caption"),
            prompt=_CAPTION_PROMPT,
            images=(ImageRef.from_path(image.artifact_path),),
        )
        resp = backend.invoke(req, policy=self.backends.policy("caption"), trace=self.trace)
        return resp.text or ""

    def score_panel(self, image: PanelImage, buffer: MemoryBuffer, caption: str | None = None) -> PlausibilityScore:
        if not Path(image.artifact_path).exists():
            raise MonitorError(f"panel image not found: {image.artifact_path}")
        if caption is None:
            caption = self.caption_image(image)
        template = load_template("local_monitor", self.templates_dir)
        prompt = template.render(memory=render_context(buffer), caption=caption)
        chat = self.backends.require("chat")
        last_error = ""
        for attempt in range(2):
            full = prompt if attempt == 0 else prompt + _FORMAT_REMINDER.format(error=last_error)
            req = BackendRequest(capability=Capability.CHAT, model_id=self.backends.model_id("chat"), prompt=full)
            reply = chat.invoke(req, policy=self.backends.policy("chat"), trace=self.trace).text or ""
            try:
                value, justification = parse_score_reply(reply)
                return PlausibilityScore(value=value, justification=justification, raw_reply=reply)
            except ParseError as exc:
                last_error = str(exc)
                log.warning("score reply rejected (attempt %d): %s", attempt + 1, exc)
        raise MonitorError(f"unusable score reply after re-prompt: {last_error}")

    def update_buffer(self, buffer: MemoryBuffer, image: PanelImage, caption: str | None = None) -> MemoryBuffer:
        """Append the panel's caption; summarize oldest entries over budget."""
        flags: tuple[str, ...] = ()
        if caption is None:
            try:
                caption = self.caption_image(image)
            except BackendError as exc:
                log.warning("caption backend failed for panel %d: %s", image.panel_index, exc)
                caption = "(caption unavailable)"
                flags = ("caption_failed",)
        preds = tuple(predicates_from_text(caption)) if not flags else ()
        entry = MemoryEntry(
            panel_index=image.panel_index,
            caption=caption,
            predicates=preds,
            summary="",
            flags=flags,
        )
        entry = replace(entry, summary=summarize_entry(entry))
        if buffer.entries and image.panel_index <= buffer.entries[-1].panel_index:
            raise MonitorError(
                f"panel index {image.panel_index} does not advance the buffer (last is {buffer.entries[-1].panel_index})"
            )
        return _enforce_budget(MemoryBuffer(entries=buffer.entries + (entry,), max_chars=buffer.max_chars))
