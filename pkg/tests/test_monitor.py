from __future__ import annotations

import pytest

from storylogic.backends.base import BackendError, BackendSet
from storylogic.domain import PanelImage
from storylogic.monitor import (
    EMPTY_CONTEXT,
    LocalMonitor,
    MemoryBuffer,
    MemoryEntry,
    MonitorError,
    PlausibilityScore,
    render_context,
    summarize_entry,
)

from helpers import ScriptedBackend, tiny_png


@pytest.fixture()
def panel_image(tmp_path) -> PanelImage:
    path = tmp_path / "p1_r0.png"
    path.write_bytes(tiny_png("p1"))
    return PanelImage(panel_index=1, artifact_path=str(path))


def monitor_with(chat=None, caption="Pig2 is relaxing in a newly built wooden house, smiling.") -> LocalMonitor:
    backend = ScriptedBackend(chat=chat if chat is not None else [], caption=caption)
    bs = BackendSet(roles={"chat": backend, "caption": backend}, model_ids={"chat": "m", "caption": "c"})
    return LocalMonitor(bs)


WOLF_MEMORY = MemoryBuffer(
    entries=(
        MemoryEntry(
            panel_index=1,
            caption="Pig1's straw house was destroyed by the wolf. Pig1 ran away. The wolf is now active in the story.",
            predicates=(),
            summary="Pig1's straw house was destroyed by the wolf.",
        ),
    )
)


def test_score_panel_parses_scored_reply(panel_image):
    reply = (
        "Score: 0.8\n"
        "Justification: The scene is mostly logical. Pig2 may not yet be aware of the wolf's actions, "
        "which explains the relaxed demeanor."
    )
    monitor = monitor_with(chat=[reply])
    score = monitor.score_panel(panel_image, WOLF_MEMORY)
    assert score.value == 0.8
    assert "unaware" in score.justification or "aware" in score.justification
    assert score.raw_reply == reply


def test_score_panel_prompt_contains_memory_and_caption(panel_image):
    backend = ScriptedBackend(chat=["Score: 1.0\nJustification: fine"], caption="a pig relaxing")
    bs = BackendSet(roles={"chat": backend, "caption": backend}, model_ids={})
    LocalMonitor(bs).score_panel(panel_image, WOLF_MEMORY)
    prompt = backend.calls[-1].prompt
    assert "straw house was destroyed" in prompt
    assert "a pig relaxing" in prompt


def test_score_panel_empty_buffer_passthrough(panel_image):
    monitor = monitor_with(chat=["Score: 1.0\nJustification: first panel"])
    score = monitor.score_panel(panel_image, MemoryBuffer())
    assert score.value == 1.0


def test_score_panel_out_of_range_is_error_not_clamp(panel_image):
    monitor = monitor_with(chat=["Score: 1.7", "Score: 1.7"])
    with pytest.raises(MonitorError, match="out of range"):
        monitor.score_panel(panel_image, MemoryBuffer())


def test_score_panel_reprompts_once_with_reminder(panel_image):
    backend = ScriptedBackend(chat=["I think it's fine", "Score: 0.6\nJustification: after reminder"], caption="c")
    bs = BackendSet(roles={"chat": backend, "caption": backend}, model_ids={})
    score = LocalMonitor(bs).score_panel(panel_image, MemoryBuffer())
    assert score.value == 0.6
    chat_calls = [r for r in backend.calls if r.capability.value == "chat"]
    assert len(chat_calls) == 2
    assert "rejected" in chat_calls[1].prompt


def test_score_panel_missing_image_errors():
    monitor = monitor_with(chat=["Score: 1.0"])
    ghost = PanelImage(panel_index=1, artifact_path="/nowhere/p.png")
    with pytest.raises(MonitorError, match="not found"):
        monitor.score_panel(ghost, MemoryBuffer())


def test_plausibility_score_range_validated():
    with pytest.raises(MonitorError):
        PlausibilityScore(value=1.2, justification="", raw_reply="")


def test_render_context_empty_sentinel():
    assert render_context(MemoryBuffer()) == EMPTY_CONTEXT


def test_render_context_orders_entries(panel_image):
    monitor = monitor_with(caption="First caption here.")
    buffer = monitor.update_buffer(MemoryBuffer(), panel_image)
    assert render_context(buffer) == "Panel 1: First caption here."
    assert render_context(buffer) == render_context(buffer)  # stable


def test_update_buffer_appends_and_extracts_predicates(tmp_path):
    monitor = monitor_with(caption="Pig1 is inside the wooden house. Pig1 has a hammer.")
    img = tmp_path / "p2.png"
    img.write_bytes(tiny_png("p2"))
    buffer = monitor.update_buffer(MemoryBuffer(), PanelImage(panel_index=1, artifact_path=str(img)))
    assert len(buffer.entries) == 1
    canon = {p.canonical() for p in buffer.entries[0].predicates}
    assert "pig1|location|wooden house" in canon


def test_update_buffer_caption_failure_flagged(tmp_path):
    backend = ScriptedBackend(chat=[], caption=BackendError("caption model down"))
    bs = BackendSet(roles={"chat": backend, "caption": backend}, model_ids={})
    monitor = LocalMonitor(bs)
    img = tmp_path / "p1.png"
    img.write_bytes(tiny_png("p1"))
    buffer = monitor.update_buffer(MemoryBuffer(), PanelImage(panel_index=1, artifact_path=str(img)))
    assert buffer.entries[0].flags == ("caption_failed",)
    assert buffer.entries[0].caption == "(caption unavailable)"


def test_update_buffer_rejects_non_increasing_panels(tmp_path):
    monitor = monitor_with(caption="c")
    img = tmp_path / "p.png"
    img.write_bytes(tiny_png("p"))
    buffer = monitor.update_buffer(MemoryBuffer(), PanelImage(panel_index=2, artifact_path=str(img)))
    with pytest.raises(MonitorError, match="does not advance"):
        monitor.update_buffer(buffer, PanelImage(panel_index=2, artifact_path=str(img)))


def test_budget_summarizes_oldest_not_drops(tmp_path):
    long_caption = "The hero walks through the meadow carefully. " + "Detail sentence follows here. " * 20
    monitor = monitor_with(caption=long_caption)
    buffer = MemoryBuffer(max_chars=400)
    for i in range(1, 5):
        img = tmp_path / f"p{i}.png"
        img.write_bytes(tiny_png(f"p{i}"))
        buffer = monitor.update_buffer(buffer, PanelImage(panel_index=i, artifact_path=str(img)))
    assert len(buffer.entries) == 4  # entry count unchanged, nothing dropped
    assert len(render_context(buffer)) <= 400 or all(e.summarized for e in buffer.entries)
    # older entries summarized first; summaries precede full captions
    states = [e.summarized for e in buffer.entries]
    assert states == sorted(states, reverse=True)
    assert states[0] is True


def test_summarize_entry_first_sentence_plus_facts():
    entry = MemoryEntry(
        panel_index=3,
        caption="Wolf is inside the chimney. The pigs watch anxiously from below.",
        predicates=tuple(),
        summary="",
    )
    assert summarize_entry(entry) == "Wolf is inside the chimney."
