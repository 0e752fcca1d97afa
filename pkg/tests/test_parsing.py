from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from storylogic import rubrics
from storylogic.domain import StatePredicate
from storylogic.parsing import (
    ParseError,
    parse_entity_output,
    parse_events_output,
    parse_float_reply,
    parse_rating_reply,
    parse_rubric_subscores,
    parse_score_reply,
    parse_shots_output,
    parse_yes_no,
    predicates_from_text,
    uncovered_events,
)

from helpers import hero_entities


# ---------------------------------------------------------------------------
# entity output
# ---------------------------------------------------------------------------

def test_scenecrafter_markdown_fixture(pigs_scenecrafter):
    es = parse_entity_output(pigs_scenecrafter)
    assert [c.name for c in es.characters] == ["Pig1", "Pig2", "Pig3", "Mother Pig", "Wolf"]
    assert len(es.objects) == 4
    assert len(es.scenes) == 5
    assert es.characters[0].description.startswith("A small, cheerful piglet")
    assert es.resolve("wolf").name == "Wolf"


def test_scenecrafter_json_variant():
    reply = """Here you go:
```json
{"characters": [{"name": "Crow", "description": "a glossy black crow"}],
 "objects": [{"name": "Bottle", "description": "tall glass bottle"}],
 "scenes": [{"name": "Parched land", "description": "dry cracked earth"}]}
```"""
    es = parse_entity_output(reply)
    assert [c.name for c in es.characters] == ["Crow"]
    assert es.objects[0].name == "Bottle"


def test_scenecrafter_missing_characters_is_error():
    reply = "Key Objects:\n- Bottle: tall glass bottle"
    with pytest.raises(ParseError, match="no characters"):
        parse_entity_output(reply)


def test_scenecrafter_single_character_accepted():
    reply = "Characters:\n- Crow: a glossy black crow"
    es = parse_entity_output(reply)
    assert len(es.characters) == 1
    assert es.objects == () and es.scenes == ()


def test_scenecrafter_bold_headers_and_bullets():
    reply = """**Characters:**
* **Crow:** a glossy black crow
**Scene Locations:**
* **Desert:** dry land under a hot sun"""
    es = parse_entity_output(reply)
    assert es.characters[0].name == "Crow"
    assert es.scenes[0].name == "Desert"


# ---------------------------------------------------------------------------
# event output
# ---------------------------------------------------------------------------

def test_logicminer_markdown_fixture(pigs_logicminer):
    events = parse_events_output(pigs_logicminer, hero_entities())
    assert len(events) == 9
    first = events[0]
    assert (first.actor, first.action, first.target, first.result) == (
        "Pig1", "buys", "straw", "Pig1 owns building material"
    )
    # five-element tuple: the result absorbs the tail
    assert events[2].result == "House destroyed, Pig1 is homeless"
    # compound actors survive
    assert events[5].actor == "Pig1 and Pig2"
    # preconditions/effects became predicates, never dropped
    assert StatePredicate("Pig1", "owns", "straw").canonical() in {p.canonical() for p in events[1].preconditions}
    assert StatePredicate("wolf", "location", "chimney").canonical() in {p.canonical() for p in events[8].preconditions}
    assert all(e.effects for e in events)
    assert [e.index for e in events] == list(range(1, 10))


def test_logicminer_json_variant_resolves_names():
    entities = hero_entities()
    reply = """```json
[{"actor": "hero ", "action": "lifts", "target": "STONE", "result": "stone moved",
  "preconditions": ["Hero is near the stone"], "effects": ["Stone is in the air"]}]
```"""
    events = parse_events_output(reply, entities)
    assert events[0].actor == "Hero"  # canonical match restores stored spelling
    assert events[0].target == "Stone"
    assert events[0].effects[0].canonical() == "stone|location|air"


def test_logicminer_empty_is_error():
    with pytest.raises(ParseError, match="empty event list"):
        parse_events_output("no events here, sorry", hero_entities())


def test_logicminer_structured_predicates_accepted():
    reply = """```json
[{"actor": "Hero", "action": "waits", "target": "Stone", "result": "nothing",
  "effects": [{"entity": "hero", "attribute": "mood", "value": "patient"}]}]
```"""
    events = parse_events_output(reply, hero_entities())
    assert events[0].effects[0] == StatePredicate("hero", "mood", "patient")


# ---------------------------------------------------------------------------
# predicate extraction rules
# ---------------------------------------------------------------------------

@pytest.mark.parametrize(
    "text,expected",
    [
        ("Pig1 has straw.", "pig1|has|straw"),
        ("Pig1 owns straw.", "pig1|owns|straw"),
        ("Straw house appears in the scene.", "straw house|exists|yes"),
        ("Straw house exists.", "straw house|exists|yes"),
        ("Wolf is inside the chimney.", "wolf|location|chimney"),
        ("All three pigs are together in brick house.", "all three pigs|location|brick house"),
        ("Straw house is destroyed.", "straw house|state|destroyed"),
        ("House destroyed.", "house|state|destroyed"),
        ("Trap for the wolf is ready.", "trap for the wolf|state|ready"),
    ],
)
def test_predicate_extraction_patterns(text, expected):
    preds = predicates_from_text(text)
    assert expected in {p.canonical() for p in preds}


def test_predicate_extraction_fallback_note():
    preds = predicates_from_text("Two pigs run away.", default_entity="Wolf")
    assert preds == [StatePredicate("Wolf", "note", "Two pigs run away")]


def test_predicate_extraction_multi_sentence():
    preds = predicates_from_text("Wolf is in chimney. Pot is boiling.")
    canon = {p.canonical() for p in preds}
    assert canon == {"wolf|location|chimney", "pot|state|boiling"}


# ---------------------------------------------------------------------------
# shot output
# ---------------------------------------------------------------------------

def test_shotplanner_markdown_fixture(pigs_shotplanner, pigs_scenecrafter):
    entities = parse_entity_output(pigs_scenecrafter)
    shots, coverage = parse_shots_output(pigs_shotplanner, entities, n_events=9)
    assert len(shots) == 2
    first = shots[0]
    assert first.camera.shot_type == "medium"
    assert first.camera.angle == "eye_level"
    assert first.rendering_prompt.startswith("A cheerful pig building a straw house")
    assert "Pig1" in first.characters_present
    second = shots[1]
    assert second.camera.shot_type == "wide"
    assert second.camera.angle == "low"
    assert "Wolf" in second.characters_present
    # default coverage: last shot absorbs the tail, so all 9 events covered
    assert coverage[1] == (1,)
    assert coverage[2] == tuple(range(2, 10))
    assert uncovered_events(coverage, 9) == []


def test_shotplanner_json_with_explicit_events():
    entities = hero_entities()
    reply = """```json
[{"scene_description": "hero lifts the stone", "characters": ["Hero"], "actions": "lifting",
  "objects": ["Stone"], "spatial_layout": "center", "camera": {"shot_type": "close-up", "angle": "high angle", "perspective": "bird's eye"},
  "rendering_prompt": "hero lifting a stone, watercolor", "events": [1, 2]},
 {"scene_description": "hero rests", "characters": ["Hero"], "actions": "resting",
  "objects": [], "spatial_layout": "left", "camera": {"shot_type": "over-the-shoulder", "angle": "eye level", "perspective": "third person"},
  "rendering_prompt": "hero resting in a meadow", "events": []}]
```"""
    shots, coverage = parse_shots_output(reply, entities, n_events=3)
    assert shots[0].camera.shot_type == "close_up"
    assert shots[0].camera.angle == "high"
    assert shots[1].camera.shot_type == "over_shoulder"
    assert coverage == {1: (1, 2), 2: ()}
    assert uncovered_events(coverage, 3) == [3]


def test_shotplanner_unresolvable_names_filtered():
    entities = hero_entities()
    reply = """```json
[{"scene_description": "s", "characters": ["Hero", "Stranger"], "actions": "", "objects": [],
  "spatial_layout": "", "camera": {}, "rendering_prompt": "p"}]
```"""
    shots, _ = parse_shots_output(reply, entities, n_events=1)
    assert shots[0].characters_present == ("Hero",)


def test_shotplanner_missing_prompt_is_parse_error():
    reply = "Shot 1:\n- Scene Description: something happens\n"
    with pytest.raises(ParseError, match="rendering_prompt"):
        parse_shots_output(reply, hero_entities(), n_events=1)


def test_shotplanner_no_shots_is_error():
    with pytest.raises(ParseError, match="no shots"):
        parse_shots_output("there are no shots in this reply", hero_entities(), n_events=1)


def test_shotplanner_one_event_covered_by_one_shot():
    reply = 'Shot 1:\n- Scene Description: x\n- Rendering Prompt: "p"\n'
    shots, coverage = parse_shots_output(reply, hero_entities(), n_events=1)
    assert len(shots) >= 1
    assert uncovered_events(coverage, 1) == []


# ---------------------------------------------------------------------------
# scored replies
# ---------------------------------------------------------------------------

def test_score_reply_appendix_shape():
    reply = (
        "Score: 0.8\n"
        "Justification: The scene is mostly logical. Pig2 may not yet be aware of the wolf's actions, "
        "which explains the relaxed demeanor."
    )
    value, justification = parse_score_reply(reply)
    assert value == 0.8
    assert justification.startswith("The scene is mostly logical.")


def test_score_reply_out_of_range_is_error():
    with pytest.raises(ParseError, match="out of range"):
        parse_score_reply("Score: 1.7")
    with pytest.raises(ParseError, match="out of range"):
        parse_score_reply("Score: -0.2")


def test_score_reply_missing_line_is_error():
    with pytest.raises(ParseError, match="no 'Score"):
        parse_score_reply("looks plausible to me!")


@given(
    value=st.integers(min_value=0, max_value=100),
    leading=st.sampled_from(["", " ", "\t", "  "]),
    casing=st.sampled_from(["Score", "score", "SCORE", "sCoRe"]),
    gap=st.sampled_from(["", " ", "  "]),
    prefix_lines=st.integers(min_value=0, max_value=2),
)
def test_score_reply_grammar_fuzz(value, leading, casing, gap, prefix_lines):
    v = value / 100.0
    noise = "Commentary line.\n" * prefix_lines
    reply = f"{noise}{leading}{casing}{gap}: {v}\nJustification: ok"
    parsed, justification = parse_score_reply(reply)
    assert parsed == pytest.approx(v)
    assert justification == "ok"


def test_rating_reply_variants():
    assert parse_rating_reply("5 - Excellent: Fully consistent; characters stay stable.") == 5.0
    assert parse_rating_reply("3") == 3.0
    assert parse_rating_reply("Score: 4") == 4.0
    assert parse_rating_reply("4.5 - nearly perfect") == 4.5
    assert parse_rating_reply("\n  2 - Fair\nmore text") == 2.0


def test_rating_reply_rejects_garbage():
    with pytest.raises(ParseError):
        parse_rating_reply("great!")
    with pytest.raises(ParseError):
        parse_rating_reply("7 - off the scale")


def test_rating_parser_accepts_all_rubric_scale_lines():
    for rubric in (
        rubrics.INSTANCE_CONSISTENCY_PROMPT,
        rubrics.CHARACTER_EXPRESSIVENESS_PROMPT,
        *rubrics.HUMAN_RUBRICS.values(),
    ):
        for line in rubric.splitlines():
            stripped = line.strip()
            if stripped[:1].isdigit() and " - " in stripped:
                expected = float(stripped.split(" - ")[0])
                assert parse_rating_reply(stripped) == expected, stripped


def test_yes_no_parsing():
    assert parse_yes_no("Yes") is True
    assert parse_yes_no(" yes, clearly.") is True
    assert parse_yes_no("No.") is False
    assert parse_yes_no("maybe") is None


def test_float_reply_and_subscores():
    assert parse_float_reply("the score is 0.3088 overall") == 0.3088
    with pytest.raises(ParseError):
        parse_float_reply("no numbers")
    value = parse_rubric_subscores("clarity: 0.9\ncoherence: 0.6\nplausibility: 0.9")
    assert value == pytest.approx(0.8)
    with pytest.raises(ParseError, match="missing rubric"):
        parse_rubric_subscores("clarity: 0.9")
    with pytest.raises(ParseError, match="out of range"):
        parse_rubric_subscores("clarity: 1.9\ncoherence: 0.6\nplausibility: 0.9")
