"""Automatic evaluation of a finished run directory.

Three visual-logic metrics (instance consistency, narrative causality as a
weighted per-event score, story readability) and three perceptual metrics
(aesthetic quality, style consistency, character expressiveness). Metrics
whose backend is not configured come back as None with a flag, never as a
zero that would corrupt rankings.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import rubrics
from .backends.base import BackendError, BackendRequest, BackendSet, Capability, ImageRef, TraceSink, embed_batch
from .domain import StoryRecord
from .parsing import ParseError, parse_float_reply, parse_rating_reply, parse_rubric_subscores, parse_yes_no

log = logging.getLogger(__name__)

CAUSAL_SCORE_REPRODUCE_TOL = 1e-9


class EvalError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class EventScore:
    event_index: int
    mode: str  # "vqa_binary" | "rubric_0_1"
    value: float
    question: str
    answer: str
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.mode == "vqa_binary" and self.value not in (0.0, 1.0):
            raise EvalError("narrative_causality", f"vqa_binary event score must be 0 or 1, got {self.value}")
        if not (0.0 <= self.value <= 1.0):
            raise EvalError("narrative_causality", f"event score {self.value} outside [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "event_index": self.event_index,
            "mode": self.mode,
            "value": self.value,
            "question": self.question,
            "answer": self.answer,
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class EvalReport:
    story_id: int
    method_label: str
    instance_consistency: float | None = None
    narrative_causality: float | None = None
    story_readability: float | None = None
    aesthetic_quality: float | None = None
    style_consistency: float | None = None
    character_expressiveness: float | None = None
    event_scores: tuple[EventScore, ...] = ()
    event_weights: tuple[float, ...] = ()
    justifications: tuple[tuple[str, str], ...] = ()
    inferred_story: str = ""
    causality_mode: str = "vqa_binary"
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for name, value, lo, hi in (
            ("instance_consistency", self.instance_consistency, 1.0, 5.0),
            ("narrative_causality", self.narrative_causality, 0.0, 1.0),
            ("story_readability", self.story_readability, 0.0, 1.0),
            ("style_consistency", self.style_consistency, -1.0, 1.0),
            ("character_expressiveness", self.character_expressiveness, 1.0, 5.0),
        ):
            if value is not None and not (lo <= value <= hi):
                raise EvalError(name, f"{name} = {value} outside [{lo}, {hi}]")
        if self.event_scores:
            recomputed = sum(s.value * w for s, w in zip(self.event_scores, self.event_weights))
            if self.narrative_causality is not None and abs(recomputed - self.narrative_causality) > CAUSAL_SCORE_REPRODUCE_TOL:
                raise EvalError(
                    "narrative_causality",
                    f"stored score {self.narrative_causality} does not reproduce from event scores ({recomputed})",
                )

    METRIC_COLUMNS = (
        "instance_consistency",
        "narrative_causality",
        "story_readability",
        "aesthetic_quality",
        "style_consistency",
        "character_expressiveness",
    )

    def to_dict(self) -> dict[str, Any]:
        return {
            "story_id": self.story_id,
            "method_label": self.method_label,
            "instance_consistency": self.instance_consistency,
            "narrative_causality": self.narrative_causality,
            "story_readability": self.story_readability,
            "aesthetic_quality": self.aesthetic_quality,
            "style_consistency": self.style_consistency,
            "character_expressiveness": self.character_expressiveness,
            "event_scores": [s.to_dict() for s in self.event_scores],
            "event_weights": list(self.event_weights),
            "justifications": {k: v for k, v in self.justifications},
            "inferred_story": self.inferred_story,
            "causality_mode": self.causality_mode,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvalReport":
        return cls(
            story_id=int(d["story_id"]),
            method_label=str(d.get("method_label", "")),
            instance_consistency=d.get("instance_consistency"),
            narrative_causality=d.get("narrative_causality"),
            story_readability=d.get("story_readability"),
            aesthetic_quality=d.get("aesthetic_quality"),
            style_consistency=d.get("style_consistency"),
            character_expressiveness=d.get("character_expressiveness"),
            event_scores=tuple(
                EventScore(
                    event_index=int(s["event_index"]),
                    mode=str(s["mode"]),
                    value=float(s["value"]),
                    question=str(s.get("question", "")),
                    answer=str(s.get("answer", "")),
                    flags=tuple(s.get("flags", [])),
                )
                for s in d.get("event_scores", [])
            ),
            event_weights=tuple(float(w) for w in d.get("event_weights", [])),
            justifications=tuple(sorted((k, str(v)) for k, v in d.get("justifications", {}).items())),
            inferred_story=str(d.get("inferred_story", "")),
            causality_mode=str(d.get("causality_mode", "vqa_binary")),
            flags=tuple(d.get("flags", [])),
        )


def final_images(run_dir: str | Path) -> list[Path]:
    final = Path(run_dir) / "final"
    if not final.is_dir():
        raise EvalError("run", f"{run_dir} has no final/ directory")

    def panel_no(p: Path) -> int:
        return int("".join(ch for ch in p.stem if ch.isdigit()) or 0)

    return sorted((p for p in final.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")), key=panel_no)


def _rate_with_rubric(
    stage: str,
    prompt: str,
    story_text: str,
    images: Sequence[Path],
    backends: BackendSet,
    trace: TraceSink | None,
) -> tuple[float, str]:
    backend = backends.require("rating")
    full = f"{prompt}\n\nStory: {story_text}"
    refs = tuple(ImageRef.from_path(p) for p in images)
    last_error = ""
    for attempt in range(2):
        text = full if attempt == 0 else full + f"\n\nYour previous reply was rejected: {last_error}. Start your reply with the 1-5 rating."
        req = BackendRequest(capability=Capability.CHAT, model_id=backends.model_id("rating"), prompt=text, images=refs)
        reply = backend.invoke(req, policy=backends.policy("rating"), trace=trace).text or ""
        try:
            return parse_rating_reply(reply), reply
        except ParseError as exc:
            last_error = str(exc)
    raise EvalError(stage, f"unparseable rating after re-prompt: {last_error}")


def eval_instance_consistency(
    run_dir: str | Path, story: StoryRecord, backends: BackendSet, trace: TraceSink | None = None
) -> tuple[float, str]:
    images = final_images(run_dir)
    if not images:
        raise EvalError("instance_consistency", "no final images to rate")
    return _rate_with_rubric(
        "instance_consistency", rubrics.INSTANCE_CONSISTENCY_PROMPT, story.story_outline, images, backends, trace
    )


def eval_character_expressiveness(
    run_dir: str | Path, story: StoryRecord, backends: BackendSet, trace: TraceSink | None = None
) -> tuple[float, str]:
    images = final_images(run_dir)
    if not images:
        raise EvalError("character_expressiveness", "no final images to rate")
    return _rate_with_rubric(
        "character_expressiveness", rubrics.CHARACTER_EXPRESSIVENESS_PROMPT, story.story_outline, images, backends, trace
    )


def eval_narrative_causality(
    run_dir: str | Path,
    story: StoryRecord,
    backends: BackendSet,
    mode: str = "vqa_binary",
    trace: TraceSink | None = None,
) -> tuple[float, list[EventScore]]:
    """One question per annotated event; weighted sum of per-event scores."""
    if mode not in ("vqa_binary", "rubric_0_1"):
        raise EvalError("narrative_causality", f"unknown mode {mode!r}")
    images = final_images(run_dir)
    if not images:
        raise EvalError("narrative_causality", "no final images")
    refs = tuple(ImageRef.from_path(p) for p in images)
    backend = backends.require("vqa" if mode == "vqa_binary" else "rating")
    role = "vqa" if mode == "vqa_binary" else "rating"
    scores: list[EventScore] = []
    for i, ev in enumerate(story.causal_event_chain, start=1):
        if mode == "vqa_binary":
            question = rubrics.vqa_question(ev.action, ev.result)
            answer = ""
            verdict: bool | None = None
            for attempt in range(2):
                prompt = question if attempt == 0 else question + "\nAnswer strictly Yes or No."
                req = BackendRequest(
                    capability=Capability.VQA, model_id=backends.model_id(role), prompt=prompt, images=refs
                )
                answer = backend.invoke(req, policy=backends.policy(role), trace=trace).text or ""
                verdict = parse_yes_no(answer)
                if verdict is not None:
                    break
            if verdict is None:
                scores.append(EventScore(i, mode, 0.0, question, answer, flags=("unparseable-answer",)))
            else:
                scores.append(EventScore(i, mode, 1.0 if verdict else 0.0, question, answer))
        else:
            question = rubrics.RUBRIC_EVENT_PROMPT.format(action=ev.action, result=ev.result)
            req = BackendRequest(capability=Capability.CHAT, model_id=backends.model_id(role), prompt=question, images=refs)
            answer = backend.invoke(req, policy=backends.policy(role), trace=trace).text or ""
            try:
                value = parse_rubric_subscores(answer)
                scores.append(EventScore(i, mode, value, question, answer))
            except ParseError:
                scores.append(EventScore(i, mode, 0.0, question, answer, flags=("unparseable-answer",)))
    total = causal_score([s.value for s in scores], [e.weight for e in story.causal_event_chain])
    return total, scores


def causal_score(event_scores: Sequence[float], weights: Sequence[float]) -> float:
    """Weighted sum of per-event scores; the narrative-causality aggregate."""
    if len(event_scores) != len(weights):
        raise EvalError("narrative_causality", "event scores and weights differ in length")
    return float(sum(s * w for s, w in zip(event_scores, weights)))


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    va = np.asarray(a, dtype=float)
    vb = np.asarray(b, dtype=float)
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise EvalError("embedding", "zero-norm embedding")
    return float(np.dot(va, vb) / (na * nb))


def eval_story_readability(
    run_dir: str | Path, story: StoryRecord, backends: BackendSet, trace: TraceSink | None = None
) -> tuple[float, str]:
    """Caption images, infer the story, compare to ground truth.

    The cosine similarity in [-1, 1] is mapped to [0, 1] via (x + 1) / 2.
    """
    images = final_images(run_dir)
    if not images:
        raise EvalError("story_readability", "no final images")
    caption_backend = backends.require("caption")
    captions = []
    for p in images:
        req = BackendRequest(
            capability=Capability.CAPTION,
            model_id=backends.model_id("caption"),
            prompt="Describe this story panel in one or two sentences.",
            images=(ImageRef.from_path(p),),
        )
        try:
            captions.append(caption_backend.invoke(req, policy=backends.policy("caption"), trace=trace).text or "")
        except BackendError as exc:
            raise EvalError("story_readability", f"caption stage failed: {exc}") from exc
    prompt = rubrics.READABILITY_INFERENCE_PROMPT.format(
        characters=", ".join(story.character_list),
        captions="\n".join(f"{i}. {c}" for i, c in enumerate(captions, start=1)),
    )
    chat = backends.require("chat")
    try:
        inferred = chat.invoke(
            BackendRequest(capability=Capability.CHAT, model_id=backends.model_id("chat"), prompt=prompt),
            policy=backends.policy("chat"),
            trace=trace,
        ).text or ""
    except BackendError as exc:
        raise EvalError("story_readability", f"inference stage failed: {exc}") from exc
    embedder = backends.require("embed")
    try:
        vecs = embed_batch(embedder, [inferred, story.story_outline], backends.model_id("embed"), policy=backends.policy("embed"), trace=trace)
    except BackendError as exc:
        raise EvalError("story_readability", f"embedding stage failed: {exc}") from exc
    sim = cosine(vecs[0], vecs[1])
    return (sim + 1.0) / 2.0, inferred


def eval_style_consistency(run_dir: str | Path, backends: BackendSet, trace: TraceSink | None = None) -> float:
    """Mean pairwise cosine over image embeddings; needs >= 2 images."""
    images = final_images(run_dir)
    if len(images) < 2:
        raise EvalError("style_consistency", f"need at least 2 final images, found {len(images)}")
    embedder = backends.require("embed")
    refs = [ImageRef.from_path(p) for p in images]
    vecs = embed_batch(embedder, refs, backends.model_id("embed"), policy=backends.policy("embed"), trace=trace)
    sims = [cosine(vecs[i], vecs[j]) for i in range(len(vecs)) for j in range(i + 1, len(vecs))]
    return float(sum(sims) / len(sims))


def eval_aesthetic(run_dir: str | Path, backends: BackendSet, trace: TraceSink | None = None) -> float:
    """Mean per-image preference score from the configured scoring service."""
    images = final_images(run_dir)
    if not images:
        raise EvalError("aesthetic_quality", "no final images")
    backend = backends.get("aesthetic")
    if backend is None:
        raise EvalError("aesthetic_quality", "no aesthetic scoring backend configured")
    per_image = []
    for p in images:
        req = BackendRequest(
            capability=Capability.VQA,
            model_id=backends.model_id("aesthetic"),
            prompt=rubrics.AESTHETIC_PROMPT,
            images=(ImageRef.from_path(p),),
        )
        reply = backend.invoke(req, policy=backends.policy("aesthetic"), trace=trace).text or ""
        try:
            per_image.append(parse_float_reply(reply))
        except ParseError as exc:
            raise EvalError("aesthetic_quality", f"unparseable score reply: {reply!r}") from exc
    return float(sum(per_image) / len(per_image))


def evaluate_run(
    run_dir: str | Path,
    story: StoryRecord,
    backends: BackendSet,
    method_label: str = "unknown",
    causality_mode: str = "vqa_binary",
    trace: TraceSink | None = None,
) -> EvalReport:
    """Compose all six metrics; absent backends yield absent metrics."""
    flags: list[str] = []
    justifications: dict[str, str] = {}

    def absent(name: str, reason: str) -> None:
        flags.append(f"{name}: {reason}")
        log.warning("metric %s absent: %s", name, reason)

    instance = expressiveness = None
    if backends.get("rating") is not None:
        value, reply = eval_instance_consistency(run_dir, story, backends, trace)
        instance, justifications["instance_consistency"] = value, reply
        value, reply = eval_character_expressiveness(run_dir, story, backends, trace)
        expressiveness, justifications["character_expressiveness"] = value, reply
    else:
        absent("instance_consistency", "no rating backend")
        absent("character_expressiveness", "no rating backend")

    causality = None
    event_scores: list[EventScore] = []
    if backends.get("vqa" if causality_mode == "vqa_binary" else "rating") is not None:
        causality, event_scores = eval_narrative_causality(run_dir, story, backends, mode=causality_mode, trace=trace)
    else:
        absent("narrative_causality", "no vqa backend")

    readability = None
    inferred = ""
    if backends.get("embed") is not None and backends.get("caption") is not None and backends.get("chat") is not None:
        readability, inferred = eval_story_readability(run_dir, story, backends, trace)
    else:
        absent("story_readability", "needs caption, chat and embed backends")

    style = None
    if backends.get("embed") is not None:
        style = eval_style_consistency(run_dir, backends, trace)
    else:
        absent("style_consistency", "no embed backend")

    aesthetic = None
    if backends.get("aesthetic") is not None:
        aesthetic = eval_aesthetic(run_dir, backends, trace)
    else:
        absent("aesthetic_quality", "no aesthetic scoring backend")

    return EvalReport(
        story_id=story.id,
        method_label=method_label,
        instance_consistency=instance,
        narrative_causality=causality,
        story_readability=readability,
        aesthetic_quality=aesthetic,
        style_consistency=style,
        character_expressiveness=expressiveness,
        event_scores=tuple(event_scores),
        event_weights=tuple(e.weight for e in story.causal_event_chain) if event_scores else (),
        justifications=tuple(sorted(justifications.items())),
        inferred_story=inferred,
        causality_mode=causality_mode,
        flags=tuple(flags),
    )


def write_report(report: EvalReport, run_dir: str | Path) -> Path:
    path = Path(run_dir) / "eval_report.json"
    path.write_text(json.dumps(report.to_dict(), indent=2, ensure_ascii=False), encoding="utf-8")
    return path


def summary_csv(reports: Sequence[EvalReport]) -> str:
    """Methods x metrics table, metric columns in the benchmark's order."""
    by_method: dict[str, list[EvalReport]] = {}
    for r in reports:
        by_method.setdefault(r.method_label, []).append(r)
    lines = ["method," + ",".join(EvalReport.METRIC_COLUMNS)]
    for method in sorted(by_method):
        cells = [method]
        for col in EvalReport.METRIC_COLUMNS:
            values = [getattr(r, col) for r in by_method[method] if getattr(r, col) is not None]
            cells.append(f"{sum(values) / len(values):.4f}" if values else "")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
