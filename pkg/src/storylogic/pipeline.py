"""Per-panel generation loop: draft, score, branch, refine, accept.

Each scored value v picks exactly one branch: regenerate when v < tau1,
verify-and-edit when tau1 <= v < tau2, accept when v >= tau2. Regeneration
and editing are budgeted; an exhausted budget escalates (regenerate ->
edit -> accept_with_flag) so a run always terminates with every panel
accepted, possibly flagged. Every decision is appended to trace.jsonl and
runs are resumable from the first non-accepted panel.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

from .backends.base import BackendRequest, BackendSet, Capability, ImageRef
from .causal import CausalGraph, StateRecorder, apply_effects, build_graph, verify_panel
from .domain import ImageOrigin, PanelImage, PanelSpec, PlanBundle, StoryRecord
from .monitor import LocalMonitor, MemoryBuffer, MemoryEntry, summarize_entry
from .parsing import predicates_from_text
from .planner import StoryPlanner
from .templates import load_template

log = logging.getLogger(__name__)

PANEL_ACTIONS = ("draft", "scored", "regenerated", "verified", "edited", "accepted", "accepted_with_flag")
TERMINAL_ACTIONS = ("accepted", "accepted_with_flag")


class PipelineError(Exception):
    pass


class TraceError(PipelineError):
    pass


@dataclass(frozen=True)
class RefinementPolicy:
    tau1: float = 0.4
    tau2: float = 0.7
    max_regenerations: int = 2
    max_edits: int = 2

    def __post_init__(self) -> None:
        if not (0.0 <= self.tau1 < self.tau2 <= 1.0):
            raise ValueError(f"need 0 <= tau1 < tau2 <= 1, got tau1={self.tau1}, tau2={self.tau2}")
        if self.max_regenerations < 0 or self.max_edits < 0:
            raise ValueError("retry budgets must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "tau1": self.tau1,
            "tau2": self.tau2,
            "max_regenerations": self.max_regenerations,
            "max_edits": self.max_edits,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RefinementPolicy":
        return cls(
            tau1=float(d.get("tau1", 0.4)),
            tau2=float(d.get("tau2", 0.7)),
            max_regenerations=int(d.get("max_regenerations", 2)),
            max_edits=int(d.get("max_edits", 2)),
        )


class TraceWriter:
    """Append-only JSONL trace; each line is flushed and fsynced."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.events: list[dict[str, Any]] = []
        if self.path.exists():
            self.events = read_trace(self.path)
            self._drop_truncated_tail()
        self._fh = self.path.open("a", encoding="utf-8")

    def _drop_truncated_tail(self) -> None:
        # a partial final line would corrupt the next append
        raw = self.path.read_bytes()
        if raw and not raw.endswith(b"\n"):
            keep = raw.rfind(b"\n") + 1
            with self.path.open("r+b") as f:
                f.truncate(keep)

    def append(self, event: dict[str, Any]) -> None:
        event = dict(event)
        event.setdefault("timestamp", datetime.now(timezone.utc).isoformat())
        self.events.append(event)
        self._fh.write(json.dumps(event, ensure_ascii=False) + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()


def read_trace(path: str | Path) -> list[dict[str, Any]]:
    """Load trace events; a truncated final line (mid-write crash) is
    dropped with a warning, any interior damage is an error."""
    path = Path(path)
    raw = path.read_text(encoding="utf-8")
    lines = raw.split("\n")
    trailing_complete = raw.endswith("\n")
    events: list[dict[str, Any]] = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        is_final = i == len(lines) - 1
        try:
            event = json.loads(line)
        except json.JSONDecodeError as exc:
            if is_final and not trailing_complete:
                log.warning("%s: dropping truncated final trace line", path)
                continue
            raise TraceError(f"{path}: invalid trace event at line {i + 1}: {exc.msg}") from exc
        if not isinstance(event, dict) or "kind" not in event:
            raise TraceError(f"{path}: invalid trace event at line {i + 1}: not an event object")
        events.append(event)
    _validate_panel_order(events, str(path))
    return events


def _validate_panel_order(events: list[dict[str, Any]], origin: str) -> None:
    current = 0  # panel in progress; panels run strictly in index order
    accepted_up_to = 0  # accepted panels must form the prefix 1..k
    for i, e in enumerate(events):
        if e.get("kind") != "panel":
            continue
        panel = int(e.get("panel", -1))
        action = e.get("action")
        if action not in PANEL_ACTIONS:
            raise TraceError(f"{origin}: event {i + 1}: unknown panel action {action!r}")
        if panel == current + 1:
            if current != accepted_up_to:
                raise TraceError(
                    f"{origin}: event {i + 1}: panel {panel} starts before panel {current} was accepted"
                )
            current = panel
        elif panel != current:
            raise TraceError(f"{origin}: event {i + 1}: panel {panel} out of order (processing panel {current})")
        if action in TERMINAL_ACTIONS:
            if panel != accepted_up_to + 1:
                raise TraceError(
                    f"{origin}: event {i + 1}: panel {panel} accepted out of order (next should be {accepted_up_to + 1})"
                )
            accepted_up_to = panel


@dataclass(frozen=True)
class RunResult:
    run_id: str
    images: tuple[PanelImage, ...]
    plan: PlanBundle
    trace_events: tuple[Mapping[str, Any], ...]
    flags: tuple[str, ...]
    out_dir: str


def _config_hash(backends: BackendSet, policy: RefinementPolicy) -> str:
    blob = json.dumps({"models": dict(sorted(backends.model_ids.items())), "policy": policy.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _image_ext(media_type: str | None) -> str:
    return ".jpg" if media_type == "image/jpeg" else ".png"


@dataclass
class _RunContext:
    story: StoryRecord | None
    policy: RefinementPolicy
    backends: BackendSet
    out_dir: Path
    plan: PlanBundle
    graph: CausalGraph
    recorder: StateRecorder
    monitor: LocalMonitor
    buffer: MemoryBuffer
    trace: TraceWriter
    use_backend_instructions: bool = True
    flags: list[str] = field(default_factory=list)

    def panel_event(self, panel: int, action: str, **extra: Any) -> None:
        self.trace.append({"kind": "panel", "panel": panel, "action": action, **extra})

    def _generate(self, panel: PanelSpec, revision: int, origin: ImageOrigin, prompt: str) -> PanelImage:
        backend = self.backends.require("generate_image")
        req = BackendRequest(
            capability=Capability.GENERATE_IMAGE,
            model_id=self.backends.model_id("generate_image"),
            prompt=prompt,
        )
        resp = backend.invoke(req, policy=self.backends.policy("generate_image"), trace=self.trace.append)
        path = self.out_dir / "panels" / f"p{panel.index}_r{revision}{_image_ext(resp.media_type)}"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(resp.image_bytes or b"")
        return PanelImage(panel_index=panel.index, artifact_path=str(path), revision=revision, origin=origin)

    def _edit(self, panel: PanelSpec, image: PanelImage, revision: int, instruction: str) -> PanelImage:
        backend = self.backends.require("edit_image")
        req = BackendRequest(
            capability=Capability.EDIT_IMAGE,
            model_id=self.backends.model_id("edit_image"),
            prompt=instruction,
            images=(ImageRef.from_path(image.artifact_path),),
        )
        resp = backend.invoke(req, policy=self.backends.policy("edit_image"), trace=self.trace.append)
        path = self.out_dir / "panels" / f"p{panel.index}_r{revision}{_image_ext(resp.media_type)}"
        path.write_bytes(resp.image_bytes or b"")
        return PanelImage(panel_index=panel.index, artifact_path=str(path), revision=revision, origin=ImageOrigin.EDITED)

    def _instruction_renderer(self):
        if not self.use_backend_instructions or self.backends.get("chat") is None:
            return None
        template = load_template("refinement")
        chat = self.backends.require("chat")

        def render(context: Mapping[str, str]) -> str:
            req = BackendRequest(
                capability=Capability.CHAT,
                model_id=self.backends.model_id("chat"),
                prompt=template.render(**context),
            )
            return chat.invoke(req, policy=self.backends.policy("chat"), trace=self.trace.append).text or ""

        return render

    def process_panel(self, panel: PanelSpec) -> PanelImage:
        covered = self.plan.events_for_panel(panel.index)
        image = self._generate(panel, 0, ImageOrigin.GENERATED, panel.rendering_prompt)
        self.panel_event(panel.index, "draft", revision=0)
        regen_left = self.policy.max_regenerations
        edit_left = self.policy.max_edits
        renderer = self._instruction_renderer()
        while True:
            caption = self.monitor.caption_image(image)
            score = self.monitor.score_panel(image, self.buffer, caption=caption)
            self.panel_event(panel.index, "scored", psi=score.value, revision=image.revision)
            if score.value >= self.policy.tau2:
                return self._accept(panel, image, caption, flag=None)
            if score.value < self.policy.tau1 and regen_left > 0:
                regen_left -= 1
                prompt = panel.rendering_prompt
                if score.justification:
                    prompt += f" Avoid: {score.justification}"
                image = self._generate(panel, image.revision + 1, ImageOrigin.REGENERATED, prompt)
                self.panel_event(panel.index, "regenerated", revision=image.revision)
                continue
            if edit_left > 0:
                edit_left -= 1
                observed = predicates_from_text(caption)
                instruction = verify_panel(
                    self.graph, self.recorder, panel, observed, covered_events=covered, instruction_renderer=renderer
                )
                self.panel_event(
                    panel.index,
                    "verified",
                    verdict=instruction.verdict,
                    instruction=instruction.instruction_text,
                )
                edit_text = instruction.instruction_text or f"Align the image with: {panel.scene_description}"
                image = self._edit(panel, image, image.revision + 1, edit_text)
                self.panel_event(panel.index, "edited", revision=image.revision)
                continue
            return self._accept(panel, image, caption, flag="low-confidence")

    def _accept(self, panel: PanelSpec, image: PanelImage, caption: str, flag: str | None) -> PanelImage:
        final_path = self.out_dir / "final" / f"p{panel.index}{Path(image.artifact_path).suffix}"
        final_path.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(image.artifact_path, final_path)
        action = "accepted" if flag is None else "accepted_with_flag"
        self.panel_event(panel.index, action, revision=image.revision, caption=caption, flag=flag)
        if flag:
            self.flags.append(f"panel {panel.index}: {flag}")
        self.buffer = self.monitor.update_buffer(self.buffer, image, caption=caption)
        to_apply = [i for i in self.plan.events_for_panel(panel.index) if i not in self.recorder.realized_events]
        if to_apply:
            self.recorder = apply_effects(self.recorder, to_apply, panel_index=panel.index)
        return PanelImage(
            panel_index=panel.index, artifact_path=str(final_path), revision=image.revision, origin=image.origin
        )


def _write_run_metadata(out_dir: Path, run_id: str, story: StoryRecord, policy: RefinementPolicy, cfg_hash: str) -> None:
    (out_dir / "run.json").write_text(
        json.dumps(
            {"run_id": run_id, "story_id": story.id, "policy": policy.to_dict(), "config_hash": cfg_hash},
            indent=2,
        ),
        encoding="utf-8",
    )


def run_story(
    story: StoryRecord,
    policy: RefinementPolicy,
    backends: BackendSet,
    out_dir: str | Path,
    plan: PlanBundle | None = None,
    run_id: str | None = None,
    max_memory_chars: int = 4000,
    use_backend_instructions: bool = True,
) -> RunResult:
    """Plan (unless given), then generate, score and refine every panel."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_hash = _config_hash(backends, policy)
    if run_id is None:
        run_id = f"r{hashlib.sha256(f'{story.id}:{cfg_hash}'.encode()).hexdigest()[:10]}"
    _write_run_metadata(out_dir, run_id, story, policy, cfg_hash)

    trace = TraceWriter(out_dir / "trace.jsonl")
    try:
        if plan is None:
            planner = StoryPlanner(backends, trace=trace.append)
            plan = planner.plan(story)
        (out_dir / "plan.json").write_text(json.dumps(plan.to_dict(), indent=2, ensure_ascii=False), encoding="utf-8")
        graph = build_graph(list(plan.events))
        (out_dir / "graph.json").write_text(json.dumps(graph.to_dict(), indent=2), encoding="utf-8")
        (out_dir / "graph.txt").write_text(graph.to_dot(), encoding="utf-8")

        ctx = _RunContext(
            story=story,
            policy=policy,
            backends=backends,
            out_dir=out_dir,
            plan=plan,
            graph=graph,
            recorder=StateRecorder.initial(list(plan.events)),
            monitor=LocalMonitor(backends, trace=trace.append),
            buffer=MemoryBuffer(max_chars=max_memory_chars),
            trace=trace,
            use_backend_instructions=use_backend_instructions,
        )
        images = tuple(ctx.process_panel(panel) for panel in plan.panels)
        return RunResult(
            run_id=run_id,
            images=images,
            plan=plan,
            trace_events=tuple(trace.events),
            flags=tuple(ctx.flags),
            out_dir=str(out_dir),
        )
    finally:
        trace.close()


def _rebuild_state(
    ctx: _RunContext, events: list[dict[str, Any]], plan: PlanBundle
) -> tuple[int, dict[int, tuple[int, str]]]:
    """Replay a trace; returns (last accepted panel, panel -> (revision, caption))."""
    done: dict[int, tuple[int, str]] = {}
    for e in events:
        if e.get("kind") != "panel" or e.get("action") not in TERMINAL_ACTIONS:
            continue
        panel = int(e["panel"])
        done[panel] = (int(e.get("revision", 0)), str(e.get("caption", "")))
        if e.get("flag"):
            ctx.flags.append(f"panel {panel}: {e['flag']}")
    last = 0
    for t in sorted(done):
        if t != last + 1:
            raise TraceError(f"accepted panels are not a prefix: {sorted(done)}")
        last = t
    for t in sorted(done):
        caption = done[t][1]
        entry = MemoryEntry(
            panel_index=t,
            caption=caption,
            predicates=tuple(predicates_from_text(caption)) if caption else (),
            summary="",
        )
        entry = replace(entry, summary=summarize_entry(entry))
        ctx.buffer = MemoryBuffer(entries=ctx.buffer.entries + (entry,), max_chars=ctx.buffer.max_chars)
        to_apply = [i for i in plan.events_for_panel(t) if i not in ctx.recorder.realized_events]
        if to_apply:
            ctx.recorder = apply_effects(ctx.recorder, to_apply, panel_index=t)
    return last, done


def resume_run(
    out_dir: str | Path,
    backends: BackendSet,
    max_memory_chars: int = 4000,
    use_backend_instructions: bool = True,
) -> RunResult:
    """Continue a persisted run at the first non-accepted panel.

    Already accepted panels are left untouched; resuming a complete run is
    a no-op that just reassembles the result.
    """
    out_dir = Path(out_dir)
    run_path = out_dir / "run.json"
    plan_path = out_dir / "plan.json"
    if not run_path.exists():
        raise PipelineError(f"{out_dir}: no run.json; nothing to resume")
    if not plan_path.exists():
        raise PipelineError(f"{out_dir}: planning did not complete; start a fresh run instead")
    meta = json.loads(run_path.read_text(encoding="utf-8"))
    policy = RefinementPolicy.from_dict(meta.get("policy", {}))
    plan = PlanBundle.from_dict(json.loads(plan_path.read_text(encoding="utf-8")))

    existing = read_trace(out_dir / "trace.jsonl") if (out_dir / "trace.jsonl").exists() else []
    trace = TraceWriter(out_dir / "trace.jsonl")
    try:
        graph = build_graph(list(plan.events))
        ctx = _RunContext(
            story=None,
            policy=policy,
            backends=backends,
            out_dir=out_dir,
            plan=plan,
            graph=graph,
            recorder=StateRecorder.initial(list(plan.events)),
            monitor=LocalMonitor(backends, trace=trace.append),
            buffer=MemoryBuffer(max_chars=max_memory_chars),
            trace=trace,
            use_backend_instructions=use_backend_instructions,
        )
        last_done, done = _rebuild_state(ctx, existing, plan)
        images: list[PanelImage] = []
        for panel in plan.panels:
            if panel.index <= last_done:
                suffix = ".png" if (out_dir / "final" / f"p{panel.index}.png").exists() else ".jpg"
                final_path = out_dir / "final" / f"p{panel.index}{suffix}"
                if not final_path.exists():
                    raise PipelineError(f"panel {panel.index} accepted in trace but {final_path} is missing")
                revision, _ = done[panel.index]
                images.append(
                    PanelImage(panel_index=panel.index, artifact_path=str(final_path), revision=revision)
                )
            else:
                images.append(ctx.process_panel(panel))
        return RunResult(
            run_id=meta["run_id"],
            images=tuple(images),
            plan=plan,
            trace_events=tuple(trace.events),
            flags=tuple(ctx.flags),
            out_dir=str(out_dir),
        )
    finally:
        trace.close()
