"""Annotation HTTP API: serves blind, shuffled rating tasks and persists
human ratings to an append-only JSONL store.

Method identity never appears in any response; it lives only in the
server-side task-id map written to unblind.json and is joined back at
analysis time. Rating writes are serialized and crash-safe: a truncated
final line left by a mid-write crash is quarantined on restart.
"""
from __future__ import annotations

import hashlib
import json
import os
import random
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import FileResponse
from pydantic import BaseModel

from . import rubrics
from .dataset import Dataset, load_dataset
from .evaluation import final_images

VALID_DIMENSIONS = rubrics.DIMENSIONS


@dataclass(frozen=True)
class RegisteredRun:
    story_id: int
    method_label: str
    run_dir: str


@dataclass
class ServiceConfig:
    dataset_path: str
    runs: list[RegisteredRun]
    ratings_path: str = "ratings.jsonl"
    unblind_path: str = "unblind.json"
    presentation_seed: int = 17
    batch_size: int | None = None
    api_token: str | None = None

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ServiceConfig":
        return cls(
            dataset_path=str(d["dataset"]),
            runs=[
                RegisteredRun(story_id=int(r["story_id"]), method_label=str(r["method_label"]), run_dir=str(r["run_dir"]))
                for r in d.get("runs", [])
            ],
            ratings_path=str(d.get("ratings_path", "ratings.jsonl")),
            unblind_path=str(d.get("unblind_path", "unblind.json")),
            presentation_seed=int(d.get("presentation_seed", 17)),
            batch_size=d.get("batch_size"),
            api_token=d.get("api_token"),
        )


def task_id_for(seed: int, story_id: int, method_label: str, dimension: str) -> str:
    blob = f"{seed}:{story_id}:{method_label}:{dimension}"
    return hashlib.sha1(blob.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class Task:
    """Server-side task; the wire shape omits method_label entirely."""

    task_id: str
    story_id: int
    method_label: str
    dimension: str
    run_dir: str
    story_text: str
    items: tuple[dict[str, Any], ...]

    def wire(self, image_count: int) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "story_id": self.story_id,
            "dimension": self.dimension,
            "story_text": self.story_text,
            "rubric": rubrics.HUMAN_RUBRICS[self.dimension],
            "images": [f"/api/task/{self.task_id}/image/{n}" for n in range(image_count)],
            "items": list(self.items),
        }


class RatingsStore:
    """Append-only JSONL with fsync per line and startup quarantine."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._keys: set[tuple[str, str, Any]] = set()
        self.records: list[dict[str, Any]] = []
        self._recover()

    def _recover(self) -> None:
        if not self.path.exists():
            return
        raw = self.path.read_text(encoding="utf-8")
        good_lines: list[str] = []
        bad_tail: str | None = None
        lines = raw.split("\n")
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                if i == len(lines) - 1 and not raw.endswith("\n"):
                    bad_tail = line
                    continue
                raise ValueError(f"{self.path}: corrupt interior line {i + 1}")
            good_lines.append(line)
            self.records.append(rec)
            self._keys.add(self._key(rec))
        if bad_tail is not None:
            quarantine = self.path.with_suffix(self.path.suffix + ".quarantine")
            with quarantine.open("a", encoding="utf-8") as q:
                q.write(bad_tail + "\n")
            tmp = self.path.with_suffix(".tmp")
            tmp.write_text("".join(l + "\n" for l in good_lines), encoding="utf-8")
            tmp.replace(self.path)

    @staticmethod
    def _key(rec: Mapping[str, Any]) -> tuple[str, str, Any]:
        return (str(rec["annotator_id"]), str(rec["task_id"]), rec.get("item_ref"))

    def has(self, annotator_id: str, task_id: str, item_ref: Any) -> bool:
        return (annotator_id, task_id, item_ref) in self._keys

    def append(self, rec: dict[str, Any]) -> None:
        with self._lock:
            key = self._key(rec)
            if key in self._keys:
                raise KeyError("duplicate rating")
            with self.path.open("a", encoding="utf-8") as f:
                f.write(json.dumps(rec, ensure_ascii=False) + "\n")
                f.flush()
                os.fsync(f.fileno())
            self._keys.add(key)
            self.records.append(rec)


class RatingBody(BaseModel):
    annotator_id: str
    task_id: str
    dimension: str
    item_ref: int | None = None
    value: int | str
    presentation_seed: int | None = None


def _validate_value(dimension: str, item_ref: Any, value: Any) -> list[dict[str, str]]:
    errors = []
    if dimension == rubrics.VQA_DIMENSION:
        if item_ref is None:
            errors.append({"field": "item_ref", "error": "vqa ratings need the causal question index"})
        if not (isinstance(value, str) and value.lower() in ("yes", "no")):
            errors.append({"field": "value", "error": f"vqa value must be yes/no, got {value!r}"})
    else:
        if item_ref is not None:
            errors.append({"field": "item_ref", "error": "likert dimensions take a single rating (item_ref null)"})
        if not (isinstance(value, int) and 1 <= value <= 5):
            errors.append({"field": "value", "error": f"value must be an integer 1-5, got {value!r}"})
    return errors


def build_tasks(config: ServiceConfig, dataset: Dataset) -> dict[str, Task]:
    tasks: dict[str, Task] = {}
    for run in config.runs:
        story = dataset.get(run.story_id)
        for dimension in VALID_DIMENSIONS:
            tid = task_id_for(config.presentation_seed, run.story_id, run.method_label, dimension)
            if dimension == rubrics.VQA_DIMENSION:
                items = tuple(
                    {"item_ref": i, "question": rubrics.vqa_question(ev.action, ev.result)}
                    for i, ev in enumerate(story.causal_event_chain, start=1)
                )
            else:
                items = ({"item_ref": None, "question": "Overall rating (1-5)"},)
            tasks[tid] = Task(
                task_id=tid,
                story_id=run.story_id,
                method_label=run.method_label,
                dimension=dimension,
                run_dir=run.run_dir,
                story_text=story.story_outline,
                items=items,
            )
    return tasks


def write_unblind(tasks: Mapping[str, Task], path: str | Path) -> None:
    payload = {
        tid: {"story_id": t.story_id, "method_label": t.method_label, "dimension": t.dimension, "run_dir": t.run_dir}
        for tid, t in tasks.items()
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def create_app(config: ServiceConfig) -> FastAPI:
    dataset = load_dataset(config.dataset_path)
    tasks = build_tasks(config, dataset)
    write_unblind(tasks, config.unblind_path)
    store = RatingsStore(config.ratings_path)
    app = FastAPI(title="annotation service")
    app.state.tasks = tasks
    app.state.store = store
    app.state.config = config

    def check_token(request: Request) -> None:
        if config.api_token:
            auth = request.headers.get("authorization", "")
            if auth != f"Bearer {config.api_token}":
                raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    def _task_images(task: Task) -> list[Path]:
        return final_images(task.run_dir)

    @app.get("/api/tasks", dependencies=[Depends(check_token)])
    def get_tasks(annotator: str, dimension: str | None = None) -> list[dict[str, Any]]:
        if dimension is not None and dimension not in VALID_DIMENSIONS:
            raise HTTPException(status_code=422, detail=[{"field": "dimension", "error": f"unknown dimension {dimension!r}"}])
        ordered = sorted(tasks.values(), key=lambda t: t.task_id)
        rng = random.Random(f"{config.presentation_seed}:{annotator}")
        rng.shuffle(ordered)
        out = []
        for t in ordered:
            if dimension is not None and t.dimension != dimension:
                continue
            if all(store.has(annotator, t.task_id, item["item_ref"]) for item in t.items):
                continue
            out.append(t.wire(image_count=len(_task_images(t))))
            if config.batch_size and len(out) >= config.batch_size:
                break
        return out

    @app.get("/api/task/{task_id}/image/{n}", dependencies=[Depends(check_token)])
    def get_image(task_id: str, n: int):
        task = tasks.get(task_id)
        if task is None:
            raise HTTPException(status_code=404, detail="unknown task")
        images = _task_images(task)
        if not (0 <= n < len(images)):
            raise HTTPException(status_code=404, detail="image index out of range")
        return FileResponse(images[n])

    @app.post("/api/ratings", dependencies=[Depends(check_token)], status_code=201)
    def post_rating(body: RatingBody) -> dict[str, str]:
        task = tasks.get(body.task_id)
        if task is None:
            raise HTTPException(status_code=404, detail="unknown task")
        errors = []
        if body.dimension != task.dimension:
            errors.append({"field": "dimension", "error": f"task {body.task_id} is a {task.dimension} task"})
        if body.dimension == rubrics.VQA_DIMENSION and body.item_ref is not None:
            if not any(item["item_ref"] == body.item_ref for item in task.items):
                errors.append({"field": "item_ref", "error": f"no causal question {body.item_ref} in this task"})
        errors.extend(_validate_value(task.dimension, body.item_ref, body.value))
        if errors:
            raise HTTPException(status_code=422, detail=errors)
        record = {
            "annotator_id": body.annotator_id,
            "task_id": body.task_id,
            "story_id": task.story_id,
            "dimension": task.dimension,
            "item_ref": body.item_ref,
            "value": body.value if isinstance(body.value, int) else body.value.lower(),
            "presentation_seed": config.presentation_seed,
        }
        try:
            store.append(record)
        except KeyError:
            raise HTTPException(status_code=409, detail="rating already submitted")
        return {"status": "recorded"}

    @app.get("/api/progress", dependencies=[Depends(check_token)])
    def get_progress(annotator: str) -> dict[str, dict[str, int]]:
        out = {dim: {"completed": 0, "total": 0} for dim in VALID_DIMENSIONS}
        for t in tasks.values():
            for item in t.items:
                out[t.dimension]["total"] += 1
                if store.has(annotator, t.task_id, item["item_ref"]):
                    out[t.dimension]["completed"] += 1
        return out

    return app


def load_ratings_tables(ratings_path: str | Path, unblind_path: str | Path):
    """Join ratings with the unblind map into per-dimension RatingTables."""
    from .stats import RatingTable

    unblind = json.loads(Path(unblind_path).read_text(encoding="utf-8"))
    rows: list[dict[str, Any]] = []
    for line in Path(ratings_path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rows.append(json.loads(line))
    by_dim: dict[str, dict[tuple, dict[str, Any]]] = {}
    annotators: dict[str, list[str]] = {}
    for row in rows:
        meta = unblind.get(row["task_id"])
        if meta is None:
            continue
        dim = meta["dimension"]
        item = (meta["story_id"], meta["method_label"], row.get("item_ref"))
        by_dim.setdefault(dim, {}).setdefault(item, {})[row["annotator_id"]] = row["value"]
        annotators.setdefault(dim, [])
        if row["annotator_id"] not in annotators[dim]:
            annotators[dim].append(row["annotator_id"])
    tables = {}
    for dim, items in by_dim.items():
        raters = sorted(annotators[dim])
        scale: tuple = ("no", "yes") if dim == rubrics.VQA_DIMENSION else (1, 2, 3, 4, 5)
        values = tuple(
            tuple(items[item].get(rater) for rater in raters) for item in sorted(items)
        )
        tables[dim] = RatingTable(values=values, scale=scale)
    return tables
