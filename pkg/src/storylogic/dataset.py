"""Benchmark dataset loading, filtering and nested-subset construction."""
from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

from .domain import Level, StoryRecord, validate_story_record


class DatasetError(Exception):
    """Raised when a dataset file cannot be loaded or validated."""


@dataclass(frozen=True)
class Dataset:
    """Ordered, validated story records indexed by id."""

    records: tuple[StoryRecord, ...]

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for rec in self.records:
            if rec.id in seen:
                raise DatasetError(f"duplicate id {rec.id}")
            seen.add(rec.id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def get(self, story_id: int) -> StoryRecord:
        for rec in self.records:
            if rec.id == story_id:
                return rec
        raise KeyError(f"no story with id {story_id}")

    def ids(self) -> tuple[int, ...]:
        return tuple(rec.id for rec in self.records)

    def level_counts(self) -> dict[Level, int]:
        counts = {level: 0 for level in Level}
        for rec in self.records:
            counts[rec.level] += 1
        return counts


def _parse_file(path: Path) -> list[Mapping[str, Any]]:
    text = path.read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: JSON parse failure at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
        if not isinstance(data, list):
            raise DatasetError(f"{path}: expected a JSON array of story objects")
        return data
    # one JSON object per line
    objs: list[Mapping[str, Any]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            objs.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: JSON parse failure at line {lineno}, offset {exc.pos}: {exc.msg}") from exc
    return objs


def load_dataset(path: str | Path) -> Dataset:
    """Load a JSON-array or JSON-lines story file into a validated Dataset.

    All records must validate; on failure the error lists every violation
    and no partial dataset is returned.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    objs = _parse_file(path)
    records = []
    problems: list[str] = []
    for pos, obj in enumerate(objs):
        try:
            rec = StoryRecord.from_dict(obj)
        except (KeyError, ValueError, TypeError) as exc:
            problems.append(f"record #{pos}: malformed: {exc}")
            continue
        violations = validate_story_record(rec)
        if violations:
            problems.extend(f"story id {rec.id}: {v}" for v in violations)
        records.append(rec)
    if problems:
        raise DatasetError(f"{path}: {len(problems)} validation problem(s):\n" + "\n".join(problems))
    return Dataset(records=tuple(records))


def write_dataset(ds: Dataset, path: str | Path) -> None:
    """Serialize as JSON-lines (one story object per line)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        for rec in ds.records:
            f.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")


def filter_by_level(ds: Dataset, level: Level | str) -> Dataset:
    level = Level(level)
    return Dataset(records=tuple(r for r in ds.records if r.level == level))


DEFAULT_SUBSET_SIZES = (12, 24, 36, 48, 60)


@dataclass(frozen=True)
class SaturationPlan:
    """Nested, difficulty-balanced id subsets of increasing size."""

    subset_sizes: tuple[int, ...]
    subsets: tuple[frozenset[int], ...]

    def to_dict(self) -> dict[str, Any]:
        return {"sizes": list(self.subset_sizes), "subsets": [sorted(s) for s in self.subsets]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SaturationPlan":
        return cls(
            subset_sizes=tuple(int(s) for s in d["sizes"]),
            subsets=tuple(frozenset(int(i) for i in ids) for ids in d["subsets"]),
        )


def _level_quotas(level_counts: dict[Level, int], total: int, size: int) -> dict[Level, int]:
    """Largest-remainder allocation of `size` slots proportional to levels."""
    exact = {lv: size * n / total for lv, n in level_counts.items() if n > 0}
    quotas = {lv: int(x) for lv, x in exact.items()}
    shortfall = size - sum(quotas.values())
    by_remainder = sorted(exact, key=lambda lv: (exact[lv] - quotas[lv], lv.value), reverse=True)
    for lv in by_remainder[:shortfall]:
        quotas[lv] += 1
    return quotas


def build_saturation_plan(ds: Dataset, sizes: Iterable[int] = DEFAULT_SUBSET_SIZES, seed: int = 0) -> SaturationPlan:
    """Build nested subsets preserving level proportions within one story.

    Per level, ids are shuffled once with the seed; each subset takes a
    prefix of that order, so nesting holds by construction.
    """
    sizes = tuple(int(s) for s in sizes)
    if not sizes:
        raise ValueError("sizes must be non-empty")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError(f"sizes not increasing: {sizes}")
    if sizes[-1] > len(ds):
        raise ValueError(f"max size {sizes[-1]} exceeds dataset size {len(ds)}")

    rng = random.Random(seed)
    by_level: dict[Level, list[int]] = {}
    for rec in ds.records:
        by_level.setdefault(rec.level, []).append(rec.id)
    for ids in by_level.values():
        rng.shuffle(ids)

    counts = {lv: len(ids) for lv, ids in by_level.items()}
    total = len(ds)
    subsets: list[frozenset[int]] = []
    prev_quotas = {lv: 0 for lv in by_level}
    for size in sizes:
        quotas = _level_quotas(counts, total, size)
        # keep per-level counts monotone so prefix nesting stays valid
        for lv in quotas:
            if quotas[lv] < prev_quotas[lv]:
                deficit = prev_quotas[lv] - quotas[lv]
                quotas[lv] = prev_quotas[lv]
                for other in sorted(quotas, key=lambda l: quotas[l] - prev_quotas[l], reverse=True):
                    if deficit == 0:
                        break
                    give = min(deficit, quotas[other] - prev_quotas[other])
                    if other != lv and give > 0:
                        quotas[other] -= give
                        deficit -= give
        chosen: set[int] = set()
        for lv, ids in by_level.items():
            chosen.update(ids[: quotas.get(lv, 0)])
        subsets.append(frozenset(chosen))
        prev_quotas = quotas
    return SaturationPlan(subset_sizes=sizes, subsets=tuple(subsets))
