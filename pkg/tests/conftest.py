from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from storylogic.dataset import load_dataset
from storylogic.domain import StoryRecord

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def crow_record() -> StoryRecord:
    data = json.loads((FIXTURES / "crow_pitcher.json").read_text(encoding="utf-8"))
    return StoryRecord.from_dict(data[0])


@pytest.fixture()
def crow_dataset_path(tmp_path: Path) -> Path:
    target = tmp_path / "crow.json"
    target.write_text((FIXTURES / "crow_pitcher.json").read_text(encoding="utf-8"), encoding="utf-8")
    return target


@pytest.fixture(scope="session")
def crow_dataset():
    return load_dataset(FIXTURES / "crow_pitcher.json")


@pytest.fixture(scope="session")
def pigs_scenecrafter() -> str:
    return (FIXTURES / "pigs_scenecrafter.md").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def pigs_logicminer() -> str:
    return (FIXTURES / "pigs_logicminer.md").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def pigs_shotplanner() -> str:
    return (FIXTURES / "pigs_shotplanner.md").read_text(encoding="utf-8")


PIGS_OUTLINE = (
    "Three little pigs live their mother's house and each build a house: one of straw, one of sticks, "
    "and one of bricks. A hungry wolf comes and blows down the straw and stick houses, causing the first "
    "two pigs to flee to the brick house. The wolf tries to blow it down but fails. He then climbs the "
    "chimney, but the pigs boil a pot of water inside, and the wolf falls in and runs away burned. "
    "All three pigs live safely together in the brick house."
)


@pytest.fixture(scope="session")
def pigs_record() -> StoryRecord:
    return StoryRecord.from_dict(
        {
            "id": 2,
            "level": "medium",
            "title": "Three Little Pigs",
            "source": "Folk tale",
            "story_outline": PIGS_OUTLINE,
            "character_list": ["Pig1", "Pig2", "Pig3", "Mother Pig", "Wolf"],
            "causal_event_chain": [
                {"action": "Wolf blows down the straw house", "result": "Pig1 flees to Pig2", "weight": 0.25},
                {"action": "Wolf blows down the wood house", "result": "Both pigs flee to Pig3", "weight": 0.25},
                {"action": "Wolf climbs the chimney", "result": "Wolf falls into the boiling pot", "weight": 0.5},
            ],
        }
    )
