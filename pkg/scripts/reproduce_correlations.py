#!/usr/bin/env python3
"""Reproduce the automatic-vs-human correlation analysis from the bundled
method-level score tables, over both candidate method subsets."""
from __future__ import annotations

import csv
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from storylogic.stats import pearson_r

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "tests" / "fixtures"

PAIRS = (
    ("instance_consistency", "instance_consistency"),
    ("narrative_causality", "narrative_causality"),
    ("story_readability", "story_readability"),
    ("aesthetic_quality", "aesthetic_appeal"),
)


def read(path: Path) -> dict[str, dict[str, float]]:
    with path.open(newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    return {row["method"]: {k: float(v) for k, v in row.items() if k != "method"} for row in rows}


def main() -> int:
    auto = read(FIXTURES / "table1_auto.csv")
    human = read(FIXTURES / "table1_human.csv")
    methods = list(auto)
    for label, subset in (("all methods", methods), ("without ours", [m for m in methods if m != "Ours"])):
        print(f"{label} ({len(subset)} methods):")
        for auto_col, human_col in PAIRS:
            r = pearson_r([auto[m][auto_col] for m in subset], [human[m][human_col] for m in subset])
            print(f"  {auto_col:24s} r = {r:+.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
