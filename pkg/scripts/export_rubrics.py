#!/usr/bin/env python3
"""Export the rating rubric strings to JSON for the annotator frontend's
protocol tests, keeping the server as the single source of truth."""
from __future__ import annotations

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from storylogic import rubrics

ROOT = Path(__file__).resolve().parents[1]
DEFAULT_OUT = ROOT / "frontend" / "tests" / "fixtures" / "rubrics.json"


def main() -> int:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else DEFAULT_OUT
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "rubrics": rubrics.HUMAN_RUBRICS,
        "vqa_question_template": rubrics.VQA_QUESTION_TEMPLATE,
        "dimensions": list(rubrics.DIMENSIONS),
        "likert_dimensions": list(rubrics.LIKERT_DIMENSIONS),
        "vqa_dimension": rubrics.VQA_DIMENSION,
    }
    out.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
