#!/usr/bin/env python3
"""End-to-end demo on the bundled mock backends: plan, generate, verify,
evaluate one story, printing the trace decisions and the metric report."""
from __future__ import annotations

import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from storylogic.backends.config import build_backends
from storylogic.dataset import load_dataset
from storylogic.evaluation import evaluate_run, write_report
from storylogic.pipeline import RefinementPolicy, run_story

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "tests" / "fixtures"


def main() -> int:
    out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="storylogic-demo-"))
    ds = load_dataset(FIXTURES / "crow_pitcher.json")
    story = ds.records[0]
    backends = build_backends({}, mock_dir=FIXTURES / "mock_backends")

    print(f"running story {story.id} ({story.title!r}) into {out_dir}")
    result = run_story(story, RefinementPolicy(), backends, out_dir)
    for event in result.trace_events:
        if event.get("kind") == "panel":
            psi = f" psi={event['psi']}" if "psi" in event else ""
            print(f"  panel {event['panel']}: {event['action']}{psi}")
    print(f"final images: {[Path(i.artifact_path).name for i in result.images]}")

    report = evaluate_run(out_dir, story, backends, method_label="demo")
    path = write_report(report, out_dir)
    print(f"\nmetrics ({path}):")
    for key, value in report.to_dict().items():
        if key in (
            "instance_consistency",
            "narrative_causality",
            "story_readability",
            "aesthetic_quality",
            "style_consistency",
            "character_expressiveness",
        ):
            print(f"  {key}: {value}")
    print(f"\ncausal graph: {out_dir / 'graph.txt'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
