"""Command-line entry points for validation, generation, evaluation,
statistics, and the annotation service.

Exit codes: 0 success, 1 validation or evaluation failure, 2 IO/config
failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from .backends.base import BackendError, BackendSet
from .backends.config import ConfigError, build_backends, load_config
from .dataset import DatasetError, build_saturation_plan, load_dataset, SaturationPlan
from .evaluation import EvalError, EvalReport, evaluate_run, summary_csv, write_report
from .pipeline import PipelineError, RefinementPolicy, resume_run, run_story
from .planner import PlanningError
from .stats import StatsError, krippendorff_alpha_ordinal, pearson_r, saturation_analysis

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_IO = 2

# human-rating dimensions paired with their automatic counterparts
CORRELATION_PAIRS = (
    ("instance_consistency", "instance_consistency"),
    ("narrative_causality", "narrative_causality"),
    ("story_readability", "story_readability"),
    ("aesthetic_quality", "aesthetic_appeal"),
)


def _backends_from_args(args) -> BackendSet:
    config = load_config(args.config) if args.config else {}
    return build_backends(config, mock_dir=args.mock)


def _policy_from_config(args) -> RefinementPolicy:
    if args.config:
        cfg = load_config(args.config)
        return RefinementPolicy.from_dict(cfg.get("policy", {}))
    return RefinementPolicy()


def cmd_validate(args) -> int:
    try:
        ds = load_dataset(args.dataset)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DatasetError as exc:
        print(f"invalid dataset: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"ok: {len(ds)} record(s) valid")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        backends = _backends_from_args(args)
        policy = _policy_from_config(args)
        if args.resume:
            result = resume_run(args.out, backends)
        else:
            ds = load_dataset(args.dataset)
            story = ds.get(args.story)
            result = run_story(story, policy, backends, args.out)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DatasetError, PlanningError, PipelineError, BackendError, KeyError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"run {result.run_id}: {len(result.images)} panel(s) in {result.out_dir}")
    for flag in result.flags:
        print(f"  flag: {flag}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        backends = _backends_from_args(args)
        ds = load_dataset(args.dataset)
        story_id = args.story if args.story is not None else json.loads(
            (Path(args.run) / "run.json").read_text(encoding="utf-8")
        )["story_id"]
        story = ds.get(story_id)
        report = evaluate_run(args.run, story, backends, method_label=args.method, causality_mode=args.mode)
        path = write_report(report, args.run)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DatasetError, EvalError, BackendError, KeyError) as exc:
        print(f"eval failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"wrote {path}")
    for col in EvalReport.METRIC_COLUMNS:
        value = getattr(report, col)
        print(f"  {col}: {value if value is not None else 'absent'}")
    return EXIT_OK


def cmd_eval_batch(args) -> int:
    try:
        backends = _backends_from_args(args)
        ds = load_dataset(args.dataset)
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        reports = []
        for entry in manifest:
            story = ds.get(int(entry["story_id"]))
            reports.append(
                evaluate_run(
                    entry["run_dir"], story, backends, method_label=str(entry["method_label"]), causality_mode=args.mode
                )
            )
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with (out_dir / "reports.jsonl").open("w", encoding="utf-8") as f:
            for r in reports:
                f.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")
        (out_dir / "summary.csv").write_text(summary_csv(reports), encoding="utf-8")
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DatasetError, EvalError, BackendError, KeyError) as exc:
        print(f"eval-batch failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"wrote {out_dir / 'reports.jsonl'} and {out_dir / 'summary.csv'} ({len(reports)} report(s))")
    return EXIT_OK


def cmd_stats_agreement(args) -> int:
    from .service import load_ratings_tables

    try:
        tables = load_ratings_tables(args.ratings, args.unblind)
        if not tables:
            print("no ratings found", file=sys.stderr)
            return EXIT_FAILURE
        results = {dim: krippendorff_alpha_ordinal(table) for dim, table in tables.items()}
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (StatsError, ValueError) as exc:
        print(f"agreement failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    for dim in sorted(results):
        print(f"{dim}: alpha = {results[dim]:.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps(results, indent=2), encoding="utf-8")
    return EXIT_OK


def _read_method_csv(path: str) -> dict[str, dict[str, float]]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    out: dict[str, dict[str, float]] = {}
    for row in rows:
        method = row.pop("method")
        out[method] = {k: float(v) for k, v in row.items() if v not in (None, "")}
    return out


def cmd_stats_correlate(args) -> int:
    try:
        auto = _read_method_csv(args.auto)
        human = _read_method_csv(args.human)
        methods = sorted(set(auto) & set(human))
        if args.exclude:
            methods = [m for m in methods if m not in args.exclude]
        if len(methods) < 2:
            print("need at least 2 shared methods", file=sys.stderr)
            return EXIT_FAILURE
        results = {}
        for auto_col, human_col in CORRELATION_PAIRS:
            if all(auto_col in auto[m] for m in methods) and all(human_col in human[m] for m in methods):
                x = [auto[m][auto_col] for m in methods]
                y = [human[m][human_col] for m in methods]
                results[auto_col] = pearson_r(x, y)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (StatsError, ValueError, KeyError) as exc:
        print(f"correlate failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    for dim, r in results.items():
        print(f"{dim}: r = {r:.4f} over {len(methods)} methods")
    if args.out:
        Path(args.out).write_text(json.dumps(results, indent=2), encoding="utf-8")
    return EXIT_OK


def cmd_stats_saturation(args) -> int:
    try:
        plan = SaturationPlan.from_dict(json.loads(Path(args.plan).read_text(encoding="utf-8")))
        reports = []
        for line in Path(args.reports).read_text(encoding="utf-8").splitlines():
            if line.strip():
                reports.append(EvalReport.from_dict(json.loads(line)))
        by_subset: dict[int, dict[str, dict[str, float]]] = {}
        for size, ids in zip(plan.subset_sizes, plan.subsets):
            per_metric: dict[str, dict[str, list[float]]] = {}
            for r in reports:
                if r.story_id not in ids:
                    continue
                for col in EvalReport.METRIC_COLUMNS:
                    value = getattr(r, col)
                    if value is not None:
                        per_metric.setdefault(col, {}).setdefault(r.method_label, []).append(value)
            by_subset[size] = {
                metric: {m: sum(vs) / len(vs) for m, vs in methods.items()} for metric, methods in per_metric.items()
            }
        analysis = saturation_analysis(by_subset)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (StatsError, ValueError, KeyError) as exc:
        print(f"saturation failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["metric", "size", "tau_vs_full"])
    for metric in sorted(analysis):
        for size, tau in analysis[metric]:
            writer.writerow([metric, size, f"{tau:.4f}"])
            print(f"{metric} @ {size}: tau = {tau:.4f}")
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
    return EXIT_OK


def cmd_saturation_plan(args) -> int:
    try:
        ds = load_dataset(args.dataset)
        sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else None
        plan = build_saturation_plan(ds, sizes=sizes or (12, 24, 36, 48, 60), seed=args.seed)
        Path(args.out).write_text(json.dumps(plan.to_dict(), indent=2), encoding="utf-8")
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DatasetError, ValueError) as exc:
        print(f"plan failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    try:
        cfg = load_config(args.config)
        service_cfg = ServiceConfig.from_dict(cfg.get("service", cfg))
        app = create_app(service_cfg)
    except (ConfigError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="storylogic")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a dataset file")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="generate a story's image sequence")
    p.add_argument("--story", type=int)
    p.add_argument("--dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--mock", help="fixture directory; use the mock backend")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="evaluate one run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--config")
    p.add_argument("--mock")
    p.add_argument("--story", type=int, help="story id (default: from run.json)")
    p.add_argument("--method", default="unknown")
    p.add_argument("--mode", default="vqa_binary", choices=["vqa_binary", "rubric_0_1"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("eval-batch", help="evaluate many runs from a manifest")
    p.add_argument("--manifest", required=True, help="JSON list of {run_dir, story_id, method_label}")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config")
    p.add_argument("--mock")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="vqa_binary", choices=["vqa_binary", "rubric_0_1"])
    p.set_defaults(func=cmd_eval_batch)

    stats = sub.add_parser("stats", help="agreement / correlation / saturation statistics")
    stats_sub = stats.add_subparsers(dest="stats_command", required=True)

    p = stats_sub.add_parser("agreement")
    p.add_argument("--ratings", required=True)
    p.add_argument("--unblind", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats_agreement)

    p = stats_sub.add_parser("correlate")
    p.add_argument("--auto", required=True)
    p.add_argument("--human", required=True)
    p.add_argument("--exclude", nargs="*", default=[])
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats_correlate)

    p = stats_sub.add_parser("saturation")
    p.add_argument("--reports", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats_saturation)

    p = sub.add_parser("saturation-plan", help="build nested difficulty-balanced subsets")
    p.add_argument("--dataset", required=True)
    p.add_argument("--sizes", help="comma-separated increasing sizes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_saturation_plan)

    p = sub.add_parser("serve", help="run the annotation API")
    p.add_argument("--config", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
