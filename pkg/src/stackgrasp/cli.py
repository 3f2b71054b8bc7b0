"""stackgrasp command line: generate, plan, simulate, evaluate, report.

Exit codes: 0 ok, 1 usage error, 2 invalid input data.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import Config, ConfigError, load_config
from .harness import aggregate, evaluate, fit_prior, read_records, render_summary, write_reports
from .planner import BASELINES, PLANNERS, baseline_policy, plan_scene, pomdp_policy, replan_loop
from .pomdp import Destination, ImpossibleObservation
from .scene import SceneError, load_scene, validate_scene
from .simulator import GroundTruthScene, SimExecutor, Task, read_corpus, write_corpus

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse defaults to exit status 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _targets(text: str) -> list[int]:
    try:
        ids = [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"targets must be comma-separated ids, got {text!r}") from None
    if not ids:
        raise argparse.ArgumentTypeError("at least one target is required")
    return ids


def _choices(allowed):
    def parse(text: str) -> list[str]:
        items = [t for t in text.split(",") if t]
        bad = [t for t in items if t not in allowed]
        if bad or not items:
            raise argparse.ArgumentTypeError(f"unknown id(s) {bad}; choose from {', '.join(allowed)}")
        return items
    return parse


def _load(path: str, config: Config):
    try:
        graph = load_scene(path, config.noise.categories)
    except OSError as exc:
        raise DataError(f"cannot read scene {path}: {exc}") from exc
    except SceneError as exc:
        raise DataError(f"{path}: {exc}") from exc
    check = validate_scene(graph)
    if not check.ok:
        raise DataError(f"{path}: invalid scene: " + "; ".join(check.violations))
    return graph


def _check_targets(graph, targets):
    bad = [t for t in targets if not 0 <= t < graph.n_objects]
    if bad:
        raise DataError(f"unknown target ids {bad} (scene has {graph.n_objects} objects)")


def cmd_generate(args, config: Config) -> int:
    out = Path(args.out or "corpus")
    path = write_corpus(out, args.n, config.generator, args.seed)
    print(f"wrote {args.n} scenes to {out} ({path.name})")
    return EXIT_OK


def cmd_plan(args, config: Config) -> int:
    graph = _load(args.scene, config)
    _check_targets(graph, args.targets)
    if args.planner == "pomdp":
        plan = plan_scene(graph, args.targets, config.reward, config.noise, config.horizon)
    else:
        plan = BASELINES[args.planner](graph, args.targets, config.reward)
    doc = {"planner": args.planner, "targets": args.targets, **plan.to_dict(), "chain": plan.render(graph.categories)}
    text = json.dumps(doc, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_simulate(args, config: Config) -> int:
    graph = _load(args.scene, config)
    _check_targets(graph, args.targets)
    scene = GroundTruthScene(graph, seed=args.seed)
    executor = SimExecutor(scene, config.noise, args.seed)
    policy = (pomdp_policy(config.noise, config.reward, config.horizon) if args.planner == "pomdp"
              else baseline_policy(args.planner, config.reward))
    prior = fit_prior(config, args.seed + 1)
    try:
        trace = replan_loop(executor, args.targets, config.noise, graph.categories, config.reward,
                            config.horizon, config.retry_cap, policy, prior)
    except ImpossibleObservation as exc:
        raise DataError(str(exc)) from exc
    for rec in executor.trace:
        print(json.dumps(rec))
    if args.out:
        executor.write_trace(args.out)
    done = all(scene.placed.get(t) is Destination.TARGET for t in args.targets)
    print(f"grasps={trace.grasp_count} success={done and not trace.failed}", file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args, config: Config) -> int:
    try:
        scenes = read_corpus(args.corpus, config.noise.categories)
    except (OSError, SceneError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read corpus {args.corpus}: {exc}") from exc
    if not scenes:
        raise DataError(f"empty corpus: {args.corpus}")
    draws = {Task.ST: args.draws, Task.MT: args.draws, Task.TC: 1}
    reports = evaluate(scenes, args.planners, args.tasks, config, args.seed, draws, workers=args.workers)
    out = Path(args.out or "results")
    meta = {"corpus": str(args.corpus), "seed": args.seed, "planners": args.planners,
            "tasks": args.tasks, "config": config.to_dict()}
    rows = write_reports(out, reports, meta)
    sys.stdout.write(render_summary(rows))
    return EXIT_OK


def cmd_report(args, config: Config) -> int:
    path = Path(args.records)
    if path.is_dir():
        path = path / "records.jsonl"
    try:
        reports = read_records(path)
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read records {path}: {exc}") from exc
    rows = aggregate(reports)
    sys.stdout.write(render_summary(rows))
    if args.plot:
        from .plot import plot_rows

        plot_rows(rows, args.plot)
        print(f"wrote {args.plot}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output path (file or directory, per subcommand)")

    p = _Parser(prog="stackgrasp", description="Grasp-order planning for stacked tabletop scenes.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="write a scene corpus")
    g.add_argument("-n", type=int, default=3200, help="number of scenes")
    g.set_defaults(func=cmd_generate)

    pl = sub.add_parser("plan", parents=[common], help="plan on a scene file")
    pl.add_argument("scene")
    pl.add_argument("--targets", type=_targets, required=True, help="comma-separated ids")
    pl.add_argument("--planner", choices=PLANNERS, default="pomdp")
    pl.set_defaults(func=cmd_plan)

    sm = sub.add_parser("simulate", parents=[common], help="closed-loop episode with trace")
    sm.add_argument("scene")
    sm.add_argument("--targets", type=_targets, required=True)
    sm.add_argument("--planner", choices=PLANNERS, default="pomdp")
    sm.set_defaults(func=cmd_simulate)

    ev = sub.add_parser("evaluate", parents=[common], help="batch evaluation over a corpus")
    ev.add_argument("corpus")
    ev.add_argument("--planners", type=_choices(PLANNERS), default=list(PLANNERS))
    ev.add_argument("--tasks", type=_choices([t.value for t in Task]), default=[t.value for t in Task])
    ev.add_argument("--draws", type=int, default=2, help="designations per scene for ST and MT")
    ev.add_argument("--workers", type=int, default=None)
    ev.set_defaults(func=cmd_evaluate)

    rp = sub.add_parser("report", parents=[common], help="summarize records.jsonl")
    rp.add_argument("records", help="records.jsonl or an evaluate output directory")
    rp.add_argument("--plot", help="also write a bar chart (png/pdf/svg)")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "n", 0) is not None and getattr(args, "n", 0) < 0:
        parser.error("-n must be >= 0")
    try:
        config = load_config(args.config)
        return args.func(args, config)
    except (ConfigError, DataError) as exc:
        print(f"stackgrasp: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"stackgrasp: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
