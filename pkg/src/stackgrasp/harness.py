"""Batch evaluation: episodes, rationality metrics and aggregate reports."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import Config
from .planner import PLANNERS, baseline_policy, pomdp_policy, replan_loop
from .pomdp import Destination, ImpossibleObservation, RelationPrior
from .scene import SceneGraph
from .simulator import (
    GroundTruthScene,
    SimExecutor,
    Task,
    annotate_reference,
    generate_corpus,
    sample_targets,
)

# designations drawn per scene and task
DEFAULT_DRAWS = {Task.ST: 2, Task.MT: 2, Task.TC: 1}

REPORT_HEADER = (
    "AR_f: share of episodes whose first executed (object, destination) pair belongs "
    "to the reference action-object set.\n"
    "AR_w: share of episodes whose executed action-object set (failed attempts included, "
    "order ignored) equals the reference set.\n"
    "Reference chains come from the planner on the true scene with perfect perception "
    "and grasping.\n"
)


@dataclass(frozen=True)
class EpisodeReport:
    planner: str
    task: str
    scene: str
    targets: tuple[int, ...]
    first_step_rational: bool
    chain_rational: bool
    grasp_count: int
    success: bool
    simulated_time: float
    chain: tuple[tuple[int, str], ...] = ()
    error: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["targets"] = list(self.targets)
        d["chain"] = [list(c) for c in self.chain]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeReport":
        d = dict(d)
        d["targets"] = tuple(d["targets"])
        d["chain"] = tuple((int(o), str(k)) for o, k in d.get("chain", ()))
        return cls(**d)


def metric_aos_rationality(chain: Sequence[tuple[int, Destination]],
                           reference: Iterable[tuple[int, Destination]]) -> tuple[bool, bool]:
    ref = frozenset(reference)
    executed = frozenset(chain)
    if not chain:
        return (not ref, not ref)
    return chain[0] in ref, executed == ref


def fit_prior(config: Config, seed: int) -> RelationPrior:
    """Category-pair relation prior fitted on a fresh draw from the scene generator."""
    if config.prior_scenes == 0:
        return RelationPrior.uniform()
    scenes = generate_corpus(config.prior_scenes, config.generator, seed)
    return RelationPrior.from_scenes(scenes, alpha=config.prior_alpha)


def run_episode(graph: SceneGraph, targets: Sequence[int], planner: str, config: Config,
                episode_seed: int, prior: RelationPrior | None = None,
                scene_name: str = "", task: str = "") -> EpisodeReport:
    if planner not in PLANNERS:
        raise ValueError(f"unknown planner {planner!r}; choose from {', '.join(PLANNERS)}")
    ref = annotate_reference(graph, targets, config.reward)
    scene = GroundTruthScene(graph)
    executor = SimExecutor(scene, config.noise, episode_seed)
    policy = (pomdp_policy(config.noise, config.reward, config.horizon) if planner == "pomdp"
              else baseline_policy(planner, config.reward))
    error = None
    try:
        trace = replan_loop(executor, targets, config.noise, graph.categories, config.reward,
                            config.horizon, config.retry_cap, policy, prior)
        actions, failed = trace.actions, trace.failed
    except ImpossibleObservation as exc:
        # the executor trace still holds every action issued before the fault
        actions = list(executor.actions)
        failed, error = True, str(exc)
    chain = [(a.obj, a.destination) for a in actions]
    first, whole = metric_aos_rationality(chain, ref.aos)
    delivered = all(scene.placed.get(t) is Destination.TARGET for t in targets)
    return EpisodeReport(
        planner=planner,
        task=task,
        scene=scene_name,
        targets=tuple(int(t) for t in targets),
        first_step_rational=first,
        chain_rational=whole,
        grasp_count=len(chain),
        success=delivered and not failed,
        simulated_time=len(chain) * config.minutes_per_grasp,
        chain=tuple((o, d.value) for o, d in chain),
        error=error,
    )


def episode_jobs(scenes: Sequence[tuple[str, SceneGraph]], tasks: Sequence[Task | str], seed: int,
                 draws: dict | None = None) -> list[tuple[int, str, tuple[int, ...], int]]:
    """(scene index, task, targets, episode seed) for every designation, deterministically."""
    draws = draws or DEFAULT_DRAWS
    jobs = []
    for k, (_, graph) in enumerate(scenes):
        for t in tasks:
            task = Task(t)
            for d in range(draws[task]):
                ss = np.random.SeedSequence([seed, k, list(Task).index(task), d])
                target_seed, episode_seed = ss.generate_state(2)
                targets = sample_targets(graph, task, np.random.default_rng(int(target_seed)))
                if targets:
                    jobs.append((k, task.value, targets, int(episode_seed)))
    return jobs


def _run_chunk(args) -> list[EpisodeReport]:
    scenes, jobs, planners, config, prior = args
    out = []
    for k, task, targets, ep_seed in jobs:
        name, graph = scenes[k]
        for p in planners:
            out.append(run_episode(graph, targets, p, config, ep_seed, prior, name, task))
    return out


def evaluate(scenes: Sequence[tuple[str, SceneGraph]], planners: Sequence[str], tasks: Sequence[Task | str],
             config: Config, seed: int, draws: dict | None = None,
             prior: RelationPrior | None = None, workers: int | None = None) -> list[EpisodeReport]:
    """Run every planner on the same designations and executor seeds."""
    if not scenes:
        raise ValueError("empty corpus")
    bad = [p for p in planners if p not in PLANNERS]
    if bad:
        raise ValueError(f"unknown planner(s) {bad}; choose from {', '.join(PLANNERS)}")
    if prior is None:
        prior = fit_prior(config, seed + 1)
    jobs = episode_jobs(scenes, tasks, seed, draws)
    workers = workers or config.workers
    scenes = list(scenes)
    if workers <= 1 or len(jobs) < 2:
        return _run_chunk((scenes, jobs, list(planners), config, prior))
    chunks = [jobs[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(workers) as pool:
        parts = list(pool.map(_run_chunk, [(scenes, c, list(planners), config, prior) for c in chunks]))
    # put results back in job order so they do not depend on the pool
    per_job: list[list[EpisodeReport]] = [[] for _ in jobs]
    for i, part in enumerate(parts):
        step = len(planners)
        for q in range(len(part) // step):
            per_job[i + q * workers] = part[q * step:(q + 1) * step]
    return [r for rs in per_job for r in rs]


# --------------------------------------------------------------------------
# aggregation


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return (0.0, 1.0)
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, centre - half), min(1.0, centre + half))


def mean_interval(values: Sequence[float], z: float = 1.96) -> tuple[float, float]:
    n = len(values)
    if n == 0:
        return (math.nan, math.nan)
    m = float(np.mean(values))
    if n == 1:
        return (m, m)
    half = z * float(np.std(values, ddof=1)) / math.sqrt(n)
    return (m - half, m + half)


@dataclass(frozen=True)
class AggregateRow:
    planner: str
    task: str
    episodes: int
    ar_f: float
    ar_w: float
    mean_grasps: float
    success_rate: float
    mean_time: float
    ar_f_ci: tuple[float, float]
    ar_w_ci: tuple[float, float]
    grasps_ci: tuple[float, float]
    success_ci: tuple[float, float]


def aggregate(reports: Sequence[EpisodeReport]) -> list[AggregateRow]:
    groups: dict[tuple[str, str], list[EpisodeReport]] = {}
    for r in reports:
        groups.setdefault((r.planner, r.task), []).append(r)
    rows = []
    for (planner, task), rs in sorted(groups.items()):
        n = len(rs)
        f = sum(r.first_step_rational for r in rs)
        w = sum(r.chain_rational for r in rs)
        s = sum(r.success for r in rs)
        grasps = [r.grasp_count for r in rs]
        rows.append(AggregateRow(
            planner, task, n, f / n, w / n, sum(grasps) / n, s / n,
            sum(r.simulated_time for r in rs) / n,
            wilson_interval(f, n), wilson_interval(w, n), mean_interval(grasps), wilson_interval(s, n),
        ))
    return rows


def render_summary(rows: Sequence[AggregateRow]) -> str:
    head = f"{'planner':<11} {'task':<4} {'n':>5} {'AR_f':>7} {'AR_w':>7} {'grasps':>7} {'success':>8} {'time':>7}"
    lines = [REPORT_HEADER, head, "-" * len(head)]
    for r in rows:
        lines.append(
            f"{r.planner:<11} {r.task:<4} {r.episodes:>5} {100 * r.ar_f:>6.2f}% {100 * r.ar_w:>6.2f}% "
            f"{r.mean_grasps:>7.2f} {100 * r.success_rate:>7.2f}% {r.mean_time:>7.2f}"
        )
    return "\n".join(lines) + "\n"


def write_reports(out_dir: str | Path, reports: Sequence[EpisodeReport], meta: dict | None = None) -> list[AggregateRow]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "records.jsonl", "w") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    rows = aggregate(reports)
    (out / "summary.txt").write_text(render_summary(rows))
    summary = {"meta": meta or {}, "rows": [asdict(r) for r in rows]}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return rows


def read_records(path: str | Path) -> list[EpisodeReport]:
    with open(path) as fh:
        return [EpisodeReport.from_dict(json.loads(line)) for line in fh if line.strip()]
