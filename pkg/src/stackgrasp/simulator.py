"""Scene generator and simulated environment.

Scenes are synthesized topologically: containers go down first, then the rest
of the tableware and fruit lands on the table, inside a container (stable
support) or leaning on something larger (weak support).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .planner import plan_scene
from .pomdp import (
    DEFAULT_CATEGORIES,
    Action,
    Destination,
    NoiseProfile,
    Observation,
    RewardParams,
)
from .scene import (
    MIRROR,
    N_RELATION_CLASSES,
    Edge,
    SceneGraph,
    SupportKind,
    load_scene,
    relation_matrix,
    save_scene,
    stable_closure,
)

CONTAINERS = ("plate", "bowl", "mug")

DEFAULT_SIZE_RANK = {
    "plate": 6, "bowl": 5, "mug": 4, "banana": 3, "knife": 2, "fork": 2, "spoon": 2,
    "apple": 2, "orange": 2, "pear": 2, "peach": 2, "lemon": 1, "plum": 1,
    "kiwi": 1, "strawberry": 0,
}


class Task(str, Enum):
    ST = "ST"
    MT = "MT"
    TC = "TC"


@dataclass(frozen=True)
class GeneratorConfig:
    min_objects: int = 8
    max_objects: int = 12
    category_weights: Mapping[str, float] = field(
        default_factory=lambda: {c: (1.5 if c in CONTAINERS else 1.0) for c in DEFAULT_CATEGORIES}
    )
    containers: tuple[str, ...] = CONTAINERS
    p_stable: float = 0.35
    p_weak: float = 0.25
    p_container_stack: float = 0.2
    size_rank: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_SIZE_RANK))

    def __post_init__(self) -> None:
        if not 0 <= self.min_objects <= self.max_objects:
            raise ValueError("need 0 <= min_objects <= max_objects")
        for name in ("p_stable", "p_weak", "p_container_stack"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.p_stable + self.p_weak > 1.0:
            raise ValueError("p_stable + p_weak must not exceed 1")
        if not self.category_weights or min(self.category_weights.values()) < 0:
            raise ValueError("category weights must be nonempty and nonnegative")
        if sum(self.category_weights.values()) <= 0:
            raise ValueError("category weights sum to zero")

    @classmethod
    def stable_rich(cls) -> "GeneratorConfig":
        """Denser stacking: most non-containers sit inside a container."""
        return cls(p_stable=0.8, p_weak=0.1, p_container_stack=0.7)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["category_weights"] = dict(self.category_weights)
        d["size_rank"] = dict(self.size_rank)
        d["containers"] = list(self.containers)
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "GeneratorConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown generator keys {sorted(unknown)}")
        kw = dict(data)
        if "containers" in kw:
            kw["containers"] = tuple(kw["containers"])
        if "size_rank" in kw:
            kw["size_rank"] = {**DEFAULT_SIZE_RANK, **kw["size_rank"]}
        return cls(**kw)


def generate_scene(config: GeneratorConfig, seed: int) -> SceneGraph:
    rng = np.random.default_rng(seed)
    cats = sorted(config.category_weights)
    w = np.array([config.category_weights[c] for c in cats], dtype=float)
    n = int(rng.integers(config.min_objects, config.max_objects + 1))
    drawn = [cats[k] for k in rng.choice(len(cats), size=n, p=w / w.sum())]
    # containers are placed first
    order = [c for c in drawn if c in config.containers] + [c for c in drawn if c not in config.containers]
    rank = lambda c: config.size_rank.get(c, 0)  # noqa: E731

    edges: list[Edge] = []
    placed: list[int] = []
    for k, cat in enumerate(order):
        u = rng.random()
        if cat in config.containers:
            hosts = [j for j in placed if order[j] in config.containers and rank(order[j]) > rank(cat)]
            if hosts and u < config.p_container_stack:
                edges.append(Edge(hosts[int(rng.integers(len(hosts)))], k, SupportKind.STABLE))
        else:
            hosts = [j for j in placed if order[j] in config.containers]
            larger = [j for j in placed if rank(order[j]) > rank(cat)]
            if hosts and u < config.p_stable:
                edges.append(Edge(hosts[int(rng.integers(len(hosts)))], k, SupportKind.STABLE))
            elif larger and u < config.p_stable + config.p_weak:
                n_par = min(len(larger), 1 + int(rng.random() < 0.3))
                for j in rng.choice(len(larger), size=n_par, replace=False):
                    edges.append(Edge(larger[int(j)], k, SupportKind.WEAK))
        placed.append(k)

    perm = rng.permutation(n)  # perm[k] = public id of the k-th placed object
    categories = [""] * n
    for k, cat in enumerate(order):
        categories[perm[k]] = cat
    return SceneGraph(
        tuple(categories),
        frozenset(Edge(int(perm[e.parent]), int(perm[e.child]), e.kind) for e in edges),
    )


# --------------------------------------------------------------------------
# environment


@dataclass
class GroundTruthScene:
    graph: SceneGraph
    seed: int | None = None
    present: set[int] = field(default_factory=set)
    placed: dict[int, Destination] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.present:
            self.present = set(range(self.graph.n_objects))

    @property
    def current(self) -> SceneGraph:
        return self.graph.restricted(self.present)


def observe(scene: GroundTruthScene, noise: NoiseProfile, rng: np.random.Generator) -> Observation:
    """Noisy detection and relation report of the current scene.

    Random draws do not depend on the outcome, so a fixed rng stream gives the
    same noise pattern whatever the scene state.
    """
    n = scene.graph.n_objects
    u_det = rng.random(n)
    u_rel = rng.random((n, n))
    wrong = rng.integers(0, N_RELATION_CLASSES - 1, size=(n, n))
    rc = noise.recall_vector(scene.graph.categories)
    det = np.array([i in scene.present for i in range(n)]) & (u_det < rc)
    truth = relation_matrix(scene.current).codes
    rel = np.full((n, n), -1, dtype=np.int8)
    ids = np.flatnonzero(det)
    for a, i in enumerate(ids):
        for j in ids[a + 1:]:
            z = int(truth[i, j])
            if u_rel[i, j] >= rc[i] * rc[j]:
                w = int(wrong[i, j])
                z = w if w < z else w + 1
            rel[i, j] = z
            rel[j, i] = MIRROR[z]
    return Observation(frozenset(int(i) for i in ids), rel)


def execute(scene: GroundTruthScene, action: Action, noise: NoiseProfile,
            rng: np.random.Generator) -> tuple[bool, Observation]:
    """Resolve one action in place; returns (success, next observation)."""
    u = rng.random()
    ok = False
    if action.is_grasp and action.obj in scene.present:
        o = action.obj
        if u < noise.success(scene.graph.categories[o]):
            for m in stable_closure(scene.current, o):
                scene.placed[m] = action.destination
                scene.present.discard(m)
            ok = True
    return ok, observe(scene, noise, rng)


class SimExecutor:
    """Executor over a ground-truth scene; keeps an audit trace."""

    def __init__(self, scene: GroundTruthScene, noise: NoiseProfile, seed: int | np.random.Generator):
        self.scene = scene
        self.noise = noise
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.trace: list[dict] = []
        self.actions: list[Action] = []

    def observe(self) -> Observation:
        obs = observe(self.scene, self.noise, self.rng)
        self.trace.append({"step": 0, "action": "observe", "outcome": None, "observation": obs.digest()})
        return obs

    def execute(self, action: Action) -> Observation:
        ok, obs = execute(self.scene, action, self.noise, self.rng)
        self.actions.append(action)
        self.trace.append({
            "step": len(self.trace),
            "action": str(action),
            "outcome": "success" if ok else "failure",
            "observation": obs.digest(),
        })
        return obs

    def write_trace(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for rec in self.trace:
                fh.write(json.dumps(rec) + "\n")


@dataclass(frozen=True)
class AnnotatedChain:
    aos: frozenset[tuple[int, Destination]]
    plan: object = None


def annotate_reference(graph: SceneGraph, targets: Iterable[int],
                       params: RewardParams = RewardParams()) -> AnnotatedChain:
    """Reference chain: the planner's choice on the true scene with perfect models."""
    plan = plan_scene(graph, targets, params)
    return AnnotatedChain(plan.aos(), plan)


# --------------------------------------------------------------------------
# episodes and corpora


@dataclass(frozen=True)
class EpisodeConfig:
    task: Task
    noise: NoiseProfile
    seed: int
    horizon: int | None = None
    retry_cap: int = 3


def sample_targets(graph: SceneGraph, task: Task | str, rng: np.random.Generator) -> tuple[int, ...]:
    task = Task(task)
    n = graph.n_objects
    if n == 0:
        return ()
    if task is Task.TC:
        return tuple(range(n))
    k = 1 if task is Task.ST else min(n, int(rng.integers(2, 5)))
    return tuple(sorted(int(i) for i in rng.choice(n, size=k, replace=False)))


def scene_seeds(seed: int, count: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


def write_corpus(out_dir: str | Path, count: int, config: GeneratorConfig, seed: int) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, s in enumerate(scene_seeds(seed, count)):
        g = generate_scene(config, s)
        name = f"scene_{k:05d}.json"
        save_scene(g, out / name, {"seed": s})
        entries.append({"file": name, "seed": s, "n_objects": g.n_objects})
    manifest = {"seed": seed, "count": count, "generator": config.to_dict(), "scenes": entries}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def read_corpus(corpus_dir: str | Path, known_categories: Iterable[str] | None = None) -> list[tuple[str, SceneGraph]]:
    root = Path(corpus_dir)
    manifest = root / "manifest.json"
    if manifest.exists():
        names = [e["file"] for e in json.loads(manifest.read_text())["scenes"]]
    else:
        names = sorted(p.name for p in root.glob("scene_*.json"))
    return [(name, load_scene(root / name, known_categories)) for name in names]


def generate_corpus(count: int, config: GeneratorConfig, seed: int) -> list[SceneGraph]:
    return [generate_scene(config, s) for s in scene_seeds(seed, count)]
