"""Target grouping, action pruning, belief-space lookahead and the replan loop.

Two baselines live here as well: one-object-per-grasp traversal of the support
tree, and the greedy "grasp the stable parent" rule without any value search.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

from . import kernels
from .pomdp import (
    Action,
    BeliefState,
    Destination,
    NoiseProfile,
    Observation,
    RelationPrior,
    RewardParams,
    belief_update,
    reward,
)
from .scene import (
    Edge,
    RelationClass,
    SceneGraph,
    SupportKind,
    build_descendant_table,
    stable_closure,
    topological_leaf_first,
)

PLANNERS = ("pomdp", "one_by_one", "rule_only")


@dataclass(frozen=True)
class TargetGroup:
    members: frozenset[int]
    root: int

    def __repr__(self) -> str:
        return f"TargetGroup({sorted(self.members)}, root={self.root})"


@dataclass(frozen=True)
class Grouping:
    groups: tuple[TargetGroup, ...]
    working: SceneGraph


@dataclass(frozen=True)
class PlanStep:
    action: Action
    moved: tuple[int, ...]

    @property
    def obj(self) -> int:
        return self.action.obj

    @property
    def destination(self) -> Destination:
        return self.action.destination


@dataclass(frozen=True)
class Plan:
    steps: tuple[PlanStep, ...] = ()
    value: float = 0.0

    @property
    def grasp_count(self) -> int:
        return len(self.steps)

    def aos(self) -> frozenset[tuple[int, Destination]]:
        return frozenset((s.obj, s.destination) for s in self.steps)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "steps": [
                {
                    "action": s.action.kind.value,
                    "object": s.obj,
                    "moved": list(s.moved),
                    "dest": s.destination.value,
                }
                for s in self.steps
            ],
        }

    def render(self, categories: Sequence[str] | None = None) -> str:
        """Decision chain text; objects in parentheses ride along with the grasp."""
        name = (lambda i: f"{categories[i]}#{i}") if categories else str
        parts = []
        for s in self.steps:
            riders = [name(m) for m in s.moved if m != s.obj]
            extra = f"({', '.join(riders)})" if riders else ""
            parts.append(f"{name(s.obj)}{extra} -> {s.destination.value}")
        return " | ".join(parts) if parts else "report"


def check_targets(graph: SceneGraph, targets: Iterable[int]) -> frozenset[int]:
    tg = frozenset(int(t) for t in targets)
    bad = sorted(t for t in tg if not 0 <= t < graph.n_objects)
    if bad:
        raise ValueError(f"unknown target ids {bad} (scene has {graph.n_objects} objects)")
    return tg


def group_targets(graph: SceneGraph, targets: Iterable[int]) -> Grouping:
    """Stable-connected target components, ordered leaf to root.

    Stable edges between a target and a non-target are downgraded to weak in
    the returned working graph, so targets and non-targets never move together.
    """
    tg = check_targets(graph, targets)
    edges = []
    for e in graph.edges:
        if e.kind is SupportKind.STABLE and ((e.parent in tg) != (e.child in tg)):
            edges.append(Edge(e.parent, e.child, SupportKind.WEAK))
        else:
            edges.append(e)
    working = graph.with_edges(edges)

    comp: dict[int, int] = {}
    groups: list[TargetGroup] = []
    for t in sorted(tg):
        if t in comp:
            continue
        members = {t}
        stack = [t]
        while stack:
            cur = stack.pop()
            for nb in working.children(cur, SupportKind.STABLE) + working.parents(cur, SupportKind.STABLE):
                if nb in tg and nb not in members:
                    members.add(nb)
                    stack.append(nb)
        root = next(m for m in sorted(members) if not working.parents(m, SupportKind.STABLE))
        for m in members:
            comp[m] = len(groups)
        groups.append(TargetGroup(frozenset(members), root))

    # a group below another group's members is delivered first
    below: list[set[int]] = [set() for _ in groups]
    for gi, g in enumerate(groups):
        for m in g.members:
            for d in working.descendants(m):
                if d in comp and comp[d] != gi:
                    below[gi].add(comp[d])
    blockers = [len(b) for b in below]
    above: list[list[int]] = [[] for _ in groups]
    for gi, b in enumerate(below):
        for gj in b:
            above[gj].append(gi)
    heap = [(min(g.members), gi) for gi, g in enumerate(groups) if blockers[gi] == 0]
    heapq.heapify(heap)
    order: list[TargetGroup] = []
    while heap:
        _, gi = heapq.heappop(heap)
        order.append(groups[gi])
        for gk in above[gi]:
            blockers[gk] -= 1
            if blockers[gk] == 0:
                heapq.heappush(heap, (min(groups[gk].members), gk))
    if len(order) != len(groups):
        raise ValueError("target groups are mutually nested; support edges contain a cycle")
    return Grouping(tuple(order), working)


def action_space(
    working: SceneGraph,
    table: Mapping[int, Sequence[int]],
    group: TargetGroup,
    remaining: Iterable[int],
    targets: Iterable[int],
) -> list[Action]:
    """Legal grasps for the active group given the objects still on the table."""
    alive = set(remaining)
    tg = set(targets) & alive
    if not tg:
        return [Action.report()]
    live_members = group.members & alive
    if not live_members:
        return []
    g = working.restricted(alive)
    scope = sorted({o for m in live_members for o in table[m] if o in alive})
    to_target, to_non_target = [], []
    for o in scope:
        if g.children(o, SupportKind.WEAK):
            continue
        if o in live_members:
            if all(d in tg for d in g.descendants(o)):
                to_target.append(Action.to_target(o))
        elif o not in tg and not tg.intersection(stable_closure(g, o)):
            to_non_target.append(Action.to_non_target(o))
    return to_target + to_non_target


# --------------------------------------------------------------------------
# lookahead


def _mask(ids: Iterable[int], index: Mapping[int, int]) -> int:
    m = 0
    for i in ids:
        if i in index:
            m |= 1 << index[i]
    return m


def plan_lookahead(
    belief: BeliefState,
    targets: Iterable[int],
    noise: NoiseProfile,
    params: RewardParams = RewardParams(),
    horizon: int | None = None,
    use_numba: bool | None = None,
) -> tuple[Action, Plan]:
    """Best next action and the greedy decision chain under ``belief``.

    The search runs over the most likely scene: action nodes branch on grasp
    success/failure, observations are collapsed to the one confirming the
    outcome, rewards are expected over the relation factors.
    """
    if horizon is not None and horizon < 1:
        raise ValueError("horizon must be >= 1")
    graph = belief.map_graph()
    present = belief.present_ids()
    tg = check_targets(graph, targets) & set(present)
    if not tg:
        return Action.report(), Plan()
    grouping = group_targets(graph, tg)
    working = grouping.working

    relevant: set[int] = set()
    for grp in grouping.groups:
        for m in grp.members:
            relevant.add(m)
            relevant |= working.descendants(m)
    local = sorted(relevant)
    index = {o: k for k, o in enumerate(local)}
    n = len(local)
    partners = local + [j for j in range(belief.n_objects) if j not in index]
    # partners outside the search keep their believed presence
    weight = np.ones(len(partners))
    weight[n:] = belief.presence[partners[n:]]

    rel = belief.relations
    P_nc = np.zeros((n, len(partners)))
    P_oc = np.zeros_like(P_nc)
    P_np = np.zeros_like(P_nc)
    for k, o in enumerate(local):
        for c, j in enumerate(partners):
            if j == o:
                continue
            cond = rel[o, j] * weight[c]
            if (o in tg) != (j in tg):
                P_nc[k, c] = 0.0
                P_oc[k, c] = cond[RelationClass.ORDINARY_PARENT] + cond[RelationClass.NATURAL_PARENT]
                P_np[k, c] = 0.0
            else:
                P_nc[k, c] = cond[RelationClass.NATURAL_PARENT]
                P_oc[k, c] = cond[RelationClass.ORDINARY_PARENT]
                P_np[k, c] = cond[RelationClass.NATURAL_CHILD]

    closure = [_mask(stable_closure(working, o), index) for o in local]
    desc = [_mask(working.descendants(o), index) for o in local]
    ochild = [_mask(working.children(o, SupportKind.WEAK), index) for o in local]
    succ = noise.success_vector([belief.categories[o] for o in local])
    is_target = np.array([o in tg for o in local])
    order = [k for k in range(n) if is_target[k]] + [k for k in range(n) if not is_target[k]]
    group_members = [_mask(g.members, index) for g in grouping.groups]
    group_scope = [gm | _mask(set().union(*(working.descendants(m) for m in g.members)), index)
                   for gm, g in zip(group_members, grouping.groups)]
    H = horizon if horizon is not None else max(1, 2 * n)

    er = kernels.reward_table(
        n, P_nc, P_oc, P_np, params.base_penalty, params.nc_gain, params.oc_gain,
        params.np_penalty, use_numba=use_numba,
    )
    V, A = kernels.solve_values(
        n, H, er, closure, desc, ochild, succ, params.discount, order, is_target,
        _mask(tg, index), group_members, group_scope, use_numba=use_numba,
    )
    mask = (1 << n) - 1
    steps = []
    for h in range(H, 0, -1):
        a = int(A[h, mask])
        if a < 0:
            break
        o = local[a]
        moved = tuple(local[b] for b in range(n) if (closure[a] & mask) >> b & 1)
        moved = (o,) + tuple(m for m in moved if m != o)
        act = Action.to_target(o) if is_target[a] else Action.to_non_target(o)
        steps.append(PlanStep(act, moved))
        mask &= ~closure[a]
    plan = Plan(tuple(steps), float(V[H, (1 << n) - 1]))
    first = steps[0].action if steps else Action.report()
    return first, plan


def plan_scene(
    graph: SceneGraph,
    targets: Iterable[int],
    params: RewardParams = RewardParams(),
    noise: NoiseProfile | None = None,
    horizon: int | None = None,
) -> Plan:
    """Plan on a fully known scene (point-mass belief)."""
    noise = noise or NoiseProfile.perfect(set(graph.categories))
    return plan_lookahead(BeliefState.point_mass(graph), targets, noise, params, horizon)[1]


# --------------------------------------------------------------------------
# baselines


def _chain_value(graph: SceneGraph, steps: Sequence[PlanStep], params: RewardParams) -> float:
    alive = set(range(graph.n_objects))
    total, disc = 0.0, 1.0
    for s in steps:
        total += disc * reward(graph, s.action, params, alive)
        alive -= set(s.moved)
        disc *= params.discount
    return total


def _grasp(o: int, moved: Iterable[int], targets: set[int]) -> PlanStep:
    moved = tuple(moved)
    act = Action.to_target(o) if targets.intersection(moved) else Action.to_non_target(o)
    return PlanStep(act, moved)


def baseline_one_by_one(graph: SceneGraph, targets: Iterable[int], params: RewardParams = RewardParams()) -> Plan:
    """Remove every descendant of each target singly, bottom-up, then the target."""
    tg = set(check_targets(graph, targets))
    alive = set(range(graph.n_objects))
    steps = []
    for t in topological_leaf_first(graph, tg):
        if t not in alive:
            continue
        g = graph.restricted(alive)
        for o in build_descendant_table(g)[t]:
            if o in alive:
                steps.append(_grasp(o, (o,), tg))
                alive.discard(o)
    return Plan(tuple(steps), _chain_value(graph, steps, params))


def baseline_rule_only(graph: SceneGraph, targets: Iterable[int], params: RewardParams = RewardParams()) -> Plan:
    """Greedy rule: grasp the deepest free stable root above each target."""
    tg = set(check_targets(graph, targets))
    alive = set(range(graph.n_objects))
    steps = []
    for t in topological_leaf_first(graph, tg):
        while t in alive:
            g = graph.restricted(alive)
            r = t
            while g.parents(r, SupportKind.STABLE):
                r = g.parents(r, SupportKind.STABLE)[0]
            for x in build_descendant_table(g)[r]:
                if g.parents(x, SupportKind.STABLE):
                    continue
                closure = stable_closure(g, x)
                if g.descendants(x) <= set(closure):
                    break
            steps.append(_grasp(x, closure, tg))
            alive -= set(closure)
    return Plan(tuple(steps), _chain_value(graph, steps, params))


BASELINES: dict[str, Callable[[SceneGraph, Iterable[int], RewardParams], Plan]] = {
    "one_by_one": baseline_one_by_one,
    "rule_only": baseline_rule_only,
}


# --------------------------------------------------------------------------
# closed loop


class Executor(Protocol):
    def observe(self) -> Observation: ...

    def execute(self, action: Action) -> Observation: ...


Policy = Callable[[BeliefState, Observation, frozenset], Action]


def pomdp_policy(noise: NoiseProfile, params: RewardParams = RewardParams(),
                 horizon: int | None = None) -> Policy:
    def choose(belief: BeliefState, obs: Observation, targets: frozenset) -> Action:
        return plan_lookahead(belief, targets, noise, params, horizon)[0]

    return choose


def baseline_policy(name: str, params: RewardParams = RewardParams()) -> Policy:
    """Baselines act on the latest raw observation only."""
    fn = BASELINES[name]

    def choose(belief: BeliefState, obs: Observation, targets: frozenset) -> Action:
        graph = obs.graph(belief.categories).restricted(obs.detections)
        seen = targets & obs.detections
        if not seen:
            return Action.report()
        plan = fn(graph, seen, params)
        return plan.steps[0].action if plan.steps else Action.report()

    return choose


@dataclass
class EpisodeTrace:
    actions: list[Action] = field(default_factory=list)
    digests: list[str] = field(default_factory=list)
    presence: list[np.ndarray] = field(default_factory=list)
    failed: bool = False
    reported: bool = False

    @property
    def grasp_count(self) -> int:
        return len(self.actions)

    def chain(self) -> list[tuple[int, Destination]]:
        return [(a.obj, a.destination) for a in self.actions]

    def aos(self) -> frozenset[tuple[int, Destination]]:
        return frozenset(self.chain())


def replan_loop(
    executor: Executor,
    targets: Iterable[int],
    noise: NoiseProfile,
    categories: Sequence[str],
    params: RewardParams = RewardParams(),
    horizon: int | None = None,
    retry_cap: int = 3,
    policy: Policy | None = None,
    prior: RelationPrior | None = None,
    presence_prior: float = 1.0,
) -> EpisodeTrace:
    """Plan, execute the first action, update the belief; repeat until report."""
    tg = frozenset(int(t) for t in targets)
    policy = policy or pomdp_policy(noise, params, horizon)
    n = len(categories)
    belief = BeliefState.initial(categories, presence_prior, prior)
    obs = executor.observe()
    belief = belief_update(belief, Action.report(), obs, noise)
    trace = EpisodeTrace(presence=[belief.presence.copy()])
    # budget of retry_cap attempts per grasp of a worst-case 2n-step chain
    budget = 2 * n * retry_cap
    while True:
        action = policy(belief, obs, tg)
        if not action.is_grasp:
            trace.reported = True
            break
        if trace.grasp_count >= budget:
            trace.failed = True
            break
        obs = executor.execute(action)
        trace.actions.append(action)
        trace.digests.append(obs.digest())
        belief = belief_update(belief, action, obs, noise)
        trace.presence.append(belief.presence.copy())
    return trace
