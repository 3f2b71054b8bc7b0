"""Scene model: objects, support edges, relation classes and descendant tables.

A scene is a rooted DAG. The operating table is a virtual root that is never
materialized as an object id; every object without a parent hangs off it.
"""

from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np


class RelationClass(IntEnum):
    """Relation of object ``i`` towards object ``j`` (read: "i is ... of j")."""

    ORDINARY_PARENT = 0
    ORDINARY_CHILD = 1
    NATURAL_PARENT = 2
    NATURAL_CHILD = 3
    NO_RELATION = 4

    def mirror(self) -> "RelationClass":
        return RelationClass(int(MIRROR[self]))


# Extra state used by beliefs and joint states: the pair does not exist.
ABSENT = 5
N_RELATION_CLASSES = 5
MIRROR = np.array([1, 0, 3, 2, 4, 5], dtype=np.int8)


class SupportKind(str, Enum):
    STABLE = "stable"
    WEAK = "weak"


class Edge(NamedTuple):
    parent: int
    child: int
    kind: SupportKind


class SceneError(ValueError):
    """Malformed scene data (bad ids, unknown categories, broken JSON)."""


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True, eq=False)
class SceneGraph:
    """Objects (index = id) plus typed support edges.

    Immutable; derived adjacency is cached on first use.
    """

    categories: tuple[str, ...]
    edges: frozenset[Edge] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        object.__setattr__(self, "categories", tuple(self.categories))
        object.__setattr__(
            self,
            "edges",
            frozenset(Edge(int(e[0]), int(e[1]), SupportKind(e[2])) for e in self.edges),
        )

    @classmethod
    def build(
        cls,
        categories: Sequence[str],
        stable: Iterable[tuple[int, int]] = (),
        weak: Iterable[tuple[int, int]] = (),
    ) -> "SceneGraph":
        edges = [Edge(p, c, SupportKind.STABLE) for p, c in stable]
        edges += [Edge(p, c, SupportKind.WEAK) for p, c in weak]
        return cls(tuple(categories), frozenset(edges))

    @property
    def n_objects(self) -> int:
        return len(self.categories)

    @property
    def objects(self) -> list[tuple[int, str]]:
        return list(enumerate(self.categories))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SceneGraph):
            return NotImplemented
        return self.categories == other.categories and self.edges == other.edges

    def __hash__(self) -> int:
        return hash((self.categories, self.edges))

    def __repr__(self) -> str:
        edges = ", ".join(
            f"{e.parent}{'=>' if e.kind is SupportKind.STABLE else '->'}{e.child}"
            for e in sorted(self.edges)
        )
        return f"SceneGraph({list(self.categories)}, [{edges}])"

    @cached_property
    def _children(self) -> tuple[tuple[tuple[int, SupportKind], ...], ...]:
        out: list[list[tuple[int, SupportKind]]] = [[] for _ in self.categories]
        for e in sorted(self.edges):
            if 0 <= e.parent < self.n_objects:
                out[e.parent].append((e.child, e.kind))
        return tuple(tuple(c) for c in out)

    @cached_property
    def _parents(self) -> tuple[tuple[tuple[int, SupportKind], ...], ...]:
        out: list[list[tuple[int, SupportKind]]] = [[] for _ in self.categories]
        for e in sorted(self.edges):
            if 0 <= e.child < self.n_objects:
                out[e.child].append((e.parent, e.kind))
        return tuple(tuple(p) for p in out)

    def children(self, o: int, kind: SupportKind | str | None = None) -> list[int]:
        return [c for c, k in self._children[o] if kind is None or k == kind]

    def parents(self, o: int, kind: SupportKind | str | None = None) -> list[int]:
        return [p for p, k in self._parents[o] if kind is None or k == kind]

    def descendants(self, o: int) -> set[int]:
        seen: set[int] = set()
        stack = list(self.children(o))
        while stack:
            c = stack.pop()
            if c not in seen:
                seen.add(c)
                stack.extend(self.children(c))
        return seen

    def ancestors(self, o: int) -> set[int]:
        seen: set[int] = set()
        stack = list(self.parents(o))
        while stack:
            p = stack.pop()
            if p not in seen:
                seen.add(p)
                stack.extend(self.parents(p))
        return seen

    def restricted(self, present: Iterable[int]) -> "SceneGraph":
        """Same ids; only edges whose endpoints are both in ``present``."""
        keep = set(present)
        return SceneGraph(
            self.categories,
            frozenset(e for e in self.edges if e.parent in keep and e.child in keep),
        )

    def with_edges(self, edges: Iterable[Edge]) -> "SceneGraph":
        return SceneGraph(self.categories, frozenset(edges))

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "objects": [{"id": i, "category": c} for i, c in enumerate(self.categories)],
            "edges": [
                {"parent": e.parent, "child": e.child, "kind": e.kind.value}
                for e in sorted(self.edges)
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping, known_categories: Iterable[str] | None = None) -> "SceneGraph":
        try:
            objs = sorted(data["objects"], key=lambda o: int(o["id"]))
            ids = [int(o["id"]) for o in objs]
            cats = [str(o["category"]) for o in objs]
            raw_edges = data.get("edges", [])
            edges = [
                Edge(int(e["parent"]), int(e["child"]), SupportKind(str(e["kind"]).lower()))
                for e in raw_edges
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneError(f"malformed scene data: {exc}") from exc
        if ids != list(range(len(ids))):
            raise SceneError(f"object ids must be dense 0..{len(ids) - 1}, got {ids}")
        if known_categories is not None:
            known = set(known_categories)
            missing = sorted({c for c in cats if c not in known})
            if missing:
                raise SceneError(
                    "unknown categories with no NoiseProfile entry: " + ", ".join(missing)
                )
        for e in edges:
            if not (0 <= e.parent < len(ids) and 0 <= e.child < len(ids)):
                raise SceneError(f"edge {e.parent}->{e.child} references an unknown id")
        return cls(tuple(cats), frozenset(edges))


def load_scene(path: str | Path, known_categories: Iterable[str] | None = None) -> SceneGraph:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: invalid JSON: {exc}") from exc
    return SceneGraph.from_dict(data, known_categories)


def save_scene(graph: SceneGraph, path: str | Path, meta: Mapping | None = None) -> None:
    data = graph.to_dict()
    if meta:
        data["meta"] = dict(meta)
    Path(path).write_text(json.dumps(data, indent=1) + "\n")


# --------------------------------------------------------------------------
# operations


def validate_scene(graph: SceneGraph) -> ValidationResult:
    """Check structural invariants; violations are returned, never raised."""
    n = graph.n_objects
    problems: list[str] = []
    pairs: dict[tuple[int, int], list[SupportKind]] = {}
    for e in sorted(graph.edges):
        if not (0 <= e.parent < n and 0 <= e.child < n):
            problems.append(f"edge {e.parent}->{e.child} references an unknown id")
            continue
        if e.parent == e.child:
            problems.append(f"self edge on {e.parent}")
            continue
        pairs.setdefault((e.parent, e.child), []).append(e.kind)
    for (p, c), kinds in sorted(pairs.items()):
        if len(kinds) > 1:
            problems.append(f"pair {p}->{c} has both stable and weak edges")
        if p < c and (c, p) in pairs:
            problems.append(f"symmetry breach: {p} and {c} each support the other")
    for c in range(n):
        incoming = [p for (p, cc) in pairs if cc == c]
        n_stable = sum(1 for p in incoming if SupportKind.STABLE in pairs[(p, c)])
        if n_stable and len(incoming) > 1:
            problems.append(f"stable child {c} has {len(incoming)} parents")
    if _find_cycle(n, pairs.keys()) is not None:
        problems.append("support edges contain a cycle")
    # the virtual root feeds every parentless object
    has_parent = {c for (_, c) in pairs}
    reached = {o for o in range(n) if o not in has_parent}
    queue = deque(reached)
    adj: dict[int, list[int]] = {}
    for p, c in pairs:
        adj.setdefault(p, []).append(c)
    while queue:
        o = queue.popleft()
        for c in adj.get(o, ()):
            if c not in reached:
                reached.add(c)
                queue.append(c)
    for o in range(n):
        if o not in reached:
            problems.append(f"object {o} unreachable from the table root")
    return ValidationResult(tuple(problems))


def _find_cycle(n: int, pairs: Iterable[tuple[int, int]]) -> list[int] | None:
    adj: dict[int, list[int]] = {}
    for p, c in pairs:
        adj.setdefault(p, []).append(c)
    color = [0] * n
    for start in range(n):
        if color[start]:
            continue
        stack = [(start, iter(adj.get(start, ())))]
        path = [start]
        color[start] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = 2
                stack.pop()
                path.pop()
            elif color[nxt] == 1:
                return path[path.index(nxt):] + [nxt]
            elif color[nxt] == 0:
                color[nxt] = 1
                path.append(nxt)
                stack.append((nxt, iter(adj.get(nxt, ()))))
    return None


class RelationMatrix:
    """Direct-edge relation classes for every ordered pair ``(i, j)``, ``i != j``."""

    def __init__(self, codes: np.ndarray):
        self.codes = codes

    def __getitem__(self, ij: tuple[int, int]) -> RelationClass:
        i, j = ij
        if i == j:
            raise ValueError(f"relation of object {i} with itself is undefined")
        return RelationClass(int(self.codes[i, j]))

    def __len__(self) -> int:
        return len(self.codes)


def relation_matrix(graph: SceneGraph) -> RelationMatrix:
    n = graph.n_objects
    codes = np.full((n, n), RelationClass.NO_RELATION, dtype=np.int8)
    np.fill_diagonal(codes, ABSENT)
    for e in graph.edges:
        if e.kind is SupportKind.STABLE:
            codes[e.parent, e.child] = RelationClass.NATURAL_PARENT
            codes[e.child, e.parent] = RelationClass.NATURAL_CHILD
        else:
            codes[e.parent, e.child] = RelationClass.ORDINARY_PARENT
            codes[e.child, e.parent] = RelationClass.ORDINARY_CHILD
    return RelationMatrix(codes)


def build_descendant_table(graph: SceneGraph) -> dict[int, tuple[int, ...]]:
    """Leaf-to-root ordering of every object's subtree, object itself last.

    Each subtree member appears once; ties go to the smaller id.
    """
    table: dict[int, tuple[int, ...]] = {}
    for o in range(graph.n_objects):
        members = graph.descendants(o) | {o}
        if o in graph.descendants(o):
            raise ValueError(f"cycle through object {o}")
        pending = {m: sum(1 for c in graph.children(m) if c in members) for m in members}
        heap = [m for m, k in pending.items() if k == 0]
        heapq.heapify(heap)
        order: list[int] = []
        while heap:
            m = heapq.heappop(heap)
            order.append(m)
            for p in graph.parents(m):
                if p in pending:
                    pending[p] -= 1
                    if pending[p] == 0:
                        heapq.heappush(heap, p)
        if len(order) != len(members):
            raise ValueError(f"cycle in subtree of object {o}")
        table[o] = tuple(order)
    return table


def stable_closure(graph: SceneGraph, o: int) -> tuple[int, ...]:
    """``o`` plus everything reachable through stable edges (moves with ``o``)."""
    out = [o]
    seen = {o}
    queue = deque([o])
    while queue:
        cur = queue.popleft()
        for c in graph.children(cur, SupportKind.STABLE):
            if c not in seen:
                seen.add(c)
                out.append(c)
                queue.append(c)
    return tuple(out)


def topological_leaf_first(graph: SceneGraph, objects: Iterable[int] | None = None) -> list[int]:
    """Children before parents across the given objects, ties by ascending id."""
    members = set(range(graph.n_objects)) if objects is None else set(objects)
    done: list[int] = []
    remaining = set(members)
    while remaining:
        ready = sorted(m for m in remaining if all(c not in remaining for c in graph.descendants(m)))
        if not ready:
            raise ValueError("cycle among objects")
        done.append(ready[0])
        remaining.remove(ready[0])
    return done


def graph_from_codes(
    categories: Sequence[str],
    codes: np.ndarray,
    present: Iterable[int],
    confidence: np.ndarray | None = None,
) -> SceneGraph:
    """Turn a (possibly inconsistent) relation-code matrix into a valid scene.

    Only pairs among ``present`` are read, from the upper triangle. Conflicts
    are repaired by confidence: a stable child keeps its most confident parent
    (or is demoted to weak support when a weak parent is more confident), and
    cycles lose their least confident edge.
    """
    n = len(categories)
    conf = np.ones((n, n)) if confidence is None else confidence
    alive = sorted(set(present))
    cand: dict[tuple[int, int], tuple[SupportKind, float]] = {}
    for a_idx, i in enumerate(alive):
        for j in alive[a_idx + 1:]:
            c = int(codes[i, j])
            w = float(conf[i, j])
            if c == RelationClass.NATURAL_PARENT:
                cand[(i, j)] = (SupportKind.STABLE, w)
            elif c == RelationClass.NATURAL_CHILD:
                cand[(j, i)] = (SupportKind.STABLE, w)
            elif c == RelationClass.ORDINARY_PARENT:
                cand[(i, j)] = (SupportKind.WEAK, w)
            elif c == RelationClass.ORDINARY_CHILD:
                cand[(j, i)] = (SupportKind.WEAK, w)
    by_child: dict[int, list[tuple[float, int, SupportKind]]] = {}
    for (p, c), (kind, w) in cand.items():
        by_child.setdefault(c, []).append((w, p, kind))
    for c, inc in by_child.items():
        if len(inc) < 2 or all(k is SupportKind.WEAK for _, _, k in inc):
            continue
        inc.sort(key=lambda t: (-t[0], t[1]))
        w0, p0, k0 = inc[0]
        if k0 is SupportKind.STABLE:
            for _, p, _ in inc[1:]:
                del cand[(p, c)]
        else:
            for w, p, k in inc:
                if k is SupportKind.STABLE:
                    cand[(p, c)] = (SupportKind.WEAK, w)
    while True:
        cycle = _find_cycle(n, cand.keys())
        if cycle is None:
            break
        links = list(zip(cycle[:-1], cycle[1:]))
        drop = min(links, key=lambda pc: (cand[pc][1], -pc[0], -pc[1]))
        del cand[drop]
    return SceneGraph(tuple(categories), frozenset(Edge(p, c, k) for (p, c), (k, _) in cand.items()))
