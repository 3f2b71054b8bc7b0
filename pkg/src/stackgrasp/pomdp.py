"""Factored POMDP pieces: noise/reward models, states, observations, beliefs.

The joint state is one presence bit per object plus one relation code per
ordered pair. Beliefs are kept factored: a presence probability per object and,
per pair, a distribution over the five relation classes conditioned on both
objects being present. The full pair factor (with the ``Absent`` outcome) is
reconstructed on demand.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .kernels import expected_count_reward
from .scene import (
    ABSENT,
    MIRROR,
    N_RELATION_CLASSES,
    RelationClass,
    SceneGraph,
    SupportKind,
    graph_from_codes,
    relation_matrix,
)

DEFAULT_CATEGORIES = (
    "plate", "bowl", "mug", "spoon", "fork", "knife", "apple", "banana",
    "orange", "pear", "lemon", "peach", "strawberry", "plum", "kiwi",
)

# Illustrative defaults, not measured values.
DEFAULT_GRASP_SUCCESS = {c: 0.9 for c in DEFAULT_CATEGORIES} | {
    "plate": 0.3, "knife": 0.7, "fork": 0.7, "spoon": 0.7,
}
DEFAULT_RECALL = {c: 0.96 for c in DEFAULT_CATEGORIES} | {
    "plate": 0.97, "bowl": 0.98, "mug": 0.98, "spoon": 0.93, "fork": 0.93, "knife": 0.93,
}

_NC = RelationClass.NATURAL_PARENT  # partner is a natural child of the row object
_OC = RelationClass.ORDINARY_PARENT
_NP = RelationClass.NATURAL_CHILD  # partner is a natural parent of the row object


class ImpossibleObservation(ValueError):
    """The observation has zero likelihood under the belief and models."""


def _check_table(name: str, table: Mapping[str, float]) -> dict[str, float]:
    out = {}
    for cat, v in table.items():
        v = float(v)
        if not (0.0 < v <= 1.0):
            raise ValueError(f"{name}[{cat!r}] = {v} outside (0, 1]")
        out[str(cat)] = v
    return out


@dataclass(frozen=True)
class NoiseProfile:
    """Per-category detection recall and grasp success probability."""

    recall: Mapping[str, float]
    grasp_success: Mapping[str, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "recall", _check_table("recall", self.recall))
        object.__setattr__(self, "grasp_success", _check_table("grasp_success", self.grasp_success))

    @classmethod
    def default(cls) -> "NoiseProfile":
        return cls(dict(DEFAULT_RECALL), dict(DEFAULT_GRASP_SUCCESS))

    @classmethod
    def uniform(cls, categories: Iterable[str], recall: float = 1.0, grasp_success: float = 1.0) -> "NoiseProfile":
        cats = list(categories)
        return cls({c: recall for c in cats}, {c: grasp_success for c in cats})

    @classmethod
    def perfect(cls, categories: Iterable[str] = DEFAULT_CATEGORIES) -> "NoiseProfile":
        return cls.uniform(categories, 1.0, 1.0)

    def with_values(self, recall: float | None = None, grasp_success: float | None = None) -> "NoiseProfile":
        rc = {c: recall for c in self.recall} if recall is not None else dict(self.recall)
        gs = {c: grasp_success for c in self.grasp_success} if grasp_success is not None else dict(self.grasp_success)
        return NoiseProfile(rc, gs)

    def updated(self, recall: Mapping[str, float] = {}, grasp_success: Mapping[str, float] = {}) -> "NoiseProfile":
        return NoiseProfile(dict(self.recall) | dict(recall), dict(self.grasp_success) | dict(grasp_success))

    @property
    def categories(self) -> frozenset[str]:
        return frozenset(self.recall) & frozenset(self.grasp_success)

    def missing(self, categories: Iterable[str]) -> list[str]:
        return sorted({c for c in categories if c not in self.recall or c not in self.grasp_success})

    def rc(self, category: str) -> float:
        try:
            return self.recall[category]
        except KeyError:
            raise KeyError(f"no recall entry for category {category!r}") from None

    def success(self, category: str) -> float:
        try:
            return self.grasp_success[category]
        except KeyError:
            raise KeyError(f"no grasp_success entry for category {category!r}") from None

    def recall_vector(self, categories: Sequence[str]) -> np.ndarray:
        return np.array([self.rc(c) for c in categories], dtype=np.float64)

    def success_vector(self, categories: Sequence[str]) -> np.ndarray:
        return np.array([self.success(c) for c in categories], dtype=np.float64)

    def to_dict(self) -> dict:
        return {"recall": dict(self.recall), "grasp_success": dict(self.grasp_success)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "NoiseProfile":
        return cls(dict(data["recall"]), dict(data["grasp_success"]))

    @classmethod
    def load(cls, path: str | Path) -> "NoiseProfile":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class RewardParams:
    base_penalty: float = -10.0
    nc_gain: float = 5.0
    oc_gain: float = -10.0
    np_penalty: float = -2.0
    discount: float = 0.8

    def __post_init__(self) -> None:
        if not self.base_penalty < 0:
            raise ValueError("base_penalty must be negative")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")


class ActionKind(str, Enum):
    GRASP_TO_TARGET = "grasp_to_target"
    GRASP_TO_NON_TARGET = "grasp_to_non_target"
    REPORT = "report"


class Destination(str, Enum):
    TARGET = "target"
    NON_TARGET = "non_target"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    obj: int | None = None

    @classmethod
    def to_target(cls, o: int) -> "Action":
        return cls(ActionKind.GRASP_TO_TARGET, int(o))

    @classmethod
    def to_non_target(cls, o: int) -> "Action":
        return cls(ActionKind.GRASP_TO_NON_TARGET, int(o))

    @classmethod
    def report(cls) -> "Action":
        return cls(ActionKind.REPORT)

    @property
    def is_grasp(self) -> bool:
        return self.kind is not ActionKind.REPORT

    @property
    def destination(self) -> Destination | None:
        if self.kind is ActionKind.GRASP_TO_TARGET:
            return Destination.TARGET
        if self.kind is ActionKind.GRASP_TO_NON_TARGET:
            return Destination.NON_TARGET
        return None

    def __str__(self) -> str:
        if not self.is_grasp:
            return "report"
        return f"{self.kind.value}({self.obj})"


def all_actions(n_objects: int) -> list[Action]:
    out = [Action.to_target(o) for o in range(n_objects)]
    out += [Action.to_non_target(o) for o in range(n_objects)]
    return out + [Action.report()]


@dataclass(frozen=True)
class ObjectState:
    present: bool
    relations: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.present and any(r != ABSENT for r in self.relations):
            raise ValueError("an absent object cannot hold relations")


@dataclass(frozen=True, eq=False)
class JointState:
    """Presence bits and relation codes (``ABSENT`` where a pair does not exist)."""

    present: np.ndarray
    relations: np.ndarray

    @classmethod
    def from_graph(cls, graph: SceneGraph, present: Iterable[int] | None = None) -> "JointState":
        n = graph.n_objects
        alive = np.zeros(n, dtype=bool)
        alive[list(range(n)) if present is None else list(present)] = True
        codes = relation_matrix(graph.restricted(np.flatnonzero(alive))).codes.copy()
        codes[~alive, :] = ABSENT
        codes[:, ~alive] = ABSENT
        return cls(alive, codes)

    @property
    def n_objects(self) -> int:
        return len(self.present)

    def object_state(self, i: int) -> ObjectState:
        return ObjectState(bool(self.present[i]), tuple(int(c) for c in self.relations[i]))

    def same_as(self, other: "JointState") -> bool:
        return bool(
            np.array_equal(self.present, other.present)
            and np.array_equal(self.relations, other.relations)
        )

    def graph(self, categories: Sequence[str]) -> SceneGraph:
        return graph_from_codes(categories, self.relations, np.flatnonzero(self.present))

    def closure(self, o: int) -> list[int]:
        out = [o]
        seen = {o}
        i = 0
        while i < len(out):
            cur = out[i]
            i += 1
            for c in np.flatnonzero(self.relations[cur] == RelationClass.NATURAL_PARENT):
                c = int(c)
                if self.present[c] and c not in seen:
                    seen.add(c)
                    out.append(c)
        return out


@dataclass(frozen=True, eq=False)
class Observation:
    """Detected ids plus relation codes among detected pairs (``-1`` = not reported)."""

    detections: frozenset[int]
    relations: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "detections", frozenset(int(d) for d in self.detections))

    @property
    def n_objects(self) -> int:
        return len(self.relations)

    @classmethod
    def exact(cls, state: JointState) -> "Observation":
        det = np.flatnonzero(state.present)
        rel = np.full(state.relations.shape, -1, dtype=np.int8)
        ix = np.ix_(det, det)
        rel[ix] = state.relations[ix]
        np.fill_diagonal(rel, -1)
        return cls(frozenset(int(d) for d in det), rel)

    def relation(self, i: int, j: int) -> RelationClass | None:
        c = int(self.relations[i, j])
        return None if c < 0 else RelationClass(c)

    def validate(self) -> None:
        n = self.n_objects
        bad = [d for d in self.detections if not 0 <= d < n]
        if bad:
            raise ValueError(f"observation references unknown ids {sorted(bad)}")
        rel = self.relations
        seen = rel >= 0
        det = np.zeros(n, dtype=bool)
        det[list(self.detections)] = True
        if np.any(seen & ~(det[:, None] & det[None, :])):
            raise ValueError("relation reported for an undetected object")
        mirrored = np.where(seen, MIRROR[np.clip(rel, 0, 5)], -1)
        if not np.array_equal(mirrored, rel.T):
            raise ValueError("observed relations are not symmetric")

    def digest(self) -> str:
        h = hashlib.sha1()
        h.update(np.array(sorted(self.detections), dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.relations, dtype=np.int8).tobytes())
        return h.hexdigest()[:12]

    def graph(self, categories: Sequence[str]) -> SceneGraph:
        """Raw observed scene (no belief): detected objects and reported edges."""
        codes = np.where(self.relations >= 0, self.relations, RelationClass.NO_RELATION)
        return graph_from_codes(categories, codes, sorted(self.detections))


# --------------------------------------------------------------------------
# relation prior


@dataclass(frozen=True, eq=False)
class RelationPrior:
    """Prior over the five relation classes for an ordered pair of categories."""

    default: np.ndarray
    table: Mapping[tuple[str, str], np.ndarray] = field(default_factory=dict)

    @classmethod
    def uniform(cls) -> "RelationPrior":
        return cls(np.full(N_RELATION_CLASSES, 1.0 / N_RELATION_CLASSES))

    @classmethod
    def from_scenes(cls, graphs: Iterable[SceneGraph], alpha: float = 0.5, floor: float = 1e-4) -> "RelationPrior":
        """Dirichlet-smoothed class frequencies per ordered category pair."""
        counts: dict[tuple[str, str], np.ndarray] = {}
        total = np.zeros(N_RELATION_CLASSES)
        for g in graphs:
            codes = relation_matrix(g).codes
            n = g.n_objects
            for i in range(n):
                for j in range(n):
                    if i == j:
                        continue
                    key = (g.categories[i], g.categories[j])
                    vec = counts.setdefault(key, np.zeros(N_RELATION_CLASSES))
                    vec[codes[i, j]] += 1
                    total[codes[i, j]] += 1
        if total.sum() == 0:
            return cls.uniform()
        base = total / total.sum()
        base = np.maximum(base, floor)
        base /= base.sum()
        strength = alpha * N_RELATION_CLASSES
        table = {}
        for key, vec in counts.items():
            p = (vec + strength * base) / (vec.sum() + strength)
            p = np.maximum(p, floor)
            table[key] = p / p.sum()
        return cls(base, table)

    def for_pair(self, ci: str, cj: str) -> np.ndarray:
        return self.table.get((ci, cj), self.default)


# --------------------------------------------------------------------------
# belief


@dataclass(frozen=True, eq=False)
class BeliefState:
    categories: tuple[str, ...]
    presence: np.ndarray
    relations: np.ndarray  # (n, n, 5), conditional on both objects present

    @property
    def n_objects(self) -> int:
        return len(self.categories)

    @classmethod
    def initial(
        cls,
        categories: Sequence[str],
        presence_prior: float = 1.0,
        prior: RelationPrior | None = None,
    ) -> "BeliefState":
        cats = tuple(categories)
        n = len(cats)
        prior = prior or RelationPrior.uniform()
        rel = np.zeros((n, n, N_RELATION_CLASSES))
        for i in range(n):
            for j in range(n):
                if i != j:
                    rel[i, j] = prior.for_pair(cats[i], cats[j])
        # symmetrize from the upper triangle so (i, j) and (j, i) mirror exactly
        for i in range(n):
            for j in range(i + 1, n):
                rel[j, i] = rel[i, j][MIRROR[:N_RELATION_CLASSES]]
        return cls(cats, np.full(n, float(presence_prior)), rel)

    @classmethod
    def point_mass(cls, graph: SceneGraph, present: Iterable[int] | None = None) -> "BeliefState":
        state = JointState.from_graph(graph, present)
        codes = relation_matrix(graph).codes
        n = graph.n_objects
        rel = np.zeros((n, n, N_RELATION_CLASSES))
        for i in range(n):
            for j in range(n):
                if i != j:
                    rel[i, j, codes[i, j]] = 1.0
        return cls(graph.categories, state.present.astype(np.float64), rel)

    def relation_distribution(self, i: int, j: int) -> np.ndarray:
        """Full pair factor over the five classes plus ``Absent`` (last)."""
        out = np.zeros(N_RELATION_CLASSES + 1)
        if i == j:
            out[ABSENT] = 1.0
            return out
        both = self.presence[i] * self.presence[j]
        out[:N_RELATION_CLASSES] = both * self.relations[i, j]
        out[ABSENT] = 1.0 - both
        return out

    def factor_sums(self) -> np.ndarray:
        n = self.n_objects
        return np.array([self.relation_distribution(i, j).sum() for i in range(n) for j in range(n)])

    def present_ids(self, threshold: float = 0.5) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.presence >= threshold)]

    def map_graph(self, threshold: float = 0.5) -> SceneGraph:
        """Most likely scene among believed-present objects, repaired to a valid DAG."""
        rel = self.relations
        codes = np.argmax(rel, axis=2).astype(np.int8)
        conf = np.max(rel, axis=2)
        # ties resolve towards "no relation"
        codes[rel[:, :, RelationClass.NO_RELATION] >= conf] = RelationClass.NO_RELATION
        return graph_from_codes(self.categories, codes, self.present_ids(threshold), conf)

    def is_point_mass(self) -> bool:
        return bool(np.all((self.presence == 0) | (self.presence == 1)))


# --------------------------------------------------------------------------
# operations


def reward_from_counts(n_nc: int, n_oc: int, n_np: int, params: RewardParams = RewardParams()) -> float:
    if n_nc > 0:
        bonus = params.nc_gain * math.tanh(n_nc)
    elif n_oc > 0:
        bonus = params.oc_gain * math.tanh(n_oc)
    elif n_np > 0:
        bonus = params.np_penalty
    else:
        bonus = 0.0
    return params.base_penalty + bonus


def relation_counts(graph: SceneGraph, o: int, present: Iterable[int] | None = None) -> tuple[int, int, int]:
    """(natural children, ordinary children, natural parents) of ``o`` among present objects."""
    alive = set(range(graph.n_objects)) if present is None else set(present)
    n_nc = sum(1 for c in graph.children(o, SupportKind.STABLE) if c in alive)
    n_oc = sum(1 for c in graph.children(o, SupportKind.WEAK) if c in alive)
    n_np = sum(1 for p in graph.parents(o, SupportKind.STABLE) if p in alive)
    return n_nc, n_oc, n_np


def reward(graph: SceneGraph, action: Action, params: RewardParams = RewardParams(),
           present: Iterable[int] | None = None) -> float:
    """Relation-based grasp reward; ``present`` defaults to every object."""
    if not action.is_grasp:
        return 0.0
    alive = set(range(graph.n_objects)) if present is None else set(present)
    if action.obj not in alive:
        raise ValueError(f"grasp of absent object {action.obj}")
    return reward_from_counts(*relation_counts(graph, action.obj, alive), params)


def transition_outcomes(
    state: JointState, action: Action, noise: NoiseProfile, categories: Sequence[str]
) -> list[tuple[float, JointState]]:
    if not action.is_grasp:
        return [(1.0, state)]
    o = action.obj
    if not state.present[o]:
        raise ValueError(f"grasp of absent object {o}")
    p = noise.success(categories[o])
    moved = state.closure(o)
    present = state.present.copy()
    present[moved] = False
    rel = state.relations.copy()
    rel[moved, :] = ABSENT
    rel[:, moved] = ABSENT
    outcomes = [(p, JointState(present, rel))]
    if p < 1.0:
        outcomes.append((1.0 - p, state))
    return outcomes


def _relation_likelihood(q: float, observed: int) -> np.ndarray:
    lik = np.full(N_RELATION_CLASSES, (1.0 - q) / (N_RELATION_CLASSES - 1))
    lik[observed] = q
    return lik


def observation_probability(
    next_state: JointState,
    action: Action,
    obs: Observation,
    noise: NoiseProfile,
    categories: Sequence[str],
) -> float:
    """``p(z | s', a)``: per-object detection factors times per-pair relation factors.

    A present object is detected with its recall, an absent one never; a
    reported relation is right with probability ``rc_i * rc_j`` and otherwise
    spread evenly over the four wrong classes.
    """
    obs.validate()
    if obs.n_objects != next_state.n_objects:
        raise ValueError("observation and state disagree on the number of objects")
    rc = noise.recall_vector(categories)
    prob = 1.0
    for j in range(next_state.n_objects):
        detected = j in obs.detections
        if next_state.present[j]:
            prob *= rc[j] if detected else 1.0 - rc[j]
        elif detected:
            return 0.0
    det = sorted(obs.detections)
    for a, i in enumerate(det):
        for j in det[a + 1:]:
            z = int(obs.relations[i, j])
            if z < 0:
                continue
            q = rc[i] * rc[j]
            true = int(next_state.relations[i, j])
            prob *= q if z == true else (1.0 - q) / (N_RELATION_CLASSES - 1)
    return float(prob)


def closure_membership(belief: BeliefState, o: int) -> np.ndarray:
    """Probability that each object is present and would move with ``o``.

    Reachability over stable edges is propagated as a noisy-OR fixed point, so
    cycles in the uncertain relation graph cannot push a value above one.
    """
    b = belief.presence
    S = belief.relations[:, :, RelationClass.NATURAL_PARENT] * b[None, :]
    np.fill_diagonal(S, 0.0)
    S[:, o] = 0.0
    pi = np.zeros(belief.n_objects)
    pi[o] = 1.0
    for _ in range(belief.n_objects):
        nxt = 1.0 - np.prod(1.0 - pi[:, None] * S, axis=0)
        nxt[o] = 1.0
        if np.max(np.abs(nxt - pi)) < 1e-12:
            pi = nxt
            break
        pi = nxt
    return np.minimum(pi, np.where(np.arange(belief.n_objects) == o, 1.0, b))


def belief_update(belief: BeliefState, action: Action, obs: Observation, noise: NoiseProfile) -> BeliefState:
    """Bayes update of every factor after ``action`` and observation ``obs``.

    A grasp is resolved as two hypotheses (success moves the grasped object's
    believed stable closure, failure changes nothing); presence factors are the
    exact posterior marginals under that mixture.
    """
    obs.validate()
    n = belief.n_objects
    if obs.n_objects != n:
        raise ValueError("observation and belief disagree on the number of objects")
    b = belief.presence
    if action.is_grasp:
        o = action.obj
        p = noise.success(belief.categories[o])
        h1 = p * b[o]
        pi = closure_membership(belief, o)
        a1 = np.clip(b - pi, 0.0, 1.0)
        a1[o] = 0.0
        a0 = b.copy()
        a0[o] = b[o] * (1.0 - p) / (1.0 - h1) if h1 < 1.0 else 0.0
        hyps = [(h1, a1), (1.0 - h1, a0)]
    else:
        hyps = [(1.0, b)]
    rc = noise.recall_vector(belief.categories)
    det = np.zeros(n, dtype=bool)
    det[list(obs.detections)] = True
    l_pres = np.where(det, rc, 1.0 - rc)
    l_abs = np.where(det, 0.0, 1.0)
    weights = []
    posts = []
    for prior, a in hyps:
        lik = a * l_pres + (1.0 - a) * l_abs
        w = prior * float(np.prod(lik))
        safe = np.where(lik > 0.0, lik, 1.0)
        weights.append(w)
        posts.append(np.where(lik > 0.0, a * l_pres / safe, 0.0))
    total = sum(weights)
    if not total > 0.0:
        raise ImpossibleObservation(f"observation impossible after {action}")
    presence = np.zeros(n)
    for w, post in zip(weights, posts):
        presence += (w / total) * post
    presence = np.clip(presence, 0.0, 1.0)

    rel = belief.relations.copy()
    seen = sorted(obs.detections)
    for a_idx, i in enumerate(seen):
        for j in seen[a_idx + 1:]:
            z = int(obs.relations[i, j])
            if z < 0:
                continue
            post = rel[i, j] * _relation_likelihood(rc[i] * rc[j], z)
            s = post.sum()
            if not s > 0.0:
                raise ImpossibleObservation(f"relation {i}-{j} observed as impossible class {z}")
            rel[i, j] = post / s
            rel[j, i] = rel[i, j][MIRROR[:N_RELATION_CLASSES]]
    return BeliefState(belief.categories, presence, rel)


def expected_reward(belief: BeliefState, action: Action, params: RewardParams = RewardParams()) -> float:
    """Reward expectation over the belief's relation factors (grasped object present)."""
    if not action.is_grasp:
        return 0.0
    o = action.obj
    others = [j for j in range(belief.n_objects) if j != o]
    b = belief.presence[others]
    rel = belief.relations[o, others]
    return expected_count_reward(
        b * rel[:, _NC], b * rel[:, _OC], b * rel[:, _NP],
        params.base_penalty, params.nc_gain, params.oc_gain, params.np_penalty,
    )
