import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import reward_oracle
from stackgrasp.pomdp import (
    Action,
    BeliefState,
    ImpossibleObservation,
    JointState,
    NoiseProfile,
    ObjectState,
    Observation,
    RelationPrior,
    RewardParams,
    all_actions,
    belief_update,
    expected_reward,
    observation_probability,
    reward,
    reward_from_counts,
    transition_outcomes,
)
from stackgrasp.scene import ABSENT, SceneGraph
from stackgrasp.simulator import GeneratorConfig, GroundTruthScene, execute, generate_scene, observe

CATS = ["bowl", "spoon", "apple", "plate"]


def star(n_nc=0, n_oc=0, n_np=0):
    """Object 0 with the requested relation counts."""
    cats, stable, weak = ["x"], [], []
    for _ in range(n_nc):
        stable.append((0, len(cats)))
        cats.append("x")
    for _ in range(n_oc):
        weak.append((0, len(cats)))
        cats.append("x")
    for _ in range(n_np):
        stable.append((len(cats), 0))
        cats.append("x")
    return SceneGraph.build(cats, stable=stable, weak=weak)


@pytest.mark.parametrize("n_nc,n_oc,n_np", [(0, 0, 0), (1, 0, 0), (2, 0, 0), (0, 2, 0), (0, 0, 1), (1, 2, 0), (0, 1, 1)])
def test_reward_matches_oracle(n_nc, n_oc, n_np):
    assert reward(star(n_nc, n_oc, n_np), Action.to_target(0)) == pytest.approx(reward_oracle(n_nc, n_oc, n_np), abs=1e-12)


def test_reward_examples_and_report():
    assert reward(star(), Action.to_target(0)) == -10
    assert reward(star(0, 0, 1), Action.to_non_target(0)) == -12
    assert reward(star(1), Action.to_target(0)) == pytest.approx(-10 + 5 * math.tanh(1), abs=1e-12)
    assert reward(star(), Action.report()) == 0.0
    with pytest.raises(ValueError):
        reward(star(), Action.to_target(0), present=[])


def test_reward_first_branch_wins_and_monotone():
    assert reward_from_counts(1, 3, 1) == reward_from_counts(1, 0, 0)
    vals = [reward_from_counts(k, 0, 0) for k in range(1, 8)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    vals = [reward_from_counts(0, k, 0) for k in range(1, 8)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_reward_params_validation():
    with pytest.raises(ValueError):
        RewardParams(base_penalty=1.0)
    with pytest.raises(ValueError):
        RewardParams(discount=1.0)


def test_action_space_size():
    assert len(all_actions(7)) == 15
    assert len(set(all_actions(7))) == 15


def test_object_state_invariant():
    with pytest.raises(ValueError):
        ObjectState(False, (0, ABSENT))
    ObjectState(False, (ABSENT, ABSENT))


def test_transition_examples():
    apple = SceneGraph.build(["apple"])
    noise = NoiseProfile({"apple": 1.0, "bowl": 1.0, "spoon": 1.0}, {"apple": 1.0, "bowl": 0.9, "spoon": 1.0})
    out = transition_outcomes(JointState.from_graph(apple), Action.to_target(0), noise, apple.categories)
    assert len(out) == 1 and out[0][0] == 1.0 and not out[0][1].present[0]

    bs = SceneGraph.build(["bowl", "spoon"], stable=[(0, 1)])
    s = JointState.from_graph(bs)
    out = transition_outcomes(s, Action.to_target(0), noise, bs.categories)
    assert [p for p, _ in out] == [0.9, pytest.approx(0.1)]
    assert not out[0][1].present.any() and (out[0][1].relations == ABSENT).all()
    assert out[1][1].same_as(s)
    assert sum(p for p, _ in out) == 1.0
    (p, same), = transition_outcomes(s, Action.report(), noise, bs.categories)
    assert p == 1.0 and same.same_as(s)
    with pytest.raises(ValueError):
        transition_outcomes(out[0][1], Action.to_target(0), noise, bs.categories)


def test_observation_probability_examples():
    g = SceneGraph.build(["bowl"])
    s = JointState.from_graph(g)
    assert observation_probability(s, Action.report(), Observation.exact(s), NoiseProfile.perfect(), g.categories) == 1.0
    noise = NoiseProfile.perfect().updated(recall={"bowl": 0.9, "spoon": 0.8})
    hit = Observation(frozenset({0}), np.full((1, 1), -1, dtype=np.int8))
    miss = Observation(frozenset(), np.full((1, 1), -1, dtype=np.int8))
    assert observation_probability(s, Action.report(), hit, noise, g.categories) == pytest.approx(0.9)
    assert observation_probability(s, Action.report(), miss, noise, g.categories) == pytest.approx(0.1)

    # a failed grasp leaves bowl and spoon in place; both detected and the pair right
    bs = SceneGraph.build(["bowl", "spoon"], stable=[(0, 1)])
    js = JointState.from_graph(bs)
    both = Observation.exact(js)
    p = observation_probability(js, Action.to_target(0), both, noise, bs.categories)
    assert p == pytest.approx(0.9 * 0.8 * (0.9 * 0.8))
    det_only = Observation(frozenset({0, 1}), np.full((2, 2), -1, dtype=np.int8))
    assert observation_probability(js, Action.to_target(0), det_only, noise, bs.categories) == pytest.approx(0.72)
    # after success both are gone and are never detected
    gone = JointState.from_graph(bs, present=[])
    assert observation_probability(gone, Action.to_target(0), det_only, noise, bs.categories) == 0.0
    empty = Observation(frozenset(), np.full((2, 2), -1, dtype=np.int8))
    assert observation_probability(gone, Action.to_target(0), empty, noise, bs.categories) == 1.0


def test_observation_rejects_unknown_ids():
    s = JointState.from_graph(SceneGraph.build(["bowl"]))
    bad = Observation(frozenset({3}), np.full((1, 1), -1, dtype=np.int8))
    with pytest.raises(ValueError):
        observation_probability(s, Action.report(), bad, NoiseProfile.perfect(), ["bowl"])


def test_belief_point_mass_tracks_deterministic_transition():
    g = SceneGraph.build(["bowl", "spoon", "apple"], stable=[(0, 1)])
    b = BeliefState.point_mass(g)
    noise = NoiseProfile.perfect()
    scene = GroundTruthScene(g)
    rng = np.random.default_rng(0)
    ok, obs = execute(scene, Action.to_target(0), noise, rng)
    assert ok
    b2 = belief_update(b, Action.to_target(0), obs, noise)
    assert b2.is_point_mass()
    assert list(b2.presence) == [0.0, 0.0, 1.0]


def test_belief_report_detection_example():
    b = BeliefState.initial(["bowl"], presence_prior=0.5)
    noise = NoiseProfile.perfect().updated(recall={"bowl": 0.9})
    obs = Observation(frozenset({0}), np.full((1, 1), -1, dtype=np.int8))
    assert belief_update(b, Action.report(), obs, noise).presence[0] == pytest.approx(1.0)
    miss = Observation(frozenset(), np.full((1, 1), -1, dtype=np.int8))
    # 0.1 * 0.5 / (0.1 * 0.5 + 1 * 0.5)
    assert belief_update(b, Action.report(), miss, noise).presence[0] == pytest.approx(0.05 / 0.55)


def test_belief_failed_grasp_example():
    b = BeliefState.point_mass(SceneGraph.build(["bowl"]))
    noise = NoiseProfile.perfect().updated(grasp_success={"bowl": 0.9})
    still = Observation(frozenset({0}), np.full((1, 1), -1, dtype=np.int8))
    assert belief_update(b, Action.to_target(0), still, noise).presence[0] == pytest.approx(1.0)


def test_impossible_observation_raises():
    b = BeliefState.point_mass(SceneGraph.build(["bowl"]), present=[])
    obs = Observation(frozenset({0}), np.full((1, 1), -1, dtype=np.int8))
    with pytest.raises(ImpossibleObservation):
        belief_update(b, Action.report(), obs, NoiseProfile.perfect())


def test_expected_reward_examples():
    g = SceneGraph.build(["bowl", "spoon"], stable=[(0, 1)])
    pm = BeliefState.point_mass(g)
    assert expected_reward(pm, Action.to_target(0)) == pytest.approx(reward(g, Action.to_target(0)), abs=1e-12)
    rel = pm.relations.copy()
    rel[0, 1] = [0, 0, 0.5, 0, 0.5]
    rel[1, 0] = [0, 0, 0, 0.5, 0.5]
    half = BeliefState(pm.categories, pm.presence, rel)
    expect = 0.5 * (-10 + 5 * math.tanh(1)) + 0.5 * -10
    assert expected_reward(half, Action.to_target(0)) == pytest.approx(expect, abs=1e-12)
    assert expected_reward(half, Action.report()) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.floats(0.5, 1.0), st.floats(0.3, 1.0))
def test_belief_factors_stay_normalized(seed, rc, ps):
    g = generate_scene(GeneratorConfig(min_objects=2, max_objects=6), seed)
    noise = NoiseProfile.uniform(g.categories, rc, ps)
    rng = np.random.default_rng(seed)
    scene = GroundTruthScene(g)
    b = BeliefState.initial(g.categories, presence_prior=float(rng.uniform(0.5, 1.0)))
    b = belief_update(b, Action.report(), observe(scene, noise, rng), noise)
    for _ in range(g.n_objects):
        o = int(rng.integers(g.n_objects))
        a = Action.to_target(o)
        _, obs = execute(scene, a, noise, rng)
        b = belief_update(b, a, obs, noise)
        assert np.all((b.presence >= 0) & (b.presence <= 1))
        np.testing.assert_allclose(b.factor_sums(), 1.0, atol=1e-9)
        np.testing.assert_allclose(b.relations.sum(axis=2)[~np.eye(g.n_objects, dtype=bool)], 1.0, atol=1e-9)


def test_perfect_models_keep_point_mass_equal_to_truth():
    noise = NoiseProfile.perfect()
    for seed in range(30):
        g = generate_scene(GeneratorConfig(), seed)
        scene = GroundTruthScene(g)
        rng = np.random.default_rng(seed)
        b = belief_update(BeliefState.initial(g.categories), Action.report(), observe(scene, noise, rng), noise)
        for o in rng.permutation(g.n_objects):
            if o not in scene.present or g.restricted(scene.present).children(int(o)):
                continue
            a = Action.to_non_target(int(o))
            _, obs = execute(scene, a, noise, rng)
            b = belief_update(b, a, obs, noise)
            assert b.is_point_mass()
            assert set(b.present_ids()) == scene.present
            assert b.map_graph() == scene.current


def test_relation_prior_fit():
    graphs = [SceneGraph.build(["bowl", "apple"], stable=[(0, 1)])] * 20
    prior = RelationPrior.from_scenes(graphs)
    p = prior.for_pair("bowl", "apple")
    assert p.argmax() == 2 and p.sum() == pytest.approx(1.0)
    assert np.allclose(prior.for_pair("mug", "kiwi"), prior.default)


def test_noise_profile_validation_and_io(tmp_path):
    with pytest.raises(ValueError):
        NoiseProfile({"bowl": 0.0}, {"bowl": 0.5})
    with pytest.raises(ValueError):
        NoiseProfile({"bowl": 1.2}, {"bowl": 0.5})
    n = NoiseProfile.default()
    path = tmp_path / "noise.json"
    path.write_text(json.dumps(n.to_dict()))
    assert NoiseProfile.load(path) == n
    assert n.missing(["bowl", "teapot"]) == ["teapot"]
    assert n.success("plate") == 0.3 and n.success("fork") == 0.7 and n.success("apple") == 0.9
