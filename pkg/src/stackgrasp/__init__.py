"""Grasp-order planning for stacked tabletop scenes."""

from .config import Config, load_config
from .harness import EpisodeReport, aggregate, evaluate, metric_aos_rationality, run_episode
from .planner import (
    Plan,
    PlanStep,
    TargetGroup,
    action_space,
    baseline_one_by_one,
    baseline_rule_only,
    group_targets,
    plan_lookahead,
    plan_scene,
    replan_loop,
)
from .pomdp import (
    Action,
    BeliefState,
    Destination,
    ImpossibleObservation,
    JointState,
    NoiseProfile,
    Observation,
    RelationPrior,
    RewardParams,
    belief_update,
    expected_reward,
    observation_probability,
    reward,
    transition_outcomes,
)
from .scene import (
    Edge,
    RelationClass,
    SceneError,
    SceneGraph,
    SupportKind,
    build_descendant_table,
    load_scene,
    relation_matrix,
    save_scene,
    stable_closure,
    validate_scene,
)
from .simulator import (
    GeneratorConfig,
    GroundTruthScene,
    SimExecutor,
    annotate_reference,
    execute,
    generate_scene,
    observe,
)

__version__ = "0.1.0"
