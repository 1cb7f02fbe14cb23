"""Cross-camera person re-identification from personal, social and
environmental constraints, solved as a quadratic binary assignment."""

from .appearance import (
    DiscriminativeModel,
    EmptyBagError,
    TrainingSets,
    appearance_similarity,
    discriminative_cost,
    mine_training_sets,
    train_discriminative,
)
from .evaluation import EvaluationReport, cmc_linear, cmc_quadratic, emit_report, fscore
from .motioncosts import (
    SpeedStats,
    SquashParams,
    camera_speed_stats,
    social_grouping_cost,
    spatial_grouping_cost,
    speed_cost,
    squash,
)
from .objective import (
    Assignment,
    ComponentModels,
    CostModel,
    Weights,
    assemble_cost_model,
    convexify,
    loss,
)
from .solvers import (
    FWParams,
    SLSParams,
    SolverResult,
    brute_force_optimum,
    frank_wolfe,
    munkres_assign,
    stochastic_local_search,
)
from .synth import PlantedTruth, SynthConfig, generate_scenario
from .topology import InterpolatedPath, collision_cost, interpolate_path, invisible_speed_cost
from .trackdata import (
    DEFAULT_TAU,
    Camera,
    CameraTransform,
    Hypothesis,
    Scenario,
    ScenarioError,
    Track,
    TrackPoint,
    candidate_matches,
    load_scenario,
    nearest_gate,
    save_scenario,
)
from .transitions import (
    GateTransitionModel,
    TravelTimeDensity,
    em_refine,
    estimate_destination_distribution,
    fit_travel_time_gmm,
    transition_cost,
)

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "Camera",
    "CameraTransform",
    "ComponentModels",
    "CostModel",
    "DEFAULT_TAU",
    "DiscriminativeModel",
    "EmptyBagError",
    "EvaluationReport",
    "FWParams",
    "GateTransitionModel",
    "Hypothesis",
    "InterpolatedPath",
    "PlantedTruth",
    "SLSParams",
    "Scenario",
    "ScenarioError",
    "SolverResult",
    "SpeedStats",
    "SquashParams",
    "SynthConfig",
    "Track",
    "TrackPoint",
    "TrainingSets",
    "TravelTimeDensity",
    "Weights",
    "appearance_similarity",
    "assemble_cost_model",
    "brute_force_optimum",
    "camera_speed_stats",
    "candidate_matches",
    "cmc_linear",
    "cmc_quadratic",
    "collision_cost",
    "convexify",
    "discriminative_cost",
    "em_refine",
    "emit_report",
    "estimate_destination_distribution",
    "fit_travel_time_gmm",
    "frank_wolfe",
    "fscore",
    "generate_scenario",
    "interpolate_path",
    "invisible_speed_cost",
    "load_scenario",
    "loss",
    "mine_training_sets",
    "munkres_assign",
    "nearest_gate",
    "save_scenario",
    "social_grouping_cost",
    "spatial_grouping_cost",
    "speed_cost",
    "squash",
    "stochastic_local_search",
    "train_discriminative",
    "transition_cost",
]
