"""Conformalized semantic maps for reach-avoid planning in unknown grids."""
from .conformal import (
    CalibrationArtifact,
    PredictionSetMap,
    conformal_quantile,
    conformalize,
    dataset_conditional_alpha,
    generate_calibration_paths,
    ncs_for_scenario,
    ua_labels,
    ui_sets,
)
from .domain import (
    GridGeometry,
    GroundTruthWorld,
    RobotState,
    Scenario,
    SemanticClassTable,
    Task,
    cell_center,
    index_of,
    path_satisfies_task,
)
from .mapper import BeliefMap, MapperConfig, observed_cells, pmf_of, update
from .planner import MissionTrace, PlannerConfig, assign_worst_case_labels, plan_exploit, plan_explore, run_mission
from .sensor import Measurement, SensorConfig, sense
from .worldgen import DistributionConfig, sample_batch, sample_scenario

__version__ = "0.1.0"
