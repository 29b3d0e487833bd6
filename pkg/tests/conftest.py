from dataclasses import replace

import numpy as np
import pytest

from semreach.domain import GridGeometry, GroundTruthWorld, RobotState, Scenario, Task, default_classes
from semreach.harness import CalibrationSettings, ExperimentConfig
from semreach.worldgen import DistributionConfig

IDENTITY = np.eye(5)


def make_world(width, height, objects=(), classes=None):
    """World from a list of (row, col, class_id)."""
    classes = classes or default_classes()
    geom = GridGeometry(width, height)
    truth = np.zeros(geom.n_cells, dtype=np.int8)
    for r, c, k in objects:
        truth[geom.index(r, c)] = k
    return GroundTruthWorld(geom, truth, classes)


def make_scenario(width, height, start, goal, objects=(), seed=0, radius=1.0):
    world = make_world(width, height, objects)
    return Scenario(seed, RobotState(*start), world, Task(goal[0], goal[1], radius))


def small_config(**kw) -> ExperimentConfig:
    """A 40x16 world with four trees: same noise model as the default, quick to run."""
    dist = DistributionConfig(
        width=40, height=16, tree_positions=((5, 15), (5, 23), (10, 15), (10, 23)), min_start_goal_m=20.0
    )
    cfg = ExperimentConfig(distribution=dist, calibration=CalibrationSettings(D=8, paths_per_scenario=3, mode="marginal", delta=None))
    return replace(cfg, **kw)


def noiseless(cfg: ExperimentConfig) -> ExperimentConfig:
    return replace(
        cfg,
        sensor=replace(cfg.sensor, true_confusion=IDENTITY),
        mapper=replace(cfg.mapper, assumed_confusion=IDENTITY, pmf_floor=1e-18),
    )


@pytest.fixture
def tiny_config():
    return small_config()
