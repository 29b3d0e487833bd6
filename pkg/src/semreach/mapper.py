"""Per-cell categorical Bayes filter over semantic classes.

The filter uses an *assumed* sensor likelihood which in general differs from
the simulator's true noise, so its PMFs are not calibrated probabilities.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from . import kernels
from .domain import FREE, GridGeometry
from .sensor import Measurement, check_stochastic


@dataclass(frozen=True, eq=False)
class MapperConfig:
    assumed_confusion: np.ndarray
    prior: Optional[np.ndarray] = None
    pmf_floor: float = 1e-6

    def __post_init__(self):
        a = np.asarray(self.assumed_confusion, dtype=float)
        check_stochastic(a, "assumed_confusion", a.shape[0])
        a.setflags(write=False)
        object.__setattr__(self, "assumed_confusion", a)
        n = a.shape[0]
        prior = np.full(n, 1.0 / n) if self.prior is None else np.asarray(self.prior, dtype=float)
        if prior.shape != (n,) or np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-9:
            raise ValueError("prior must be a PMF over the classes")
        prior.setflags(write=False)
        object.__setattr__(self, "prior", prior)
        if not self.pmf_floor > 0:
            raise ValueError("pmf_floor must be positive")

    @property
    def n_classes(self) -> int:
        return self.assumed_confusion.shape[0]

    @cached_property
    def log_likelihood(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.assumed_confusion)

    def to_json(self) -> dict:
        return {
            "assumed_confusion": self.assumed_confusion.tolist(),
            "prior": self.prior.tolist(),
            "pmf_floor": self.pmf_floor,
        }

    @classmethod
    def from_json(cls, d: dict) -> "MapperConfig":
        prior = d.get("prior")
        return cls(
            assumed_confusion=np.asarray(d["assumed_confusion"], dtype=float),
            prior=None if prior is None else np.asarray(prior, dtype=float),
            pmf_floor=float(d.get("pmf_floor", 1e-6)),
        )


@dataclass(frozen=True, eq=False)
class BeliefMap:
    geometry: GridGeometry
    pmf: np.ndarray  # (M, K) row-major cells
    observed: np.ndarray  # (M,) bool, the detected set J_t

    @classmethod
    def fresh(cls, geometry: GridGeometry, config: MapperConfig) -> "BeliefMap":
        pmf = np.tile(config.prior, (geometry.n_cells, 1))
        return cls(geometry, pmf, np.zeros(geometry.n_cells, dtype=bool))

    def to_json(self) -> dict:
        return {"pmf": self.pmf.ravel().tolist(), "n_classes": self.pmf.shape[1], "observed": np.flatnonzero(self.observed).tolist()}


def update(belief: BeliefMap, measurement: Measurement, config: MapperConfig) -> BeliefMap:
    """Fuse one scan. Hit cells get ``A[:, y]`` per ray, traversed cells
    ``A[:, free]`` per ray; touched rows are renormalised, floored and
    renormalised again. Untouched rows are copied unchanged."""
    n_cls = belief.pmf.shape[1]
    if measurement.n_cells != belief.geometry.n_cells:
        raise ValueError("measurement grid does not match belief grid")
    if config.n_classes != n_cls:
        raise ValueError("mapper confusion does not match belief classes")
    hits = measurement.hit_cell >= 0
    lab = measurement.labels[hits]
    if lab.size and (lab.min() < 0 or lab.max() >= n_cls):
        raise ValueError("measurement label out of range")
    labels = np.where(hits, measurement.labels, 0).astype(np.int64)
    pmf, touched = kernels.bayes_update(
        belief.pmf,
        config.log_likelihood,
        measurement.hit_cell,
        labels,
        measurement.trav_cells,
        FREE,
        config.pmf_floor,
    )
    return BeliefMap(belief.geometry, pmf, belief.observed | touched)


def pmf_of(belief: BeliefMap, j: int) -> np.ndarray:
    if not 0 <= j < belief.geometry.n_cells:
        raise IndexError(f"cell index {j} out of range")
    view = belief.pmf[j]
    view = view.view()
    view.setflags(write=False)
    return view


def observed_cells(belief: BeliefMap) -> np.ndarray:
    return np.flatnonzero(belief.observed)
