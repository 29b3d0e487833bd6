"""Omnidirectional labelled range sensor simulated by grid ray casting.

Geometry is exact; only the categorical labels are noisy. The noise model
(``true_confusion``) is hidden from the mapper.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Optional

import numpy as np

from . import kernels
from .domain import GroundTruthWorld, RobotState


def check_stochastic(mat: np.ndarray, name: str, n: int) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.shape != (n, n):
        raise ValueError(f"{name} must be {n}x{n}, got {mat.shape}")
    if np.any(mat < 0) or not np.allclose(mat.sum(axis=1), 1.0, atol=1e-9, rtol=0):
        raise ValueError(f"{name} rows must be non-negative and sum to 1")
    return mat


def diagonal_confusion(n: int, diag: float) -> np.ndarray:
    off = (1.0 - diag) / (n - 1)
    mat = np.full((n, n), off)
    np.fill_diagonal(mat, diag)
    return mat


@dataclass(frozen=True, eq=False)
class SensorConfig:
    true_confusion: np.ndarray
    r_max: float = 10.0
    ray_count: int = 720
    free_miss_rate: float = 0.0
    severity_scale: float = 0.0
    # "ray": every ray draws its own label; "cell": all rays hitting a cell in
    # one scan share a single draw (segmentation-style correlated errors)
    label_mode: str = "ray"
    fov_deg: Optional[float] = None
    # occupied cells in range that no ray reaches still return one labelled
    # return (a partially visible object is never silently missed)
    detect_occluded: bool = True

    def __post_init__(self):
        t = np.asarray(self.true_confusion, dtype=float)
        check_stochastic(t, "true_confusion", t.shape[0])
        t.setflags(write=False)
        object.__setattr__(self, "true_confusion", t)
        if self.r_max <= 0 or self.ray_count <= 0:
            raise ValueError("r_max and ray_count must be positive")
        if not 0.0 <= self.free_miss_rate <= 1.0 or not 0.0 <= self.severity_scale <= 1.0:
            raise ValueError("free_miss_rate and severity_scale must lie in [0, 1]")
        if self.label_mode not in ("ray", "cell"):
            raise ValueError(f"unknown label_mode {self.label_mode!r}")

    @property
    def n_classes(self) -> int:
        return self.true_confusion.shape[0]

    def effective_confusion(self) -> np.ndarray:
        k = self.n_classes
        return (1.0 - self.severity_scale) * self.true_confusion + self.severity_scale / k

    def to_json(self) -> dict:
        return {
            "r_max": self.r_max,
            "ray_count": self.ray_count,
            "true_confusion": self.true_confusion.tolist(),
            "free_miss_rate": self.free_miss_rate,
            "severity_scale": self.severity_scale,
            "label_mode": self.label_mode,
            "fov_deg": self.fov_deg,
            "detect_occluded": self.detect_occluded,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SensorConfig":
        return cls(
            true_confusion=np.asarray(d["true_confusion"], dtype=float),
            r_max=float(d.get("r_max", 10.0)),
            ray_count=int(d.get("ray_count", 720)),
            free_miss_rate=float(d.get("free_miss_rate", 0.0)),
            severity_scale=float(d.get("severity_scale", 0.0)),
            label_mode=d.get("label_mode", "ray"),
            fov_deg=d.get("fov_deg"),
            detect_occluded=bool(d.get("detect_occluded", True)),
        )


@dataclass(frozen=True)
class RayTemplate:
    """Cells crossed by each bearing from the centre of cell (0, 0), in DDA order.

    Offsets are in cells; ``dist`` is the centre-to-centre distance in cells.
    A cell is listed if the ray enters it before ``reach``; ``in_range`` marks
    cells whose centre lies within ``reach``.
    """

    bearings: np.ndarray
    dr: np.ndarray
    dc: np.ndarray
    dist: np.ndarray
    in_range: np.ndarray
    ptr: np.ndarray


def dda_cells(theta: float, reach: float) -> list[tuple[int, int, float]]:
    """Amanatides-Woo traversal from the centre of cell (0, 0).

    Returns (row, col, entry_t) for every cell entered at parameter t <= reach.
    Exact corner crossings step diagonally (the two side cells are only
    touched at a point).
    """
    dx, dy = math.cos(theta), math.sin(theta)
    if abs(dx) < 1e-15:
        dx = 0.0
    if abs(dy) < 1e-15:
        dy = 0.0
    step_c = 1 if dx > 0 else -1
    step_r = 1 if dy > 0 else -1
    t_max_x = 0.5 / abs(dx) if dx else math.inf
    t_max_y = 0.5 / abs(dy) if dy else math.inf
    t_dx = 1.0 / abs(dx) if dx else math.inf
    t_dy = 1.0 / abs(dy) if dy else math.inf
    r = c = 0
    t = 0.0
    out = []
    while t <= reach:
        out.append((r, c, t))
        if abs(t_max_x - t_max_y) < 1e-12:
            t = t_max_x
            c += step_c
            r += step_r
            t_max_x += t_dx
            t_max_y += t_dy
        elif t_max_x < t_max_y:
            t = t_max_x
            c += step_c
            t_max_x += t_dx
        else:
            t = t_max_y
            r += step_r
            t_max_y += t_dy
    return out


@lru_cache(maxsize=16)
def ray_template(ray_count: int, reach: float) -> RayTemplate:
    bearings = 2.0 * np.pi * np.arange(ray_count) / ray_count
    dr, dc, dist, inr, ptr = [], [], [], [], [0]
    for theta in bearings:
        for r, c, _ in dda_cells(float(theta), reach):
            d = math.hypot(r, c)
            dr.append(r)
            dc.append(c)
            dist.append(d)
            inr.append(d <= reach + 1e-9)
        ptr.append(len(dr))
    tmpl = RayTemplate(
        bearings,
        np.asarray(dr, dtype=np.int64),
        np.asarray(dc, dtype=np.int64),
        np.asarray(dist, dtype=float),
        np.asarray(inr, dtype=bool),
        np.asarray(ptr, dtype=np.int64),
    )
    for a in (tmpl.bearings, tmpl.dr, tmpl.dc, tmpl.dist, tmpl.in_range, tmpl.ptr):
        a.setflags(write=False)
    return tmpl


@dataclass(frozen=True, eq=False)
class Measurement:
    """One scan. Misses have ``hit_cell == -1`` and ``label == -1``.

    Traversed free cells are stored CSR-style: ray ``b`` crossed
    ``trav_cells[trav_ptr[b]:trav_ptr[b+1]]``.
    """

    bearings: np.ndarray
    hit_cell: np.ndarray
    hit_range: np.ndarray
    labels: np.ndarray
    trav_ptr: np.ndarray
    trav_cells: np.ndarray
    n_cells: int

    def rays(self) -> Iterator[tuple[float, Optional[tuple[float, int, int]], list[int]]]:
        for b, theta in enumerate(self.bearings):
            hit = None
            if self.hit_cell[b] >= 0:
                hit = (float(self.hit_range[b]), int(self.labels[b]), int(self.hit_cell[b]))
            yield float(theta), hit, self.trav_cells[self.trav_ptr[b]:self.trav_ptr[b + 1]].tolist()

    def touched_cells(self) -> np.ndarray:
        return np.union1d(self.hit_cell[self.hit_cell >= 0], self.trav_cells)

    def digest(self) -> str:
        h = hashlib.sha1()
        for a in (self.hit_cell, self.labels, self.trav_cells):
            h.update(np.ascontiguousarray(a, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]


def _occluded_objects(world: GroundTruthWorld, x: RobotState, r_max: float, hit: np.ndarray) -> np.ndarray:
    """Occupied cells whose centre is within range but which no ray hit."""
    geom = world.geometry
    obj = world.object_cells
    if obj.size == 0:
        return obj
    r, c = np.divmod(obj, geom.width)
    near = obj[np.hypot(r - x.row, c - x.col) * geom.resolution <= r_max + 1e-9]
    return np.setdiff1d(near, hit[hit >= 0]).astype(np.int64)


def sense(
    world: GroundTruthWorld,
    x: RobotState,
    config: SensorConfig,
    rng: np.random.Generator,
    heading: float = 0.0,
) -> Measurement:
    geom = world.geometry
    if not geom.in_bounds(x.row, x.col):
        raise ValueError(f"state {x} outside grid")
    if config.n_classes != world.classes.n_classes:
        raise ValueError("sensor confusion does not match the class table")
    tmpl = ray_template(config.ray_count, config.r_max / geom.resolution)
    hit, hit_dist, trav_ptr, trav_cells = kernels.cast_rays(
        world.truth, geom.width, geom.height, x.row, x.col, tmpl.dr, tmpl.dc, tmpl.dist, tmpl.in_range, tmpl.ptr
    )
    bearings = tmpl.bearings
    if config.detect_occluded:
        hidden = _occluded_objects(world, x, config.r_max, hit)
        if hidden.size:
            hr, hc = np.divmod(hidden, geom.width)
            dr, dc = (hr - x.row).astype(float), (hc - x.col).astype(float)
            bearings = np.concatenate([bearings, np.mod(np.arctan2(dr, dc), 2 * np.pi)])
            hit = np.concatenate([hit, hidden])
            hit_dist = np.concatenate([hit_dist, np.hypot(dr, dc)])
            trav_ptr = np.concatenate([trav_ptr, np.full(hidden.size, trav_ptr[-1])])
    n_rays = hit.shape[0]
    u = rng.random(n_rays)
    if config.label_mode == "cell":
        # the first ray to hit a cell fixes that cell's label for this scan
        first = {}
        for b in np.flatnonzero(hit >= 0):
            first.setdefault(int(hit[b]), b)
        for b in np.flatnonzero(hit >= 0):
            u[b] = u[first[int(hit[b])]]

    labels = np.full(n_rays, -1, dtype=np.int64)
    hits = hit >= 0
    if hits.any():
        cdf = np.cumsum(config.effective_confusion(), axis=1)
        rows = cdf[world.truth[hit[hits]]]
        labels[hits] = np.minimum((u[hits, None] >= rows).sum(axis=1), config.n_classes - 1)

    if config.free_miss_rate > 0.0 and trav_cells.size:
        keep = rng.random(trav_cells.size) >= config.free_miss_rate
        ray_of = np.repeat(np.arange(n_rays), np.diff(trav_ptr))
        trav_cells = trav_cells[keep]
        trav_ptr = np.zeros(n_rays + 1, dtype=np.int64)
        np.cumsum(np.bincount(ray_of[keep], minlength=n_rays), out=trav_ptr[1:])

    if config.fov_deg is not None:
        half = math.radians(config.fov_deg) / 2.0
        off = np.angle(np.exp(1j * (bearings - heading)))
        blind = np.abs(off) > half + 1e-12
        hit = np.where(blind, -1, hit)
        labels = np.where(blind, -1, labels)
        hit_dist = np.where(blind, np.nan, hit_dist)
        ray_of = np.repeat(np.arange(n_rays), np.diff(trav_ptr))
        keep = ~blind[ray_of]
        trav_cells = trav_cells[keep]
        trav_ptr = np.zeros(n_rays + 1, dtype=np.int64)
        np.cumsum(np.bincount(ray_of[keep], minlength=n_rays), out=trav_ptr[1:])

    return Measurement(
        bearings=bearings,
        hit_cell=hit,
        hit_range=hit_dist * geom.resolution,
        labels=labels,
        trav_ptr=trav_ptr,
        trav_cells=trav_cells,
        n_cells=geom.n_cells,
    )
