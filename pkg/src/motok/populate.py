"""Scene population: place a canonical motion to minimize collision.

The search space is SE(2): a planar translation plus a yaw about +Y.  A
coarse pass scores every (cell center, yaw) candidate on the grid, then a
coordinate-descent refinement with halving steps polishes the best one.
Scoring rotates/translates the precomputed canonical body keypoints, which
is exactly equivalent to re-rooting the sequence and running forward
kinematics again.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .motion import MotionSequence, SixDof, to_global
from .scene import (
    SceneVoxelGrid,
    SignedDistanceField,
    body_keypoints,
    build_sdf,
    sample_sdf,
)


class SceneLessError(RuntimeError):
    """Raised when a scene offers no place to stand."""


@dataclass(frozen=True)
class PlacementOffset:
    """Planar translation (meters) plus yaw (radians, in [-pi, pi))."""

    xz_translation: np.ndarray
    yaw: float

    def __post_init__(self):
        xz = np.asarray(self.xz_translation, dtype=np.float64).reshape(2).copy()
        if not np.all(np.isfinite(xz)) or not np.isfinite(self.yaw):
            raise ValueError("placement offset contains non-finite values")
        yaw = wrap_angle(float(self.yaw))
        xz.setflags(write=False)
        object.__setattr__(self, "xz_translation", xz)
        object.__setattr__(self, "yaw", yaw)

    def to_six_dof(self) -> SixDof:
        x, z = self.xz_translation
        return SixDof(translation=np.array([x, 0.0, z]),
                      orientation=np.array([0.0, self.yaw, 0.0]))


@dataclass(frozen=True)
class PlacementConfig:
    """Knobs for seeding, the coarse lattice, and refinement."""

    yaw_count: int = 16
    refine_rounds: int = 3
    feasibility_threshold: float = 1e-3
    standing_height: float = 0.9
    footprint_radius: float = 0.0
    include_object: bool = True

    def __post_init__(self):
        if self.yaw_count < 1:
            raise ValueError(f"yaw_count must be >= 1, got {self.yaw_count}")
        if self.refine_rounds < 3:
            raise ValueError(f"refine_rounds must be >= 3, got {self.refine_rounds}")
        if self.feasibility_threshold < 0:
            raise ValueError("feasibility_threshold must be >= 0")


@dataclass(frozen=True)
class PlacementResult:
    """Best offset found, its collision score, and the placed sequence."""

    offset: PlacementOffset
    collision: float
    feasible: bool
    placed: MotionSequence
    candidates_evaluated: int


def wrap_angle(angle: float) -> float:
    """Wrap to [-pi, pi); values already in range pass through untouched."""
    if -np.pi <= angle < np.pi:
        return float(angle)
    return float((angle + np.pi) % (2.0 * np.pi) - np.pi)


def _clearance_map(grid: SceneVoxelGrid, sdf: SignedDistanceField, standing_height: float):
    """Per-column clearance at standing height, and the standing cell layer.

    Clearance is the smaller of the SDF value and the planar distance to the
    grid boundary, so wide-open grids still prefer their centers.
    """
    nx, nz, ny = grid.shape
    c = grid.cell_size
    iy = int(np.clip(np.floor(standing_height / c), 0, ny - 1))
    xs = grid.origin[0] + c * (np.arange(nx) + 0.5)
    zs = grid.origin[2] + c * (np.arange(nz) + 0.5)
    y = grid.origin[1] + c * (iy + 0.5)
    grid_x, grid_z = np.meshgrid(xs, zs, indexing="ij")
    centers = np.stack([grid_x, np.full((nx, nz), y), grid_z], axis=-1)
    sdf_vals = sample_sdf(sdf, centers.reshape(-1, 3)).reshape(nx, nz)
    edge_x = np.minimum(xs - grid.origin[0], grid.origin[0] + nx * c - xs)
    edge_z = np.minimum(zs - grid.origin[2], grid.origin[2] + nz * c - zs)
    boundary = np.minimum(edge_x[:, None], edge_z[None, :])
    return np.minimum(sdf_vals, boundary), iy


def find_seed_position(
    grid: SceneVoxelGrid,
    footprint_radius: float = 0.0,
    standing_height: float = 0.9,
    sdf: Optional[SignedDistanceField] = None,
) -> np.ndarray:
    """Free cell center with the most clearance at standing height.

    Ties break toward the lowest (x, then z) index.  Raises
    :class:`SceneLessError` when no free cell clears ``footprint_radius``.
    """
    if sdf is None:
        sdf = build_sdf(grid)
    clearance, iy = _clearance_map(grid, sdf, standing_height)
    free = grid.occupancy[:, :, iy] == 0
    if not free.any():
        raise SceneLessError("no free cell at standing height")
    masked = np.where(free, clearance, -np.inf)
    best = np.unravel_index(np.argmax(masked), masked.shape)  # argmax is first max in C order
    if masked[best] < footprint_radius:
        raise SceneLessError(
            f"best clearance {masked[best]:.3f} m is below footprint radius {footprint_radius:.3f} m"
        )
    return grid.cell_center(int(best[0]), int(best[1]), iy)


def _candidate_keypoints(seq: MotionSequence, include_object: bool) -> np.ndarray:
    """Canonical keypoints (T, J, 3); the object position joins as an extra point."""
    kp = body_keypoints(seq)
    obj = seq.frames[:, 69:72]
    if include_object and np.any(obj != 0.0):
        kp = np.concatenate([kp, obj[:, None, :]], axis=1)
    return kp


def placement_lattice(grid: SceneVoxelGrid, standing_height: float = 0.9) -> np.ndarray:
    """Coarse candidate (x, z) positions: centers of cells free at standing height.

    This is the search lattice optimize_placement scans exhaustively, exposed
    so external checks can enumerate the identical candidate set.
    """
    nx, nz, ny = grid.shape
    c = grid.cell_size
    iy = int(np.clip(np.floor(standing_height / c), 0, ny - 1))
    xs = grid.origin[0] + c * (np.arange(nx) + 0.5)
    zs = grid.origin[2] + c * (np.arange(nz) + 0.5)
    grid_x, grid_z = np.meshgrid(xs, zs, indexing="ij")
    free = grid.occupancy[:, :, iy] == 0
    return np.stack([grid_x[free], grid_z[free]], axis=-1)


def _score_offsets(
    kp: np.ndarray,
    sdf: SignedDistanceField,
    xz: np.ndarray,
    yaw: float,
) -> np.ndarray:
    """Mean penetration for each planar offset; ``xz`` has shape (M, 2)."""
    cos, sin = np.cos(yaw), np.sin(yaw)
    rot = np.array([[cos, 0.0, sin], [0.0, 1.0, 0.0], [-sin, 0.0, cos]])
    rotated = kp.reshape(-1, 3) @ rot.T
    offsets = np.zeros((xz.shape[0], 1, 3))
    offsets[:, 0, 0] = xz[:, 0]
    offsets[:, 0, 2] = xz[:, 1]
    values = sample_sdf(sdf, rotated[None, :, :] + offsets)
    return np.maximum(0.0, -values).mean(axis=1)


def optimize_placement(
    seq: MotionSequence,
    grid: SceneVoxelGrid,
    config: PlacementConfig = PlacementConfig(),
    sdf: Optional[SignedDistanceField] = None,
) -> PlacementResult:
    """Coarse lattice search plus coordinate-descent refinement.

    The lattice is every cell center crossed with ``yaw_count`` evenly spaced
    yaws.  The seed candidate (seed cell, yaw 0) wins all ties, so an all-free
    scene reports the seed offset with exactly zero collision.  Refinement
    halves its steps each round and only ever accepts strict improvements.
    """
    if not seq.is_canonical:
        raise ValueError("optimize_placement expects a canonical sequence")
    if sdf is None:
        sdf = build_sdf(grid)
    seed = find_seed_position(grid, config.footprint_radius, config.standing_height, sdf)
    kp = _candidate_keypoints(seq, config.include_object)

    lattice_xz = placement_lattice(grid, config.standing_height)
    yaws = [wrap_angle(-np.pi + 2.0 * np.pi * k / config.yaw_count)
            for k in range(config.yaw_count)]

    best_xz = np.array([seed[0], seed[2]])
    best_yaw = 0.0
    best_score = float(_score_offsets(kp, sdf, best_xz[None, :], best_yaw)[0])
    evaluated = 1
    for yaw in yaws:
        scores = _score_offsets(kp, sdf, lattice_xz, yaw)
        evaluated += scores.size
        idx = int(np.argmin(scores))
        if scores[idx] < best_score:
            best_score = float(scores[idx])
            best_xz = lattice_xz[idx].copy()
            best_yaw = yaw

    step_xz, step_yaw = grid.cell_size, 2.0 * np.pi / config.yaw_count
    for _ in range(config.refine_rounds):
        improved = True
        while improved:
            improved = False
            moves = [(step_xz, 0.0, 0.0), (-step_xz, 0.0, 0.0),
                     (0.0, step_xz, 0.0), (0.0, -step_xz, 0.0),
                     (0.0, 0.0, step_yaw), (0.0, 0.0, -step_yaw)]
            for dx, dz, dyaw in moves:
                cand_xz = best_xz + np.array([dx, dz])
                cand_yaw = wrap_angle(best_yaw + dyaw)
                score = float(_score_offsets(kp, sdf, cand_xz[None, :], cand_yaw)[0])
                evaluated += 1
                if score < best_score:
                    best_score, best_xz, best_yaw = score, cand_xz, cand_yaw
                    improved = True
        step_xz *= 0.5
        step_yaw *= 0.5

    offset = PlacementOffset(xz_translation=best_xz, yaw=best_yaw)
    placed = to_global(seq, offset.to_six_dof())
    return PlacementResult(
        offset=offset,
        collision=best_score,
        feasible=best_score <= config.feasibility_threshold,
        placed=placed,
        candidates_evaluated=evaluated,
    )
