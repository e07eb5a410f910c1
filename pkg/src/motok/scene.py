"""Voxel occupancy scenes, signed distance fields, and interaction scoring.

Grid axes follow the scene convention: occupancy[ix, iz, iy] with X and Z
spanning the ground plane and Y the height.  ``origin`` is the world (x, y, z)
corner of cell (0, 0, 0) and distances are meters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt
from scipy.spatial.distance import cdist

from .motion import (
    JOINT_ROT,
    MotionSequence,
    OBJ_POS,
    OBJ_ROT,
    ROOT_POS,
    ROOT_ROT,
    axis_angle_to_matrix,
)

# Distance stored when a grid has no occupied (or no free) cells; keeps
# interpolation total while guaranteeing zero collision in empty scenes.
FREE_SENTINEL = 1e9


class SceneError(ValueError):
    """Raised for malformed grids or mismatched frame counts."""


@dataclass(frozen=True)
class SceneVoxelGrid:
    """Binary occupancy grid: 1 = occupied, 0 = free."""

    occupancy: np.ndarray
    origin: np.ndarray
    cell_size: float

    def __post_init__(self):
        occ = np.asarray(self.occupancy)
        if occ.ndim != 3 or min(occ.shape) < 1:
            raise SceneError(f"occupancy must be a non-empty 3-D array, got shape {occ.shape}")
        if not np.all((occ == 0) | (occ == 1)):
            raise SceneError("occupancy must be binary")
        origin = np.asarray(self.origin, dtype=np.float64).reshape(3).copy()
        if not np.all(np.isfinite(origin)):
            raise SceneError("origin contains non-finite values")
        if not self.cell_size > 0:
            raise SceneError(f"cell_size must be > 0, got {self.cell_size}")
        occ = occ.astype(np.uint8).copy()
        occ.setflags(write=False)
        origin.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "cell_size", float(self.cell_size))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.occupancy.shape

    def cell_center(self, ix: int, iz: int, iy: int) -> np.ndarray:
        """World position of a cell center; indices are (x, z, y)."""
        c = self.cell_size
        return self.origin + c * np.array([ix + 0.5, iy + 0.5, iz + 0.5])


@dataclass(frozen=True)
class SignedDistanceField:
    """Per-cell-center signed distances: negative inside occupied space."""

    distances: np.ndarray
    origin: np.ndarray
    cell_size: float

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=np.float64).copy()
        if d.ndim != 3:
            raise SceneError(f"distances must be 3-D, got shape {d.shape}")
        origin = np.asarray(self.origin, dtype=np.float64).reshape(3).copy()
        d.setflags(write=False)
        origin.setflags(write=False)
        object.__setattr__(self, "distances", d)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "cell_size", float(self.cell_size))


def build_sdf(grid: SceneVoxelGrid) -> SignedDistanceField:
    """Signed Euclidean distance field over cell centers.

    Outside values are exact center-to-center distances to the nearest
    occupied cell.  Inside values are -(distance to the nearest free center
    minus one cell), so occupied cells that touch free space sit on the zero
    level set.  All-free (or all-occupied) grids get a +/- sentinel.
    """
    occ = grid.occupancy.astype(bool)
    c = grid.cell_size
    if not occ.any():
        distances = np.full(grid.shape, FREE_SENTINEL)
    elif occ.all():
        distances = np.full(grid.shape, -FREE_SENTINEL)
    else:
        # exact EDT in cell units; scaled afterwards so brute-force checks see
        # sqrt(integer) * cell_size on both sides
        dist_to_occupied = distance_transform_edt(~occ)
        dist_to_free = distance_transform_edt(occ)
        distances = np.where(occ, -(dist_to_free * c - c), dist_to_occupied * c)
    return SignedDistanceField(distances=distances, origin=grid.origin, cell_size=c)


def _fractional_indices(sdf: SignedDistanceField, points: np.ndarray) -> np.ndarray:
    """Continuous (x, z, y) cell-index coordinates; 0 is the first cell center."""
    rel = (points - sdf.origin) / sdf.cell_size - 0.5
    return rel[..., [0, 2, 1]]  # world (x, y, z) -> index (x, z, y)


def sample_sdf(sdf: SignedDistanceField, points: np.ndarray) -> np.ndarray:
    """Trilinear SDF lookup at world points of shape (..., 3).

    Points beyond the cell-center bounding box are clamped onto it and the
    Euclidean distance from the clamp is added, so queries far outside the
    grid keep growing (and stay non-negative once outside).
    """
    points = np.asarray(points, dtype=np.float64)
    squeeze = points.ndim == 1
    pts = np.atleast_2d(points)
    frac = _fractional_indices(sdf, pts)
    dims = np.array(sdf.distances.shape, dtype=np.float64)
    clamped = np.clip(frac, 0.0, dims - 1.0)
    overshoot = (frac - clamped) * sdf.cell_size
    increment = np.linalg.norm(overshoot, axis=-1)

    lo = np.floor(clamped).astype(np.int64)
    lo = np.minimum(lo, (dims - 2).clip(min=0).astype(np.int64))
    hi = np.minimum(lo + 1, (dims - 1).astype(np.int64))
    f = clamped - lo

    d = sdf.distances
    ix0, iz0, iy0 = lo[..., 0], lo[..., 1], lo[..., 2]
    ix1, iz1, iy1 = hi[..., 0], hi[..., 1], hi[..., 2]
    fx, fz, fy = f[..., 0], f[..., 1], f[..., 2]

    c00 = d[ix0, iz0, iy0] * (1 - fx) + d[ix1, iz0, iy0] * fx
    c01 = d[ix0, iz0, iy1] * (1 - fx) + d[ix1, iz0, iy1] * fx
    c10 = d[ix0, iz1, iy0] * (1 - fx) + d[ix1, iz1, iy0] * fx
    c11 = d[ix0, iz1, iy1] * (1 - fx) + d[ix1, iz1, iy1] * fx
    c0 = c00 * (1 - fz) + c10 * fz
    c1 = c01 * (1 - fz) + c11 * fz
    values = c0 * (1 - fy) + c1 * fy + increment
    return values[0] if squeeze else values.reshape(points.shape[:-1])


# ---------------------------------------------------------------------------
# Body keypoints
#
# Joint positions come from forward kinematics over a fixed bone-offset table
# (approximate adult proportions in meters) rather than a skinned mesh.  Joint
# 0 is the pelvis/root; its orientation lives in frame columns 3:6.
# ---------------------------------------------------------------------------

BONE_PARENTS = np.array(
    [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19]
)

BONE_OFFSETS = np.array([
    [0.00, 0.00, 0.00],    # 0 pelvis (root)
    [0.09, -0.09, 0.00],   # 1 left hip
    [-0.09, -0.09, 0.00],  # 2 right hip
    [0.00, 0.11, 0.00],    # 3 spine1
    [0.00, -0.38, 0.00],   # 4 left knee
    [0.00, -0.38, 0.00],   # 5 right knee
    [0.00, 0.13, 0.00],    # 6 spine2
    [0.00, -0.40, 0.00],   # 7 left ankle
    [0.00, -0.40, 0.00],   # 8 right ankle
    [0.00, 0.05, 0.00],    # 9 spine3
    [0.00, -0.06, 0.12],   # 10 left foot
    [0.00, -0.06, 0.12],   # 11 right foot
    [0.00, 0.21, 0.00],    # 12 neck
    [0.08, 0.11, 0.00],    # 13 left collar
    [-0.08, 0.11, 0.00],   # 14 right collar
    [0.00, 0.09, 0.00],    # 15 head
    [0.10, 0.02, 0.00],    # 16 left shoulder
    [-0.10, 0.02, 0.00],   # 17 right shoulder
    [0.26, 0.00, 0.00],    # 18 left elbow
    [-0.26, 0.00, 0.00],   # 19 right elbow
    [0.25, 0.00, 0.00],    # 20 left wrist
    [-0.25, 0.00, 0.00],   # 21 right wrist
])

NUM_KEYPOINTS = BONE_PARENTS.shape[0]


def body_keypoints(seq) -> np.ndarray:
    """World joint positions per frame, shape (T, 22, 3).

    Accepts a MotionSequence or a raw (T, 75) frame array.
    """
    frames = seq.frames if isinstance(seq, MotionSequence) else np.asarray(seq, dtype=np.float64)
    num = frames.shape[0]
    rot_local = np.empty((num, NUM_KEYPOINTS, 3, 3))
    rot_local[:, 0] = axis_angle_to_matrix(frames[:, ROOT_ROT])
    rot_local[:, 1:] = axis_angle_to_matrix(frames[:, JOINT_ROT].reshape(num, 21, 3))

    positions = np.empty((num, NUM_KEYPOINTS, 3))
    rot_global = np.empty_like(rot_local)
    positions[:, 0] = frames[:, ROOT_POS]
    rot_global[:, 0] = rot_local[:, 0]
    for j in range(1, NUM_KEYPOINTS):
        parent = BONE_PARENTS[j]
        rot_global[:, j] = rot_global[:, parent] @ rot_local[:, j]
        positions[:, j] = positions[:, parent] + np.einsum(
            "tab,b->ta", rot_global[:, parent], BONE_OFFSETS[j]
        )
    return positions


def object_points_track(base_points: np.ndarray, seq) -> np.ndarray:
    """Object surface points moved by the per-frame object pose: (T, n, 3)."""
    frames = seq.frames if isinstance(seq, MotionSequence) else np.asarray(seq, dtype=np.float64)
    base = np.asarray(base_points, dtype=np.float64)
    if base.ndim != 2 or base.shape[1] != 3:
        raise SceneError(f"object points must be (n, 3), got {base.shape}")
    rot = axis_angle_to_matrix(frames[:, OBJ_ROT])
    return np.einsum("tab,nb->tna", rot, base) + frames[:, None, OBJ_POS]


def voxelize_points(points: np.ndarray, cell_size: float, padding_cells: int = 2) -> SceneVoxelGrid:
    """Occupancy grid marking every cell that contains at least one point."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] < 1:
        raise SceneError(f"points must be (n, 3) with n >= 1, got {points.shape}")
    lo = points.min(axis=0) - padding_cells * cell_size
    extent = points.max(axis=0) - lo + padding_cells * cell_size
    counts = np.maximum(np.ceil(extent / cell_size).astype(int) + 1, 1)
    occ = np.zeros((counts[0], counts[2], counts[1]), dtype=np.uint8)
    idx = np.floor((points - lo) / cell_size).astype(int)
    occ[idx[:, 0], idx[:, 2], idx[:, 1]] = 1
    return SceneVoxelGrid(occupancy=occ, origin=lo, cell_size=cell_size)


def collision_score(keypoints: np.ndarray, sdf: SignedDistanceField) -> tuple[float, float]:
    """(mean penetration depth, colliding-frame fraction) of keypoints vs an SDF.

    Penetration averages max(0, -sdf) over every frame and keypoint; a frame
    collides when any of its keypoints is strictly inside.
    """
    kp = np.asarray(keypoints, dtype=np.float64)
    if kp.ndim != 3 or kp.shape[2] != 3 or kp.shape[0] < 1:
        raise SceneError(f"keypoints must be (T, J, 3), got {kp.shape}")
    values = sample_sdf(sdf, kp)
    penetration = float(np.maximum(0.0, -values).mean())
    colliding = float((values < 0.0).any(axis=1).mean())
    return penetration, colliding


def contact_score(
    keypoints: np.ndarray,
    object_points: np.ndarray,
    threshold: float = 0.05,
) -> float:
    """Fraction of frames whose closest human-object pair is under the threshold.

    The comparison is strict, so a pair at exactly the threshold distance does
    not count as contact.
    """
    kp = np.asarray(keypoints, dtype=np.float64)
    op = np.asarray(object_points, dtype=np.float64)
    if kp.ndim != 3 or op.ndim != 3:
        raise SceneError("keypoints and object_points must be (T, ., 3) arrays")
    if kp.shape[0] != op.shape[0]:
        raise SceneError(f"frame counts differ: {kp.shape[0]} vs {op.shape[0]}")
    hits = 0
    for frame_kp, frame_op in zip(kp, op):
        if cdist(frame_kp, frame_op).min() < threshold:
            hits += 1
    return hits / kp.shape[0]


def contact_loss(
    gt_obj: np.ndarray,
    gt_kp: np.ndarray,
    pred_obj: np.ndarray,
    pred_kp: np.ndarray,
) -> float:
    """Mean absolute difference of human-object pairwise distance patterns.

    Inputs are (n, 3)/(m, 3) point sets, or (T, n, 3)/(T, m, 3) tracks which
    are averaged over frames.  Invariant under any rigid transform applied
    jointly to a (object, keypoints) pair.
    """
    gt_obj = np.asarray(gt_obj, dtype=np.float64)
    gt_kp = np.asarray(gt_kp, dtype=np.float64)
    pred_obj = np.asarray(pred_obj, dtype=np.float64)
    pred_kp = np.asarray(pred_kp, dtype=np.float64)
    if gt_obj.ndim == 3:
        frames = gt_obj.shape[0]
        if not (gt_kp.shape[0] == pred_obj.shape[0] == pred_kp.shape[0] == frames):
            raise SceneError("per-frame inputs must share the frame count")
        return float(np.mean([
            contact_loss(gt_obj[t], gt_kp[t], pred_obj[t], pred_kp[t])
            for t in range(frames)
        ]))
    if gt_obj.shape != pred_obj.shape or gt_kp.shape != pred_kp.shape:
        raise SceneError("ground truth and prediction point counts must match")
    gt_dist = cdist(gt_obj, gt_kp)
    pred_dist = cdist(pred_obj, pred_kp)
    return float(np.abs(gt_dist - pred_dist).mean())
