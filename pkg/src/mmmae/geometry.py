"""Deterministic 3D kernels: depth unprojection, farthest point sampling, KNN grouping.

All functions are pure numpy and safe to call concurrently. Tie-breaking is
always by smallest index so results are bit-reproducible across runs.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, EmptyCloudError


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera parameters. fx/fy/cx/cy in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigurationError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )


@dataclass(frozen=True)
class PointGroup:
    """A local point group: absolute center plus K+1 center-relative members.

    Members are (group points - center) / max member norm, so the largest
    member norm is exactly 1 (or every member is exactly zero). scale keeps
    the divisor so absolute coordinates can be recovered.
    """

    center: np.ndarray  # (3,)
    members: np.ndarray  # (K+1, 3), center-relative, max-norm scaled
    scale: float = 1.0


def normalize_group_members(rel: np.ndarray) -> np.ndarray:
    """Scale center-relative members by the max member norm (1 if all zero).

    Idempotent: applying it to already-normalized members is a no-op.
    """
    norms = np.linalg.norm(rel, axis=-1)
    scale = norms.max(axis=-1, keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    return rel / scale[..., None]


def unproject_depth(depth: np.ndarray, intr: CameraIntrinsics, stride: int = 1) -> np.ndarray:
    """Unproject a depth map to a point cloud through the pinhole model.

    depth: (H, W) or (1, H, W), metric depth along the optical axis.
    Emits ((u-cx)*d/fx, (v-cy)*d/fy, d) for each pixel on the stride grid
    with finite d > 0, in row-major pixel order. Invalid pixels are skipped.
    """
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    d = np.asarray(depth)
    if d.ndim == 3 and d.shape[0] == 1:
        d = d[0]
    if d.ndim != 2:
        raise ConfigurationError(f"depth must be (H, W) or (1, H, W), got shape {depth.shape}")
    if d.shape != (intr.height, intr.width):
        raise ConfigurationError(
            f"depth shape {d.shape} does not match intrinsics {intr.height}x{intr.width}"
        )

    vs = np.arange(0, intr.height, stride)
    us = np.arange(0, intr.width, stride)
    vg, ug = np.meshgrid(vs, us, indexing="ij")
    z = d[vg, ug]
    valid = np.isfinite(z) & (z > 0)
    if not valid.any():
        raise EmptyCloudError("no valid depth pixels on the stride grid")
    z = z[valid]
    u = ug[valid].astype(z.dtype)
    v = vg[valid].astype(z.dtype)
    x = (u - intr.cx) * z / intr.fx
    y = (v - intr.cy) * z / intr.fy
    return np.stack([x, y, z], axis=1)


def project_points(points: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Inverse of unproject_depth for valid points: returns (u, v, d) rows."""
    pts = np.asarray(points)
    z = pts[:, 2]
    u = pts[:, 0] * intr.fx / z + intr.cx
    v = pts[:, 1] * intr.fy / z + intr.cy
    return np.stack([u, v, z], axis=1)


def farthest_point_sampling(points: np.ndarray, n: int, start: int = 0) -> np.ndarray:
    """Greedy FPS over a point cloud, returning n point indices.

    The first index is `start`; each subsequent pick maximizes the minimum
    squared distance to the already-selected set, ties broken by smallest
    index (np.argmax picks the first maximum).
    """
    pts = np.asarray(points, dtype=np.float64)
    m = pts.shape[0]
    if n < 1 or n > m:
        raise ValueError(f"cannot sample {n} points from a cloud of {m}")
    if not (0 <= start < m):
        raise ValueError(f"start index {start} out of range for cloud of {m}")

    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = start
    min_d2 = ((pts - pts[start]) ** 2).sum(axis=1)
    for i in range(1, n):
        nxt = int(np.argmax(min_d2))
        chosen[i] = nxt
        d2 = ((pts - pts[nxt]) ** 2).sum(axis=1)
        np.minimum(min_d2, d2, out=min_d2)
    return chosen


def knn_group(points: np.ndarray, centers: np.ndarray, k: int) -> list[PointGroup]:
    """Group each center with its k nearest neighbors (by index, self excluded).

    Each group holds the center point plus k neighbors ordered by (distance,
    index), expressed center-relative and max-norm scaled.
    """
    pts = np.asarray(points, dtype=np.float64)
    m = pts.shape[0]
    if k < 1 or k + 1 > m:
        raise ValueError(f"cannot form groups of {k + 1} points from a cloud of {m}")

    groups = []
    for ci in np.asarray(centers, dtype=np.int64):
        center = pts[ci]
        d2 = ((pts - center) ** 2).sum(axis=1)
        d2[ci] = np.inf  # the center itself is prepended, not re-selected
        neighbor_idx = np.argsort(d2, kind="stable")[:k]
        members = np.concatenate([center[None], pts[neighbor_idx]], axis=0)
        rel = members - center
        scale = float(np.linalg.norm(rel, axis=1).max())
        groups.append(
            PointGroup(center=center, members=normalize_group_members(rel), scale=scale or 1.0)
        )
    return groups


def group_arrays(groups: list[PointGroup]) -> tuple[np.ndarray, np.ndarray]:
    """Stack a group list into (centers (N,3), members (N,K+1,3)) arrays."""
    centers = np.stack([g.center for g in groups])
    members = np.stack([g.members for g in groups])
    return centers, members
