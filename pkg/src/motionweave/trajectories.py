"""Point-trajectory container shared by the renderer, tracker and metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class TrajectorySet:
    """K trajectories of n (x, y) pixel positions with per-point validity."""

    points: np.ndarray  # (K, n, 2) float64
    valid: np.ndarray  # (K, n) bool

    def __post_init__(self):
        p, v = self.points, self.valid
        if p.ndim != 3 or p.shape[-1] != 2 or v.shape != p.shape[:2]:
            raise ShapeError(
                f"expected points (K, n, 2) with matching valid mask, got {p.shape} / {v.shape}"
            )
        if p.shape[0] < 1 or p.shape[1] < 2:
            raise ShapeError("need at least one trajectory over at least two frames")

    @property
    def n_tracks(self) -> int:
        return self.points.shape[0]

    @property
    def n_frames(self) -> int:
        return self.points.shape[1]

    def subset(self, idx) -> "TrajectorySet":
        return TrajectorySet(points=self.points[idx], valid=self.valid[idx])

    def velocity(self, k: int):
        """First differences of trajectory k over frames where both
        endpoints are valid. Returns (steps (m,) int frame indices,
        velocities (m, 2))."""
        ok = self.valid[k, :-1] & self.valid[k, 1:]
        steps = np.nonzero(ok)[0]
        vel = self.points[k, 1:] - self.points[k, :-1]
        return steps, vel[ok]

    def reversed_time(self) -> "TrajectorySet":
        return TrajectorySet(points=self.points[:, ::-1].copy(), valid=self.valid[:, ::-1].copy())

    def offset(self, dx: float, dy: float) -> "TrajectorySet":
        return TrajectorySet(points=self.points + np.array([dx, dy]), valid=self.valid.copy())


def drop_static(ts: TrajectorySet, min_displacement: float = 1.5):
    """Keep trajectories whose maximum excursion from their start exceeds
    `min_displacement` pixels (over valid frames). Returns None when every
    trajectory is static; callers decide how to treat that."""
    keep = []
    for k in range(ts.n_tracks):
        v = ts.valid[k]
        if v.sum() < 2:
            continue
        pts = ts.points[k][v]
        if np.linalg.norm(pts - pts[0], axis=-1).max() >= min_displacement:
            keep.append(k)
    if not keep:
        return None
    return ts.subset(np.array(keep))
