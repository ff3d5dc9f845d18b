"""Integer block-matching point tracker (sum-of-squared patch difference).

Per frame transition each point advances by the displacement, within the
search radius, that minimizes the SSD between its patch in the previous
frame and the candidate patch in the next frame. Ties break toward the
smallest displacement magnitude, then lexicographically by (dy, dx), so
tracking is fully deterministic. Points whose patch would leave the frame
are marked invalid from that frame on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .trajectories import TrajectorySet
from .video import Video


@dataclass(frozen=True)
class TrackerConfig:
    grid_spacing: int = 4
    patch_size: int = 5
    search_radius: int = 4

    def __post_init__(self):
        if self.patch_size % 2 != 1 or self.patch_size < 3:
            raise ParameterError("patch_size must be odd and >= 3")
        if self.search_radius < 1:
            raise ParameterError("search_radius must be >= 1")
        if self.grid_spacing < 1:
            raise ParameterError("grid_spacing must be >= 1")

    @property
    def margin(self) -> int:
        return self.patch_size // 2


def grid_seeds(res: tuple[int, int], cfg: TrackerConfig) -> np.ndarray:
    """Regular (x, y) seed grid strictly inside the tracking margins."""
    H, W = res
    m = cfg.margin
    xs = np.arange(m + 1, W - m - 1, cfg.grid_spacing)
    ys = np.arange(m + 1, H - m - 1, cfg.grid_spacing)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=-1).astype(np.int64)


def _corner_strength(frame: np.ndarray) -> np.ndarray:
    """Shi-Tomasi minimum structure-tensor eigenvalue per pixel (luminance)."""
    lum = frame.mean(axis=0)
    gy, gx = np.gradient(lum)
    ixx, iyy, ixy = gx * gx, gy * gy, gx * gy

    def smooth(a):
        out = a.copy()
        out[1:-1] = (a[:-2] + a[1:-1] + a[2:]) / 3.0
        out[:, 1:-1] = (out[:, :-2] + out[:, 1:-1] + out[:, 2:]) / 3.0
        return out

    ixx, iyy, ixy = smooth(ixx), smooth(iyy), smooth(ixy)
    tr = ixx + iyy
    det = np.sqrt(np.maximum((ixx - iyy) ** 2 + 4.0 * ixy**2, 0.0))
    return np.maximum((tr - det) / 2.0, 0.0)


def motion_seeds(
    video: Video, cfg: TrackerConfig, k: int = 12, min_separation: int = 3
) -> np.ndarray:
    """Seed points at strong, trackable moving content.

    Scores combine temporal-difference energy (movement) with corner
    strength (two-sided texture, so the match cannot slide along an
    edge), the way co-tracking keys on a moving subject. Falls back to
    the regular grid when nothing moves.
    """
    frames = video.data.astype(np.float64)
    energy = np.abs(np.diff(frames, axis=0)).sum(axis=(0, 1))  # (H, W)
    corners = sum(_corner_strength(frames[t]) for t in range(frames.shape[0]))
    score = energy * np.sqrt(corners + 1e-12)
    H, W = score.shape
    m = cfg.margin
    mask = np.zeros_like(score, dtype=bool)
    mask[m + 1 : H - m - 1, m + 1 : W - m - 1] = True
    score = np.where(mask, score, -1.0)
    if energy.max() <= 1e-6 or score.max() <= 1e-9:
        return grid_seeds(video.resolution, cfg)
    picks = []
    work = score.copy()
    for _ in range(k):
        idx = int(np.argmax(work))
        y, x = divmod(idx, W)
        if work[y, x] <= 1e-9:
            break
        picks.append((x, y))
        y0, y1 = max(0, y - min_separation), min(H, y + min_separation + 1)
        x0, x1 = max(0, x - min_separation), min(W, x + min_separation + 1)
        work[y0:y1, x0:x1] = -1.0
    if not picks:
        return grid_seeds(video.resolution, cfg)
    return np.array(picks, dtype=np.int64)


def _candidate_order(radius: int) -> np.ndarray:
    """(dy, dx) candidates sorted by (|d|^2, dy, dx); the first minimal-cost
    candidate in this order realizes the tie-break rule."""
    r = radius
    cands = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]
    cands.sort(key=lambda d: (d[0] * d[0] + d[1] * d[1], d[0], d[1]))
    return np.array(cands, dtype=np.int64)


def track_points(video: Video, cfg: TrackerConfig, seeds: np.ndarray) -> TrajectorySet:
    """Track integer seed points (K, 2) as (x, y) through the video.

    A point is invalidated once it is pushed onto the margin ring, where
    the search window becomes one-sided; its position freezes there.
    """
    frames = video.data.astype(np.float64)  # (n, c, H, W)
    n, c, H, W = frames.shape
    if cfg.patch_size > min(H, W):
        raise ParameterError("patch does not fit inside the frame")
    m = cfg.margin
    seeds = np.asarray(seeds, dtype=np.int64).reshape(-1, 2)

    def interior(x, y):
        return m < x < W - 1 - m and m < y < H - 1 - m

    if not all(interior(x, y) for x, y in seeds):
        raise ParameterError("seed points must start inside the tracking margins")

    K = seeds.shape[0]
    cands = _candidate_order(cfg.search_radius)  # (C, 2) as (dy, dx)
    patch_off = np.arange(-m, m + 1)
    # (P, P) index offset grids shared by all patch extractions
    off_y, off_x = np.meshgrid(patch_off, patch_off, indexing="ij")

    points = np.zeros((K, n, 2), dtype=np.float64)
    valid = np.zeros((K, n), dtype=bool)
    pos = seeds.copy()  # (K, 2) as (x, y)
    alive = np.ones(K, dtype=bool)
    points[:, 0] = pos
    valid[:, 0] = True

    for t in range(n - 1):
        prev, nxt = frames[t], frames[t + 1]
        for k in range(K):
            if not alive[k]:
                points[k, t + 1] = points[k, t]
                continue
            x, y = pos[k]
            ref = prev[:, y + off_y, x + off_x]  # (c, P, P)
            # candidate displaced centers whose patch stays inside the frame
            cy = y + cands[:, 0]
            cx = x + cands[:, 1]
            ok = (cx >= m) & (cx < W - m) & (cy >= m) & (cy < H - m)
            iy = cy[ok][:, None, None] + off_y[None]
            ix = cx[ok][:, None, None] + off_x[None]
            patches = nxt[:, iy, ix]  # (c, C_ok, P, P)
            diff = patches - ref[:, None]
            cost = np.einsum("ckij,ckij->k", diff, diff)
            best = int(np.argmin(cost))  # first minimum in tie-break order
            dy, dx = cands[ok][best]
            pos[k] = (x + dx, y + dy)
            points[k, t + 1] = pos[k]
            if interior(*pos[k]):
                valid[k, t + 1] = True
            else:
                alive[k] = False
    return TrajectorySet(points=points, valid=valid)
