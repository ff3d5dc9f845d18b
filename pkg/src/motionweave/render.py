"""Anti-aliased sprite-over-background rasterizer with exact ground truth.

Appearances are drawn from a fixed vocabulary (shape x color x size for
sprites, six procedural backgrounds) so that label ids have a stable
meaning across datasets built from this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ParameterError, ShapeError
from .motions import MotionProgram
from .trajectories import TrajectorySet
from .video import Video

SPRITE_SHAPES = ("square", "circle", "triangle", "cross")

SPRITE_COLORS = {
    "red": (0.95, 0.15, 0.15),
    "green": (0.15, 0.85, 0.2),
    "blue": (0.25, 0.4, 0.95),
    "yellow": (0.98, 0.92, 0.2),
    "magenta": (0.9, 0.2, 0.9),
    "cyan": (0.2, 0.9, 0.9),
}

SPRITE_SIZES = (8, 10, 12)  # pixels at 32x32

# background id -> (style, params); id 0 is reserved for the null label
BACKGROUNDS = {
    1: ("solid", {"color": (0.12, 0.12, 0.15)}),
    2: ("solid", {"color": (0.88, 0.88, 0.85)}),
    3: ("gradient", {"axis": 0, "c0": (0.15, 0.2, 0.3), "c1": (0.45, 0.5, 0.55)}),
    4: ("gradient", {"axis": 1, "c0": (0.5, 0.45, 0.4), "c1": (0.82, 0.78, 0.7)}),
    5: ("checker", {"cells": 4.0, "c0": (0.1, 0.12, 0.1), "c1": (0.28, 0.3, 0.3)}),
    6: ("checker", {"cells": 3.0, "c0": (0.6, 0.62, 0.66), "c1": (0.82, 0.8, 0.78)}),
}


def _luminance(rgb) -> float:
    r, g, b = rgb
    return 0.299 * r + 0.587 * g + 0.114 * b


def background_luminance(background_id: int) -> float:
    style, p = BACKGROUNDS[background_id]
    if style == "solid":
        return _luminance(p["color"])
    return 0.5 * (_luminance(p["c0"]) + _luminance(p["c1"]))


# Appearance vocabulary: id 1.. covers every (shape, color, size) triple.
APPEARANCE_VOCAB = [
    (shape, color, size)
    for shape in SPRITE_SHAPES
    for color in SPRITE_COLORS
    for size in SPRITE_SIZES
]
N_APPEARANCES = len(APPEARANCE_VOCAB)  # 72
N_BACKGROUNDS = len(BACKGROUNDS)  # 6

MIN_CONTRAST = 0.2


@dataclass(frozen=True)
class Appearance:
    """One concrete look: sprite shape/color/size over a background."""

    sprite_shape: str
    sprite_color: tuple
    sprite_size: int
    background_id: int

    def __post_init__(self):
        if self.sprite_shape not in SPRITE_SHAPES:
            raise ParameterError(f"unknown sprite shape {self.sprite_shape!r}")
        if self.background_id not in BACKGROUNDS:
            raise ParameterError(f"unknown background id {self.background_id}")
        if self.sprite_size < 4:
            raise ParameterError("sprite too small to rasterize or track")
        contrast = abs(_luminance(self.sprite_color) - background_luminance(self.background_id))
        if contrast < MIN_CONTRAST:
            raise ParameterError(
                f"sprite/background luminance contrast {contrast:.3f} below {MIN_CONTRAST}"
            )


def appearance_id_of(shape: str, color_name: str, size: int) -> int:
    return APPEARANCE_VOCAB.index((shape, color_name, size)) + 1


def appearance_from_ids(appearance_id: int, background_id: int) -> Appearance:
    """Resolve vocabulary ids to a concrete Appearance (validates contrast)."""
    if not (1 <= appearance_id <= N_APPEARANCES):
        raise ParameterError(f"appearance id {appearance_id} outside the vocabulary")
    shape, color, size = APPEARANCE_VOCAB[appearance_id - 1]
    return Appearance(
        sprite_shape=shape,
        sprite_color=SPRITE_COLORS[color],
        sprite_size=size,
        background_id=background_id,
    )


def compatible_pairs() -> list[tuple[int, int]]:
    """All (appearance_id, background_id) pairs with sufficient contrast."""
    out = []
    for aid in range(1, N_APPEARANCES + 1):
        shape, color, size = APPEARANCE_VOCAB[aid - 1]
        for bid in BACKGROUNDS:
            if abs(_luminance(SPRITE_COLORS[color]) - background_luminance(bid)) >= MIN_CONTRAST:
                out.append((aid, bid))
    return out


# ----------------------------------------------------------------------
# Rasterization


def _background_rgb(background_id: int, world: np.ndarray) -> np.ndarray:
    """world: (..., 2) -> rgb (..., 3); patterns are functions of world
    coordinates so camera motion translates/scales them exactly."""
    style, p = BACKGROUNDS[background_id]
    if style == "solid":
        return np.broadcast_to(np.asarray(p["color"]), world.shape[:-1] + (3,)).copy()
    if style == "gradient":
        u = np.clip(world[..., p["axis"]], 0.0, 1.0)[..., None]
        return np.asarray(p["c0"]) * (1.0 - u) + np.asarray(p["c1"]) * u
    # checker
    cells = p["cells"]
    parity = (np.floor(world[..., 0] * cells) + np.floor(world[..., 1] * cells)) % 2.0
    return np.where(parity[..., None] < 0.5, np.asarray(p["c0"]), np.asarray(p["c1"]))


def _shape_mask(shape: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Inside test in local sprite coordinates (u, v in units of half-size)."""
    if shape == "square":
        return (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0)
    if shape == "circle":
        return u * u + v * v <= 1.0
    if shape == "triangle":
        # vertices (0, -1), (+-sqrt(3)/2, 1/2); centroid at the origin
        s3 = np.sqrt(3.0)
        return (v <= 0.5) & (s3 * u - v <= 1.0) & (-s3 * u - v <= 1.0)
    if shape == "cross":
        inside_box = (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0)
        return inside_box & ((np.abs(u) <= 0.34) | (np.abs(v) <= 0.34))
    raise ParameterError(f"unknown sprite shape {shape!r}")


# Track-point offsets in units of sprite half-size; chosen to fall inside
# every shape in the vocabulary (axis-aligned to respect the cross arms).
SPRITE_OFFSET_UNITS = np.array(
    [
        (0.0, 0.0),
        (0.4, 0.0),
        (-0.4, 0.0),
        (0.0, 0.4),
        (0.0, -0.4),
        (0.2, 0.0),
        (-0.2, 0.0),
        (0.0, 0.2),
    ]
)

BACKGROUND_POINTS = np.array(
    [
        (0.15, 0.15),
        (0.85, 0.15),
        (0.15, 0.85),
        (0.85, 0.85),
        (0.5, 0.12),
        (0.5, 0.88),
        (0.12, 0.5),
        (0.88, 0.5),
    ]
)


def render_video(
    program: MotionProgram,
    look: Appearance,
    res: tuple[int, int] = (32, 32),
    sprite_offsets: Optional[np.ndarray] = None,
    bg_points: Optional[np.ndarray] = None,
    supersample: int = 4,
    frame_rate: float = 8.0,
) -> tuple[Video, TrajectorySet]:
    """Rasterize the program with the given look and return the video plus
    exact tracks for 8 sprite-attached and 8 background points.

    Pixel positions use (x, y) with pixel centers at integer coordinates;
    a point is valid while it stays inside the frame.
    """
    H, W = res
    if H < 8 or W < 8:
        raise ShapeError("resolution too small")
    n = program.n
    ss = supersample
    half_world = (look.sprite_size / 2.0) / W  # half-size in world units

    # Supersampled view-space pixel centers, shared across frames.
    ys = (np.arange(H * ss) + 0.5) / (H * ss)
    xs = (np.arange(W * ss) + 0.5) / (W * ss)
    vx, vy = np.meshgrid(xs, ys)
    view = np.stack([vx, vy], axis=-1)  # (H*ss, W*ss, 2)

    frames = np.empty((n, 3, H, W), dtype=np.float32)
    color = np.asarray(look.sprite_color)
    for t in range(n):
        world = program.world_from_view(view, float(t))
        rgb = _background_rgb(look.background_id, world)
        center = program.sprite_center(float(t))
        local = (world - center) / half_world
        mask = _shape_mask(look.sprite_shape, local[..., 0], local[..., 1])
        rgb = np.where(mask[..., None], color, rgb)
        # box-filter downsample for anti-aliasing
        rgb = rgb.reshape(H, ss, W, ss, 3).mean(axis=(1, 3))
        frames[t] = (rgb.transpose(2, 0, 1) * 2.0 - 1.0).astype(np.float32)

    offsets = SPRITE_OFFSET_UNITS * half_world if sprite_offsets is None else sprite_offsets
    bgp = BACKGROUND_POINTS if bg_points is None else bg_points
    ts = np.arange(n, dtype=np.float64)
    tracks = []
    for off in offsets:
        tracks.append(program.track_sprite_point(off, ts))
    for p in bgp:
        tracks.append(program.track_background_point(p, ts))
    pts = np.stack(tracks)  # (K, n, 2) in view units
    pts_px = pts * np.array([W, H]) - 0.5
    valid = (
        (pts_px[..., 0] >= 0.0)
        & (pts_px[..., 0] <= W - 1.0)
        & (pts_px[..., 1] >= 0.0)
        & (pts_px[..., 1] <= H - 1.0)
    )
    video = Video(data=frames, frame_rate=frame_rate)
    return video, TrajectorySet(points=pts_px, valid=valid)
