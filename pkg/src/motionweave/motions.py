"""Parametric sprite/camera motion programs with exact point tracks.

Programs live in unit coordinates ([0,1] square); rendering scales them
to pixels. A program moves a sprite center through world space and/or a
camera (global zoom around the frame center plus translation), and can
report the exact view-space position of any attached point at any frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

KINDS = ("linear", "circular", "zigzag", "sinusoidal", "camera_pan", "camera_zoom")

# Trackability and framing limits (unit coordinates).
CENTER_MARGIN = 0.20
MAX_CENTER_STEP = 0.115  # ~3.7 px per frame at 32x32, inside the search radius
MAX_PAN = 0.25  # keeps >= 50% of the background in view
ZOOM_RANGE = (0.7, 1.45)


def _rot(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def _triangle_wave(t: np.ndarray, period: float) -> np.ndarray:
    """Piecewise-linear wave in [-1, 1] with the given period; starts at 0
    and rises."""
    phase = np.mod(t / period + 0.75, 1.0)
    return 4.0 * np.abs(phase - 0.5) - 1.0


@dataclass(frozen=True)
class MotionProgram:
    kind: str
    params: dict
    n: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown motion kind {self.kind!r}")
        if self.n < 2:
            raise ParameterError("a motion program needs n >= 2 frames")
        self._validate()

    # -- kinematics ----------------------------------------------------

    def sprite_center(self, t) -> np.ndarray:
        """World-space sprite center at frame(s) t; returns (..., 2)."""
        t = np.asarray(t, dtype=np.float64)
        p = self.params
        if self.kind == "linear":
            x = p["x0"] + p["vx"] * t
            y = p["y0"] + p["vy"] * t
        elif self.kind == "circular":
            ang = p["omega"] * t + p["phase"]
            x = p["cx"] + p["radius"] * np.cos(ang)
            y = p["cy"] + p["radius"] * np.sin(ang)
        elif self.kind == "zigzag":
            base = np.stack([p["vx"] * t, p["amp"] * _triangle_wave(t, p["period"])], -1)
            xy = base @ _rot(p["angle"]).T + np.array([p["x0"], p["y0"]])
            return xy
        elif self.kind == "sinusoidal":
            base = np.stack([p["vx"] * t, p["amp"] * np.sin(p["omega"] * t + p["phase"])], -1)
            xy = base @ _rot(p["angle"]).T + np.array([p["x0"], p["y0"]])
            return xy
        else:  # camera programs: the sprite itself stays put in world space
            x = np.broadcast_to(np.float64(p["sx0"]), t.shape)
            y = np.broadcast_to(np.float64(p["sy0"]), t.shape)
        return np.stack([np.asarray(x), np.asarray(y)], -1)

    def camera(self, t) -> tuple[np.ndarray, np.ndarray]:
        """(scale, pan) of the camera at frame(s) t; identity for sprite kinds."""
        t = np.asarray(t, dtype=np.float64)
        p = self.params
        if self.kind == "camera_pan":
            scale = np.ones_like(t)
            pan = np.stack([p["px"] * t, p["py"] * t], -1)
        elif self.kind == "camera_zoom":
            scale = 1.0 + p["rate"] * t
            pan = np.zeros(t.shape + (2,))
        else:
            scale = np.ones_like(t)
            pan = np.zeros(t.shape + (2,))
        return scale, pan

    def view(self, world_xy: np.ndarray, t) -> np.ndarray:
        """Map world points (..., 2) to view coordinates at frame(s) t."""
        scale, pan = self.camera(t)
        center = np.array([0.5, 0.5])
        return (np.asarray(world_xy) - center) * np.expand_dims(scale, -1) + center + pan

    def world_from_view(self, view_xy: np.ndarray, t) -> np.ndarray:
        scale, pan = self.camera(t)
        center = np.array([0.5, 0.5])
        return (np.asarray(view_xy) - center - pan) / np.expand_dims(scale, -1) + center

    def view_center(self, t) -> np.ndarray:
        return self.view(self.sprite_center(t), t)

    def track_sprite_point(self, offset: np.ndarray, t) -> np.ndarray:
        """View position of a point rigidly attached to the sprite."""
        return self.view(self.sprite_center(t) + np.asarray(offset), t)

    def track_background_point(self, world_xy: np.ndarray, t) -> np.ndarray:
        return self.view(world_xy, t)

    # -- validation ----------------------------------------------------

    def _validate(self):
        ts = np.arange(self.n, dtype=np.float64)
        centers = self.view_center(ts)
        if np.any(centers < CENTER_MARGIN) or np.any(centers > 1.0 - CENTER_MARGIN):
            raise ParameterError(
                f"{self.kind} program leaves the frame bounds (centers {centers.min():.3f}..{centers.max():.3f})"
            )
        steps = np.linalg.norm(np.diff(centers, axis=0), axis=-1)
        if steps.size and steps.max() > MAX_CENTER_STEP:
            raise ParameterError(
                f"{self.kind} program moves {steps.max():.3f}/frame, above the trackable limit"
            )
        scale, pan = self.camera(ts)
        if np.any(scale < ZOOM_RANGE[0]) or np.any(scale > ZOOM_RANGE[1]):
            raise ParameterError("camera zoom leaves the allowed range")
        if np.abs(pan).max() > MAX_PAN:
            raise ParameterError("camera pan exceeds the visibility limit")


# ----------------------------------------------------------------------
# Parameter sampling


def _sample_params(kind: str, n: int, rng: np.random.Generator) -> dict:
    mid = lambda spread: 0.5 + rng.uniform(-spread, spread)  # noqa: E731
    if kind == "linear":
        speed = rng.uniform(0.024, 0.05)
        ang = rng.uniform(0.0, 2.0 * math.pi)
        vx, vy = speed * math.cos(ang), speed * math.sin(ang)
        return {
            "x0": mid(0.06) - vx * (n - 1) / 2.0,
            "y0": mid(0.06) - vy * (n - 1) / 2.0,
            "vx": vx,
            "vy": vy,
        }
    if kind == "circular":
        for _ in range(64):
            radius = rng.uniform(0.08, 0.16)
            omega = rng.choice([-1.0, 1.0]) * rng.uniform(0.3, 0.72)
            if 2.0 * radius * math.sin(abs(omega) / 2.0) <= MAX_CENTER_STEP * 0.97:
                break
        return {
            "cx": mid(0.05),
            "cy": mid(0.05),
            "radius": radius,
            "omega": omega,
            "phase": rng.uniform(0.0, 2.0 * math.pi),
        }
    if kind == "zigzag":
        vx = rng.choice([-1.0, 1.0]) * rng.uniform(0.02, 0.04)
        amp = rng.uniform(0.05, 0.1)
        period = float(rng.choice([4.0, 6.0]))
        ang = rng.uniform(0.0, 2.0 * math.pi)
        return {
            "x0": mid(0.04) - math.cos(ang) * vx * (n - 1) / 2.0,
            "y0": mid(0.04) - math.sin(ang) * vx * (n - 1) / 2.0,
            "vx": vx,
            "amp": amp,
            "period": period,
            "angle": ang,
        }
    if kind == "sinusoidal":
        vx = rng.choice([-1.0, 1.0]) * rng.uniform(0.02, 0.04)
        amp = rng.uniform(0.05, 0.095)
        omega = rng.uniform(0.5, 1.05)
        ang = rng.uniform(0.0, 2.0 * math.pi)
        return {
            "x0": mid(0.04) - math.cos(ang) * vx * (n - 1) / 2.0,
            "y0": mid(0.04) - math.sin(ang) * vx * (n - 1) / 2.0,
            "vx": vx,
            "amp": amp,
            "omega": omega,
            "phase": rng.uniform(0.0, 2.0 * math.pi),
            "angle": ang,
        }
    if kind == "camera_pan":
        ang = rng.uniform(0.0, 2.0 * math.pi)
        speed = rng.uniform(0.018, 0.033)
        px, py = speed * math.cos(ang), speed * math.sin(ang)
        return {
            "px": px,
            "py": py,
            "sx0": 0.5 - px * (n - 1) / 2.0 + rng.uniform(-0.04, 0.04),
            "sy0": 0.5 - py * (n - 1) / 2.0 + rng.uniform(-0.04, 0.04),
        }
    if kind == "camera_zoom":
        # the sprite must sit far enough off-center, and the rate be large
        # enough, for its radial drift to clear the tracking noise floor
        for _ in range(64):
            sign = rng.choice([-1.0, 1.0])
            rate = sign * rng.uniform(0.033, 0.055 if sign > 0 else 0.042)
            ox = rng.choice([-1.0, 1.0]) * rng.uniform(0.13, 0.19)
            oy = rng.choice([-1.0, 1.0]) * rng.uniform(0.13, 0.19)
            if abs(rate) * math.hypot(ox, oy) >= 0.0095:
                break
        return {"rate": rate, "sx0": 0.5 + ox, "sy0": 0.5 + oy}
    raise ParameterError(f"unknown motion kind {kind!r}")


def make_motion_program(kind: str, params: dict | None, n: int, seed: int = 0) -> MotionProgram:
    """Build a program; any parameter not given is sampled from `seed`.

    Deterministic: the same (kind, params, n, seed) always yields the same
    program. Raises ParameterError when the resulting trajectory leaves
    the frame or moves too fast to track; with free (unpinned) parameters
    the sampler retries deterministically until it finds a valid draw.
    """
    rng = np.random.default_rng(seed)
    pinned = dict(params or {})
    last_err = None
    for _ in range(200):
        resolved = _sample_params(kind, n, rng)
        fully_pinned = set(pinned) >= set(resolved)
        resolved.update(pinned)
        try:
            return MotionProgram(kind=kind, params=resolved, n=n, seed=seed)
        except ParameterError as err:
            last_err = err
            if fully_pinned:
                raise
    raise last_err


_PROBE_POINTS = np.array([(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)])


def velocity_signature(program: MotionProgram) -> np.ndarray:
    """Concatenated per-frame velocities of the sprite center and four
    background probes; camera motion shows through the probes even when
    the center barely moves."""
    ts = np.arange(program.n, dtype=np.float64)
    tracks = [program.view_center(ts)]
    tracks += [program.track_background_point(p, ts) for p in _PROBE_POINTS]
    return np.concatenate([np.diff(tr, axis=0).reshape(-1) for tr in tracks])


def most_dissimilar(program: MotionProgram, pool: dict) -> str:
    """Pick the pool entry whose velocity signature correlates least with
    `program` (pool maps id -> MotionProgram). Deterministic tie-break by id."""
    sig = velocity_signature(program)
    best_id, best_corr = None, np.inf
    for pid in sorted(pool):
        other = velocity_signature(pool[pid])
        denom = np.linalg.norm(sig) * np.linalg.norm(other)
        corr = float(sig @ other / denom) if denom > 0 else 0.0
        if corr < best_corr:
            best_id, best_corr = pid, corr
    if best_id is None:
        raise ParameterError("empty donor pool")
    return best_id
