"""Video and condition-label domain types plus frame-directory I/O.

A video is an [n, c, H, W] float array in [-1, 1]. On disk a video is a
directory of zero-padded PNG frames (frame_0000.png, frame_0001.png, ...)
with an optional animated-GIF export alongside.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ParameterError, ShapeError


@dataclass(frozen=True)
class Video:
    """Pixel video, values in [-1, 1], at least two frames."""

    data: np.ndarray  # [n, c, H, W] float32
    frame_rate: float = 8.0  # metadata only

    def __post_init__(self):
        d = self.data
        if d.ndim != 4:
            raise ShapeError(f"video data must be [n, c, H, W], got shape {d.shape}")
        if d.shape[0] < 2:
            raise ParameterError("a video needs n >= 2 frames")
        if not np.all(np.isfinite(d)):
            raise ParameterError("video contains non-finite values")
        if d.min() < -1.0 - 1e-6 or d.max() > 1.0 + 1e-6:
            raise ParameterError("video values must lie in [-1, 1]")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def resolution(self) -> tuple[int, int]:
        return self.data.shape[2], self.data.shape[3]


@dataclass(frozen=True)
class ConditionLabel:
    """Discrete (appearance, background) conditioning; id 0 is the null slot."""

    appearance_id: int
    background_id: int
    is_null: bool = False

    def __post_init__(self):
        if self.appearance_id < 0 or self.background_id < 0:
            raise ParameterError("label ids must be non-negative")
        if self.is_null and (self.appearance_id != 0 or self.background_id != 0):
            raise ParameterError("the null label must use id 0 for both fields")

    @classmethod
    def null(cls) -> "ConditionLabel":
        return cls(0, 0, is_null=True)


def to_uint8(frames: np.ndarray) -> np.ndarray:
    """Map [-1, 1] float frames [n, c, H, W] to uint8 [n, H, W, c]."""
    x = np.clip((frames + 1.0) * 127.5, 0.0, 255.0)
    return np.round(x).astype(np.uint8).transpose(0, 2, 3, 1)


def from_uint8(frames: np.ndarray) -> np.ndarray:
    """Inverse of to_uint8 (up to quantization)."""
    x = frames.astype(np.float32).transpose(0, 3, 1, 2)
    return x / 127.5 - 1.0


def save_video(video: Video, directory: str, gif: bool = False) -> None:
    """Write frame_%04d.png files (and optionally clip.gif) into `directory`."""
    os.makedirs(directory, exist_ok=True)
    frames = to_uint8(video.data)
    images = [Image.fromarray(f) for f in frames]
    for i, im in enumerate(images):
        im.save(os.path.join(directory, f"frame_{i:04d}.png"))
    if gif:
        duration = max(1, int(round(1000.0 / video.frame_rate)))
        images[0].save(
            os.path.join(directory, "clip.gif"),
            save_all=True,
            append_images=images[1:],
            duration=duration,
            loop=0,
        )


def load_video(directory: str, frame_rate: float = 8.0) -> Video:
    """Read a frame directory written by save_video."""
    names = sorted(
        f for f in os.listdir(directory) if f.startswith("frame_") and f.endswith(".png")
    )
    if len(names) < 2:
        raise ParameterError(f"no frame sequence found in {directory}")
    frames = np.stack([np.asarray(Image.open(os.path.join(directory, f)).convert("RGB")) for f in names])
    return Video(data=from_uint8(frames), frame_rate=frame_rate)
