"""Trajectory, frame-coherence and label-alignment scores.

Motion fidelity compares two trajectory sets through the normalized
correlation of their velocity sequences with symmetric best-match
(Chamfer) aggregation, mapped to [0, 1]. Temporal consistency embeds each
frame with a fixed seeded random projection and averages pairwise cosine
similarity. Condition alignment template-matches canonical sprites
against each frame.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import ConfigurationError, NumericError, ParameterError
from .motions import make_motion_program
from .render import appearance_from_ids, render_video
from .trajectories import TrajectorySet, drop_static
from .tracking import TrackerConfig, motion_seeds, track_points
from .video import ConditionLabel, Video

_STATIC_EPS = 1e-9


class MotionFidelityScore(float):
    """Float score in [0, 1] carrying a degenerate-input flag."""

    degenerate: bool = False

    def __new__(cls, value: float, degenerate: bool = False):
        obj = super().__new__(cls, value)
        obj.degenerate = degenerate
        return obj


def _velocities(ts: TrajectorySet):
    """Per trajectory: (frame indices, (m, 2) velocities)."""
    return [ts.velocity(k) for k in range(ts.n_tracks)]


def _is_static(vel: np.ndarray) -> bool:
    return vel.size == 0 or float(np.abs(vel).max()) < _STATIC_EPS


def _pair_similarity(sa, va, sb, vb) -> Optional[float]:
    """Similarity of two velocity sequences over their common frames;
    None when the valid spans do not overlap."""
    common, ia, ib = np.intersect1d(sa, sb, return_indices=True)
    if common.size == 0:
        return None
    u = va[ia].T.reshape(-1)  # concatenated x then y components
    w = vb[ib].T.reshape(-1)
    nu = float(np.linalg.norm(u))
    nw = float(np.linalg.norm(w))
    if nu < _STATIC_EPS and nw < _STATIC_EPS:
        corr = 1.0
    elif nu < _STATIC_EPS or nw < _STATIC_EPS:
        corr = 0.0
    else:
        corr = float(u @ w / (nu * nw))
    return 0.5 * (1.0 + corr)


def motion_fidelity(ref: TrajectorySet, gen: TrajectorySet) -> MotionFidelityScore:
    """Symmetric Chamfer mean of best-match velocity correlations.

    Degenerate cases: when both sets are entirely static the score is 1.0
    (flagged); when exactly one side is static it is 0.5 (flagged).
    """
    va = _velocities(ref)
    vb = _velocities(gen)
    if not any(v[1].shape[0] >= 1 for v in va) or not any(v[1].shape[0] >= 1 for v in vb):
        raise ParameterError("each trajectory set needs a track with two valid consecutive frames")
    a_static = all(_is_static(v) for _, v in va)
    b_static = all(_is_static(v) for _, v in vb)
    if a_static and b_static:
        return MotionFidelityScore(1.0, degenerate=True)
    if a_static or b_static:
        return MotionFidelityScore(0.5, degenerate=True)

    sims = np.full((len(va), len(vb)), np.nan)
    for i, (sa, u) in enumerate(va):
        for j, (sb, w) in enumerate(vb):
            s = _pair_similarity(sa, u, sb, w)
            if s is not None:
                sims[i, j] = s
    if np.all(np.isnan(sims)):
        raise ParameterError("no trajectory pair shares a valid frame span")
    best_a = np.nanmax(sims, axis=1)
    best_b = np.nanmax(sims, axis=0)
    score = 0.5 * (np.nanmean(best_a) + np.nanmean(best_b))
    return MotionFidelityScore(float(score))


def _merge_seeds(a: np.ndarray, b: np.ndarray, min_separation: int = 2) -> np.ndarray:
    """Union of two seed sets, thinning points closer than min_separation."""
    picks = list(map(tuple, a))
    for p in map(tuple, b):
        if all(max(abs(p[0] - q[0]), abs(p[1] - q[1])) >= min_separation for q in picks):
            picks.append(p)
    return np.array(picks, dtype=np.int64)


def consensus_filter(ts: TrajectorySet, min_corr: float = 0.2, min_keep: int = 3) -> TrajectorySet:
    """Drop trajectories inconsistent with a video's dominant motion.

    Block matching occasionally mislocks (periodic texture, low
    contrast); such junk tracks inflate best-match scores. When the set
    is coherent overall (mean correlation with the median velocity
    >= 0.6) the outliers are removed; heterogeneous motion fields such as
    radial zooms are left untouched.
    """
    n = ts.n_frames
    vels, masks = [], []
    for k in range(ts.n_tracks):
        steps, v = ts.velocity(k)
        full = np.zeros((n - 1, 2))
        m = np.zeros(n - 1, bool)
        full[steps] = v
        m[steps] = True
        vels.append(full)
        masks.append(m)
    V = np.stack(vels)
    M = np.stack(masks)
    with np.errstate(invalid="ignore"):
        med = np.nanmedian(np.where(M[..., None], V, np.nan), axis=0)
    med = np.nan_to_num(med)
    corrs = []
    for k in range(V.shape[0]):
        u = V[k][M[k]].reshape(-1)
        w = med[M[k]].reshape(-1)
        nu, nw = np.linalg.norm(u), np.linalg.norm(w)
        corrs.append(float(u @ w / (nu * nw)) if nu > 1e-9 and nw > 1e-9 else 0.0)
    corrs = np.array(corrs)
    if corrs.size == 0 or corrs.mean() < 0.6:
        return ts
    keep = np.nonzero(corrs >= min_corr)[0]
    if len(keep) < min_keep:
        keep = np.argsort(-corrs)[: min(min_keep, len(corrs))]
    return ts.subset(np.sort(keep))


def moving_trajectories(
    video: Video,
    tracker: TrackerConfig = TrackerConfig(),
    min_displacement: float = 1.5,
    seeds: np.ndarray = None,
):
    """Track seed points (motion-salient by default) and keep the moving
    trajectories. Returns None when nothing moves at least
    `min_displacement` pixels."""
    if seeds is None:
        seeds = motion_seeds(video, tracker)
    tracks = track_points(video, tracker, seeds)
    return drop_static(tracks, min_displacement)


def tracked_motion_fidelity(
    video_ref: Video,
    video_gen: Video,
    tracker: TrackerConfig = TrackerConfig(),
    min_displacement: float = 1.5,
) -> MotionFidelityScore:
    """Evaluation protocol: track one shared seed set (the union of both
    videos' motion-salient points) through each video, discard near-static
    trajectories, then score the remainder. Shared seeds keep the two
    trajectory sets about the same content, the way co-tracked points
    match across videos; borrowed seeds that land on featureless ground
    track as static and drop out. Falls back to the degenerate
    conventions when a side has no moving trajectory."""
    seeds = _merge_seeds(
        motion_seeds(video_ref, tracker), motion_seeds(video_gen, tracker)
    )
    ref_moving = moving_trajectories(video_ref, tracker, min_displacement, seeds=seeds)
    gen_moving = moving_trajectories(video_gen, tracker, min_displacement, seeds=seeds)
    if ref_moving is None and gen_moving is None:
        return MotionFidelityScore(1.0, degenerate=True)
    if ref_moving is None or gen_moving is None:
        return MotionFidelityScore(0.5, degenerate=True)
    return motion_fidelity(consensus_filter(ref_moving), consensus_filter(gen_moving))


# ----------------------------------------------------------------------
# Temporal consistency

_EMBED_DIM = 64
_EMBED_SEED = 0x5EED
_POOL = 4
_projection_cache: dict[int, np.ndarray] = {}


def _frame_embedding(frames: np.ndarray) -> np.ndarray:
    """(n, c, H, W) -> (n, 64) via 4x4 average pooling and a fixed seeded
    random projection (per input dimensionality)."""
    n, c, H, W = frames.shape
    hp, wp = H // _POOL, W // _POOL
    pooled = frames[:, :, : hp * _POOL, : wp * _POOL]
    pooled = pooled.reshape(n, c, hp, _POOL, wp, _POOL).mean(axis=(3, 5))
    flat = pooled.reshape(n, -1)
    D = flat.shape[1]
    if D not in _projection_cache:
        rng = np.random.default_rng(_EMBED_SEED)
        _projection_cache[D] = rng.standard_normal((D, _EMBED_DIM)) / np.sqrt(D)
    return flat @ _projection_cache[D]


def temporal_consistency(video: Video) -> float:
    """Mean cosine similarity of frame embeddings over all unordered pairs.

    Zero-norm embeddings are excluded pairwise; if nothing remains the
    video is unusable and a NumericError is raised.
    """
    emb = _frame_embedding(video.data.astype(np.float64))
    norms = np.linalg.norm(emb, axis=1)
    ok = norms > 1e-12
    idx = np.nonzero(ok)[0]
    if idx.size < 2:
        raise NumericError("all frame-embedding pairs are degenerate")
    unit = emb[idx] / norms[idx][:, None]
    g = unit @ unit.T
    iu = np.triu_indices(idx.size, k=1)
    return float(g[iu].mean())


# ----------------------------------------------------------------------
# Condition alignment

_MARGIN_SHARPNESS = 20.0


def render_template(appearance_id: int, res: int = 32) -> np.ndarray:
    """Canonical sprite patch (c, h, w) in [-1, 1] on a contrasting solid."""
    from .render import APPEARANCE_VOCAB, SPRITE_COLORS, _luminance

    _, color, _ = APPEARANCE_VOCAB[appearance_id - 1]
    canvas = 1 if _luminance(SPRITE_COLORS[color]) > 0.5 else 2
    look = appearance_from_ids(appearance_id, background_id=canvas)
    size = look.sprite_size
    pad = 2
    side = size + 2 * pad
    program = make_motion_program("linear", {"x0": 0.5, "y0": 0.5, "vx": 0.0, "vy": 0.0}, n=2)
    video, _ = render_video(program, look, res=(res, res))
    half = side // 2
    lo, hi = res // 2 - half, res // 2 - half + side
    return video.data[0][:, lo:hi, lo:hi]


def _ncc_max(frame: np.ndarray, template: np.ndarray) -> float:
    """Max zero-normalized cross-correlation of the template over all
    translations of one (c, H, W) frame."""
    c, H, W = frame.shape
    _, th, tw = template.shape
    if th > H or tw > W:
        raise ConfigurationError("template larger than the frame")
    tz = template - template.mean()
    tn = float(np.linalg.norm(tz))
    if tn < 1e-12:
        return 0.0
    windows = np.lib.stride_tricks.sliding_window_view(frame, (c, th, tw))[0]
    wz = windows - windows.mean(axis=(-3, -2, -1), keepdims=True)
    wn = np.linalg.norm(wz.reshape(wz.shape[0], wz.shape[1], -1), axis=-1)
    corr = np.einsum("ijckl,ckl->ij", wz, tz)
    with np.errstate(invalid="ignore", divide="ignore"):
        ncc = np.where(wn > 1e-12, corr / (wn * tn), 0.0)
    return float(ncc.max())


class TemplateBank:
    """Canonical sprite templates for a set of appearance ids."""

    def __init__(self, appearance_ids, res: int = 32):
        ids = sorted(set(int(a) for a in appearance_ids))
        if not ids:
            raise ConfigurationError("template bank needs at least one appearance")
        self.appearance_ids = ids
        self.templates = {aid: render_template(aid, res) for aid in ids}

    def __contains__(self, appearance_id: int) -> bool:
        return int(appearance_id) in self.templates


def condition_alignment(video: Video, label: ConditionLabel, bank: TemplateBank) -> float:
    """Softmax-normalized margin of the correct template's best NCC over the
    bank, averaged over frames; 1.0 for a single-template bank."""
    if label.appearance_id not in bank:
        raise ConfigurationError(
            f"template bank does not cover appearance id {label.appearance_id}"
        )
    scores = np.zeros((video.n_frames, len(bank.appearance_ids)))
    for j, aid in enumerate(bank.appearance_ids):
        for t in range(video.n_frames):
            scores[t, j] = _ncc_max(video.data[t].astype(np.float64), bank.templates[aid].astype(np.float64))
    logits = _MARGIN_SHARPNESS * scores
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    col = bank.appearance_ids.index(int(label.appearance_id))
    return float(probs[:, col].mean())
