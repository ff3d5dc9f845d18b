import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionweave.errors import ConfigurationError, NumericError, ParameterError
from motionweave.metrics import (
    motion_fidelity,
    temporal_consistency,
    tracked_motion_fidelity,
)
from motionweave.motions import make_motion_program
from motionweave.render import appearance_from_ids, render_video
from motionweave.trajectories import TrajectorySet
from motionweave.video import Video


def linear_tracks(v, n=8, k=4, start=(5.0, 5.0)):
    """k parallel constant-velocity trajectories."""
    t = np.arange(n, dtype=float)[:, None]
    base = np.asarray(start, dtype=float) + np.asarray(v, dtype=float) * t  # (n, 2)
    pts = np.repeat(base[None], k, axis=0) + np.arange(k)[:, None, None] * 2.0
    return TrajectorySet(points=pts, valid=np.ones((k, n), bool))


class TestMotionFidelitySanity:
    def test_self_match_is_one(self):
        ts = linear_tracks((1.0, 0.5))
        assert motion_fidelity(ts, ts) == pytest.approx(1.0, abs=1e-6)

    def test_time_reversal_is_zero(self):
        ts = linear_tracks((1.0, 0.0))
        assert motion_fidelity(ts, ts.reversed_time()) == pytest.approx(0.0, abs=1e-6)

    def test_orthogonal_linear_is_half(self):
        a = linear_tracks((1.0, 0.0))
        b = linear_tracks((0.0, 1.0))
        # hand oracle: velocity vectors are orthogonal, corr = 0, sim = 0.5
        assert motion_fidelity(a, b) == pytest.approx(0.5, abs=1e-6)

    def test_precondition_needs_velocities(self):
        pts = np.zeros((1, 3, 2))
        valid = np.array([[True, False, True]])  # no consecutive valid pair
        ts = TrajectorySet(points=pts, valid=valid)
        good = linear_tracks((1.0, 0.0), n=3)
        with pytest.raises(ParameterError):
            motion_fidelity(ts, good)


class TestMotionFidelityDegenerate:
    def test_both_static(self):
        a = linear_tracks((0.0, 0.0))
        b = linear_tracks((0.0, 0.0))
        score = motion_fidelity(a, b)
        assert score == 1.0 and score.degenerate

    def test_one_side_static(self):
        a = linear_tracks((0.0, 0.0))
        b = linear_tracks((1.0, 0.0))
        score = motion_fidelity(a, b)
        assert score == 0.5 and score.degenerate

    def test_moving_pairs_not_flagged(self):
        score = motion_fidelity(linear_tracks((1.0, 0.0)), linear_tracks((1.0, 0.0)))
        assert not score.degenerate


class TestMotionFidelityInvariances:
    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=10_000))
    def test_symmetry(self, seed):
        r = np.random.default_rng(seed)
        a = TrajectorySet(points=r.normal(0, 3, (3, 6, 2)).cumsum(axis=1) + 10, valid=np.ones((3, 6), bool))
        b = TrajectorySet(points=r.normal(0, 3, (4, 6, 2)).cumsum(axis=1) + 10, valid=np.ones((4, 6), bool))
        assert motion_fidelity(a, b) == pytest.approx(motion_fidelity(b, a), abs=1e-9)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=10_000))
    def test_translation_invariance(self, seed):
        r = np.random.default_rng(seed)
        a = TrajectorySet(points=r.normal(0, 2, (3, 6, 2)).cumsum(axis=1), valid=np.ones((3, 6), bool))
        b = TrajectorySet(points=r.normal(0, 2, (3, 6, 2)).cumsum(axis=1), valid=np.ones((3, 6), bool))
        assert motion_fidelity(a.offset(17.0, -4.0), b) == pytest.approx(
            motion_fidelity(a, b), abs=1e-9
        )

    @settings(max_examples=20, deadline=None)
    @given(
        seed=st.integers(min_value=0, max_value=10_000),
        scale=st.floats(min_value=0.1, max_value=10.0),
    )
    def test_positive_scaling_invariance(self, seed, scale):
        r = np.random.default_rng(seed)
        a_pts = r.normal(0, 2, (3, 6, 2)).cumsum(axis=1)
        b_pts = r.normal(0, 2, (3, 6, 2)).cumsum(axis=1)
        a = TrajectorySet(points=a_pts, valid=np.ones((3, 6), bool))
        b = TrajectorySet(points=b_pts, valid=np.ones((3, 6), bool))
        scaled = TrajectorySet(points=b_pts * scale, valid=np.ones((3, 6), bool))
        assert motion_fidelity(a, scaled) == pytest.approx(motion_fidelity(a, b), abs=1e-9)


class TestTemporalConsistency:
    def test_static_video_is_one(self):
        frame = np.random.default_rng(0).uniform(-1, 1, (3, 32, 32)).astype(np.float32)
        video = Video(data=np.repeat(frame[None], 8, axis=0))
        assert temporal_consistency(video) == pytest.approx(1.0, abs=1e-6)

    def test_independent_noise_scores_near_zero(self):
        scores = []
        for seed in range(20):
            r = np.random.default_rng(seed)
            video = Video(data=np.clip(r.normal(0, 0.5, (8, 3, 32, 32)), -1, 1).astype(np.float32))
            scores.append(temporal_consistency(video))
        assert abs(np.mean(scores)) < 0.2

    def test_negated_frame_strictly_lower(self):
        frame = np.random.default_rng(1).uniform(-0.9, 0.9, (3, 32, 32)).astype(np.float32)
        clean = np.repeat(frame[None], 8, axis=0)
        flipped = clean.copy()
        flipped[3] = -flipped[3]
        assert temporal_consistency(Video(data=flipped)) < temporal_consistency(Video(data=clean))

    def test_frame_order_free(self):
        r = np.random.default_rng(2)
        data = np.clip(r.normal(0, 0.4, (8, 3, 32, 32)), -1, 1).astype(np.float32)
        video = Video(data=data)
        shuffled = Video(data=data[r.permutation(8)])
        assert temporal_consistency(shuffled) == pytest.approx(temporal_consistency(video), abs=1e-9)

    def test_range(self):
        r = np.random.default_rng(3)
        video = Video(data=np.clip(r.normal(0, 0.5, (6, 3, 32, 32)), -1, 1).astype(np.float32))
        assert -1.0 <= temporal_consistency(video) <= 1.0


class TestTrackedMotionFidelity:
    def test_same_motion_different_look_scores_high(self):
        prog = make_motion_program("linear", None, 8, seed=11)
        a, _ = render_video(prog, appearance_from_ids(2, 1))
        b, _ = render_video(prog, appearance_from_ids(50, 2))
        assert tracked_motion_fidelity(a, b) > 0.8

    def test_static_pair_degenerate(self):
        prog = make_motion_program("linear", {"x0": 0.5, "y0": 0.5, "vx": 0.0, "vy": 0.0}, n=8)
        a, _ = render_video(prog, appearance_from_ids(2, 1))
        score = tracked_motion_fidelity(a, a)
        assert score == 1.0 and score.degenerate
