import numpy as np
import pytest

from motionweave.errors import ParameterError
from motionweave.motions import make_motion_program
from motionweave.render import appearance_from_ids, render_video
from motionweave.tracking import TrackerConfig, grid_seeds, track_points
from motionweave.video import Video


def uniform_video(value=0.25, n=4, res=32):
    return Video(data=np.full((n, 3, res, res), value, dtype=np.float32))


class TestConfig:
    def test_defaults(self):
        cfg = TrackerConfig()
        assert cfg.patch_size == 5 and cfg.search_radius == 4

    @pytest.mark.parametrize("kw", [{"patch_size": 4}, {"patch_size": 1}, {"search_radius": 0}, {"grid_spacing": 0}])
    def test_validation(self, kw):
        with pytest.raises(ParameterError):
            TrackerConfig(**kw)

    def test_grid_seed_margins(self):
        cfg = TrackerConfig()
        seeds = grid_seeds((32, 32), cfg)
        assert seeds.shape[0] >= 16
        assert seeds.min() >= cfg.margin and seeds.max() < 32 - cfg.margin


class TestTracking:
    def test_static_video_constant_trajectories(self):
        prog = make_motion_program("linear", {"x0": 0.5, "y0": 0.5, "vx": 0.0, "vy": 0.0}, n=6)
        video, _ = render_video(prog, appearance_from_ids(1, 2))
        cfg = TrackerConfig()
        tracks = track_points(video, cfg, grid_seeds((32, 32), cfg))
        np.testing.assert_array_equal(tracks.points, np.repeat(tracks.points[:, :1], 6, axis=1))
        assert tracks.valid.all()

    def test_uniform_frames_tie_break_to_zero(self):
        video = uniform_video()
        cfg = TrackerConfig()
        seeds = np.array([[10, 10], [20, 15]])
        tracks = track_points(video, cfg, seeds)
        np.testing.assert_array_equal(tracks.points[:, -1], tracks.points[:, 0])

    def test_linear_motion_tracked_within_one_pixel(self):
        prog = make_motion_program(
            "linear", {"x0": 0.3, "y0": 0.5, "vx": 1.0 / 32.0, "vy": 0.0}, n=8
        )
        # track the sprite's corners: their patches straddle the edge, so the
        # match is unambiguous (interior points of a flat sprite are not)
        half = 10 / 2.0 / 32.0
        offsets = np.array([(0.8, 0.8), (-0.8, 0.8), (0.8, -0.8), (-0.8, -0.8)]) * half
        video, gt = render_video(prog, appearance_from_ids(1, 2), sprite_offsets=offsets)
        cfg = TrackerConfig()
        seeds = np.round(gt.points[:4, 0]).astype(int)
        tracks = track_points(video, cfg, seeds)
        err = np.abs(tracks.points[:, 1:] - gt.points[:4, 1:])
        assert err.max() <= 1.0 + 1e-9

    def test_determinism(self):
        prog = make_motion_program("circular", None, 8, seed=3)
        video, _ = render_video(prog, appearance_from_ids(7, 1))
        cfg = TrackerConfig()
        seeds = grid_seeds((32, 32), cfg)
        a = track_points(video, cfg, seeds)
        b = track_points(video, cfg, seeds)
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.valid, b.valid)

    def test_seed_outside_margin_rejected(self):
        video = uniform_video()
        with pytest.raises(ParameterError):
            track_points(video, TrackerConfig(), np.array([[0, 0]]))

    def test_point_leaving_frame_marked_invalid(self):
        from motionweave.render import compatible_pairs

        # strong rightward pan pushes right-edge points onto the margin ring
        aid = next(a for a, b in compatible_pairs() if b == 5)
        prog = make_motion_program(
            "camera_pan", {"px": 0.03, "py": 0.0, "sx0": 0.4, "sy0": 0.5}, n=8
        )
        video, _ = render_video(prog, appearance_from_ids(aid, 5))
        cfg = TrackerConfig()
        seeds = np.array([[27, 16], [28, 8]])
        tracks = track_points(video, cfg, seeds)
        assert not tracks.valid.all()
        # once invalid, stays invalid
        for k in range(tracks.n_tracks):
            v = tracks.valid[k]
            if not v.all():
                first = int(np.argmin(v))
                assert not v[first:].any()
