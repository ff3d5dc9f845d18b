import numpy as np
import pytest
import torch

from motionweave.schedule import make_schedule
from motionweave.unet import UNetSpec, VideoUNet, make_scalers

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def schedule():
    return make_schedule(1000)


@pytest.fixture(scope="session")
def tiny_spec():
    return UNetSpec(widths=(8, 16, 24), res_blocks=1, cond_dim=16, head_dim=8, seed=11)


@pytest.fixture(scope="session")
def tiny_model(tiny_spec):
    model = VideoUNet(tiny_spec)
    model.eval()
    return model


@pytest.fixture(scope="session")
def tiny_scalers(tiny_spec):
    return make_scalers(tiny_spec, seed=5)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def make_video_array(seed=0, n=8, res=32, smooth=True):
    """Random but in-range video payload for shape/determinism tests."""
    r = np.random.default_rng(seed)
    x = r.normal(0.0, 0.4, size=(n, 3, res, res))
    if smooth:
        x = (x + np.roll(x, 1, axis=2) + np.roll(x, 1, axis=3)) / 3.0
    return np.clip(x, -1.0, 1.0).astype(np.float32)


def warm_model(model, seed=0, std=0.05):
    """Give the zero-initialized output layers small random weights.

    Fresh models predict exactly zero (the usual diffusion zero-init), so
    nothing upstream receives gradients and conditioning cannot show in
    the output. Tests that need a trained-like model warm those layers
    instead of running a training loop.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if p.abs().max() == 0.0 and p.ndim > 1:
                p.normal_(0.0, std, generator=gen)
    return model


@pytest.fixture()
def warmed_model(tiny_spec):
    from motionweave.unet import VideoUNet

    return warm_model(VideoUNet(tiny_spec), seed=13)
