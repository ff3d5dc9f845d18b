import numpy as np
import pytest
import torch

from motionweave.errors import NumericError, ParameterError
from motionweave.params import apply_trainable, trainable_param_set
from motionweave.training import base_training_step, make_optimizer, transfer_training_step
from motionweave.transfer import InjectionConfig
from motionweave.unet import UNetSpec, VideoUNet, make_scalers

from conftest import make_video_array, warm_model


class EchoNoise(torch.nn.Module):
    """Stub model that returns a preset noise tensor (loss becomes zero)."""

    def __init__(self, eps):
        super().__init__()
        self.eps = eps
        self.dummy = torch.nn.Parameter(torch.zeros(1))

    def forward(self, x, t, cond, injection=None, collect_taps=False):
        return self.eps + 0.0 * self.dummy, {}


class NanModel(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.dummy = torch.nn.Parameter(torch.zeros(1))

    def forward(self, x, t, cond, injection=None, collect_taps=False):
        return torch.full_like(x, float("nan")) + self.dummy, {}


def batch(seed=0, B=2):
    videos = torch.stack(
        [torch.from_numpy(make_video_array(seed=seed + i)) for i in range(B)]
    )
    cond = torch.tensor([[1, 2]] * B, dtype=torch.long)
    return videos, cond


class TestBaseStep:
    def test_exact_noise_gives_zero_loss(self, schedule):
        videos, cond = batch()
        eps = torch.randn(videos.shape, generator=torch.Generator().manual_seed(5))
        model = EchoNoise(eps)
        opt = make_optimizer(model.parameters(), 1e-3)
        rng = torch.Generator().manual_seed(0)
        loss = base_training_step(
            model, videos, cond, schedule, opt, rng, noise_override=eps
        )
        assert loss == 0.0

    def test_loss_matches_recomputed_mse(self, tiny_model, schedule):
        model = VideoUNet(tiny_model.spec)
        videos, cond = batch(seed=3)
        opt = make_optimizer(model.parameters(), 1e-4)
        rng = torch.Generator().manual_seed(1)
        loss, details = base_training_step(
            model, videos, cond, schedule, opt, rng, return_details=True
        )
        recomputed = float(np.mean((details.eps - details.eps_hat).numpy() ** 2))
        assert loss == pytest.approx(recomputed, rel=1e-6)

    def test_nonfinite_loss_raises(self, schedule):
        videos, cond = batch()
        model = NanModel()
        opt = make_optimizer(model.parameters(), 1e-3)
        with pytest.raises(NumericError):
            base_training_step(model, videos, cond, schedule, opt, torch.Generator().manual_seed(0))

    def test_empty_batch_rejected(self, schedule):
        model = NanModel()
        opt = make_optimizer(model.parameters(), 1e-3)
        with pytest.raises(ParameterError):
            base_training_step(
                model, torch.zeros(0, 8, 3, 32, 32), torch.zeros(0, 2).long(),
                schedule, opt, torch.Generator(),
            )

    def test_deterministic_updates(self, tiny_spec, schedule):
        def run():
            model = VideoUNet(tiny_spec)
            opt = make_optimizer(model.parameters(), 1e-4)
            rng = torch.Generator().manual_seed(9)
            videos, cond = batch(seed=7)
            for _ in range(3):
                base_training_step(model, videos, cond, schedule, opt, rng)
            return torch.cat([p.detach().reshape(-1) for p in model.parameters()])

        assert torch.equal(run(), run())


class TestTransferStep:
    def test_self_pair_loss_decreases(self, schedule):
        spec = UNetSpec(widths=(8, 16, 24), res_blocks=1, cond_dim=16, seed=2)
        model = warm_model(VideoUNet(spec), seed=8)
        extractor = VideoUNet(spec)
        extractor.load_state_dict(model.state_dict())
        extractor.eval()
        for p in extractor.parameters():
            p.requires_grad_(False)
        scalers = make_scalers(spec, seed=3)
        pset = trainable_param_set(model, scalers)
        trainable = apply_trainable(model, scalers, pset)
        opt = make_optimizer(trainable, 5e-3)
        rng = torch.Generator().manual_seed(4)
        video = torch.from_numpy(make_video_array(seed=11)).unsqueeze(0)
        cond = torch.tensor([[1, 1]], dtype=torch.long)
        cfg = InjectionConfig()
        # freeze every noise source so the 50 steps descend a fixed objective
        t_fix = torch.tensor([400])
        gen = torch.Generator().manual_seed(21)
        eps_fix = torch.randn(video.shape, generator=gen)
        eps_ref_fix = torch.randn(video.shape, generator=gen)
        losses = [
            transfer_training_step(
                model, scalers, extractor, video, video, cond, cfg, schedule, opt, rng,
                t_override=t_fix, noise_override=eps_fix, ref_noise_override=eps_ref_fix,
            )
            for _ in range(50)
        ]
        assert all(np.isfinite(losses))
        assert np.mean(losses[-10:]) < np.mean(losses[:10])
        assert losses[-1] < losses[0]

    def test_shape_mismatch(self, tiny_model, tiny_scalers, schedule):
        opt = make_optimizer([torch.nn.Parameter(torch.zeros(1))], 1e-3)
        with pytest.raises(ParameterError):
            transfer_training_step(
                tiny_model, tiny_scalers, tiny_model,
                torch.zeros(1, 8, 3, 32, 32), torch.zeros(1, 4, 3, 32, 32),
                torch.zeros(1, 2).long(), InjectionConfig(), schedule, opt,
                torch.Generator(),
            )
