"""Temporal attention against hand-rolled numpy oracles."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from motionweave.errors import CapacityError
from motionweave.transfer import FeatureMap, temporal_attention
from motionweave.unet import TemporalAttention, sinusoidal_embedding


def make_attn(channels, head_dim=None, P=16, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return TemporalAttention(channels, head_dim or channels, P, gen)


def set_weights(attn, wq, wk, wv, wo, bo=None):
    with torch.no_grad():
        attn.attn.w_q.weight.copy_(torch.as_tensor(wq, dtype=torch.float32))
        attn.attn.w_k.weight.copy_(torch.as_tensor(wk, dtype=torch.float32))
        attn.attn.w_v.weight.copy_(torch.as_tensor(wv, dtype=torch.float32))
        attn.attn.w_o.weight.copy_(torch.as_tensor(wo, dtype=torch.float32))
        if bo is not None:
            attn.attn.w_o.bias.copy_(torch.as_tensor(bo, dtype=torch.float32))
        else:
            attn.attn.w_o.bias.zero_()


def numpy_attention(tokens, positions, wq, wk, wv, wo, bo, pe_table, scale=None):
    """Single-head reference implementation (residual included)."""
    t = tokens + pe_table[positions]
    q = t @ wq.T
    k = t @ wk.T
    v = t @ wv.T
    d = q.shape[-1] if scale is None else scale
    logits = q @ k.T / np.sqrt(d)
    w = np.exp(logits - logits.max(axis=-1, keepdims=True))
    w = w / w.sum(axis=-1, keepdims=True)
    out = w @ v
    return tokens + out @ wo.T + bo


class TestSingleToken:
    def test_output_is_projection_of_v_plus_residual(self):
        attn = make_attn(4)
        tokens = torch.randn(3, 1, 4, generator=torch.Generator().manual_seed(1))
        out = attn.apply_tokens(tokens)
        # one token: softmax weight is exactly 1 regardless of logits
        t = tokens + attn.pos_table[:1]
        v = attn.attn.w_v(t)
        expect = tokens + attn.attn.w_o(v)
        torch.testing.assert_close(out, expect, atol=1e-6, rtol=1e-6)


class TestTwoTokenOracle:
    def test_hand_set_weights_match_numpy(self):
        c = 2
        attn = make_attn(c, head_dim=2, P=4)
        wq = np.array([[0.6, -0.2], [0.1, 0.4]])
        wk = np.array([[0.3, 0.5], [-0.7, 0.2]])
        wv = np.array([[1.0, 0.0], [0.3, -0.5]])
        wo = np.array([[0.9, 0.1], [-0.2, 0.8]])
        bo = np.array([0.05, -0.03])
        set_weights(attn, wq, wk, wv, wo, bo)

        tokens = np.array([[[0.2, -0.4], [0.7, 0.1]]])  # (1 location, n=2, c=2)
        pe = attn.pos_table.numpy()
        expect = numpy_attention(tokens[0], np.array([0, 1]), wq, wk, wv, wo, bo, pe)

        fm = FeatureMap("up1", torch.as_tensor(tokens, dtype=torch.float32).reshape(1, 1, 2, 2))
        out = temporal_attention(fm, attn)
        np.testing.assert_allclose(out.data.detach().reshape(2, 2).numpy(), expect, atol=1e-6)

    def test_weights_sum_to_one(self):
        attn = make_attn(8)
        tokens = torch.randn(5, 4, 8, generator=torch.Generator().manual_seed(2))
        _, w = attn.apply_tokens(tokens, return_weights=True)
        sums = w.sum(dim=-1)
        torch.testing.assert_close(sums, torch.ones_like(sums), atol=1e-6, rtol=0)


class TestUniformFrames:
    def test_uniform_input_zero_positions_gives_uniform_output(self):
        attn = make_attn(4, P=8)
        with torch.no_grad():
            attn.pos_table.zero_()
        frame = torch.randn(6, 1, 4, generator=torch.Generator().manual_seed(3))
        tokens = frame.expand(6, 5, 4).contiguous()
        out = attn.apply_tokens(tokens)
        # every frame sees the same token set, so outputs repeat per frame
        torch.testing.assert_close(out, out[:, :1].expand_as(out), atol=1e-6, rtol=1e-6)


class TestPermutationEquivariance:
    def test_permuting_frames_and_positions_together(self):
        attn = make_attn(8, P=16)
        gen = torch.Generator().manual_seed(4)
        tokens = torch.randn(7, 6, 8, generator=gen)
        perm = torch.tensor([3, 0, 5, 1, 4, 2])
        base = attn.apply_tokens(tokens, torch.arange(6))
        permuted = attn.apply_tokens(tokens[:, perm], perm)
        torch.testing.assert_close(permuted, base[:, perm], atol=1e-6, rtol=1e-6)


class TestCapacity:
    def test_too_many_tokens(self):
        attn = make_attn(4, P=4)
        tokens = torch.zeros(2, 5, 4)
        with pytest.raises(CapacityError):
            attn.apply_tokens(tokens)

    def test_position_index_beyond_table(self):
        attn = make_attn(4, P=4)
        tokens = torch.zeros(2, 2, 4)
        with pytest.raises(CapacityError):
            attn.apply_tokens(tokens, torch.tensor([0, 7]))


class TestSinusoidalTable:
    def test_row_zero_is_sin_zero_cos_one(self):
        table = sinusoidal_embedding(torch.arange(4), 6)
        np.testing.assert_allclose(table[0].numpy(), [0, 0, 0, 1, 1, 1], atol=1e-7)

    def test_rows_distinct(self):
        table = sinusoidal_embedding(torch.arange(16), 8)
        g = table @ table.T
        off = g - torch.diag(torch.diagonal(g))
        assert (torch.diagonal(g)[:, None] > off + 1e-4).all()


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=8),
    c_idx=st.integers(min_value=0, max_value=2),
    seed=st.integers(min_value=0, max_value=10_000),
)
def test_attention_rows_sum_to_one_property(n, c_idx, seed):
    c = (4, 8, 16)[c_idx]
    attn = make_attn(c, head_dim=4, P=16, seed=seed)
    tokens = torch.randn(3, n, c, generator=torch.Generator().manual_seed(seed)) * 3.0
    _, w = attn.apply_tokens(tokens, return_weights=True)
    assert torch.allclose(w.sum(dim=-1), torch.ones(w.shape[:-1]), atol=1e-6)
