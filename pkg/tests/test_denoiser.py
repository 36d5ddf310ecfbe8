import math

import numpy as np
import pytest
import torch

from glyphdiff.text import ConditioningPair, HashTextEncoder
from glyphdiff.unet import (BatchConditioning, CrossAttention, ResBlock,
                            SelfAttention, UNet, UNetConfig,
                            dual_attention_order, parameter_count,
                            timestep_embedding)


def make_cond(encoder, n=1, sentence="retro, ink, wed", letter="A", device="cpu"):
    pair = encoder.encode_pair(letter, sentence)
    return BatchConditioning.from_pairs([pair] * n, device=device)


@pytest.fixture(scope="module")
def model(tiny_config):
    torch.manual_seed(0)
    m = UNet(tiny_config)
    m.eval()
    return m


class TestTimestepEmbedding:
    def test_deterministic(self):
        t = torch.tensor([5, 9])
        assert torch.equal(timestep_embedding(t, 16), timestep_embedding(t, 16))

    def test_endpoints_differ(self):
        emb = timestep_embedding(torch.tensor([1, 1000]), 32)
        assert (emb[0] - emb[1]).abs().max() > 0.1

    def test_matches_hand_computed_sinusoid_table(self):
        # independent closed form for dim=8: freqs 10000^(-i/3), i=0..3
        emb = timestep_embedding(torch.tensor([1, 2]), 8).numpy()
        for row, t in enumerate((1, 2)):
            expected = [math.sin(t * 10000 ** (-i / 3)) for i in range(4)]
            expected += [math.cos(t * 10000 ** (-i / 3)) for i in range(4)]
            np.testing.assert_allclose(emb[row], expected, rtol=1e-6)

    def test_odd_dim_rejected(self):
        with pytest.raises(ValueError):
            timestep_embedding(torch.tensor([1]), 7)


class TestResBlock:
    def test_zero_residual_at_init_same_channels(self):
        torch.manual_seed(0)
        block = ResBlock(8, 8, time_dim=16)
        x = torch.randn(2, 8, 16, 16)
        out = block(x, torch.randn(2, 16))
        assert torch.equal(out, x)

    def test_zero_residual_at_init_channel_change(self):
        torch.manual_seed(0)
        block = ResBlock(8, 12, time_dim=16)
        x = torch.randn(2, 8, 16, 16)
        out = block(x, torch.randn(2, 16))
        assert torch.equal(out, block.shortcut(x))

    @pytest.mark.parametrize("size", [32, 16, 8, 4, 2])
    def test_shape_preserved_across_stage_sizes(self, size):
        block = ResBlock(8, 8, time_dim=16)
        x = torch.randn(1, 8, size, size)
        assert block(x, torch.randn(1, 16)).shape == x.shape

    def test_gradient_flows_to_time_embedding(self):
        # central finite differences vs autograd on a 4-channel toy block
        torch.manual_seed(1)
        block = ResBlock(4, 4, time_dim=8).double()
        for p in block.parameters():  # make the residual branch non-trivial
            p.data.add_(0.05 * torch.randn_like(p))
        x = torch.randn(1, 4, 8, 8, dtype=torch.float64)
        t_emb = torch.randn(1, 8, dtype=torch.float64, requires_grad=True)
        loss = (block(x, t_emb) ** 2).sum()
        (grad,) = torch.autograd.grad(loss, t_emb)
        eps = 1e-6
        for idx in range(8):
            delta = torch.zeros_like(t_emb)
            delta[0, idx] = eps
            hi = (block(x, (t_emb + delta).detach()) ** 2).sum().item()
            lo = (block(x, (t_emb - delta).detach()) ** 2).sum().item()
            fd = (hi - lo) / (2 * eps)
            assert abs(fd - grad[0, idx].item()) <= 1e-4 * max(1.0, abs(fd))


class TestCrossAttention:
    def setup_method(self):
        torch.manual_seed(0)
        self.attn = CrossAttention(channels=8, ctx_dim=16, heads=2)
        # zero-init output projection would hide masking bugs; randomize it
        torch.nn.init.normal_(self.attn.to_out.weight, std=0.1)

    @pytest.mark.parametrize("L", [1, 512])
    def test_variable_context_length(self, L):
        x = torch.randn(2, 8, 4, 4)
        ctx = torch.randn(2, L, 16)
        mask = torch.ones(2, L, dtype=torch.bool)
        assert self.attn(x, ctx, mask).shape == x.shape

    def test_masked_positions_are_bitwise_irrelevant(self):
        x = torch.randn(2, 8, 4, 4)
        ctx = torch.randn(2, 6, 16)
        mask = torch.tensor([[True] * 3 + [False] * 3, [True] * 5 + [False]])
        out = self.attn(x, ctx, mask)
        ctx2 = ctx.clone()
        ctx2[~mask] = torch.randn_like(ctx2[~mask]) * 100
        out2 = self.attn(x, ctx2, mask)
        assert torch.equal(out, out2)

    def test_duplicated_context_preserves_output(self):
        x = torch.randn(1, 8, 4, 4)
        ctx = torch.randn(1, 5, 16)
        mask = torch.ones(1, 5, dtype=torch.bool)
        out = self.attn(x, ctx, mask)
        out_dup = self.attn(x, ctx.repeat(1, 2, 1), mask.repeat(1, 2))
        assert (out - out_dup).abs().max() < 1e-5

    def test_fully_masked_context_raises(self):
        x = torch.randn(2, 8, 4, 4)
        ctx = torch.randn(2, 3, 16)
        mask = torch.tensor([[True, True, True], [False, False, False]])
        with pytest.raises(ValueError, match="masked"):
            self.attn(x, ctx, mask)


class TestSelfAttention:
    def setup_method(self):
        torch.manual_seed(0)
        self.attn = SelfAttention(channels=8, heads=2)
        torch.nn.init.normal_(self.attn.to_out.weight, std=0.1)
        self.attn.eval()  # group norm over a single 1x1 token needs eval mode

    def test_permutation_equivariance(self):
        x = torch.randn(1, 8, 2, 2)
        perm = torch.tensor([2, 0, 3, 1])
        inv = torch.argsort(perm)
        xp = x.reshape(1, 8, 4)[:, :, perm].reshape(1, 8, 2, 2)
        out_p = self.attn(xp).reshape(1, 8, 4)[:, :, inv]
        out = self.attn(x).reshape(1, 8, 4)
        assert (out - out_p).abs().max() < 1e-5

    def test_single_token_is_value_path(self):
        x = torch.randn(2, 8, 1, 1)
        flat = self.attn.norm(x).reshape(2, 8, 1).transpose(1, 2)
        _, _, v = self.attn.to_qkv(flat).chunk(3, dim=-1)
        expected = x + self.attn.to_out(v).transpose(1, 2).reshape(2, 8, 1, 1)
        assert (self.attn(x) - expected).abs().max() < 1e-6

    def test_shape_preserved(self):
        x = torch.randn(3, 8, 2, 2)
        assert self.attn(x).shape == x.shape


class TestUNetForward:
    def test_output_shape_matches_input(self, model, encoder):
        x = torch.randn(2, 1, 32, 32)
        out = model(x, torch.tensor([1, 500]), make_cond(encoder, n=2))
        assert out.shape == (2, 1, 32, 32)

    @pytest.mark.parametrize("n_keywords", [1, 37, 512])
    def test_variable_impression_lengths(self, model, encoder, n_keywords):
        sentence = ", ".join(f"k{i}" for i in range(n_keywords))
        cond = make_cond(encoder, n=1, sentence=sentence)
        out = model(torch.randn(1, 1, 32, 32), torch.tensor([10]), cond)
        assert out.shape == (1, 1, 32, 32)

    def test_batch_independence(self, model, encoder):
        torch.manual_seed(3)
        x = torch.randn(3, 1, 32, 32)
        t = torch.tensor([1, 400, 999])
        pairs = [HashTextEncoder(dim=32).encode_pair(l, s)
                 for l, s in (("A", "retro"), ("B", "heavy, wide"), ("C", "ink"))]
        batch_out = model(x, t, BatchConditioning.from_pairs(pairs))
        for i in range(3):
            single = model(x[i:i + 1], t[i:i + 1], BatchConditioning.from_pairs([pairs[i]]))
            assert (batch_out[i] - single[0]).abs().max() < 1e-5

    def test_inference_determinism_bitwise(self, model, encoder):
        x = torch.randn(1, 1, 32, 32)
        cond = make_cond(encoder)
        with torch.no_grad():
            a = model(x, torch.tensor([7]), cond)
            b = model(x, torch.tensor([7]), cond)
        assert torch.equal(a, b)

    def test_zero_output_at_initialization(self, model, encoder):
        # zero-init on the final conv: the fresh model predicts exactly zero
        out = model(torch.randn(1, 1, 32, 32), torch.tensor([5]), make_cond(encoder))
        assert torch.equal(out, torch.zeros_like(out))

    def test_input_shape_error_names_stage(self, model, encoder):
        with pytest.raises(ValueError, match="input"):
            model(torch.randn(1, 1, 16, 16), torch.tensor([1]), make_cond(encoder))

    def test_text_dim_mismatch_rejected(self, model):
        wrong = HashTextEncoder(dim=48)
        with pytest.raises(ValueError, match="text_dim"):
            model(torch.randn(1, 1, 32, 32), torch.tensor([1]), make_cond(wrong))


class TestStructure:
    def test_dual_attention_order(self, model):
        names = dual_attention_order(model)
        assert names == [f"encoder.{i}" for i in range(4)] + ["bottleneck"] + [f"decoder.{i}" for i in range(4)]

    def test_parameter_count_monotonic_in_width(self):
        cfgs = [UNetConfig(base_channels=b, channel_multipliers=(1, 2, 2, 2),
                           attention_heads=2, text_dim=32) for b in (8, 16, 24)]
        counts = [parameter_count(c) for c in cfgs]
        assert counts[0] < counts[1] < counts[2]

    def test_config_round_trip(self, tiny_config):
        assert UNetConfig.from_dict(tiny_config.to_dict()) == tiny_config

    def test_requires_four_blocks(self):
        with pytest.raises(ValueError):
            UNetConfig(channel_multipliers=(1, 2, 4))
