"""Channel-attention blocks, prompt blocks and the two U-Nets."""

import pytest
import torch

from promptmr import (
    CAUnet,
    ChannelAttentionBlock,
    ConfigError,
    NetConfig,
    PromptBlock,
    PromptLevelConfig,
    PromptUnet,
    build_net,
    channels_to_complex,
    complex_to_channels,
    load_checkpoint,
    save_checkpoint,
    zero_module,
)
from fd import fd_param_grad_check

torch.manual_seed(0)


def tiny_cfg(use_prompts=False, in_ch=2, out_ch=2, width=4):
    prompt = None
    if use_prompts:
        prompt = (
            PromptLevelConfig(3, 6, 6, width),
            PromptLevelConfig(3, 4, 4, 2 * width),
            PromptLevelConfig(3, 2, 2, 4 * width),
        )
    return NetConfig(
        in_channels=in_ch,
        out_channels=out_ch,
        base_width=width,
        cab_per_block=1,
        reduction=2,
        use_prompts=use_prompts,
        prompt=prompt,
    )


def randomize(module, seed=0, scale=0.1):
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(scale * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return module


class TestCAB:
    def test_zero_branch_is_identity(self):
        cab = ChannelAttentionBlock(8, reduction=4)
        zero_module(cab.body[3])  # second conv
        x = torch.randn(2, 8, 12, 12)
        assert torch.allclose(cab(x), x, atol=1e-6)

    def test_shape_preserved(self):
        cab = ChannelAttentionBlock(4, reduction=2)
        for h, w in [(8, 8), (9, 13), (16, 10)]:
            x = torch.randn(1, 4, h, w)
            assert cab(x).shape == x.shape

    def test_gates_in_open_unit_interval(self):
        cab = ChannelAttentionBlock(4, reduction=2)
        g = cab.attention_gates(torch.randn(3, 4, 8, 8) * 100)
        assert torch.all(g > 0) and torch.all(g < 1)

    def test_indivisible_reduction_rejected(self):
        with pytest.raises(ConfigError):
            ChannelAttentionBlock(6, reduction=4)

    def test_gradients(self):
        cab = randomize(ChannelAttentionBlock(4, reduction=2), seed=1).double()
        x = torch.randn(1, 4, 8, 8, dtype=torch.float64)
        fd_param_grad_check(lambda: (cab(x) ** 2).sum(), cab.parameters(), rtol=1e-4)


class TestPromptBlock:
    def test_softmax_normalization(self):
        pb = PromptBlock(8, PromptLevelConfig(5, 6, 6, 4))
        for seed in range(100):
            x = torch.randn(2, 8, 10, 10, generator=torch.Generator().manual_seed(seed))
            w = pb.prompt_weights(x)
            assert torch.all(w >= 0)
            assert torch.allclose(w.sum(dim=-1), torch.ones(2), atol=1e-6)

    def test_singleton_component_weight_is_one(self):
        pb = PromptBlock(4, PromptLevelConfig(1, 4, 4, 4))
        for seed in range(5):
            x = torch.randn(1, 4, 8, 8, generator=torch.Generator().manual_seed(seed))
            assert torch.allclose(pb.prompt_weights(x), torch.ones(1, 1))
            # the combined prompt itself no longer depends on the input
            phat, _ = pb(x)
            phat2, _ = pb(torch.randn(1, 4, 8, 8))
            assert torch.allclose(phat, phat2)

    def test_weights_depend_only_on_gap(self):
        pb = PromptBlock(4, PromptLevelConfig(4, 4, 4, 4))
        x = torch.randn(1, 4, 8, 8)
        # a permutation of pixels preserves the spatial mean
        perm = x.flatten(2)[:, :, torch.randperm(64)].reshape(1, 4, 8, 8)
        assert torch.allclose(pb.prompt_weights(x), pb.prompt_weights(perm), atol=1e-6)

    def test_logit_shift_invariance(self):
        pb = PromptBlock(4, PromptLevelConfig(4, 4, 4, 4))
        x = torch.randn(2, 4, 8, 8)
        w0 = pb.prompt_weights(x)
        with torch.no_grad():
            pb.weight_head.bias += 3.7
        assert torch.allclose(pb.prompt_weights(x), w0, atol=1e-6)

    def test_output_spatially_matched(self):
        pb = PromptBlock(6, PromptLevelConfig(2, 5, 5, 3))
        phat, w = pb(torch.randn(2, 6, 14, 9))
        assert phat.shape == (2, 3, 14, 9)
        assert w.shape == (2, 2)

    def test_gradients(self):
        pb = randomize(PromptBlock(4, PromptLevelConfig(3, 4, 4, 4)), seed=2).double()
        x = torch.randn(1, 4, 8, 8, dtype=torch.float64)
        fd_param_grad_check(lambda: (pb(x)[0] ** 2).sum(), pb.parameters(), rtol=1e-4)


class TestUnets:
    @pytest.mark.parametrize("hw", [(63, 63), (64, 64), (65, 65), (8, 12)])
    @pytest.mark.parametrize("prompts", [False, True])
    def test_shape_contract(self, hw, prompts):
        net = build_net(tiny_cfg(use_prompts=prompts))
        x = torch.randn(1, 2, *hw)
        assert net(x).shape == x.shape

    def test_deterministic(self):
        net = build_net(tiny_cfg(use_prompts=True))
        x = torch.randn(1, 2, 16, 16)
        assert torch.equal(net(x), net(x))

    def test_promptunet_requires_prompts(self):
        with pytest.raises(ConfigError):
            PromptUnet(tiny_cfg(use_prompts=False))

    def test_levels_fixed(self):
        with pytest.raises(ConfigError):
            NetConfig(in_channels=2, out_channels=2, base_width=4, reduction=2, levels=4)

    def test_zeroed_prompts_equal_zero_concat(self):
        net = PromptUnet(tiny_cfg(use_prompts=True))
        x = torch.randn(1, 2, 16, 16)
        with torch.no_grad():
            for pb in (net.prompt1, net.prompt2, net.prompt3):
                pb.components.zero_()
                pb.conv.weight.zero_()
                pb.conv.bias.zero_()
        out = net(x)

        # structurally: same net where each prompt output is replaced by zeros
        class ZeroPrompt(torch.nn.Module):
            def __init__(self, pb):
                super().__init__()
                self.pb = pb

            def forward(self, f):
                phat, w = self.pb(f)
                return torch.zeros_like(phat), w

        net.prompt1, net.prompt2, net.prompt3 = (
            ZeroPrompt(net.prompt1),
            ZeroPrompt(net.prompt2),
            ZeroPrompt(net.prompt3),
        )
        assert torch.allclose(net(x), out, atol=1e-7)

    def test_caunet_gradients(self):
        net = randomize(CAUnet(tiny_cfg()), seed=3).double()
        x = torch.randn(1, 2, 8, 8, dtype=torch.float64)
        fd_param_grad_check(lambda: (net(x) ** 2).sum(), net.parameters(), rtol=1e-4)

    def test_promptunet_gradients_include_prompt_params(self):
        net = randomize(PromptUnet(tiny_cfg(use_prompts=True)), seed=4).double()
        x = torch.randn(1, 2, 8, 8, dtype=torch.float64)
        prompt_params = (
            list(net.prompt1.parameters())
            + list(net.prompt2.parameters())
            + list(net.prompt3.parameters())
        )
        fd_param_grad_check(lambda: (net(x) ** 2).sum(), prompt_params, rtol=1e-4)
        fd_param_grad_check(lambda: (net(x) ** 2).sum(), net.parameters(), rtol=1e-4, seed=5)

    def test_prompt_weight_collection(self):
        net = PromptUnet(tiny_cfg(use_prompts=True))
        out, weights = net(torch.randn(2, 2, 16, 16), return_prompt_weights=True)
        assert len(weights) == 3
        for w in weights:
            assert w.shape == (2, 3)
            assert torch.allclose(w.sum(dim=-1), torch.ones(2), atol=1e-6)


class TestComplexPacking:
    def test_roundtrip(self):
        x = torch.complex(torch.randn(2, 5, 8, 8), torch.randn(2, 5, 8, 8))
        assert torch.equal(channels_to_complex(complex_to_channels(x)), x)

    def test_interleaving_order(self):
        x = torch.complex(torch.randn(3, 4, 4), torch.randn(3, 4, 4))
        ch = complex_to_channels(x)
        assert torch.equal(ch[0], x[0].real)
        assert torch.equal(ch[1], x[0].imag)
        assert torch.equal(ch[4], x[2].real)

    def test_odd_channels_rejected(self):
        with pytest.raises(ValueError):
            channels_to_complex(torch.randn(3, 8, 8))


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        net = build_net(tiny_cfg(use_prompts=True))
        cfg = {"kind": "tiny", "width": 4}
        save_checkpoint(tmp_path / "ck", net.state_dict(), cfg, extra={"epoch": 3})
        config, state, extra = load_checkpoint(tmp_path / "ck")
        assert config == cfg and extra == {"epoch": 3}
        net2 = build_net(tiny_cfg(use_prompts=True))
        net2.load_state_dict(state)
        x = torch.randn(1, 2, 16, 16)
        assert torch.equal(net(x), net2(x))

    def test_bad_magic(self, tmp_path):
        import json

        from promptmr import DataError

        net = build_net(tiny_cfg())
        save_checkpoint(tmp_path / "ck", net.state_dict(), {})
        m = json.loads((tmp_path / "ck" / "manifest.json").read_text())
        m["magic"] = "nope"
        (tmp_path / "ck" / "manifest.json").write_text(json.dumps(m))
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "ck")
