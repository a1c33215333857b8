"""Image-domain learnable blocks: channel-attention U-Net and its
prompt-conditioned extension.

Both nets share one 3-level encoder-decoder skeleton with channel widths
doubling per level; the prompt variant injects an input-adaptive prompt at
each decoder level (skip-concat, then prompt-concat, then the CABs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError


@dataclass(frozen=True)
class PromptLevelConfig:
    """One per-level prompt bank: n_components of shape [height, width, channels]."""

    n_components: int = 5
    height: int = 24
    width: int = 24
    channels: int = 32

    def __post_init__(self):
        if self.n_components < 1:
            raise ConfigError("prompt bank needs at least one component")


@dataclass(frozen=True)
class NetConfig:
    in_channels: int
    out_channels: int
    base_width: int = 32
    levels: int = 3
    cab_per_block: int = 2
    reduction: int = 4
    use_prompts: bool = False
    # finest -> coarsest; None picks defaults sized to the decoder widths
    prompt: tuple[PromptLevelConfig, ...] | None = None

    def __post_init__(self):
        if self.levels != 3:
            raise ConfigError("only the 3-level encoder-decoder layout is supported")
        if self.base_width % self.reduction != 0:
            raise ConfigError(
                f"base_width ({self.base_width}) must be divisible by reduction ({self.reduction})"
            )
        if self.use_prompts and self.prompt is None:
            w = self.base_width
            object.__setattr__(
                self,
                "prompt",
                (
                    PromptLevelConfig(5, 24, 24, w),
                    PromptLevelConfig(5, 12, 12, 2 * w),
                    PromptLevelConfig(5, 6, 6, 4 * w),
                ),
            )
        if self.use_prompts and len(self.prompt) != 3:
            raise ConfigError("need one prompt bank per decoder level (3)")


def zero_module(module: nn.Module) -> nn.Module:
    """Zero all parameters of a module in place (residual/identity init)."""
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


class ChannelAttentionBlock(nn.Module):
    """Residual conv block with a squeeze-excitation style channel gate."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        if channels % reduction != 0:
            raise ConfigError(f"channels ({channels}) not divisible by reduction ({reduction})")
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.InstanceNorm2d(channels, affine=True),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.InstanceNorm2d(channels, affine=True),
        )
        self.gate = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Conv2d(channels, channels // reduction, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(channels // reduction, channels, 1),
            nn.Sigmoid(),
        )

    def attention_gates(self, branch: torch.Tensor) -> torch.Tensor:
        return self.gate(branch)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        branch = self.body(x)
        return x + self.gate(branch) * branch


def _cab_stack(channels: int, n_blocks: int, reduction: int) -> nn.Sequential:
    return nn.Sequential(*[ChannelAttentionBlock(channels, reduction) for _ in range(n_blocks)])


class PromptBlock(nn.Module):
    """Input-adaptive prompt: softmax-weighted mix of learned components,
    resized to the feature map and passed through a 3x3 conv."""

    def __init__(self, feature_channels: int, cfg: PromptLevelConfig):
        super().__init__()
        self.cfg = cfg
        self.components = nn.Parameter(
            0.02 * torch.randn(cfg.n_components, cfg.channels, cfg.height, cfg.width)
        )
        # High-gain init: the pooled features feeding the head vary little
        # after instance normalization, so a default-scale init leaves the
        # softmax nearly uniform and the components never specialize per
        # input type.
        self.weight_head = nn.Linear(feature_channels, cfg.n_components)
        nn.init.normal_(self.weight_head.weight, std=40.0 / math.sqrt(feature_channels))
        self.conv = nn.Conv2d(cfg.channels, cfg.channels, 3, padding=1)

    def prompt_weights(self, features: torch.Tensor) -> torch.Tensor:
        gap = features.mean(dim=(-2, -1))
        return torch.softmax(self.weight_head(gap), dim=-1)

    def forward(self, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        weights = self.prompt_weights(features)
        mixed = torch.einsum("bn,nchw->bchw", weights, self.components)
        mixed = F.interpolate(
            mixed, size=features.shape[-2:], mode="bilinear", align_corners=False
        )
        return self.conv(mixed), weights


class CAUnet(nn.Module):
    """3-level channel-attention U-Net; optional per-level prompt injection.

    Accepts any H, W >= 8 (reflect-padded internally to a multiple of 4) and
    returns the input spatial size.
    """

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        w, n, r = cfg.base_width, cfg.cab_per_block, cfg.reduction

        self.head = nn.Conv2d(cfg.in_channels, w, 3, padding=1)
        self.enc1 = _cab_stack(w, n, r)
        self.down1 = nn.Conv2d(w, 2 * w, 3, stride=2, padding=1)
        self.enc2 = _cab_stack(2 * w, n, r)
        self.down2 = nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1)
        self.bottleneck = _cab_stack(4 * w, n, r)

        self.up2 = nn.ConvTranspose2d(4 * w, 2 * w, 2, stride=2)
        self.fuse2 = nn.Conv2d(4 * w, 2 * w, 1)
        self.dec2 = _cab_stack(2 * w, n, r)
        self.up1 = nn.ConvTranspose2d(2 * w, w, 2, stride=2)
        self.fuse1 = nn.Conv2d(2 * w, w, 1)
        self.dec1 = _cab_stack(w, n, r)
        self.tail = nn.Conv2d(w, cfg.out_channels, 3, padding=1)

        self.use_prompts = cfg.use_prompts
        if cfg.use_prompts:
            p1, p2, p3 = cfg.prompt
            self.prompt1 = PromptBlock(w, p1)
            self.prompt2 = PromptBlock(2 * w, p2)
            self.prompt3 = PromptBlock(4 * w, p3)
            self.pfuse1 = nn.Conv2d(w + p1.channels, w, 1)
            self.pfuse2 = nn.Conv2d(2 * w + p2.channels, 2 * w, 1)
            self.pfuse3 = nn.Conv2d(4 * w + p3.channels, 4 * w, 1)

    def forward(
        self, x: torch.Tensor, return_prompt_weights: bool = False
    ) -> torch.Tensor | tuple[torch.Tensor, list[torch.Tensor]]:
        if x.ndim != 4:
            raise ValueError(f"expected [batch, channel, H, W], got {tuple(x.shape)}")
        H, W = x.shape[-2:]
        pad_h, pad_w = (-H) % 4, (-W) % 4
        if pad_h or pad_w:
            x = F.pad(x, (0, pad_w, 0, pad_h), mode="reflect")

        e1 = self.enc1(self.head(x))
        e2 = self.enc2(self.down1(e1))
        b = self.bottleneck(self.down2(e2))

        weights: list[torch.Tensor] = []
        if self.use_prompts:
            p3, w3 = self.prompt3(b)
            b = self.pfuse3(torch.cat([b, p3], dim=1))

        d2 = self.fuse2(torch.cat([self.up2(b), e2], dim=1))
        if self.use_prompts:
            p2, w2 = self.prompt2(d2)
            d2 = self.pfuse2(torch.cat([d2, p2], dim=1))
        d2 = self.dec2(d2)

        d1 = self.fuse1(torch.cat([self.up1(d2), e1], dim=1))
        if self.use_prompts:
            p1, w1 = self.prompt1(d1)
            d1 = self.pfuse1(torch.cat([d1, p1], dim=1))
        d1 = self.dec1(d1)

        out = self.tail(d1)[..., :H, :W]
        if return_prompt_weights:
            if self.use_prompts:
                weights = [w1, w2, w3]  # finest -> coarsest
            return out, weights
        return out


class PromptUnet(CAUnet):
    """CAUnet with prompt injection at every decoder level."""

    def __init__(self, cfg: NetConfig):
        if not cfg.use_prompts:
            raise ConfigError("PromptUnet requires use_prompts=True (use CAUnet otherwise)")
        super().__init__(cfg)


def build_net(cfg: NetConfig) -> CAUnet:
    return PromptUnet(cfg) if cfg.use_prompts else CAUnet(cfg)


def complex_to_channels(stack: torch.Tensor) -> torch.Tensor:
    """[..., n, H, W] complex -> [..., 2n, H, W] real, re/im interleaved per frame."""
    parts = torch.stack([stack.real, stack.imag], dim=-3)  # [..., n, 2, H, W]
    shape = list(stack.shape)
    shape[-3] = 2 * shape[-3]
    return parts.reshape(shape)


def channels_to_complex(channels: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`complex_to_channels`."""
    if channels.shape[-3] % 2 != 0:
        raise ValueError("channel axis must be even to unpack re/im pairs")
    shape = list(channels.shape)
    n = shape[-3] // 2
    parts = channels.reshape(shape[:-3] + [n, 2] + shape[-2:])
    return torch.complex(parts[..., 0, :, :], parts[..., 1, :, :])
