"""Stage-II refiner: residual stacked U-Nets with grouped temporal shifts
over the Stage-I magnitude sequence. Zero-init output layer makes the
untrained refiner an exact identity."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import torch
import torch.nn as nn

from .errors import ConfigError
from .nets import NetConfig, CAUnet, zero_module


@dataclass(frozen=True)
class RefineConfig:
    n_unets: int = 2
    base_width: int = 16
    shift_groups: int = 4
    shift_offsets: tuple[int, ...] = (-1, 0, 1)
    boundary: Literal["cyclic", "replicate"] = "cyclic"
    cab_per_block: int = 1
    reduction: int = 4

    def __post_init__(self):
        if self.n_unets < 1:
            raise ConfigError("need at least one refinement U-Net")
        if self.base_width % self.shift_groups != 0:
            raise ConfigError(
                f"shift_groups ({self.shift_groups}) must divide base_width ({self.base_width})"
            )
        if not self.shift_offsets:
            raise ConfigError("shift_offsets must be non-empty")


def temporal_shift(
    features: torch.Tensor,
    shift_groups: int,
    shift_offsets: tuple[int, ...],
    boundary: Literal["cyclic", "replicate"] = "cyclic",
) -> torch.Tensor:
    """Shift channel groups along the frame axis.

    features: [frame, C, H, W]; group g moves by shift_offsets[g % len(offsets)].
    """
    n_frames, channels = features.shape[0], features.shape[1]
    if channels % shift_groups != 0:
        raise ConfigError(f"channels ({channels}) not divisible by shift_groups ({shift_groups})")
    group_size = channels // shift_groups
    out = []
    for g in range(shift_groups):
        chunk = features[:, g * group_size : (g + 1) * group_size]
        offset = shift_offsets[g % len(shift_offsets)]
        if offset == 0:
            out.append(chunk)
        elif boundary == "cyclic":
            out.append(torch.roll(chunk, shifts=offset, dims=0))
        elif boundary == "replicate":
            idx = torch.clamp(torch.arange(n_frames) - offset, 0, n_frames - 1)
            out.append(chunk[idx])
        else:
            raise ConfigError(f"unknown boundary {boundary!r}")
    return torch.cat(out, dim=1)


class RefineNet(nn.Module):
    """output = clamp(stage1 + net(stage1), 0): shift -> U-Net, stacked n_unets times."""

    def __init__(self, cfg: RefineConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        self.head = nn.Conv2d(1, w, 3, padding=1)
        self.unets = nn.ModuleList(
            [
                CAUnet(
                    NetConfig(
                        in_channels=w,
                        out_channels=w,
                        base_width=w,
                        cab_per_block=cfg.cab_per_block,
                        reduction=cfg.reduction,
                    )
                )
                for _ in range(cfg.n_unets)
            ]
        )
        self.tail = zero_module(nn.Conv2d(w, 1, 3, padding=1))

    def forward(self, stage1: torch.Tensor) -> torch.Tensor:
        """stage1: real magnitude sequence [frame, ky, kx] -> same shape, >= 0."""
        if stage1.ndim != 3:
            raise ValueError(f"expected [frame, ky, kx], got {tuple(stage1.shape)}")
        x = self.head(stage1.unsqueeze(1))  # frames as batch
        for unet in self.unets:
            x = temporal_shift(x, self.cfg.shift_groups, self.cfg.shift_offsets, self.cfg.boundary)
            x = unet(x)
        residual = self.tail(x).squeeze(1)
        return torch.clamp(stage1 + residual, min=0.0)


def refine(stage1: torch.Tensor, model: RefineNet) -> torch.Tensor:
    return model(stage1)
