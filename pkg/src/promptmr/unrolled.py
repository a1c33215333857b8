"""Stage-I unrolled reconstruction: sensitivity-map estimation, T cascades of
soft data consistency plus an image-domain learned regularizer over a window
of adjacent frames, ending in per-frame RSS magnitude images."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Literal

import torch
import torch.nn as nn

from .errors import ConfigError
from .fourier import (
    CoilSensitivities,
    UndersampleMask,
    apply_mask,
    expand,
    extract_acs,
    fft2c,
    ifft2c,
    reduce,
    rss,
)
from .nets import (
    CAUnet,
    NetConfig,
    build_net,
    channels_to_complex,
    complex_to_channels,
    zero_module,
)
from .phantom import FrameAxis, adjacency_boundary, build_adjacent_stack

ModelFamily = Literal["baseline_caunet", "promptmr"]


@dataclass(frozen=True)
class UnrolledConfig:
    cascades: int = 12
    adjacency: int = 2  # half-width a; the model consumes 2a+1 frames
    model_family: ModelFamily = "promptmr"
    share_weights: bool = False
    denoiser_width: int = 32
    denoiser_cab_per_block: int = 2
    denoiser_reduction: int = 4
    sme_width: int = 8
    sme_cab_per_block: int = 1
    sme_reduction: int = 4

    def __post_init__(self):
        if self.cascades < 1:
            raise ConfigError("need at least one cascade")
        if self.adjacency < 0:
            raise ConfigError("adjacency half-width must be >= 0")
        if self.model_family not in ("baseline_caunet", "promptmr"):
            raise ConfigError(f"unknown model family {self.model_family!r}")

    @property
    def n_adjacent(self) -> int:
        return 2 * self.adjacency + 1

    def denoiser_net_config(self) -> NetConfig:
        ch = 2 * self.n_adjacent
        return NetConfig(
            in_channels=ch,
            out_channels=ch,
            base_width=self.denoiser_width,
            cab_per_block=self.denoiser_cab_per_block,
            reduction=self.denoiser_reduction,
            use_prompts=(self.model_family == "promptmr"),
        )

    def sme_net_config(self) -> NetConfig:
        return NetConfig(
            in_channels=2,
            out_channels=2,
            base_width=self.sme_width,
            cab_per_block=self.sme_cab_per_block,
            reduction=self.sme_reduction,
            use_prompts=False,
        )


class SensitivityEstimator(nn.Module):
    """Estimate RSS-normalized coil maps from the ACS lines of one frame.

    Coils are folded into the batch axis; the net refines the zero-filled ACS
    images residually (zero-init tail), so the untrained estimator reproduces
    the classic normalized-ACS-ratio maps.
    """

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.net = build_net(cfg)
        zero_module(self.net.tail)

    def forward(self, y_frame: torch.Tensor, mask: UndersampleMask) -> CoilSensitivities:
        if mask.acs_lines < 1:
            raise ConfigError("sensitivity estimation needs a nonzero ACS region")
        acs_images = ifft2c(extract_acs(y_frame, mask))  # [coil, ky, kx]
        x = complex_to_channels(acs_images.unsqueeze(1))  # [coil, 2, ky, kx]
        refined = x + self.net(x)
        maps_raw = channels_to_complex(refined).squeeze(1)  # [coil, ky, kx]
        norm = torch.sqrt((maps_raw.real**2 + maps_raw.imag**2).sum(dim=0, keepdim=True))
        maps = maps_raw / norm.clamp_min(1e-12)
        maps = torch.where(norm > 0, maps, torch.zeros_like(maps))
        return CoilSensitivities(maps=maps)


def acs_ratio_maps(y_frame: torch.Tensor, mask: UndersampleMask) -> CoilSensitivities:
    """Classic network-free estimate: zero-filled ACS images divided by their RSS."""
    acs_images = ifft2c(extract_acs(y_frame, mask))
    return CoilSensitivities.from_raw(acs_images)


def regularizer_G(
    k_adj: torch.Tensor,
    sens: CoilSensitivities,
    denoiser: Callable[..., torch.Tensor],
    return_prompt_weights: bool = False,
):
    """Image-domain regularizer: reduce -> denoise the packed frame stack -> expand.

    k_adj: [batch, n_adj, coil, ky, kx] (a missing batch axis is added).
    """
    squeeze = k_adj.ndim == 4
    if squeeze:
        k_adj = k_adj.unsqueeze(0)
    images = reduce(ifft2c(k_adj), sens)  # [B, n_adj, ky, kx]
    x = complex_to_channels(images)
    weights = None
    if return_prompt_weights:
        denoised, weights = denoiser(x, return_prompt_weights=True)
    else:
        denoised = denoiser(x)
    images_out = channels_to_complex(denoised)
    k_out = fft2c(expand(images_out, sens))
    if squeeze:
        k_out = k_out.squeeze(0)
    return (k_out, weights) if return_prompt_weights else k_out


class Cascade(nn.Module):
    """One unrolled step: k <- k - eta * M(k - y) + G(k)."""

    def __init__(self, denoiser: nn.Module):
        super().__init__()
        self.denoiser = denoiser
        self.eta = nn.Parameter(torch.tensor(1.0))

    def forward(
        self,
        k_adj: torch.Tensor,
        y_adj: torch.Tensor,
        mask: UndersampleMask,
        sens: CoilSensitivities,
        collect_prompts: bool = False,
    ):
        dc = self.eta * apply_mask(k_adj - y_adj, mask)
        if collect_prompts:
            g, weights = regularizer_G(k_adj, sens, self.denoiser, return_prompt_weights=True)
            return k_adj - dc + g, weights
        return k_adj - dc + regularizer_G(k_adj, sens, self.denoiser)


class Stage1Model(nn.Module):
    """SME network plus a chain of cascades over adjacent k-space stacks."""

    def __init__(self, cfg: UnrolledConfig):
        super().__init__()
        self.cfg = cfg
        self.sme = SensitivityEstimator(cfg.sme_net_config())
        n_cascades = 1 if cfg.share_weights else cfg.cascades
        self.cascades = nn.ModuleList()
        for _ in range(n_cascades):
            denoiser = build_net(cfg.denoiser_net_config())
            zero_module(denoiser.tail)  # start as pure data consistency
            self.cascades.append(Cascade(denoiser))

    def cascade_at(self, t: int) -> Cascade:
        return self.cascades[0] if self.cfg.share_weights else self.cascades[t]

    def estimate_sensitivities(self, y: torch.Tensor, mask: UndersampleMask) -> CoilSensitivities:
        """Maps from the center frame's ACS; reused for all frames and cascades."""
        center = y.shape[0] // 2
        return self.sme(y[center], mask)

    def forward_stack(
        self,
        y_adj: torch.Tensor,
        mask: UndersampleMask,
        sens: CoilSensitivities,
        collect_cascade: int | None = None,
    ):
        """Run all cascades from the zero-filled init k0 = y_adj.

        y_adj: [B, n_adj, coil, ky, kx] or unbatched [n_adj, coil, ky, kx].
        """
        k = y_adj
        collected = None
        n_t = self.cfg.cascades
        collect_at = None if collect_cascade is None else collect_cascade % n_t
        for t in range(n_t):
            cascade = self.cascade_at(t)
            if collect_at == t:
                k, collected = cascade(k, y_adj, mask, sens, collect_prompts=True)
            else:
                k = cascade(k, y_adj, mask, sens)
        return (k, collected) if collect_cascade is not None else k

    def reconstruct_frames(
        self,
        y: torch.Tensor,
        mask: UndersampleMask,
        frame_axis: FrameAxis,
        frames: Iterable[int] | None = None,
        sens: CoilSensitivities | None = None,
    ) -> torch.Tensor:
        """Reconstruct the given center frames (default: all) of one case."""
        n_frames = y.shape[0]
        frame_list = list(range(n_frames)) if frames is None else list(frames)
        if sens is None:
            sens = self.estimate_sensitivities(y, mask)
        boundary = adjacency_boundary(frame_axis)
        a = self.cfg.adjacency
        stacks = torch.stack(
            [build_adjacent_stack(y, f, a, boundary) for f in frame_list]
        )  # [B, n_adj, coil, ky, kx]
        k = self.forward_stack(stacks, mask, sens)
        center_k = k[:, a]  # [B, coil, ky, kx]
        return rss(ifft2c(center_k), dim=1)


def reconstruct_stage1(
    y: torch.Tensor,
    mask: UndersampleMask,
    model: Stage1Model,
    frame_axis: FrameAxis = "temporal",
) -> torch.Tensor:
    """Full-case Stage-I reconstruction: [frame, coil, ky, kx] -> [frame, ky, kx]."""
    return model.reconstruct_frames(y, mask, frame_axis)


def zero_regularizers(model: Stage1Model) -> Stage1Model:
    """Zero every denoiser's output layer so G == 0 (degenerate DC-only model)."""
    for cascade in model.cascades:
        zero_module(cascade.denoiser.tail)
    return model


def export_prompt_embeddings(
    model: Stage1Model,
    inputs: Iterable[tuple[str, torch.Tensor, UndersampleMask, CoilSensitivities]],
    cascade_index: int = -1,
) -> list[dict]:
    """Record per-level softmax prompt weights of one cascade (default: last).

    inputs: iterable of (input_id, y_adj stack [n_adj, coil, ky, kx], mask, sens).
    Returns one row per (input, decoder level), finest level numbered 1.
    """
    if model.cfg.model_family != "promptmr":
        raise ConfigError("prompt embeddings require the promptmr model family")
    rows = []
    with torch.no_grad():
        for input_id, y_adj, mask, sens in inputs:
            _, weights = model.forward_stack(
                y_adj.unsqueeze(0), mask, sens, collect_cascade=cascade_index
            )
            for level, w in enumerate(weights, start=1):
                rows.append(
                    {"input": input_id, "level": level, "weights": [float(v) for v in w.squeeze(0)]}
                )
    return rows
