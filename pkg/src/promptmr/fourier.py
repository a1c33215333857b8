"""MRI measurement model: centered orthonormal FFTs, coil expand/reduce,
Cartesian line masks and the forward operator built from them.

All functions are pure and operate on torch tensors whose last two axes are
spatial (ky, kx). Complex data stays complex at these boundaries; packing
into 2-channel real layout only happens inside the networks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import torch

from .errors import ConfigError

MaskScheme = Literal["equispaced", "random"]


def fft2c(image: torch.Tensor) -> torch.Tensor:
    """Centered, orthonormal 2D FFT over the last two axes."""
    if image.ndim < 2:
        raise ValueError(f"need at least 2 trailing spatial axes, got shape {tuple(image.shape)}")
    x = torch.fft.ifftshift(image, dim=(-2, -1))
    x = torch.fft.fft2(x, dim=(-2, -1), norm="ortho")
    return torch.fft.fftshift(x, dim=(-2, -1))


def ifft2c(kspace: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`fft2c`."""
    if kspace.ndim < 2:
        raise ValueError(f"need at least 2 trailing spatial axes, got shape {tuple(kspace.shape)}")
    k = torch.fft.ifftshift(kspace, dim=(-2, -1))
    k = torch.fft.ifft2(k, dim=(-2, -1), norm="ortho")
    return torch.fft.fftshift(k, dim=(-2, -1))


@dataclass(frozen=True)
class CoilSensitivities:
    """Complex per-coil maps [coil, ky, kx], RSS-normalized on the support."""

    maps: torch.Tensor

    def __post_init__(self):
        if self.maps.ndim != 3:
            raise ValueError(f"sensitivity maps must be [coil, ky, kx], got {tuple(self.maps.shape)}")

    @property
    def n_coils(self) -> int:
        return self.maps.shape[0]

    @classmethod
    def from_raw(cls, raw_maps: torch.Tensor) -> "CoilSensitivities":
        """Normalize raw per-coil maps so sum_i |S_i|^2 = 1 wherever any coil is nonzero."""
        norm = torch.sqrt((raw_maps.real**2 + raw_maps.imag**2).sum(dim=0, keepdim=True))
        maps = torch.where(norm > 0, raw_maps / torch.where(norm > 0, norm, torch.ones_like(norm)), torch.zeros_like(raw_maps))
        return cls(maps=maps)


@dataclass(frozen=True)
class UndersampleMask:
    """Binary phase-encode line mask, broadcast over kx and frames.

    keep: float tensor [ky] of {0, 1}; the central `acs_lines` entries are 1.
    """

    keep: torch.Tensor
    acceleration: int
    acs_lines: int

    def __post_init__(self):
        if self.keep.ndim != 1:
            raise ValueError("mask keep must be 1D over ky")

    @property
    def ky(self) -> int:
        return self.keep.shape[0]

    def acs_slice(self) -> slice:
        start = (self.ky - self.acs_lines) // 2
        return slice(start, start + self.acs_lines)


def make_mask(
    ky: int,
    acceleration: int,
    acs_lines: int,
    scheme: MaskScheme = "equispaced",
    seed: int = 0,
) -> UndersampleMask:
    """Build a Cartesian line mask: centered ACS block plus outer lines.

    equispaced keeps every `acceleration`-th line (phase 0); random keeps
    outer lines with the probability that makes the expected total ky/acceleration.
    """
    if acceleration < 1:
        raise ConfigError(f"acceleration must be >= 1, got {acceleration}")
    if acs_lines >= ky:
        raise ConfigError(f"acs_lines ({acs_lines}) must be smaller than ky ({ky})")
    if acs_lines < 1:
        raise ConfigError("acs_lines must be positive")

    keep = torch.zeros(ky)
    start = (ky - acs_lines) // 2
    keep[start : start + acs_lines] = 1.0
    if acceleration == 1:
        keep[:] = 1.0
    elif scheme == "equispaced":
        keep[::acceleration] = 1.0
    elif scheme == "random":
        gen = torch.Generator().manual_seed(seed)
        target = ky / acceleration - acs_lines
        outer = ky - acs_lines
        prob = max(target / outer, 0.0)
        draw = torch.rand(ky, generator=gen)
        outer_keep = (draw < prob).float()
        outer_keep[start : start + acs_lines] = 0.0
        keep = torch.clamp(keep + outer_keep, max=1.0)
    else:
        raise ConfigError(f"unknown mask scheme {scheme!r}")
    return UndersampleMask(keep=keep, acceleration=acceleration, acs_lines=acs_lines)


def apply_mask(kspace: torch.Tensor, mask: UndersampleMask) -> torch.Tensor:
    """Zero non-kept ky lines; kept lines pass through bit-identically."""
    if kspace.shape[-2] != mask.ky:
        raise ValueError(f"ky mismatch: kspace has {kspace.shape[-2]} lines, mask has {mask.ky}")
    keep = mask.keep.to(device=kspace.device).view(-1, 1)
    return torch.where(keep > 0, kspace, torch.zeros((), dtype=kspace.dtype, device=kspace.device))


def extract_acs(kspace: torch.Tensor, mask: UndersampleMask) -> torch.Tensor:
    """Zero everything except the centered ACS block of ky lines."""
    if kspace.shape[-2] != mask.ky:
        raise ValueError(f"ky mismatch: kspace has {kspace.shape[-2]} lines, mask has {mask.ky}")
    sel = torch.zeros(mask.ky, device=kspace.device)
    sel[mask.acs_slice()] = 1.0
    return torch.where(sel.view(-1, 1) > 0, kspace, torch.zeros((), dtype=kspace.dtype, device=kspace.device))


def expand(image: torch.Tensor, sens: CoilSensitivities) -> torch.Tensor:
    """Coil expand: image [..., ky, kx] -> coil images [..., coil, ky, kx]."""
    maps = sens.maps
    if image.shape[-2:] != maps.shape[-2:]:
        raise ValueError(f"spatial shape mismatch: image {tuple(image.shape[-2:])} vs maps {tuple(maps.shape[-2:])}")
    return image.unsqueeze(-3) * maps


def reduce(coil_images: torch.Tensor, sens: CoilSensitivities) -> torch.Tensor:
    """Coil reduce: sum_i conj(S_i) * x_i over the coil axis (third from last)."""
    maps = sens.maps
    if coil_images.shape[-3] != maps.shape[0]:
        raise ValueError(f"coil count mismatch: images have {coil_images.shape[-3]}, maps have {maps.shape[0]}")
    if coil_images.shape[-2:] != maps.shape[-2:]:
        raise ValueError("spatial shape mismatch between coil images and maps")
    return (torch.conj(maps) * coil_images).sum(dim=-3)


def forward_A(image: torch.Tensor, sens: CoilSensitivities, mask: UndersampleMask) -> torch.Tensor:
    """Forward operator A = M F E: image -> masked multi-coil k-space."""
    return apply_mask(fft2c(expand(image, sens)), mask)


def adjoint_A(kspace: torch.Tensor, sens: CoilSensitivities, mask: UndersampleMask) -> torch.Tensor:
    """Adjoint of forward_A: reduce(ifft2c(mask(k)))."""
    return reduce(ifft2c(apply_mask(kspace, mask)), sens)


def rss(coil_images: torch.Tensor, dim: int = -3) -> torch.Tensor:
    """Root-sum-of-squares coil combination; real and nonnegative."""
    return torch.sqrt((coil_images.real**2 + coil_images.imag**2).sum(dim=dim))
