"""Synthetic multi-coil dynamic-cine / multi-contrast k-space generator.

Stands in for raw clinical data: an ellipse phantom with a beating inner
ellipse (temporal mode) or fixed geometry with a per-frame contrast schedule
(contrast mode), smooth complex coil profiles, and complex Gaussian k-space
noise. Everything is deterministic given the spec's seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import torch

from .errors import ConfigError
from .fourier import CoilSensitivities, fft2c, ifft2c, rss

FrameAxis = Literal["temporal", "contrast"]

# (center_y, center_x, radius_y, radius_x, base intensity); the inner-pool
# entry (index 1) is the one whose radii oscillate in temporal mode.
_TISSUES = (
    (0.0, 0.0, 0.78, 0.62, 0.45),   # body
    (-0.05, 0.0, 0.30, 0.26, 0.95),  # myocardium ring (outer)
    (-0.05, 0.0, 0.18, 0.15, 0.30),  # blood pool (carved into the ring)
    (0.32, -0.30, 0.12, 0.10, 0.75),  # lateral structure
    (0.28, 0.33, 0.09, 0.12, 0.60),   # lateral structure
)

# Two contrast-weighting endpoints per tissue; contrast mode interpolates
# between them across the frame axis so structure is fixed but tissue
# intensities change.
_CONTRAST_A = (1.0, 1.0, 1.0, 1.0, 1.0)
_CONTRAST_B = (0.6, 0.35, 2.2, 1.5, 0.4)


@dataclass(frozen=True)
class PhantomSpec:
    """Full description of one synthetic case."""

    grid: tuple[int, int] = (64, 64)
    n_coils: int = 4
    n_frames: int = 12
    frame_axis: FrameAxis = "temporal"
    motion_amplitude: float = 0.15
    contrast_schedule: tuple[tuple[float, ...], ...] | None = None
    noise_std: float = 0.005  # std of complex k-space noise, as fraction of max |k|
    seed: int = 0

    def __post_init__(self):
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")
        if self.n_coils < 1:
            raise ConfigError("n_coils must be >= 1")
        if not 0.0 <= self.motion_amplitude <= 0.2:
            raise ConfigError(f"motion_amplitude must be in [0, 0.2], got {self.motion_amplitude}")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if self.frame_axis not in ("temporal", "contrast"):
            raise ConfigError(f"unknown frame_axis {self.frame_axis!r}")


@dataclass(frozen=True)
class KSpaceVolume:
    """Complex multi-coil k-space [frame, coil, ky, kx] plus frame-axis semantics."""

    data: torch.Tensor
    frame_axis: FrameAxis = "temporal"

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ValueError(f"k-space volume must be [frame, coil, ky, kx], got {tuple(self.data.shape)}")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class CaseRecord:
    """One simulated case: noisy k-space, noiseless RSS target, true maps, spec."""

    kspace: KSpaceVolume
    target: torch.Tensor  # real [frame, ky, kx]
    sens_true: CoilSensitivities
    spec: PhantomSpec


def _soft_ellipse(yy, xx, cy, cx, ry, rx, sharpness=60.0):
    """Smooth 0..1 indicator of an ellipse; soft edge keeps k-space well-behaved."""
    d = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    return torch.sigmoid(sharpness * (1.0 - d))


def _case_tissues(spec: PhantomSpec) -> tuple[tuple[float, float, float, float, float], ...]:
    """Per-case anatomy: the base ellipse table jittered deterministically by seed.

    Centers shift by up to ±0.05 FOV, radii and intensities scale by ±10%,
    so every case is a distinct (but related) anatomy and models cannot
    simply memorize one target image.
    """
    gen = torch.Generator().manual_seed(spec.seed * 2_654_435_761 % (2**31) + 17)
    draws = torch.rand(len(_TISSUES), 5, generator=gen) * 2 - 1  # uniform [-1, 1)
    out = []
    for t, (cy, cx, ry, rx, level) in enumerate(_TISSUES):
        d = draws[t]
        out.append((
            cy + 0.05 * float(d[0]),
            cx + 0.05 * float(d[1]),
            ry * (1.0 + 0.1 * float(d[2])),
            rx * (1.0 + 0.1 * float(d[3])),
            level * (1.0 + 0.1 * float(d[4])),
        ))
    return tuple(out)


def _tissue_intensities(spec: PhantomSpec, frame: int, tissues) -> Sequence[float]:
    if spec.contrast_schedule is not None:
        return spec.contrast_schedule[frame]
    if spec.frame_axis == "contrast":
        alpha = frame / max(spec.n_frames - 1, 1)
        return tuple(
            base * ((1 - alpha) * a + alpha * b)
            for (_, _, _, _, base), a, b in zip(tissues, _CONTRAST_A, _CONTRAST_B)
        )
    return tuple(t[4] for t in tissues)


def _frame_image(spec: PhantomSpec, frame: int, yy: torch.Tensor, xx: torch.Tensor) -> torch.Tensor:
    """Real-valued phantom image for one frame."""
    tissues = _case_tissues(spec)
    intens = _tissue_intensities(spec, frame, tissues)
    if spec.frame_axis == "temporal":
        # 0..n_frames is one full cardiac-like cycle.
        scale = 1.0 + spec.motion_amplitude * math.sin(2 * math.pi * frame / spec.n_frames)
    else:
        scale = 1.0

    img = torch.zeros_like(yy)
    for t, (cy, cx, ry, rx, _) in enumerate(tissues):
        if t in (1, 2):
            ry, rx = ry * scale, rx * scale
        level = intens[t]
        blob = _soft_ellipse(yy, xx, cy, cx, ry, rx)
        if t == 2:
            # pool replaces the ring interior rather than adding on top
            img = img * (1 - blob) + level * blob
        else:
            img = img + level * blob
    return img


def _coil_profiles(spec: PhantomSpec, yy: torch.Tensor, xx: torch.Tensor) -> CoilSensitivities:
    """Smooth complex Gaussian coil profiles around the FOV, RSS-normalized."""
    raw = []
    for c in range(spec.n_coils):
        ang = 2 * math.pi * c / spec.n_coils
        cy, cx = 1.15 * math.sin(ang), 1.15 * math.cos(ang)
        mag = torch.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 0.9**2))
        phase = 0.6 * (math.cos(ang) * yy - math.sin(ang) * xx) + 0.3 * ang
        raw.append(mag * torch.exp(1j * phase))
    return CoilSensitivities.from_raw(torch.stack(raw).to(torch.complex64))


def simulate_case(spec: PhantomSpec) -> CaseRecord:
    """Simulate one fully sampled multi-coil case; deterministic given spec.seed."""
    ky, kx = spec.grid
    ys = torch.linspace(-1, 1, ky)
    xs = torch.linspace(-1, 1, kx)
    yy, xx = torch.meshgrid(ys, xs, indexing="ij")

    sens = _coil_profiles(spec, yy, xx)
    frames = torch.stack([_frame_image(spec, f, yy, xx) for f in range(spec.n_frames)])
    coil_images = frames[:, None].to(torch.complex64) * sens.maps[None]
    kspace = fft2c(coil_images)

    target = rss(ifft2c(kspace), dim=1)

    if spec.noise_std > 0:
        gen = torch.Generator().manual_seed(spec.seed)
        sigma = spec.noise_std * kspace.abs().max().item()
        noise = torch.randn(kspace.shape + (2,), generator=gen)
        kspace = kspace + sigma * torch.view_as_complex(noise)

    return CaseRecord(
        kspace=KSpaceVolume(data=kspace.to(torch.complex64), frame_axis=spec.frame_axis),
        target=target.to(torch.float32),
        sens_true=sens,
        spec=spec,
    )


def build_adjacent_stack(
    kspace: torch.Tensor,
    center: int,
    a: int,
    boundary: Literal["cyclic", "replicate"] = "cyclic",
) -> torch.Tensor:
    """Stack frames center-a .. center+a into [2a+1, coil, ky, kx].

    Out-of-range indices wrap (cyclic) or clamp (replicate).
    """
    n = kspace.shape[0]
    if not 0 <= center < n:
        raise ValueError(f"center frame {center} out of range [0, {n})")
    if a < 0:
        raise ValueError("adjacency half-width must be >= 0")
    idx = []
    for off in range(-a, a + 1):
        i = center + off
        if boundary == "cyclic":
            i = i % n
        elif boundary == "replicate":
            i = min(max(i, 0), n - 1)
        else:
            raise ConfigError(f"unknown boundary {boundary!r}")
        idx.append(i)
    return kspace[torch.tensor(idx, dtype=torch.long)]


def adjacency_boundary(frame_axis: FrameAxis) -> Literal["cyclic", "replicate"]:
    """Cine frames are periodic, contrast series are not."""
    return "cyclic" if frame_axis == "temporal" else "replicate"
