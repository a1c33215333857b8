"""Reconstruction quality metrics (NMSE, PSNR, SSIM) and the differentiable
SSIM loss used for training. SSIM uses a uniform 7x7 window with the usual
k1=0.01 / k2=0.03 constants and a per-volume data range."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

PSNR_INF = math.inf


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x)


def nmse(pred, target) -> float:
    """||pred - target||^2 / ||target||^2."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    denom = torch.sum(target**2)
    if denom == 0:
        raise ValueError("NMSE undefined for an all-zero target")
    return float(torch.sum((pred - target) ** 2) / denom)


def psnr(pred, target) -> float:
    """10 log10(max(target)^2 / mse); +inf sentinel when mse == 0."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    mse = torch.mean((pred - target) ** 2)
    if mse == 0:
        return PSNR_INF
    peak = torch.max(target)
    return float(10.0 * torch.log10(peak**2 / mse))


def ssim(
    pred,
    target,
    window: int = 7,
    k1: float = 0.01,
    k2: float = 0.03,
    data_range: float | None = None,
) -> float:
    """Mean local SSIM, uniform window, computed per frame and averaged.

    Inputs are [ky, kx] or [frame, ky, kx]; data_range defaults to the
    target's max over the whole volume.
    """
    return float(ssim_torch(_as_tensor(pred), _as_tensor(target), window, k1, k2, data_range))


def ssim_torch(
    pred: torch.Tensor,
    target: torch.Tensor,
    window: int = 7,
    k1: float = 0.01,
    k2: float = 0.03,
    data_range: float | None = None,
) -> torch.Tensor:
    """Differentiable SSIM; see :func:`ssim` for conventions."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.ndim == 2:
        pred, target = pred.unsqueeze(0), target.unsqueeze(0)
    if pred.shape[-1] < window or pred.shape[-2] < window:
        raise ValueError(f"image smaller than the {window}x{window} SSIM window")
    if data_range is None:
        data_range = float(target.max())

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    x = pred.unsqueeze(1)  # frames as batch, single channel
    y = target.unsqueeze(1)
    kernel = torch.ones(1, 1, window, window, dtype=pred.dtype, device=pred.device) / window**2

    mu_x = F.conv2d(x, kernel)
    mu_y = F.conv2d(y, kernel)
    var_x = F.conv2d(x * x, kernel) - mu_x**2
    var_y = F.conv2d(y * y, kernel) - mu_y**2
    cov = F.conv2d(x * y, kernel) - mu_x * mu_y

    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return (num / den).mean()


def ssim_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    data_range: float | None = None,
) -> torch.Tensor:
    """1 - SSIM, differentiable w.r.t. pred."""
    return 1.0 - ssim_torch(pred, target, data_range=data_range)


@dataclass
class MetricRow:
    case: str
    task: str
    accel: int
    model: str
    stage: str
    nmse: float
    psnr: float
    ssim: float


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)

    def add(self, row: MetricRow) -> None:
        self.rows.append(row)

    def aggregate(self, **filters) -> dict[str, float]:
        """Mean metrics over rows matching the given field filters.

        PSNR +inf sentinels are excluded from the PSNR mean (with their count
        reported as 'psnr_excluded')."""
        sel = [
            r
            for r in self.rows
            if all(getattr(r, k) == v for k, v in filters.items())
        ]
        if not sel:
            raise ValueError(f"no rows match {filters}")
        finite_psnr = [r.psnr for r in sel if math.isfinite(r.psnr)]
        return {
            "n": len(sel),
            "nmse": sum(r.nmse for r in sel) / len(sel),
            "psnr": sum(finite_psnr) / len(finite_psnr) if finite_psnr else PSNR_INF,
            "psnr_excluded": len(sel) - len(finite_psnr),
            "ssim": sum(r.ssim for r in sel) / len(sel),
        }

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["case", "task", "accel", "model", "stage", "nmse", "psnr", "ssim"])
            for r in self.rows:
                writer.writerow([r.case, r.task, r.accel, r.model, r.stage, r.nmse, r.psnr, r.ssim])

    def format_table(self) -> str:
        """Human-readable per-(task, accel, model, stage) summary."""
        keys = sorted({(r.task, r.accel, r.model, r.stage) for r in self.rows})
        lines = [f"{'task':<10} {'accel':>5} {'model':<18} {'stage':<8} {'NMSE(x1e-2)':>12} {'PSNR':>8} {'SSIM':>8}"]
        for task, accel, model, stage in keys:
            agg = self.aggregate(task=task, accel=accel, model=model, stage=stage)
            lines.append(
                f"{task:<10} {accel:>5} {model:<18} {stage:<8} "
                f"{100 * agg['nmse']:>12.3f} {agg['psnr']:>8.2f} {agg['ssim']:>8.4f}"
            )
        return "\n".join(lines)
