"""Dataset generation, training loops for both stages, reconstruction and
evaluation used by the CLI. Everything is deterministic at fixed seed: all
sampling draws from one torch.Generator whose state is checkpointed."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ReconConfig, write_frozen_config
from .container import read_case, read_container, write_case, write_container
from .errors import ConfigError, DataError, DivergenceError
from .fourier import UndersampleMask, apply_mask, ifft2c, make_mask, rss
from .metrics import MetricReport, MetricRow, nmse, psnr, ssim, ssim_loss
from .phantom import CaseRecord, PhantomSpec, adjacency_boundary, build_adjacent_stack
from .refine import RefineConfig, RefineNet
from .unrolled import Stage1Model, UnrolledConfig, export_prompt_embeddings

SPLITS = ("train", "val", "test")


# ---------------------------------------------------------------------------
# dataset

def _case_spec(cfg: ReconConfig, task: str, case_seed: int) -> PhantomSpec:
    return PhantomSpec(
        grid=cfg.sim.grid,
        n_coils=cfg.sim.n_coils,
        n_frames=cfg.sim.n_frames,
        frame_axis=task,
        motion_amplitude=cfg.sim.motion_amplitude,
        noise_std=cfg.sim.noise_std,
        seed=case_seed,
    )


def simulate_dataset(cfg: ReconConfig, log: Callable[[str], None] = lambda s: None) -> dict:
    """Generate train/val/test splits for every configured task type."""
    from .phantom import simulate_case

    data_dir = cfg.resolved_data_dir()
    counts = {"train": cfg.sim.n_train, "val": cfg.sim.n_val, "test": cfg.sim.n_test}
    manifest: dict = {"seed": cfg.seed, "splits": {s: [] for s in SPLITS}}
    idx = 0
    for split in SPLITS:
        for task in cfg.tasks():
            for i in range(counts[split]):
                name = f"{task}_{split}_{i:03d}"
                case_seed = cfg.seed * 1_000_003 + idx
                case = simulate_case(_case_spec(cfg, task, case_seed))
                write_case(case, data_dir / split / name)
                manifest["splits"][split].append({"name": name, "task": task, "seed": case_seed})
                idx += 1
        log(f"{split}: {len(manifest['splits'][split])} cases")
    (data_dir / "split_manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest


@dataclass
class DatasetSplit:
    names: list[str]
    cases: list[CaseRecord]


def load_split(cfg: ReconConfig, split: str) -> DatasetSplit:
    data_dir = cfg.resolved_data_dir()
    mpath = data_dir / "split_manifest.json"
    if not mpath.is_file():
        raise DataError(f"no split_manifest.json in {data_dir}; run simulate first")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    tasks = set(cfg.tasks())
    names, cases = [], []
    for entry in manifest["splits"][split]:
        if entry["task"] not in tasks:
            continue
        names.append(entry["name"])
        cases.append(read_case(data_dir / split / entry["name"]))
    if not cases:
        raise DataError(f"split {split!r} has no cases for tasks {sorted(tasks)}")
    return DatasetSplit(names=names, cases=cases)


# ---------------------------------------------------------------------------
# stage-1 training

def _draw(gen: torch.Generator, n: int) -> int:
    return int(torch.randint(n, (1,), generator=gen))


def _training_mask(cfg: ReconConfig, ky: int, gen: torch.Generator) -> UndersampleMask:
    accel = cfg.accelerations[_draw(gen, len(cfg.accelerations))]
    seed = _draw(gen, 2**31 - 1)
    return make_mask(ky, accel, cfg.acs_lines, scheme=cfg.mask_scheme, seed=seed)


def validation_mask(cfg: ReconConfig, ky: int, case_index: int) -> UndersampleMask:
    accel = cfg.accelerations[case_index % len(cfg.accelerations)]
    return make_mask(ky, accel, cfg.acs_lines, scheme=cfg.mask_scheme, seed=case_index)


def stage1_reconstruct(model: Stage1Model, case: CaseRecord, mask: UndersampleMask) -> torch.Tensor:
    y = apply_mask(case.kspace.data, mask)
    return model.reconstruct_frames(y, mask, case.spec.frame_axis)


def validate_stage1(model: Stage1Model, cfg: ReconConfig, split: DatasetSplit) -> float:
    model.eval()
    scores = []
    with torch.no_grad():
        for i, case in enumerate(split.cases):
            mask = validation_mask(cfg, case.spec.grid[0], i)
            recon = stage1_reconstruct(model, case, mask)
            scores.append(ssim(recon, case.target))
    model.train()
    return sum(scores) / len(scores)


def _epoch_lr(cfg: ReconConfig, epoch: int) -> float:
    return cfg.optim.final_lr if epoch == cfg.optim.epochs - 1 else cfg.optim.lr


def stage1_checkpoint_config(cfg: ReconConfig) -> dict:
    return {"kind": "stage1", "unrolled": dataclasses.asdict(cfg.stage1)}


def load_stage1_model(path: str | Path) -> Stage1Model:
    config, state, _ = load_checkpoint(path)
    if config.get("kind") != "stage1":
        raise DataError(f"checkpoint at {path} is not a stage-1 checkpoint")
    model = Stage1Model(UnrolledConfig(**config["unrolled"]))
    model.load_state_dict(state)
    model.eval()
    return model


def train_stage1(
    cfg: ReconConfig,
    ckpt_dir: str | Path,
    log: Callable[[str], None] = lambda s: None,
    resume_from: str | Path | None = None,
) -> dict:
    """SSIM-loss training of the unrolled model; returns a summary dict with
    the loss trajectory and the best-checkpoint path."""
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    write_frozen_config(cfg, ckpt_dir / "config.resolved.yaml")

    train_split = load_split(cfg, "train")
    val_split = load_split(cfg, "val")

    torch.manual_seed(cfg.seed)
    model = Stage1Model(cfg.stage1)
    model.train()
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=cfg.optim.lr, weight_decay=cfg.optim.weight_decay
    )
    gen = torch.Generator().manual_seed(cfg.seed + 1)

    start_epoch, best_ssim, losses = 0, -1.0, []
    if resume_from is not None:
        state = torch.load(resume_from, weights_only=False)
        model.load_state_dict(state["model"])
        optimizer.load_state_dict(state["optimizer"])
        gen.set_state(state["generator"])
        start_epoch, best_ssim, losses = state["epoch"], state["best_ssim"], state["losses"]

    best_path = ckpt_dir / "stage1_best"
    for epoch in range(start_epoch, cfg.optim.epochs):
        lr = _epoch_lr(cfg, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        for _ in range(cfg.optim.steps_per_epoch):
            case = train_split.cases[_draw(gen, len(train_split.cases))]
            frame = _draw(gen, case.spec.n_frames)
            mask = _training_mask(cfg, case.spec.grid[0], gen)
            y = apply_mask(case.kspace.data, mask)
            recon = model.reconstruct_frames(y, mask, case.spec.frame_axis, frames=[frame])
            loss = ssim_loss(recon, case.target[frame : frame + 1], data_range=float(case.target.max()))
            if not math.isfinite(loss.item()):
                raise DivergenceError(f"stage-1 loss became non-finite at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        val_ssim = validate_stage1(model, cfg, val_split)
        log(f"epoch {epoch}: lr {lr:.1e} loss {losses[-1]:.4f} val SSIM {val_ssim:.4f}")
        if val_ssim > best_ssim:
            best_ssim = val_ssim
            save_checkpoint(
                best_path,
                model.state_dict(),
                stage1_checkpoint_config(cfg),
                extra={"epoch": epoch, "val_ssim": val_ssim},
            )
        torch.save(
            {
                "epoch": epoch + 1,
                "best_ssim": best_ssim,
                "losses": losses,
                "model": model.state_dict(),
                "optimizer": optimizer.state_dict(),
                "generator": gen.get_state(),
            },
            ckpt_dir / "stage1_train_state.pt",
        )
    return {"best_path": best_path, "best_ssim": best_ssim, "losses": losses, "model": model}


# ---------------------------------------------------------------------------
# stage-2 training

def stage2_checkpoint_config(cfg: ReconConfig) -> dict:
    return {"kind": "stage2", "refine": dataclasses.asdict(cfg.stage2)}


def load_stage2_model(path: str | Path) -> RefineNet:
    config, state, _ = load_checkpoint(path)
    if config.get("kind") != "stage2":
        raise DataError(f"checkpoint at {path} is not a stage-2 checkpoint")
    model = RefineNet(RefineConfig(**config["refine"]))
    model.load_state_dict(state)
    model.eval()
    return model


def train_stage2(
    cfg: ReconConfig,
    stage1_ckpt: str | Path,
    ckpt_dir: str | Path,
    log: Callable[[str], None] = lambda s: None,
) -> dict:
    """Train the refiner on frozen stage-1 outputs (sequential two-stage setup)."""
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    write_frozen_config(cfg, ckpt_dir / "config.resolved.yaml")

    stage1 = load_stage1_model(stage1_ckpt)
    train_split = load_split(cfg, "train")
    val_split = load_split(cfg, "val")

    # stage-1 outputs are frozen: precompute them per (case, acceleration)
    def stage1_volumes(split: DatasetSplit, deterministic_masks: bool):
        vols = []
        with torch.no_grad():
            for i, case in enumerate(split.cases):
                per_accel = {}
                for j, accel in enumerate(cfg.accelerations):
                    seed = i if deterministic_masks else i * 31 + j
                    mask = make_mask(case.spec.grid[0], accel, cfg.acs_lines, cfg.mask_scheme, seed)
                    per_accel[accel] = stage1_reconstruct(stage1, case, mask)
                vols.append(per_accel)
        return vols

    train_vols = stage1_volumes(train_split, deterministic_masks=False)
    val_vols = stage1_volumes(val_split, deterministic_masks=True)

    torch.manual_seed(cfg.seed + 2)
    model = RefineNet(cfg.stage2)
    model.train()
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=cfg.optim.lr, weight_decay=cfg.optim.weight_decay
    )
    gen = torch.Generator().manual_seed(cfg.seed + 3)

    def validate() -> float:
        model.eval()
        scores = []
        with torch.no_grad():
            for i, case in enumerate(val_split.cases):
                accel = cfg.accelerations[i % len(cfg.accelerations)]
                scores.append(ssim(model(val_vols[i][accel]), case.target))
        model.train()
        return sum(scores) / len(scores)

    best_ssim, losses = -1.0, []
    best_path = ckpt_dir / "stage2_best"
    for epoch in range(cfg.optim.epochs):
        lr = _epoch_lr(cfg, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        for _ in range(cfg.optim.steps_per_epoch):
            i = _draw(gen, len(train_split.cases))
            accel = cfg.accelerations[_draw(gen, len(cfg.accelerations))]
            case = train_split.cases[i]
            refined = model(train_vols[i][accel])
            loss = ssim_loss(refined, case.target, data_range=float(case.target.max()))
            if not math.isfinite(loss.item()):
                raise DivergenceError(f"stage-2 loss became non-finite at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        val_ssim = validate()
        log(f"epoch {epoch}: lr {lr:.1e} loss {losses[-1]:.4f} val SSIM {val_ssim:.4f}")
        if val_ssim > best_ssim:
            best_ssim = val_ssim
            save_checkpoint(
                best_path,
                model.state_dict(),
                stage2_checkpoint_config(cfg),
                extra={"epoch": epoch, "val_ssim": val_ssim},
            )
    return {"best_path": best_path, "best_ssim": best_ssim, "losses": losses, "model": model}


# ---------------------------------------------------------------------------
# reconstruction + evaluation

def reconstruct_case_to_container(
    cfg: ReconConfig,
    stage1: Stage1Model,
    stage2: RefineNet | None,
    case_path: str | Path,
    out_path: str | Path,
    acceleration: int,
    mask_seed: int = 0,
) -> None:
    """Run the pipeline on one stored case and write a stage-tagged container."""
    case = read_case(case_path)
    mask = make_mask(case.spec.grid[0], acceleration, cfg.acs_lines, cfg.mask_scheme, mask_seed)
    with torch.no_grad():
        vol1 = stage1_reconstruct(stage1, case, mask)
        arrays = {"stage1": vol1.numpy(), "mask_keep": mask.keep.numpy()}
        stages = ["stage1"]
        if stage2 is not None:
            arrays["stage2"] = stage2(vol1).numpy()
            stages.append("stage2")
    meta = {
        "kind": "reconstruction",
        "case_name": Path(case_path).name,
        "case_split": Path(case_path).parent.name,
        "task": case.spec.frame_axis,
        "acceleration": acceleration,
        "model": cfg.stage1.model_family,
        "stages": stages,
    }
    write_container(out_path, arrays, meta)


def evaluate_reconstructions(cfg: ReconConfig, recon_dir: str | Path) -> MetricReport:
    """Join stored reconstructions with their dataset targets; one row per
    (case, stage), with the zero-filled baseline always included."""
    recon_dir = Path(recon_dir)
    data_dir = cfg.resolved_data_dir()
    report = MetricReport()
    dirs = sorted(p for p in recon_dir.iterdir() if (p / "manifest.json").is_file())
    if not dirs:
        raise DataError(f"no reconstruction containers under {recon_dir}")
    for path in dirs:
        arrays, meta = read_container(path)
        if meta.get("kind") != "reconstruction":
            continue
        case = read_case(data_dir / meta["case_split"] / meta["case_name"])
        target = case.target
        mask = UndersampleMask(
            keep=torch.from_numpy(arrays["mask_keep"]),
            acceleration=meta["acceleration"],
            acs_lines=cfg.acs_lines,
        )
        zero_filled = rss(ifft2c(apply_mask(case.kspace.data, mask)), dim=1)
        volumes = {"zero_filled": zero_filled}
        for stage in meta["stages"]:
            volumes[stage] = torch.from_numpy(arrays[stage])
        for stage, vol in volumes.items():
            report.add(
                MetricRow(
                    case=meta["case_name"],
                    task=meta["task"],
                    accel=meta["acceleration"],
                    model=meta["model"] if stage != "zero_filled" else "none",
                    stage=stage,
                    nmse=nmse(vol, target),
                    psnr=psnr(vol, target),
                    ssim=ssim(vol, target),
                )
            )
    return report


def export_prompts_csv(cfg: ReconConfig, stage1: Stage1Model, split: str, out_csv: str | Path) -> int:
    """Export per-level prompt weights for every (case, frame) of a split."""
    import csv

    dataset = load_split(cfg, split)
    rows = []
    with torch.no_grad():
        for i, (name, case) in enumerate(zip(dataset.names, dataset.cases)):
            mask = validation_mask(cfg, case.spec.grid[0], i)
            y = apply_mask(case.kspace.data, mask)
            sens = stage1.estimate_sensitivities(y, mask)
            boundary = adjacency_boundary(case.spec.frame_axis)
            inputs = [
                (
                    f"{name}/frame{f}",
                    build_adjacent_stack(y, f, stage1.cfg.adjacency, boundary),
                    mask,
                    sens,
                )
                for f in range(case.spec.n_frames)
            ]
            for row in export_prompt_embeddings(stage1, inputs):
                rows.append({**row, "task": case.spec.frame_axis})
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        n_w = len(rows[0]["weights"]) if rows else 0
        writer = csv.writer(fh)
        writer.writerow(["input", "task", "level"] + [f"w{j}" for j in range(n_w)])
        for row in rows:
            writer.writerow([row["input"], row["task"], row["level"]] + row["weights"])
    return len(rows)
