"""Command-line entry points: simulate, train-stage1, train-stage2,
reconstruct, evaluate, export-prompts.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .config import load_config
from .errors import ConfigError, DataError, DivergenceError
from . import train as T

_EXIT_CODES = [(ConfigError, 2), (DataError, 3), (DivergenceError, 4)]


def _common(f):
    f = click.option("--config", "config_path", type=click.Path(), default=None, help="YAML config file.")(f)
    f = click.option("--seed", type=int, default=None, help="Override the config seed.")(f)
    f = click.option("--override", "overrides", multiple=True, help="key=value config override (repeatable).")(f)
    return f


def _cfg(config_path, seed, overrides):
    return load_config(config_path, list(overrides), seed)


@click.group()
def cli():
    """Two-stage unrolled MRI reconstruction on synthetic phantom data."""


@cli.command()
@_common
def simulate(config_path, seed, overrides):
    """Generate the train/val/test phantom dataset."""
    cfg = _cfg(config_path, seed, overrides)
    manifest = T.simulate_dataset(cfg, log=click.echo)
    click.echo(f"dataset written to {cfg.resolved_data_dir()} "
               f"({sum(len(v) for v in manifest['splits'].values())} cases)")


@cli.command("train-stage1")
@_common
@click.option("--resume", "resume_from", type=click.Path(), default=None, help="Resume from a train-state file.")
def train_stage1(config_path, seed, overrides, resume_from):
    """Train the stage-1 unrolled model."""
    cfg = _cfg(config_path, seed, overrides)
    result = T.train_stage1(cfg, Path(cfg.checkpoint_dir), log=click.echo, resume_from=resume_from)
    click.echo(f"best checkpoint: {result['best_path']} (val SSIM {result['best_ssim']:.4f})")


@cli.command("train-stage2")
@_common
@click.option("--stage1-ckpt", type=click.Path(), default=None, help="Stage-1 checkpoint directory.")
def train_stage2(config_path, seed, overrides, stage1_ckpt):
    """Train the stage-2 refiner on frozen stage-1 outputs."""
    cfg = _cfg(config_path, seed, overrides)
    ckpt = stage1_ckpt or str(Path(cfg.checkpoint_dir) / "stage1_best")
    result = T.train_stage2(cfg, ckpt, Path(cfg.checkpoint_dir), log=click.echo)
    click.echo(f"best checkpoint: {result['best_path']} (val SSIM {result['best_ssim']:.4f})")


@cli.command()
@_common
@click.option("--stage1-ckpt", type=click.Path(), default=None)
@click.option("--stage2-ckpt", type=click.Path(), default=None)
@click.option("--case", "case_path", type=click.Path(), required=True, help="Case container directory.")
@click.option("--out", "out_path", type=click.Path(), required=True, help="Output container directory.")
@click.option("--acceleration", type=int, default=4)
@click.option("--mask-seed", type=int, default=0)
def reconstruct(config_path, seed, overrides, stage1_ckpt, stage2_ckpt, case_path, out_path, acceleration, mask_seed):
    """Reconstruct one case; writes stage-tagged magnitude volumes and the mask."""
    cfg = _cfg(config_path, seed, overrides)
    ckpt = stage1_ckpt or str(Path(cfg.checkpoint_dir) / "stage1_best")
    stage1 = T.load_stage1_model(ckpt)
    stage2 = T.load_stage2_model(stage2_ckpt) if stage2_ckpt else None
    T.reconstruct_case_to_container(cfg, stage1, stage2, case_path, out_path, acceleration, mask_seed)
    click.echo(f"reconstruction written to {out_path}")


@cli.command()
@_common
@click.option("--recon-dir", type=click.Path(), required=True, help="Directory of reconstruction containers.")
@click.option("--out", "out_csv", type=click.Path(), required=True, help="Output CSV path.")
def evaluate(config_path, seed, overrides, recon_dir, out_csv):
    """Evaluate reconstructions against dataset targets (CSV + table)."""
    cfg = _cfg(config_path, seed, overrides)
    report = T.evaluate_reconstructions(cfg, recon_dir)
    report.write_csv(out_csv)
    click.echo(report.format_table())
    click.echo(f"report written to {out_csv}")


@cli.command("export-prompts")
@_common
@click.option("--stage1-ckpt", type=click.Path(), default=None)
@click.option("--split", type=click.Choice(["train", "val", "test"]), default="val")
@click.option("--out", "out_csv", type=click.Path(), required=True)
def export_prompts(config_path, seed, overrides, stage1_ckpt, split, out_csv):
    """Export per-level prompt weights for a dataset split."""
    cfg = _cfg(config_path, seed, overrides)
    ckpt = stage1_ckpt or str(Path(cfg.checkpoint_dir) / "stage1_best")
    stage1 = T.load_stage1_model(ckpt)
    n = T.export_prompts_csv(cfg, stage1, split, out_csv)
    click.echo(f"{n} rows written to {out_csv}")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.ClickException as e:
        e.show()
        return 2
    except click.exceptions.Abort:
        return 2
    except SystemExit as e:
        return int(e.code or 0)
    except tuple(exc for exc, _ in _EXIT_CODES) as e:
        click.echo(f"error: {e}", err=True)
        for exc_type, code in _EXIT_CODES:
            if isinstance(e, exc_type):
                return code
        return 1
    except FileNotFoundError as e:
        click.echo(f"error: {e}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
