"""
Command-line interface: train, eval, demo and experiment.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, Optional

import click
import numpy as np

from ..data.augment import AugmentConfig, mix_augment
from ..data.file_io import load_manifest, save_dataset, write_pgm
from ..data.synthetic import SyntheticSpec, gen_synthetic
from ..network.checkpoint import load_network, read_header
from ..network.segnet import NetworkConfig, SegNetwork
from ..ssm.routes import RouteSet, ScanDirection, route_order
from ..training.experiments import EXPERIMENTS
from ..training.trainer import CoTrainer, evaluate_predictions, predict, read_metrics_log
from ..utils.helpers import ConfigError, dump_config, load_config, resolve_config, setup_logging

logger = logging.getLogger(__name__)

EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _resolve(ctx: click.Context, config_path: Optional[str]) -> Dict[str, Any]:
    """Load and validate a run configuration, exiting with code 2 on any problem."""
    if config_path is None:
        return resolve_config({})
    if not Path(config_path).exists():
        click.echo(f"Error: configuration file not found: {config_path}", err=True)
        ctx.exit(EXIT_USAGE)
    try:
        return resolve_config(load_config(config_path))
    except ConfigError as e:
        click.echo(f"Error: invalid configuration field {e.field}: {e}", err=True)
    except ValueError as e:
        click.echo(f"Error: {e}", err=True)
    ctx.exit(EXIT_USAGE)


@click.group()
def cli():
    """Diverse-scan co-training for semi-supervised segmentation."""


@cli.command()
@click.option("--config", "config_path", required=True, help="Run configuration (YAML or JSON)")
@click.option("--dry-run", is_flag=True, help="Validate the configuration and print resolved values")
@click.option("--dump-config", "dump", is_flag=True, help="Print the resolved configuration as YAML")
@click.option("--output", "output_dir", default=None, help="Run directory (overrides output.directory)")
@click.option("--data", "manifest", default=None, help="Dataset manifest to train on instead of synthetic data")
@click.option("--iterations", type=int, default=None, help="Stop after this many iterations")
@click.pass_context
def train(ctx, config_path, dry_run, dump, output_dir, manifest, iterations):
    """Train the two networks and evaluate network A."""
    config = _resolve(ctx, config_path)
    if dry_run or dump:
        if dry_run:
            click.echo("# configuration valid")
        click.echo(dump_config(config), nl=False)
        ctx.exit(0)

    setup_logging(config)
    output = Path(output_dir or config["output"]["directory"])
    try:
        if manifest:
            dataset = load_manifest(Path(manifest))
        else:
            dataset = gen_synthetic(SyntheticSpec.from_config(config))
            save_dataset(dataset, output / "data")
        trainer = CoTrainer(config, output)
        report = trainer.train(dataset, iterations)
    except Exception as e:
        logger.error(f"Training failed: {e}")
        click.echo(f"Error: {e}", err=True)
        ctx.exit(EXIT_RUNTIME)
    click.echo(report.table())
    click.echo(f"Checkpoint written to {output / 'checkpoint'}")


def _network_dir(checkpoint: Path, network: str) -> Path:
    nested = checkpoint / f"net_{network}"
    return nested if nested.is_dir() else checkpoint


@cli.command(name="eval")
@click.option("--checkpoint", required=True, help="Checkpoint directory")
@click.option("--data", "manifest", required=True, help="Dataset manifest")
@click.option("--network", type=click.Choice(["a", "b"]), default="a", help="Network to evaluate")
@click.option("--config", "config_path", default=None, help="Run configuration for the network shape")
@click.option("--output", "output_dir", default=None, help="Directory for predicted masks")
@click.pass_context
def evaluate_command(ctx, checkpoint, manifest, network, config_path, output_dir):
    """Evaluate a saved network and write its predicted masks."""
    config = _resolve(ctx, config_path)
    checkpoint = Path(checkpoint)
    try:
        directory = _network_dir(checkpoint, network)
        header = read_header(directory)
        net = SegNetwork(NetworkConfig.from_config(config), RouteSet(header.get("route_set", "HV")))
        load_network(net, directory, expected_route_set=RouteSet.HV if network == "a" else RouteSet.DA)
        dataset = load_manifest(Path(manifest))
        if len(dataset.test_images):
            images, masks = dataset.test_images, dataset.test_masks
        else:
            images, masks = dataset.labeled_images, dataset.labeled_masks
        preds = predict(net, images)
        report = evaluate_predictions(preds, masks, net.config.num_classes)

        out = Path(output_dir) if output_dir else checkpoint / f"predictions_{network}"
        scale = max(1, net.config.num_classes - 1)
        for i, pred in enumerate(preds):
            write_pgm(out / f"pred_{i:04d}.pgm", pred / scale)
    except Exception as e:
        logger.error(f"Evaluation failed: {e}")
        click.echo(f"Error: {e}", err=True)
        ctx.exit(EXIT_RUNTIME)
    click.echo(report.table())
    click.echo(f"Wrote {len(preds)} predicted masks to {out}")


def _ramp(size: int) -> np.ndarray:
    return np.arange(size * size, dtype=np.float64).reshape(size, size) / max(1, size * size - 1)


@cli.command()
@click.argument("kind", type=click.Choice(["scan", "augment", "diversity"]))
@click.option("--size", type=int, default=None, help="Grid or image extent")
@click.option("--seed", type=int, default=0, help="Random seed")
@click.option("--alpha", type=float, default=None, help="Strong transform probability (augment)")
@click.option("--patch-size", type=int, default=None, help="Patch size (augment)")
@click.option("--log", "log_path", default=None, help="Metrics log (diversity)")
@click.option("--out", "out_dir", default="demo_output", help="Output directory (augment)")
@click.pass_context
def demo(ctx, kind, size, seed, alpha, patch_size, log_path, out_dir):
    """Print route orders, dump augmented views, or show a diversity trajectory."""
    if kind == "scan":
        size = size or 3
        for direction in ScanDirection:
            perm = route_order(direction, size, size)
            click.echo(f"{direction.value}: {' '.join(str(i) for i in perm.indices)}")
            for row in perm.as_grid():
                click.echo("    " + " ".join(f"{v:3d}" for v in row))
        return

    if kind == "augment":
        size = size or 16
        try:
            config = AugmentConfig.from_config(resolve_config({}))
            if alpha is not None:
                config = replace(config, alpha=alpha)
            pair = mix_augment(_ramp(size), None, config, np.random.default_rng(seed),
                               patch_size or max(1, size // 4))
        except ValueError as e:
            click.echo(f"Error: {e}", err=True)
            ctx.exit(EXIT_USAGE)
        out = Path(out_dir)
        write_pgm(out / "view_a.pgm", pair.view_a)
        write_pgm(out / "view_b.pgm", pair.view_b)
        write_pgm(out / "mask.pgm", pair.pixel_mask())
        click.echo(f"Wrote view_a.pgm, view_b.pgm and mask.pgm to {out}")
        return

    path = Path(log_path) if log_path else Path(resolve_config({})["output"]["directory"]) / "metrics.log"
    if not path.exists():
        click.echo(f"Error: metrics log not found: {path}", err=True)
        ctx.exit(EXIT_RUNTIME)
    frame = read_metrics_log(path)
    if frame.empty or "diversity" not in frame or frame["diversity"].isna().all():
        click.echo(f"Error: no diversity values in {path}", err=True)
        ctx.exit(EXIT_RUNTIME)
    click.echo(frame[["iter", "diversity"]].dropna().to_string(index=False))


@cli.command()
@click.argument("name", type=click.Choice(sorted(EXPERIMENTS)))
@click.option("--config", "config_path", default=None, help="Run configuration")
@click.option("--seeds", type=int, default=None, help="Number of seeds (0..N-1)")
@click.option("--iterations", type=int, default=None, help="Iterations per training run")
@click.pass_context
def experiment(ctx, name, config_path, seeds, iterations):
    """Run a trend experiment; exits 1 when its check fails."""
    config = _resolve(ctx, config_path)
    setup_logging(config)
    kwargs: Dict[str, Any] = {"iterations": iterations}
    if seeds is not None:
        kwargs["seeds"] = tuple(range(seeds))
    try:
        result = EXPERIMENTS[name](config, **kwargs)
    except Exception as e:
        logger.error(f"Experiment {name} failed: {e}")
        click.echo(f"Error: {e}", err=True)
        ctx.exit(EXIT_RUNTIME)
    click.echo(result.summary())
    ctx.exit(0 if result.passed else EXIT_RUNTIME)
