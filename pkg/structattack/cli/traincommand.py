# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import argparse
from munch import Munch
from loguru import logger
from rich.console import Console
from rich.table import Table

from structattack.data.dataset import ingest
from structattack.data.manifest import RunManifest
from structattack.models.registry import configure_cache, get_entry, load_registry
from structattack.models.surrogate import SurrogateSpec, resolve_layer
from structattack.shared.config import is_set
from structattack.trainer import config as trainer_config
from structattack.trainer.config import TrainConfig
from structattack.trainer.train import monitor_batch, resume, train


def print_summary(ckpt, path: str):
    console = Console()
    table = Table(show_header=True, header_style="bold magenta", title="Training summary")
    table.add_column("Field", style="dim")
    table.add_column("Value")
    last = ckpt.log[-1] if ckpt.log else {}
    table.add_row("checkpoint", path)
    table.add_row("mode", ckpt.mode)
    table.add_row("iterations", str(ckpt.step))
    table.add_row("final adv", f"{last.get('adv', float('nan')):.4f}")
    table.add_row("final distill", f"{last.get('distill', float('nan')):.4f}")
    if ckpt.monitor_history:
        table.add_row(
            "monitor cosine",
            f"{ckpt.monitor_history[0][1]:.4f} -> {ckpt.monitor_history[-1][1]:.4f}",
        )
    console.print(table)


class TrainCommand:
    """
    Train a perturbation generator against a frozen surrogate.

    Example usage:
    >>> structattack train --data ~/imagenet --surrogate vgg16 --eps 10 --lambda 0.7 \\
    ...     --tau 0.6 --eta 0.999 --early 1,2 --mode full --iters 500 --seed 0 --out ckpt.pth
    """

    @staticmethod
    def run(cli):
        r"""Ingests the data, builds the surrogate and runs (or resumes) training."""
        config = cli.config
        cfg = TrainConfig.from_config(config)

        configure_cache()
        registry = load_registry(config.models.registry)
        handle = ingest(
            config.data.root,
            config.data.split,
            config.data.resolution,
            verify=not config.data.no_verify,
        ).head(config.data.limit)
        monitor_handle = (
            ingest(config.monitor.root, "val", config.data.resolution) if config.monitor.root else handle
        )

        entry = get_entry(config.surrogate.model_id, registry)
        layer = resolve_layer(entry.id, config.surrogate.layer, registry)
        surrogate_spec = SurrogateSpec.from_entry(entry, layer)

        manifest = RunManifest.create(
            "train",
            config,
            seed=cfg.seed,
            inputs=[config.get("config"), config.train.resume],
        )
        kwargs = dict(
            monitor=monitor_batch(monitor_handle, cfg.monitor_size),
            run_dir=config.train.full_path,
            checkpoint_path=config.train.out,
            events_path=config.train.events_path,
            wandb_settings=Munch(config.wandb) if config.wandb.on else None,
            profile_path=config.train.profile_path if config.train.profile else None,
        )
        pretrained = not config.models.random_init

        if config.train.resume:
            max_iters = cfg.max_iters if is_set(config, "train.max_iters") else None
            logger.info(f"Resuming from {config.train.resume}")
            ckpt = resume(
                config.train.resume,
                handle,
                registry=registry,
                pretrained=pretrained,
                max_iters=max_iters,
                **kwargs,
            )
        else:
            ckpt = train(cfg, handle, surrogate_spec, registry=registry, pretrained=pretrained, **kwargs)

        manifest.finish().save(config.train.manifest_path)
        print_summary(ckpt, config.train.out)

    @staticmethod
    def check_config(config: Munch):
        trainer_config.check_config(config)

    @staticmethod
    def add_args(parser: argparse._SubParsersAction):
        train_parser = parser.add_parser(
            "train", aliases=["t"], help="""Train a generator (student + mean teacher)."""
        )
        train_parser.add_argument("--config", type=str, default=None, help="YAML config file.")
        trainer_config.add_args(train_parser)
