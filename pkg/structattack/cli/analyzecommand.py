# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import os
import argparse
import torch
from munch import Munch
from loguru import logger

from structattack import constants as C
from structattack.analysis import figures, maps
from structattack.attack.projector import project
from structattack.cli.default_values import defaults
from structattack.constants import STUDENT_NAMESPACE, TEACHER_NAMESPACE
from structattack.data.dataset import ingest
from structattack.data.manifest import RunManifest
from structattack.models.generator import UNET_BOTTLENECK_BLOCK, resolve_blocks
from structattack.shared import logging as slogging
from structattack.shared.config import require
from structattack.shared.utils import resolve_device
from structattack.trainer.state import load_checkpoint, load_generator
from structattack.trainer.train import monitor_batch


def generator_maps(generator, x, blocks, eps):
    """Projected adversarial images, pooled maps per block and consecutive-block noise maps."""
    with torch.no_grad():
        x_adv, taps = generator(x)
    pooled = maps.pooled_activations(taps, blocks)
    noise = maps.consecutive_noise_maps(taps, blocks) if len(blocks) > 1 else []
    return project(x, x_adv, eps), pooled, noise


class AnalyzeCommand:
    """
    Render generator-internal diagnostics: per-block pooled activation maps,
    inter-block noise maps and, given a second checkpoint, difference masks
    (1 where the second generator's pooled activation is larger).

    Example usage:
    >>> structattack analyze --ckpt baseline.pth --ckpt-b ours.pth --images samples/ --blocks 1-6 --out figs/
    """

    @staticmethod
    def run(cli):
        config = cli.config
        device = resolve_device(config.analyze.device)
        ckpt_a = load_checkpoint(config.analyze.checkpoint)
        unet = ckpt_a.generator.get("architecture") == "unet"
        blocks = (
            (UNET_BOTTLENECK_BLOCK,)
            if unet
            else resolve_blocks(config.analyze.blocks, ckpt_a.generator["num_residual_blocks"])
        )

        handle = ingest(config.data.root, "val", config.data.resolution)
        x = monitor_batch(handle, config.analyze.limit).to(device)

        out = config.analyze.out
        generator_a = load_generator(ckpt_a, config.analyze.branch, device=device, tap_blocks=blocks)
        x_adv, pooled_a, noise_a = generator_maps(generator_a, x, blocks, config.analyze.eps)
        entries = figures.emit_perturbations(x, x_adv, out)
        entries += figures.emit_figures(list(pooled_a.values()) + noise_a, out, prefix="a_")

        if config.analyze.checkpoint_b:
            ckpt_b = load_checkpoint(config.analyze.checkpoint_b)
            generator_b = load_generator(ckpt_b, config.analyze.branch, device=device, tap_blocks=blocks)
            _, pooled_b, noise_b = generator_maps(generator_b, x, blocks, config.analyze.eps)
            entries += figures.emit_figures(list(pooled_b.values()) + noise_b, out, prefix="b_")
            masks = {block: maps.diff_mask(pooled_a[block], pooled_b[block]) for block in blocks}
            entries += figures.emit_masks(masks, out)

        if config.analyze.events:
            for path in figures.plot_training_log(config.analyze.events, out):
                entries.append({"file": os.path.basename(path), "kind": "training_log"})

        figures.write_manifest(
            entries,
            out,
            checkpoint=config.analyze.checkpoint,
            checkpoint_b=config.analyze.checkpoint_b,
            blocks=list(blocks),
            branch=config.analyze.branch,
        )
        RunManifest.create(
            "analyze",
            config,
            inputs=[config.analyze.checkpoint, config.analyze.checkpoint_b],
        ).finish().save(os.path.join(out, "run_manifest.json"))

    @staticmethod
    def check_config(config: Munch):
        require(config, "analyze.checkpoint", "data.root")
        config.analyze.out = os.path.abspath(os.path.expanduser(config.analyze.out))
        os.makedirs(config.analyze.out, exist_ok=True)
        slogging.setup_logging(config, config.analyze.out)
        logger.info(f"Writing figures to {config.analyze.out}")

    @staticmethod
    def add_args(parser: argparse._SubParsersAction):
        analyze_parser = parser.add_parser(
            "analyze", aliases=["a"], help="""Render generator feature maps and difference masks."""
        )
        analyze_parser.add_argument("--config", type=str, default=None, help="YAML config file.")
        analyze_parser.add_argument(
            "--ckpt", "--analyze.checkpoint", dest="analyze.checkpoint", type=str, default=None,
            help="Generator checkpoint (plays the baseline in difference masks).",
        )
        analyze_parser.add_argument(
            "--ckpt-b", "--analyze.checkpoint_b", dest="analyze.checkpoint_b", type=str, default=None,
            help="Second checkpoint compared against the first.",
        )
        analyze_parser.add_argument(
            "--images", "--data.root", dest="data.root", type=str, default=None,
            help="Folder of input images.",
        )
        analyze_parser.add_argument(
            "--blocks", "--analyze.blocks", dest="analyze.blocks", type=str, default=defaults.analyze.blocks,
            help="Residual blocks to map: index list/range (1-6) or early|mid|late|all.",
        )
        analyze_parser.add_argument(
            "--out", "--analyze.out", dest="analyze.out", type=str, default=defaults.analyze.out,
            help="Figure output directory.",
        )
        analyze_parser.add_argument(
            "--branch", "--analyze.branch", dest="analyze.branch", type=str, default=TEACHER_NAMESPACE,
            choices=(TEACHER_NAMESPACE, STUDENT_NAMESPACE),
        )
        analyze_parser.add_argument(
            "--events", "--analyze.events", dest="analyze.events", type=str, default=None,
            help="Training log (events.jsonl) to plot.",
        )
        analyze_parser.add_argument("--analyze.limit", type=int, default=defaults.analyze.limit,
                                    help="Number of images to analyze.")
        analyze_parser.add_argument("--analyze.eps", type=float, default=C.EPSILON_TRAIN,
                                    help="Budget for the rendered adversarial images.")
        analyze_parser.add_argument(
            "--resolution", "--data.resolution", dest="data.resolution", type=int, default=C.CROP_SIZE
        )
        analyze_parser.add_argument("--analyze.device", type=str, default="auto")
        slogging.add_args(analyze_parser)
