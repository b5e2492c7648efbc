# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import argparse
from munch import Munch
from rich.console import Console

from structattack.data.dataset import ingest, load_label_map
from structattack.data.manifest import RunManifest
from structattack.evaluator import config as evaluator_config
from structattack.evaluator.config import EvalConfig
from structattack.evaluator.evaluate import epsilon_sweep, evaluate, seed_trials, victim_class_count
from structattack.evaluator.report import render_table, write_reports, write_seed_trials, write_sweep
from structattack.models.registry import load_registry
from structattack.shared.errors import StructAttackError


class EvalCommand:
    """
    Attack labeled images with a trained generator and score victim models.

    Example usage:
    >>> structattack eval --ckpt ckpt.pth --data ~/imagenet --victims resnet50,densenet121 \\
    ...     --eps 10 --resolution 224 --defense bdr:4 --report out/

    A comma-separated `--eps 2,4,6,8,10,16` runs an epsilon sweep;
    `--eval.seeds 0-4` repeats one budget over seeds and reports mean and std.
    """

    @staticmethod
    def run(cli):
        config = cli.config
        cfg = EvalConfig.from_config(config)
        handle = ingest(
            config.data.root,
            config.data.split,
            cfg.resolution,
            label_map=load_label_map(config.data.label_map),
            num_classes=victim_class_count(cfg.victims, load_registry(cfg.registry)),
        )
        manifest = RunManifest.create(
            "eval", config, seed=cfg.seed, inputs=[cfg.checkpoint, config.get("config")]
        )
        console = Console()

        if cfg.seeds:
            trials = seed_trials(cfg, handle, cfg.seeds)
            write_seed_trials(trials, config.eval.report, cfg.to_dict())
            console.print(render_table(trials.table, title=f"eps={cfg.epsilon_test[0]:g}, seeds {list(cfg.seeds)}"))
            evaluated = any(len(r) for r in trials.results.values())
        elif cfg.is_sweep:
            sweep = epsilon_sweep(cfg, handle)
            write_sweep(sweep, config.eval.report, cfg.to_dict())
            console.print(render_table(sweep.table, title="attacked accuracy by epsilon"))
            evaluated = any(len(r) for r in sweep.results.values())
        else:
            result = evaluate(cfg, handle)
            write_reports(result, config.eval.report, cfg.to_dict())
            console.print(render_table(result.table(), title=f"eps={result.epsilon:g}"))
            evaluated = len(result) > 0

        manifest.finish().save(config.eval.manifest_path)
        if not evaluated:
            raise StructAttackError("No victim could be evaluated; see the report errors")

    @staticmethod
    def check_config(config: Munch):
        evaluator_config.check_config(config)

    @staticmethod
    def add_args(parser: argparse._SubParsersAction):
        eval_parser = parser.add_parser(
            "eval", aliases=["e", "evaluate"], help="""Evaluate a generator against victim models."""
        )
        eval_parser.add_argument("--config", type=str, default=None, help="YAML config file.")
        evaluator_config.add_args(eval_parser)
