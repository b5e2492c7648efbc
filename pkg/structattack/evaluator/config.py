# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import os
import argparse
from dataclasses import dataclass, field
from typing import List, Optional, Tuple
from loguru import logger

from structattack import constants as C
from structattack.cli.default_values import defaults
from structattack.constants import STUDENT_NAMESPACE, TEACHER_NAMESPACE
from structattack.evaluator.defenses import DefenseSpec, parse_defenses
from structattack.shared import logging as slogging
from structattack.shared.config import build_config, require
from structattack.shared.errors import ConfigurationError
from structattack.shared.utils import parse_int_list

DEFAULT_VICTIMS = defaults.eval.victims


def parse_epsilons(value) -> Tuple[float, ...]:
    if isinstance(value, (int, float)):
        return (float(value),)
    if isinstance(value, str):
        try:
            return tuple(float(v) for v in value.split(",") if v.strip())
        except ValueError:
            raise ConfigurationError(f"Malformed epsilon list '{value}'")
    return tuple(float(v) for v in value)


def parse_victims(value) -> List[str]:
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return list(value)


@dataclass
class EvalConfig:
    checkpoint: str
    victims: List[str] = field(default_factory=lambda: parse_victims(DEFAULT_VICTIMS))
    epsilon_test: Tuple[float, ...] = (C.EPSILON_TRAIN,)
    resolution: int = C.CROP_SIZE
    defenses: List[DefenseSpec] = field(default_factory=list)
    branch: str = TEACHER_NAMESPACE
    subset_size: Optional[int] = None
    batch_size: int = C.BATCH_SIZE
    seed: int = C.SEED
    device: str = "auto"
    num_workers: int = 0
    dump_records: bool = False
    pretrained: bool = True
    registry: Optional[str] = None
    seeds: Tuple[int, ...] = ()

    def __post_init__(self):
        self.victims = parse_victims(self.victims)
        self.seeds = (self.seeds,) if isinstance(self.seeds, int) else tuple(parse_int_list(self.seeds) or ())
        self.epsilon_test = parse_epsilons(self.epsilon_test)
        self.defenses = parse_defenses(self.defenses)

    @property
    def is_sweep(self) -> bool:
        return len(self.epsilon_test) > 1

    def validate(self):
        if not self.victims:
            raise ConfigurationError("No victim models given")
        if not self.epsilon_test:
            raise ConfigurationError("No test budget given")
        if any(e < 0 for e in self.epsilon_test):
            raise ConfigurationError(f"Test budgets must be >= 0, got {self.epsilon_test}")
        if self.branch not in (STUDENT_NAMESPACE, TEACHER_NAMESPACE):
            raise ConfigurationError(f"Unknown generator branch '{self.branch}'")
        if self.resolution < 1 or self.batch_size < 1:
            raise ConfigurationError("resolution and batch_size must be positive")
        if self.subset_size is not None and self.subset_size < 1:
            raise ConfigurationError("subset_size must be >= 1")
        if self.seeds and self.is_sweep:
            raise ConfigurationError("--eval.seeds needs a single test budget, not an epsilon sweep")
        for spec in self.defenses:
            spec.validate()
        return self

    def to_dict(self) -> dict:
        return {
            "checkpoint": self.checkpoint,
            "victims": list(self.victims),
            "epsilon_test": list(self.epsilon_test),
            "resolution": self.resolution,
            "defenses": [str(d) for d in self.defenses],
            "branch": self.branch,
            "subset_size": self.subset_size,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "seeds": list(self.seeds),
        }

    @classmethod
    def from_config(cls, config) -> "EvalConfig":
        return cls(
            checkpoint=config.eval.checkpoint,
            victims=config.eval.victims,
            epsilon_test=config.attack.eps,
            resolution=config.data.resolution,
            defenses=config.eval.defense or [],
            branch=config.eval.branch,
            subset_size=config.eval.subset,
            batch_size=config.eval.batch_size,
            seed=config.eval.seed,
            device=config.eval.device,
            num_workers=config.data.num_workers,
            dump_records=config.eval.dump_records,
            pretrained=not config.models.random_init,
            registry=config.models.registry,
            seeds=config.eval.seeds,
        ).validate()


def check_config(config):
    r"""Creates the report directory and its log sinks."""
    require(config, "eval.checkpoint", "data.root")
    config.eval.report = os.path.abspath(os.path.expanduser(config.eval.report))
    os.makedirs(config.eval.report, exist_ok=True)
    config.eval.manifest_path = os.path.join(config.eval.report, "manifest.json")
    config.eval.log_path = slogging.setup_logging(config, config.eval.report)
    logger.info(f"Writing reports to {config.eval.report}")


def add_args(parser: argparse.ArgumentParser):
    parser.add_argument(
        "--ckpt", "--eval.checkpoint", dest="eval.checkpoint", type=str, default=None,
        help="Generator checkpoint to evaluate.",
    )
    parser.add_argument(
        "--data", "--data.root", dest="data.root", type=str, default=None,
        help="Labeled evaluation images (class-folder layout).",
    )
    parser.add_argument("--data.split", type=str, default="val")
    parser.add_argument("--data.label_map", type=str, default=None,
                        help="JSON/YAML mapping class folder -> class id.")
    parser.add_argument("--data.num_workers", type=int, default=0)
    parser.add_argument(
        "--victims", "--eval.victims", dest="eval.victims", type=str, default=DEFAULT_VICTIMS,
        help="Comma-separated registered victim ids.",
    )
    parser.add_argument(
        "--eps", "--attack.eps", dest="attack.eps", type=str, default=str(int(C.EPSILON_TRAIN)),
        help="Test budget(s) in 8-bit units; a list such as 2,4,6,8,10,16 runs a sweep.",
    )
    parser.add_argument(
        "--resolution", "--data.resolution", dest="data.resolution", type=int, default=C.CROP_SIZE,
        help="Evaluation resolution (224 cross-model, 448 cross-domain).",
    )
    parser.add_argument(
        "--defense", "--eval.defense", dest="eval.defense", action="append", default=None,
        help="Defense applied to adversarial images, e.g. bdr:4, randomization, jpeg:75. Repeatable.",
    )
    parser.add_argument(
        "--report", "--eval.report", dest="eval.report", type=str, default=defaults.eval.report,
        help="Report output directory.",
    )
    parser.add_argument(
        "--branch", "--eval.branch", dest="eval.branch", type=str, default=TEACHER_NAMESPACE,
        choices=(TEACHER_NAMESPACE, STUDENT_NAMESPACE), help="Generator branch to attack with.",
    )
    parser.add_argument("--eval.subset", type=int, default=None, help="Evaluate only the first N images.")
    parser.add_argument("--eval.batch_size", type=int, default=C.BATCH_SIZE)
    parser.add_argument("--eval.seed", type=int, default=C.SEED, help="Seed for randomized defenses.")
    parser.add_argument(
        "--eval.seeds", type=str, default=None,
        help="Repeat the evaluation once per seed (e.g. 0,1,2 or 0-4) and report mean and std.",
    )
    parser.add_argument("--eval.device", type=str, default="auto")
    parser.add_argument("--eval.dump_records", action="store_true", default=False,
                        help="Write per-record CSV dumps (id, y, clean, adv).")
    parser.add_argument(
        "--registry", "--models.registry", dest="models.registry", type=str, default=None,
        help="YAML model registry extending the built-in one.",
    )
    parser.add_argument("--models.random_init", action="store_true", default=False,
                        help="Build victims without pretrained weights.")
    slogging.add_args(parser)


def config(args=None):
    parser = argparse.ArgumentParser()
    add_args(parser)
    return build_config(parser, args)
