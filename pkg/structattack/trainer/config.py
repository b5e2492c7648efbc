# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import os
import argparse
from dataclasses import dataclass, field, asdict
from typing import Optional, Tuple
from loguru import logger

from structattack import constants as C
from structattack.cli.default_values import defaults
from structattack.models.generator import GeneratorConfig, resolve_blocks
from structattack.shared import logging as slogging
from structattack.shared.config import build_config, require
from structattack.shared.errors import ConfigurationError

ABLATION_MODES = ("baseline", "mt_only", "full")


@dataclass
class TrainConfig:
    epochs: int = C.EPOCHS
    batch_size: int = C.BATCH_SIZE
    learning_rate: float = C.LEARNING_RATE
    optimizer_betas: Tuple[float, float] = C.ADAM_BETAS
    epsilon_train: float = C.EPSILON_TRAIN
    lambda_distill: float = C.LAMBDA_DISTILL
    tau: float = C.TAU
    eta: float = C.ETA
    early_blocks: Tuple[int, ...] = C.EARLY_BLOCKS
    seed: int = C.SEED
    checkpoint_every: int = 1000
    ablation_mode: str = "full"
    max_iters: Optional[int] = None
    log_every: int = 10
    monitor_every: int = 100
    monitor_size: int = 16
    per_sample_hinge: bool = False
    spatial_cosine: bool = False
    strict_cosine: bool = False
    deterministic: bool = False
    check_frozen: bool = False
    num_workers: int = 0
    device: str = "auto"
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)

    def __post_init__(self):
        self.early_blocks = tuple(self.early_blocks)
        self.optimizer_betas = tuple(self.optimizer_betas)
        if isinstance(self.generator, dict):
            self.generator = GeneratorConfig.from_dict(self.generator)

    @property
    def keeps_teacher(self) -> bool:
        return self.ablation_mode in ("mt_only", "full")

    @property
    def distill_enabled(self) -> bool:
        return self.ablation_mode == "full"

    @property
    def effective_lambda(self) -> float:
        return self.lambda_distill if self.distill_enabled else 0.0

    def validate(self):
        if self.ablation_mode not in ABLATION_MODES:
            raise ConfigurationError(
                f"Unknown ablation mode '{self.ablation_mode}', expected one of {ABLATION_MODES}"
            )
        for name in ("epochs", "batch_size", "checkpoint_every", "log_every", "monitor_every", "monitor_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.max_iters is not None and self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        if not all(0.0 <= b < 1.0 for b in self.optimizer_betas):
            raise ConfigurationError(f"Adam betas must be in [0, 1), got {self.optimizer_betas}")
        if self.epsilon_train < 0:
            raise ConfigurationError("epsilon_train must be >= 0")
        if self.lambda_distill < 0:
            raise ConfigurationError("lambda_distill must be >= 0")
        if not -1.0 <= self.tau <= 1.0:
            raise ConfigurationError("tau must be in [-1, 1]")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigurationError("eta must be in [0, 1]")
        if self.distill_enabled and not self.early_blocks:
            raise ConfigurationError("Full mode needs at least one distilled block")
        self.generator.validate()
        missing = set(self.early_blocks) - set(self.generator.tap_blocks)
        if self.distill_enabled and missing:
            raise ConfigurationError(f"Distilled blocks {sorted(missing)} are not tapped by the generator")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["generator"] = self.generator.to_dict()
        d["early_blocks"] = list(self.early_blocks)
        d["optimizer_betas"] = list(self.optimizer_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    @classmethod
    def from_config(cls, config) -> "TrainConfig":
        """Build from the parsed command-line Munch (see `add_args`)."""
        architecture = config.generator.architecture
        num_blocks = config.generator.num_blocks
        early = config.train.early
        if architecture == "unet" and early in ("1,2", "early"):
            early = "bottleneck"
        early_blocks = resolve_blocks(early, num_blocks)

        generator = GeneratorConfig(
            architecture=architecture,
            base_width=config.generator.base_width,
            num_residual_blocks=num_blocks,
            tap_blocks=early_blocks,
            unet_depth=config.generator.unet_depth,
        )
        return cls(
            epochs=config.train.epochs,
            batch_size=config.train.batch_size,
            learning_rate=config.train.lr,
            optimizer_betas=(config.train.beta1, config.train.beta2),
            epsilon_train=config.attack.eps,
            lambda_distill=config.train.lambda_distill,
            tau=config.train.tau,
            eta=config.train.eta,
            early_blocks=early_blocks,
            seed=config.train.seed,
            checkpoint_every=config.train.checkpoint_every,
            ablation_mode=config.train.mode,
            max_iters=config.train.max_iters,
            log_every=config.train.log_every,
            monitor_every=config.train.monitor_every,
            monitor_size=config.monitor.size,
            per_sample_hinge=config.train.per_sample_hinge,
            spatial_cosine=config.train.spatial_cosine,
            strict_cosine=config.train.strict_cosine,
            deterministic=config.train.deterministic,
            check_frozen=config.train.check_frozen,
            num_workers=config.data.num_workers,
            device=config.train.device,
            generator=generator,
        ).validate()


def check_config(config):
    r"""Checks/validates the config namespace object and derives output paths."""
    require(config, "data.root", "train.out")
    out = os.path.expanduser(config.train.out)
    full_path = os.path.dirname(os.path.abspath(out))
    stem = os.path.splitext(os.path.basename(out))[0]
    os.makedirs(full_path, exist_ok=True)

    config.train.out = out
    config.train.full_path = full_path
    config.train.events_path = os.path.join(full_path, f"{stem}.events.jsonl")
    config.train.manifest_path = os.path.join(full_path, f"{stem}.manifest.json")
    config.train.profile_path = os.path.join(full_path, f"{stem}.profile.html")
    config.train.log_path = slogging.setup_logging(config, full_path)

    logger.info(f"Loaded config in fullpath: {full_path}")


def add_args(parser: argparse.ArgumentParser):
    # Data
    parser.add_argument(
        "--data", "--data.root", dest="data.root", type=str, default=None,
        help="Training image root (class-folder layout, or flat folder).",
    )
    parser.add_argument("--data.split", type=str, default="train", help="Split subfolder to use if present.")
    parser.add_argument("--data.resolution", type=int, default=C.CROP_SIZE, help="Training crop size.")
    parser.add_argument("--data.limit", type=int, default=None, help="Use only the first N images.")
    parser.add_argument("--data.num_workers", type=int, default=0, help="DataLoader worker processes.")
    parser.add_argument(
        "--data.no_verify", action="store_true", default=False,
        help="Skip decoding every image at ingest time.",
    )
    parser.add_argument(
        "--monitor", "--monitor.root", dest="monitor.root", type=str, default=None,
        help="Held-out images for the monitor cosine (defaults to the first training images).",
    )
    parser.add_argument("--monitor.size", type=int, default=defaults.monitor.size, help="Number of monitor images.")

    # Surrogate
    parser.add_argument(
        "--surrogate", "--surrogate.model_id", dest="surrogate.model_id", type=str,
        default=C.SURROGATE_ID, help="Registered id of the frozen surrogate classifier.",
    )
    parser.add_argument(
        "--surrogate.layer", type=str, default=str(C.SURROGATE_LAYER),
        help="Feature layer: index into `features` (VGG) or a module name.",
    )
    parser.add_argument(
        "--registry", "--models.registry", dest="models.registry", type=str, default=None,
        help="YAML model registry extending the built-in one.",
    )
    parser.add_argument("--models.random_init", action="store_true", default=False,
                        help="Build the surrogate without pretrained weights.")

    # Attack / objectives
    parser.add_argument(
        "--eps", "--attack.eps", dest="attack.eps", type=float, default=C.EPSILON_TRAIN,
        help="Training L-inf budget in 8-bit pixel units.",
    )
    parser.add_argument(
        "--lambda", "--train.lambda_distill", dest="train.lambda_distill", type=float,
        default=C.LAMBDA_DISTILL, help="Weight of the distillation loss.",
    )
    parser.add_argument("--tau", "--train.tau", dest="train.tau", type=float, default=C.TAU, help="Hinge threshold.")
    parser.add_argument("--eta", "--train.eta", dest="train.eta", type=float, default=C.ETA, help="EMA decay.")
    parser.add_argument(
        "--early", "--train.early", dest="train.early", type=str, default="1,2",
        help="Distilled generator blocks: index list (1,2) or early|mid|late|all.",
    )
    parser.add_argument(
        "--mode", "--train.mode", dest="train.mode", type=str, default="full",
        choices=ABLATION_MODES, help="Ablation mode.",
    )
    parser.add_argument("--train.per_sample_hinge", action="store_true", default=False,
                        help="Hinge each sample's cosine before averaging.")
    parser.add_argument("--train.spatial_cosine", action="store_true", default=False,
                        help="Location-wise cosine over channels instead of whole-feature cosine.")
    parser.add_argument("--train.strict_cosine", action="store_true", default=False,
                        help="Fail on zero-norm features instead of warning and taking cosine 0.")

    # Optimization
    parser.add_argument("--iters", "--train.max_iters", dest="train.max_iters", type=int, default=None,
                        help="Stop after this many iterations.")
    parser.add_argument("--seed", "--train.seed", dest="train.seed", type=int, default=C.SEED, help="Run seed.")
    parser.add_argument("--out", "--train.out", dest="train.out", type=str, default=defaults.train.out,
                        help="Checkpoint path.")
    parser.add_argument("--train.epochs", type=int, default=C.EPOCHS)
    parser.add_argument("--train.batch_size", type=int, default=C.BATCH_SIZE)
    parser.add_argument("--train.lr", type=float, default=C.LEARNING_RATE)
    parser.add_argument("--train.beta1", type=float, default=C.ADAM_BETAS[0])
    parser.add_argument("--train.beta2", type=float, default=C.ADAM_BETAS[1])
    parser.add_argument("--train.checkpoint_every", type=int, default=defaults.train.checkpoint_every,
                        help="Iterations between checkpoints.")
    parser.add_argument("--train.log_every", type=int, default=defaults.train.log_every,
                        help="Iterations between console loss lines (the event log gets every iteration).")
    parser.add_argument("--train.monitor_every", type=int, default=defaults.monitor.every,
                        help="Iterations between monitor cosine measurements.")
    parser.add_argument("--train.device", type=str, default="auto")
    parser.add_argument("--train.deterministic", action="store_true", default=False,
                        help="Request deterministic kernels.")
    parser.add_argument("--train.check_frozen", action="store_true", default=False,
                        help="Checksum teacher and surrogate around every update.")
    parser.add_argument("--train.profile", action="store_true", default=False,
                        help="Profile the training loop with pyinstrument.")
    parser.add_argument("--train.resume", type=str, default=None, help="Checkpoint to resume from.")

    # Generator
    parser.add_argument("--generator.architecture", type=str, default="resnet", choices=("resnet", "unet"))
    parser.add_argument("--generator.base_width", type=int, default=C.BASE_WIDTH)
    parser.add_argument("--generator.num_blocks", type=int, default=C.NUM_RESIDUAL_BLOCKS)
    parser.add_argument("--generator.unet_depth", type=int, default=C.UNET_DEPTH)

    # Wandb
    parser.add_argument("--wandb.on", action="store_true", default=False, help="Log to wandb.")
    parser.add_argument("--wandb.project_name", type=str, default=defaults.wandb.project_name)
    parser.add_argument("--wandb.entity", type=str, default=None)
    parser.add_argument("--wandb.offline", action="store_true", default=False)
    parser.add_argument("--wandb.notes", type=str, default="")

    slogging.add_args(parser)


def config(args=None):
    parser = argparse.ArgumentParser()
    add_args(parser)
    return build_config(parser, args)
