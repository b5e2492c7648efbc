# The MIT License (MIT)
# Copyright © 2024 structattack contributors

# Utils for checkpointing the generator pair and logging training events.
import os
import copy
import json
import torch
import torch.nn as nn
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple, Union
from loguru import logger

from structattack import __version__ as THIS_VERSION
from structattack import StructAttackVersion
from structattack.constants import CHECKPOINT_FORMAT_VERSION, STUDENT_NAMESPACE, TEACHER_NAMESPACE
from structattack.models.generator import GeneratorConfig, PerturbationGenerator, build_generator
from structattack.shared.errors import CheckpointVersionError, ConfigurationError, DataError
from structattack.shared.logging import EVENTS_LEVEL, ensure_events_level
from structattack.trainer.event import LossEvent

BRANCHES = (STUDENT_NAMESPACE, TEACHER_NAMESPACE)


@dataclass
class GeneratorCheckpoint:
    """Everything needed to run the generator or to resume training bit-for-bit."""

    config: dict  # TrainConfig.to_dict()
    generator: dict  # GeneratorConfig.to_dict()
    surrogate: dict  # SurrogateSpec.to_dict()
    student: dict  # student state_dict
    teacher: Optional[dict] = None  # teacher state_dict, None in baseline mode
    teacher_step_count: int = 0
    weight_logits: Optional[torch.Tensor] = None
    optimizer: Optional[dict] = None
    step: int = 0
    epoch: int = 0
    seed: int = 0
    rng_state: Optional[dict] = None
    log: List[dict] = field(default_factory=list)
    monitor_history: List[list] = field(default_factory=list)  # [updates applied, monitor cosine]
    format_version: str = CHECKPOINT_FORMAT_VERSION
    package_version: str = THIS_VERSION

    @property
    def mode(self) -> str:
        return self.config.get("ablation_mode", "full")

    def flat_parameters(self) -> dict:
        """Parameters keyed `student.<path>` / `teacher.<path>`."""
        flat = {f"{STUDENT_NAMESPACE}.{k}": v for k, v in self.student.items()}
        if self.teacher is not None:
            flat.update({f"{TEACHER_NAMESPACE}.{k}": v for k, v in self.teacher.items()})
        return flat


def should_checkpoint(current_step: int, prev_checkpoint_step: int, checkpoint_every: int) -> bool:
    # Check if enough iterations have elapsed since the last checkpoint.
    return current_step - prev_checkpoint_step >= checkpoint_every


def save_checkpoint(ckpt: GeneratorCheckpoint, path: str) -> str:
    r"""Writes the checkpoint atomically (temp file then rename)."""
    path = os.path.expanduser(path)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp_path = f"{path}.tmp"
    torch.save(asdict(ckpt), tmp_path)
    os.replace(tmp_path, path)
    logger.success(f"Saved checkpoint at step {ckpt.step}: {path}")
    return path


def check_version(format_version: str):
    try:
        found = StructAttackVersion.from_string(str(format_version))
    except ValueError:
        raise CheckpointVersionError(f"Unreadable checkpoint format version '{format_version}'")
    expected = StructAttackVersion.from_string(CHECKPOINT_FORMAT_VERSION)
    if not expected.is_compatible(found):
        raise CheckpointVersionError(
            f"Checkpoint format {found} is incompatible with this release (expects {expected.major}.x.x)"
        )


def load_checkpoint(path: str, map_location: Union[str, torch.device] = "cpu") -> GeneratorCheckpoint:
    r"""Load a generator checkpoint, refusing incompatible format versions."""
    path = os.path.expanduser(path)
    if not os.path.isfile(path):
        raise DataError(f"Checkpoint does not exist: {path}")
    try:
        raw = torch.load(path, map_location=map_location, weights_only=False)
    except Exception as e:
        raise DataError(f"Failed to read checkpoint {path}: {e}")
    if not isinstance(raw, dict) or "format_version" not in raw:
        raise CheckpointVersionError(f"{path} is not a generator checkpoint")
    check_version(raw["format_version"])

    known = GeneratorCheckpoint.__dataclass_fields__.keys()
    ckpt = GeneratorCheckpoint(**{k: v for k, v in raw.items() if k in known})
    logger.info(
        f"Loaded checkpoint {path} (format {ckpt.format_version}, mode {ckpt.mode}, step {ckpt.step})"
    )
    return ckpt


def load_generator(
    ckpt: Union[GeneratorCheckpoint, str],
    branch: str = TEACHER_NAMESPACE,
    device: Union[str, torch.device] = "cpu",
    tap_blocks: Optional[Tuple[int, ...]] = None,
) -> PerturbationGenerator:
    """
    Rebuild one generator from a checkpoint in eval mode.

    Baseline checkpoints carry no teacher; asking for it falls back to the
    student with a warning. `tap_blocks` re-taps other blocks (taps hold no
    parameters).
    """
    if isinstance(ckpt, str):
        ckpt = load_checkpoint(ckpt)
    if branch not in BRANCHES:
        raise ConfigurationError(f"Unknown generator branch '{branch}', expected one of {BRANCHES}")

    state = ckpt.student
    if branch == TEACHER_NAMESPACE:
        if ckpt.teacher is None:
            logger.warning("Checkpoint has no teacher branch (baseline mode); using the student")
        else:
            state = ckpt.teacher

    generator_config = GeneratorConfig.from_dict(dict(ckpt.generator))
    if tap_blocks is not None:
        generator_config.tap_blocks = tuple(sorted(set(tap_blocks)))
    generator = build_generator(generator_config)
    generator.load_state_dict(state)
    generator.requires_grad_(False)
    return generator.to(device).eval()


def init_wandb(self, reinit=False):
    """Starts a new wandb run."""
    import wandb

    tags = [THIS_VERSION, self.config.ablation_mode, self.surrogate_spec.model_id]
    wandb_config = copy.deepcopy(self.config.to_dict())
    wandb_config["surrogate"] = self.surrogate_spec.to_dict()

    self.wandb = wandb.init(
        anonymous="allow",
        reinit=reinit,
        project=self.wandb_settings.project_name,
        entity=self.wandb_settings.entity,
        config=wandb_config,
        mode="offline" if self.wandb_settings.offline else "online",
        dir=self.run_dir,
        tags=tags,
        notes=self.wandb_settings.notes,
    )
    logger.success(f"Started a new wandb run {self.wandb.name}")


def save_event_to_json(event: dict, path: str):
    with open(path, "a") as f:
        f.write(json.dumps(event) + "\n")


def read_events(path: str) -> List[LossEvent]:
    with open(path, "r") as f:
        return [LossEvent.from_dict(json.loads(line)) for line in f if line.strip()]


def log_event(self, event: LossEvent):
    ensure_events_level()
    event_dict = asdict(event)
    logger.log(EVENTS_LEVEL, "events", **event_dict)

    if self.events_path is not None:
        save_event_to_json(event_dict, self.events_path)

    if self.wandb is not None:
        self.wandb.log(event_dict, step=event.iteration)


def count_trainable(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
