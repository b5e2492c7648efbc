# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import os
import json
import math
import time
import torch
import torch.nn as nn
from dataclasses import asdict
from munch import Munch
from typing import List, Optional, Union
from loguru import logger
from pyinstrument import Profiler
from torch.utils.data import DataLoader, Subset

from structattack.attack.objectives import (
    DistillConfig,
    LossBreakdown,
    block_weights,
    compute_losses,
    cosine,
)
from structattack.attack.projector import PerturbationBudget, project
from structattack.data.dataset import DatasetHandle, ImageDataset
from structattack.models.generator import PerturbationGenerator, build_generator
from structattack.models.mean_teacher import EMAConfig, MeanTeacher
from structattack.models.surrogate import Surrogate, SurrogateSpec, load_surrogate
from structattack.shared.errors import EmptyDatasetError, NumericsError, StructuralError
from structattack.shared.utils import (
    get_rng_state,
    parameter_checksum,
    resolve_device,
    seed_everything,
    set_rng_state,
)
from structattack.trainer.config import TrainConfig
from structattack.trainer.event import LossEvent
from structattack.trainer.state import (
    GeneratorCheckpoint,
    count_trainable,
    init_wandb,
    load_checkpoint,
    log_event,
    save_checkpoint,
    should_checkpoint,
)


def epoch_order(num_samples: int, seed: int, epoch: int) -> torch.Tensor:
    """Sample order for `epoch`; a pure function of (seed, epoch) so resumed runs see the same batches."""
    generator = torch.Generator()
    generator.manual_seed(seed)
    order = None
    for _ in range(epoch + 1):
        order = torch.randperm(num_samples, generator=generator)
    return order


def monitor_batch(handle: DatasetHandle, size: int) -> torch.Tensor:
    """First `size` images of `handle` in ingest order."""
    dataset = ImageDataset(handle)
    count = min(size, len(dataset))
    if count == 0:
        raise EmptyDatasetError(f"No monitor images in {handle.root}")
    return torch.stack([dataset[i][0] for i in range(count)])


@torch.no_grad()
def monitor_cosine(
    generator: PerturbationGenerator,
    surrogate: Surrogate,
    x: torch.Tensor,
    budget: Union[PerturbationBudget, float],
) -> float:
    """Mean surrogate-feature cosine between `x` and its projected adversarial version."""
    x_adv, _ = generator(x)
    x_adv = project(x, x_adv, budget)
    return float(cosine(surrogate.features(x), surrogate.features(x_adv)).mean())


def _stats(t: torch.Tensor) -> dict:
    t = t.detach().float()
    return {
        "mean": float(t.mean()),
        "std": float(t.std()) if t.numel() > 1 else 0.0,
        "min": float(t.min()),
        "max": float(t.max()),
        "nonfinite": int((~torch.isfinite(t)).sum()),
    }


class Trainer:
    """
    Trains a perturbation generator against a frozen surrogate.

    One iteration: student forward (keeping its early-block taps), teacher
    taps, decode, project onto the budget, surrogate features of the benign
    and projected images, loss, one Adam step on the student (and the block
    weight logits), then the EMA update of the teacher.

    Modes: `baseline` keeps no teacher, `mt_only` keeps the EMA teacher but
    does not distill, `full` does both.

    Attributes:
        student (PerturbationGenerator): Generator updated by the optimizer.
        teacher (MeanTeacher): EMA copy of the student, None in baseline mode.
        surrogate (Surrogate): Frozen classifier whose mid-layer features are attacked.
        distill_cfg (DistillConfig): Hinge threshold, lambda, distilled blocks and weight logits.
        step (int): Number of optimizer steps applied.
        log (list): One LossEvent dict per iteration.
    """

    def __init__(
        self,
        config: TrainConfig,
        handle: DatasetHandle,
        surrogate: Surrogate,
        monitor: Optional[torch.Tensor] = None,
        run_dir: Optional[str] = None,
        checkpoint_path: Optional[str] = None,
        events_path: Optional[str] = None,
        wandb_settings: Optional[Munch] = None,
        profile_path: Optional[str] = None,
    ):
        self.config = config.validate()
        if len(handle) == 0:
            raise EmptyDatasetError(f"No training images in {handle.root}")

        self.device = resolve_device(config.device)
        self.handle = handle
        self.dataset = ImageDataset(handle)
        self.run_dir = run_dir
        self.checkpoint_path = checkpoint_path
        self.events_path = events_path
        self.profile_path = profile_path
        self.wandb_settings = wandb_settings
        self.wandb = None

        self.surrogate = surrogate.to(self.device).eval()
        self.surrogate.requires_grad_(False)
        self.surrogate_spec = surrogate.spec

        seed_everything(config.seed, config.deterministic)
        self.budget = PerturbationBudget(config.epsilon_train)
        self.student = build_generator(config.generator).to(self.device).train()
        self.teacher = (
            MeanTeacher(self.student, EMAConfig(config.eta)) if config.keeps_teacher else None
        )
        self.distill_cfg = DistillConfig(
            tau=config.tau,
            lambda_distill=config.effective_lambda,
            early_blocks=config.early_blocks,
            weight_logits=nn.Parameter(torch.zeros(len(config.early_blocks), device=self.device)),
            per_sample_hinge=config.per_sample_hinge,
            spatial_cosine=config.spatial_cosine,
            strict_cosine=config.strict_cosine,
        ).validate()

        params = list(self.student.parameters())
        if config.distill_enabled:
            params.append(self.distill_cfg.weight_logits)
        self.optimizer = torch.optim.Adam(
            params, lr=config.learning_rate, betas=config.optimizer_betas
        )

        self.monitor = monitor.to(self.device) if monitor is not None else None
        self.monitor_history: List[list] = []
        self.log: List[dict] = []
        self.step = 0
        self.epoch = 0
        self.last_checkpoint_step = 0

        logger.info(
            f"Trainer mode={config.ablation_mode} images={len(handle)} "
            f"iterations={self.total_iterations} eps={config.epsilon_train}/255 "
            f"trainable={count_trainable(self.student)} "
            f"device={self.device}"
        )

    @property
    def iterations_per_epoch(self) -> int:
        return math.ceil(len(self.dataset) / self.config.batch_size)

    @property
    def total_iterations(self) -> int:
        if self.config.max_iters is not None:
            return self.config.max_iters
        return self.config.epochs * self.iterations_per_epoch

    @property
    def inference_generator(self) -> PerturbationGenerator:
        return self.teacher.module if self.teacher is not None else self.student

    def batches(self, epoch: int, start_batch: int = 0) -> DataLoader:
        order = epoch_order(len(self.dataset), self.config.seed, epoch)
        order = order[start_batch * self.config.batch_size :].tolist()
        return DataLoader(
            Subset(self.dataset, order),
            batch_size=self.config.batch_size,
            shuffle=False,
            num_workers=self.config.num_workers,
            pin_memory=self.device.type == "cuda",
        )

    def _frozen_checksums(self) -> dict:
        sums = {"surrogate": parameter_checksum(self.surrogate)}
        if self.teacher is not None:
            sums["teacher"] = parameter_checksum(self.teacher.module)
        return sums

    def check_finite(self, losses: LossBreakdown, x, x_adv, indices=None):
        values = losses.as_floats()
        if all(math.isfinite(values[k]) for k in ("adv", "distill", "total")):
            return
        diagnostics = {
            "iteration": self.step,
            "epoch": self.epoch,
            "losses": values,
            "x": _stats(x),
            "x_adv": _stats(x_adv),
            "indices": [int(i) for i in indices] if indices is not None else None,
        }
        if self.run_dir is not None:
            path = os.path.join(self.run_dir, f"numerics_{self.step}.json")
            with open(path, "w") as f:
                json.dump(diagnostics, f, indent=2)
            logger.error(f"Wrote numerics diagnostics to {path}")
        raise NumericsError(f"Non-finite loss at iteration {self.step}", diagnostics)

    def train_step(self, x: torch.Tensor, indices=None) -> LossBreakdown:
        """One optimizer step on batch `x`; returns the losses it was computed from."""
        x = x.to(self.device)
        distill = self.config.distill_enabled

        hidden, student_taps = self.student.encode_features(x)
        teacher_taps = self.teacher.encode(x) if distill else None
        x_adv = project(x, self.student.decode(hidden), self.budget)

        with torch.no_grad():
            f_benign = self.surrogate.features(x)
        f_adv = self.surrogate.features(x_adv)

        losses = compute_losses(
            f_benign, f_adv, student_taps, teacher_taps, self.distill_cfg, distill_enabled=distill
        )
        self.check_finite(losses, x, x_adv, indices)

        if self.config.check_frozen:
            before = self._frozen_checksums()

        self.optimizer.zero_grad(set_to_none=True)
        losses.total.backward()
        self.optimizer.step()

        if self.config.check_frozen:
            after = self._frozen_checksums()
            moved = [name for name in before if before[name] != after[name]]
            if moved:
                raise StructuralError(f"Frozen networks changed during the update: {moved}")

        if self.teacher is not None:
            self.teacher.update(self.student)
        return losses

    def measure_monitor(self, updates: int = 0):
        if self.monitor is None:
            return None, None
        student = monitor_cosine(self.student, self.surrogate, self.monitor, self.budget)
        teacher = None
        if self.teacher is not None:
            teacher = monitor_cosine(self.teacher.module, self.surrogate, self.monitor, self.budget)
        self.monitor_history.append([updates, student if teacher is None else teacher])
        return student, teacher

    def make_event(self, losses: LossBreakdown, step_length: float, monitor=(None, None)) -> LossEvent:
        values = losses.as_floats()
        weights = []
        if self.config.distill_enabled:
            weights = block_weights(self.distill_cfg.weight_logits.detach()).tolist()
        return LossEvent(
            iteration=self.step,
            epoch=self.epoch,
            mode=self.config.ablation_mode,
            adv=values["adv"],
            distill=values["distill"],
            total=values["total"],
            step_length=step_length,
            blocks=list(self.config.early_blocks) if self.config.distill_enabled else [],
            per_block_distill=values["per_block_distill"],
            block_weights=weights,
            monitor_cosine=monitor[0],
            monitor_cosine_teacher=monitor[1],
        )

    def run(self) -> GeneratorCheckpoint:
        if self.wandb_settings is not None and self.wandb_settings.get("on", False):
            init_wandb(self)

        if self.profile_path is not None:
            # Create a profiler instance
            profiler = Profiler()
            profiler.start()

        if self.step == 0 and not self.monitor_history and self.monitor is not None:
            monitor = self.measure_monitor(updates=0)
            logger.info(f"Initial monitor cosine: {monitor}")

        total = self.total_iterations
        try:
            while self.step < total:
                self.epoch = self.step // self.iterations_per_epoch
                start_batch = self.step % self.iterations_per_epoch
                for x, _, indices in self.batches(self.epoch, start_batch):
                    if self.step >= total:
                        break
                    start = time.time()
                    losses = self.train_step(x, indices)

                    monitor = (None, None)
                    last = self.step + 1 == total
                    if self.monitor is not None and ((self.step + 1) % self.config.monitor_every == 0 or last):
                        monitor = self.measure_monitor(updates=self.step + 1)

                    event = self.make_event(losses, time.time() - start, monitor)
                    self.log.append(asdict(event))
                    log_event(self, event)
                    if self.step % self.config.log_every == 0 or last:
                        logger.info(
                            f"step {self.step}/{total} epoch {self.epoch} adv {event.adv:.4f} "
                            f"distill {event.distill:.4f} total {event.total:.4f}"
                        )

                    self.step += 1
                    if self.checkpoint_path is not None and should_checkpoint(
                        self.step, self.last_checkpoint_step, self.config.checkpoint_every
                    ):
                        self.save()
        finally:
            if self.profile_path is not None:
                profiler.stop()
                with open(self.profile_path, "w") as f:
                    f.write(profiler.output_html())
                logger.info(f"Wrote profile to {self.profile_path}")
            if self.wandb is not None:
                self.wandb.finish()

        ckpt = self.checkpoint()
        if self.checkpoint_path is not None:
            save_checkpoint(ckpt, self.checkpoint_path)
        return ckpt

    def checkpoint(self) -> GeneratorCheckpoint:
        return GeneratorCheckpoint(
            config=self.config.to_dict(),
            generator=self.config.generator.to_dict(),
            surrogate=self.surrogate_spec.to_dict(),
            student={k: v.detach().cpu().clone() for k, v in self.student.state_dict().items()},
            teacher=(
                {k: v.detach().cpu().clone() for k, v in self.teacher.module.state_dict().items()}
                if self.teacher is not None
                else None
            ),
            teacher_step_count=self.teacher.step_count if self.teacher is not None else 0,
            weight_logits=self.distill_cfg.weight_logits.detach().cpu().clone(),
            optimizer=self.optimizer.state_dict(),
            step=self.step,
            epoch=self.epoch,
            seed=self.config.seed,
            rng_state=get_rng_state(),
            log=list(self.log),
            monitor_history=[list(p) for p in self.monitor_history],
        )

    def save(self):
        save_checkpoint(self.checkpoint(), self.checkpoint_path)
        self.last_checkpoint_step = self.step

    def load_state(self, ckpt: GeneratorCheckpoint):
        r"""Restore student, teacher, optimizer, progress and RNG state from `ckpt`."""
        self.student.load_state_dict(ckpt.student)
        if self.teacher is not None:
            if ckpt.teacher is None:
                raise StructuralError("Checkpoint has no teacher to resume a teacher-keeping run")
            self.teacher.load_state_dict(
                {"parameters": ckpt.teacher, "step_count": ckpt.teacher_step_count}
            )
        with torch.no_grad():
            self.distill_cfg.weight_logits.copy_(ckpt.weight_logits.to(self.device))
        self.optimizer.load_state_dict(ckpt.optimizer)
        self.step = ckpt.step
        self.epoch = ckpt.epoch
        self.last_checkpoint_step = ckpt.step
        self.log = list(ckpt.log)
        self.monitor_history = [list(p) for p in ckpt.monitor_history]
        if ckpt.rng_state is not None:
            set_rng_state(ckpt.rng_state)
        logger.info(f"Resumed at step {self.step} (epoch {self.epoch})")


def _surrogate(surrogate, registry, device, pretrained) -> Surrogate:
    if isinstance(surrogate, Surrogate):
        return surrogate
    return load_surrogate(surrogate, registry, device=resolve_device(device), pretrained=pretrained)


def train(
    config: TrainConfig,
    data: DatasetHandle,
    surrogate: Union[Surrogate, SurrogateSpec],
    registry=None,
    pretrained: bool = True,
    **kwargs,
) -> GeneratorCheckpoint:
    """
    Train a generator from scratch. `surrogate` is a loaded Surrogate or a
    spec resolved through `registry`. Extra keyword arguments go to Trainer.
    """
    surrogate = _surrogate(surrogate, registry, config.device, pretrained)
    return Trainer(config, data, surrogate, **kwargs).run()


def resume(
    checkpoint: Union[GeneratorCheckpoint, str],
    data: DatasetHandle,
    surrogate: Optional[Union[Surrogate, SurrogateSpec]] = None,
    registry=None,
    pretrained: bool = True,
    max_iters: Optional[int] = None,
    **kwargs,
) -> GeneratorCheckpoint:
    """
    Continue a run from a checkpoint with the config it was saved with.
    The continued run produces the same parameters as an uninterrupted one.
    """
    if isinstance(checkpoint, str):
        checkpoint = load_checkpoint(checkpoint)
    config = TrainConfig.from_dict(dict(checkpoint.config))
    if max_iters is not None:
        config.max_iters = max_iters
    if surrogate is None:
        surrogate = SurrogateSpec(**checkpoint.surrogate)
    surrogate = _surrogate(surrogate, registry, config.device, pretrained)

    trainer = Trainer(config, data, surrogate, **kwargs)
    trainer.load_state(checkpoint)
    return trainer.run()
