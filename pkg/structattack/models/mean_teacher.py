# The MIT License (MIT)
# Copyright © 2024 structattack contributors

"""
Mean teacher: a copy of the student generator whose parameters follow the
exponential moving average of the student's, theta' <- eta*theta' + (1-eta)*theta.

The teacher is never touched by the optimizer. It serves smoothed reference
features for distillation during training and is the generator used at
inference.
"""

import copy
import torch
import torch.nn as nn
from dataclasses import dataclass
from collections import OrderedDict
from typing import Mapping, Optional, Tuple, Union
from loguru import logger

from structattack.constants import ETA
from structattack.models.features import FeatureBundle
from structattack.shared.errors import ConfigurationError, StructuralError

ParamTree = Mapping[str, torch.Tensor]


@dataclass
class EMAConfig:
    eta: float = ETA

    def validate(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigurationError(f"EMA decay eta must be in [0, 1], got {self.eta}")
        return self


class TeacherState:
    """
    Teacher parameters plus the number of EMA updates applied so far.

    When built from a module, `parameters` aliases the teacher module's own
    tensors, so EMA updates are visible through `module`.
    """

    def __init__(
        self,
        parameters: "OrderedDict[str, torch.Tensor]",
        step_count: int = 0,
        module: Optional[nn.Module] = None,
    ):
        self.parameters = parameters
        self.step_count = step_count
        self.module = module

    def state_dict(self) -> dict:
        if self.module is not None:
            params = self.module.state_dict()
        else:
            params = OrderedDict((k, v.clone()) for k, v in self.parameters.items())
        return {"parameters": params, "step_count": self.step_count}

    def load_state_dict(self, state: dict):
        params = state["parameters"]
        if self.module is not None:
            self.module.load_state_dict(params)
        else:
            _check_structure(self.parameters, params)
            with torch.no_grad():
                for name, tensor in self.parameters.items():
                    tensor.copy_(params[name])
        self.step_count = int(state["step_count"])


def _as_tree(params: Union[nn.Module, ParamTree]) -> ParamTree:
    if isinstance(params, nn.Module):
        return OrderedDict(params.named_parameters())
    return params


def _check_structure(teacher: ParamTree, student: ParamTree):
    if teacher.keys() != student.keys():
        missing = sorted(set(student) - set(teacher))
        extra = sorted(set(teacher) - set(student))
        raise StructuralError(
            f"Teacher and student parameter trees differ (missing: {missing}, extra: {extra})"
        )
    for name, tensor in teacher.items():
        if tensor.shape != student[name].shape:
            raise StructuralError(
                f"Parameter '{name}' has shape {tuple(tensor.shape)} in the teacher "
                f"but {tuple(student[name].shape)} in the student"
            )


def init_teacher(student: Union[nn.Module, ParamTree]) -> TeacherState:
    """Teacher starts as an exact, gradient-free copy of the student."""
    if isinstance(student, nn.Module):
        module = copy.deepcopy(student)
        module.requires_grad_(False)
        return TeacherState(OrderedDict(module.named_parameters()), 0, module=module)

    parameters = OrderedDict(
        (name, tensor.detach().clone()) for name, tensor in student.items()
    )
    return TeacherState(parameters, 0)


@torch.no_grad()
def ema_update(
    teacher: TeacherState,
    student_params: Union[nn.Module, ParamTree],
    cfg: EMAConfig,
) -> TeacherState:
    student = _as_tree(student_params)
    _check_structure(teacher.parameters, student)

    weight = 1.0 - cfg.eta
    for name, tensor in teacher.parameters.items():
        tensor.lerp_(student[name].detach().to(tensor.dtype), weight)

    # Buffers (if any) are not averaged; they follow the student.
    if teacher.module is not None and isinstance(student_params, nn.Module):
        for (name, buf), (_, student_buf) in zip(
            teacher.module.named_buffers(), student_params.named_buffers()
        ):
            buf.copy_(student_buf)

    teacher.step_count += 1
    logger.trace(f"ema_update(step={teacher.step_count}, eta={cfg.eta})")
    return teacher


@torch.no_grad()
def teacher_forward(
    teacher: TeacherState, x: torch.Tensor
) -> Tuple[torch.Tensor, FeatureBundle]:
    if teacher.module is None:
        raise StructuralError("Teacher state has no module attached; cannot run forward")
    x_adv, taps = teacher.module(x)
    return x_adv.detach(), taps.detach()


class MeanTeacher:
    """Stateful wrapper used by the trainer and the evaluator."""

    def __init__(self, student: nn.Module, cfg: EMAConfig = None):
        self.cfg = (cfg or EMAConfig()).validate()
        self.state = init_teacher(student)

    @property
    def module(self) -> nn.Module:
        return self.state.module

    @property
    def step_count(self) -> int:
        return self.state.step_count

    def update(self, student: nn.Module):
        ema_update(self.state, student, self.cfg)

    def __call__(self, x: torch.Tensor) -> Tuple[torch.Tensor, FeatureBundle]:
        return teacher_forward(self.state, x)

    def encode(self, x: torch.Tensor) -> FeatureBundle:
        with torch.no_grad():
            return self.module.encode(x).detach()

    def state_dict(self) -> dict:
        return self.state.state_dict()

    def load_state_dict(self, state: dict):
        self.state.load_state_dict(state)
