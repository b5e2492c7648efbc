# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import torch
from dataclasses import dataclass
from typing import Union

from structattack.constants import EPSILON_TRAIN
from structattack.shared.errors import ConfigurationError, StructuralError


@dataclass(frozen=True)
class PerturbationBudget:
    """L-infinity budget. `epsilon_255` is in 8-bit pixel units, applied in [0, 1] space."""

    epsilon_255: float = EPSILON_TRAIN

    def __post_init__(self):
        if not self.epsilon_255 >= 0:
            raise ConfigurationError(f"Perturbation budget must be >= 0, got {self.epsilon_255}")

    @property
    def epsilon_unit(self) -> float:
        return self.epsilon_255 / 255.0

    @classmethod
    def coerce(cls, budget: Union["PerturbationBudget", float, int]) -> "PerturbationBudget":
        return budget if isinstance(budget, cls) else cls(float(budget))


def project(
    x: torch.Tensor,
    x_adv: torch.Tensor,
    budget: Union[PerturbationBudget, float, int],
) -> torch.Tensor:
    """
    Clamp `x_adv` into the L-infinity ball of radius eps around `x`, then into [0, 1].

    Differentiable almost everywhere; gradients pass through where no bound is active.
    """
    if x.shape != x_adv.shape:
        raise StructuralError(
            f"Benign and adversarial batches differ in shape: {tuple(x.shape)} vs {tuple(x_adv.shape)}"
        )
    eps = PerturbationBudget.coerce(budget).epsilon_unit
    bounded = torch.min(torch.max(x_adv, x - eps), x + eps)
    return bounded.clamp(0.0, 1.0)


def linf_distance(x: torch.Tensor, x_adv: torch.Tensor) -> torch.Tensor:
    """Per-sample L-infinity distance."""
    return (x_adv - x).abs().flatten(1).max(dim=1).values
