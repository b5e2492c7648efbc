# The MIT License (MIT)
# Copyright © 2024 structattack contributors

from dataclasses import dataclass, field
from typing import List, Optional


@dataclass
class LossEvent:
    iteration: int  # Zero-based optimizer step the losses were computed at
    epoch: int  # Pass over the training set
    mode: str  # Ablation mode, 'baseline' | 'mt_only' | 'full'
    adv: float  # Mean surrogate-feature cosine between benign and adversarial images
    distill: float  # Weighted hinge distillation loss (0 outside full mode)
    total: float  # adv + lambda * distill
    step_length: float  # Seconds spent on this iteration

    # Distillation detail, aligned with `blocks`
    blocks: List[int] = field(default_factory=list)
    per_block_distill: List[float] = field(default_factory=list)
    block_weights: List[float] = field(default_factory=list)

    # Monitor cosine, only on iterations where it was measured
    monitor_cosine: Optional[float] = None
    monitor_cosine_teacher: Optional[float] = None

    @staticmethod
    def from_dict(event_dict: dict) -> "LossEvent":
        """Converts a dictionary to a LossEvent object."""

        return LossEvent(
            iteration=event_dict["iteration"],
            epoch=event_dict["epoch"],
            mode=event_dict["mode"],
            adv=event_dict["adv"],
            distill=event_dict["distill"],
            total=event_dict["total"],
            step_length=event_dict["step_length"],
            blocks=event_dict.get("blocks", []),
            per_block_distill=event_dict.get("per_block_distill", []),
            block_weights=event_dict.get("block_weights", []),
            monitor_cosine=event_dict.get("monitor_cosine"),
            monitor_cosine_teacher=event_dict.get("monitor_cosine_teacher"),
        )
