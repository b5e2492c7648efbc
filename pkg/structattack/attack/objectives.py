# The MIT License (MIT)
# Copyright © 2024 structattack contributors

"""
Training objectives.

adv_loss      batch-mean cosine between surrogate features of the benign and
              the projected adversarial image; minimized.
distill_loss  sum over distilled generator blocks of softmax(W)_l *
              max(0, tau - cos(student_l, teacher_l)).
total_loss    adv + lambda_distill * distill.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple
from loguru import logger

from structattack.constants import COSINE_EPS, EARLY_BLOCKS, LAMBDA_DISTILL, TAU
from structattack.models.features import FeatureBundle
from structattack.shared.errors import ConfigurationError, DegenerateValueError, StructuralError


@dataclass
class DistillConfig:
    tau: float = TAU
    lambda_distill: float = LAMBDA_DISTILL
    early_blocks: Tuple[int, ...] = EARLY_BLOCKS
    weight_logits: Optional[nn.Parameter] = None
    per_sample_hinge: bool = False
    spatial_cosine: bool = False
    strict_cosine: bool = False

    def __post_init__(self):
        self.early_blocks = tuple(int(b) for b in self.early_blocks)
        if self.weight_logits is None:
            self.weight_logits = nn.Parameter(torch.zeros(len(self.early_blocks)))

    def validate(self):
        if not -1.0 <= self.tau <= 1.0:
            raise ConfigurationError(f"tau must be in [-1, 1], got {self.tau}")
        if self.lambda_distill < 0:
            raise ConfigurationError(f"lambda_distill must be >= 0, got {self.lambda_distill}")
        if len(set(self.early_blocks)) != len(self.early_blocks):
            raise ConfigurationError(f"Duplicate distilled blocks: {self.early_blocks}")
        if self.weight_logits.numel() != len(self.early_blocks):
            raise ConfigurationError(
                f"{self.weight_logits.numel()} weight logits for {len(self.early_blocks)} distilled blocks"
            )
        return self


@dataclass
class LossBreakdown:
    adv: torch.Tensor
    distill: torch.Tensor
    total: torch.Tensor
    per_block_distill: List[torch.Tensor] = field(default_factory=list)

    def as_floats(self) -> dict:
        return {
            "adv": float(self.adv),
            "distill": float(self.distill),
            "total": float(self.total),
            "per_block_distill": [float(h) for h in self.per_block_distill],
        }


def cosine(a: torch.Tensor, b: torch.Tensor, spatial: bool = False, strict: bool = False) -> torch.Tensor:
    """
    Per-sample cosine similarity.

    By default each sample is flattened to one vector. With `spatial`, cosine
    is taken over channels at every location and averaged over locations.
    A zero vector yields cosine 0 (denominator is stabilized) and a warning,
    or DegenerateValueError when `strict`.
    """
    if a.shape != b.shape:
        raise StructuralError(f"Cosine over mismatched shapes {tuple(a.shape)} vs {tuple(b.shape)}")

    if spatial and a.dim() > 2:
        a_vec, b_vec, dim = a, b, 1
    else:
        a_vec, b_vec, dim = a.flatten(1), b.flatten(1), 1

    norm_a = a_vec.norm(dim=dim)
    norm_b = b_vec.norm(dim=dim)
    if bool((norm_a == 0).any()) or bool((norm_b == 0).any()):
        if strict:
            raise DegenerateValueError("Cosine similarity of a zero-norm feature vector is undefined")
        logger.warning("Zero-norm feature vector in cosine similarity; its cosine is taken as 0")

    cos = (a_vec * b_vec).sum(dim=dim) / (norm_a * norm_b + COSINE_EPS)
    if cos.dim() > 1:
        cos = cos.flatten(1).mean(dim=1)
    return cos


def adv_loss(f_benign: torch.Tensor, f_adv: torch.Tensor, strict: bool = False) -> torch.Tensor:
    return cosine(f_benign, f_adv, strict=strict).mean()


def block_weights(logits: torch.Tensor) -> torch.Tensor:
    return F.softmax(logits, dim=0)


def distill_loss(
    student_taps: FeatureBundle,
    teacher_taps: FeatureBundle,
    cfg: DistillConfig,
) -> Tuple[torch.Tensor, List[torch.Tensor]]:
    weights = block_weights(cfg.weight_logits)
    hinges = []
    for block in cfg.early_blocks:
        if block not in student_taps or block not in teacher_taps:
            raise StructuralError(
                f"Distilled block {block} missing (student: {student_taps.indices}, "
                f"teacher: {teacher_taps.indices})"
            )
        s, t = student_taps[block], teacher_taps[block].detach()
        if s.shape != t.shape:
            raise StructuralError(
                f"Block {block} shapes differ: student {tuple(s.shape)} vs teacher {tuple(t.shape)}"
            )
        cos = cosine(s, t, spatial=cfg.spatial_cosine, strict=cfg.strict_cosine)
        if cfg.per_sample_hinge:
            hinge = F.relu(cfg.tau - cos).mean()
        else:
            hinge = F.relu(cfg.tau - cos.mean())
        hinges.append(hinge)

    if not hinges:
        return weights.sum() * 0.0, []
    loss = (weights.to(hinges[0].device) * torch.stack(hinges)).sum()
    return loss, hinges


def total_loss(adv: torch.Tensor, distill: torch.Tensor, lambda_distill: float) -> torch.Tensor:
    return adv + lambda_distill * distill


def compute_losses(
    f_benign: torch.Tensor,
    f_adv: torch.Tensor,
    student_taps: Optional[FeatureBundle],
    teacher_taps: Optional[FeatureBundle],
    cfg: DistillConfig,
    distill_enabled: bool = True,
) -> LossBreakdown:
    adv = adv_loss(f_benign, f_adv, strict=cfg.strict_cosine)
    if distill_enabled and teacher_taps is not None:
        distill, per_block = distill_loss(student_taps, teacher_taps, cfg)
        lam = cfg.lambda_distill
    else:
        distill, per_block, lam = torch.zeros((), device=adv.device), [], 0.0
    return LossBreakdown(adv, distill, total_loss(adv, distill, lam), per_block)
