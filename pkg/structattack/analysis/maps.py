# The MIT License (MIT)
# Copyright © 2024 structattack contributors

"""
Generator-internal diagnostics: cross-channel pooled activation maps,
thresholded difference masks between two generators, and the noise a
residual stage adds between two blocks.

Maps are per-sample: `values` holds one H' x W' map per image.
"""

import torch
from dataclasses import dataclass
from typing import Dict, Iterable, List, Tuple

from structattack.models.features import FeatureBundle
from structattack.shared.errors import StructuralError


@dataclass
class PooledMap:
    values: torch.Tensor  # (N, H', W'), non-negative
    block_index: int
    kind: str = "activation"

    def __post_init__(self):
        if self.values.dim() != 3:
            raise StructuralError(f"Pooled maps are (N, H, W), got shape {tuple(self.values.shape)}")

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, sample: int) -> torch.Tensor:
        return self.values[sample]

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.values.shape)

    def stats(self, sample: int) -> dict:
        v = self.values[sample].float()
        return {
            "block": self.block_index,
            "kind": self.kind,
            "sample": sample,
            "min": float(v.min()),
            "max": float(v.max()),
            "mean": float(v.mean()),
            "std": float(v.std()) if v.numel() > 1 else 0.0,
        }


def _block(taps: FeatureBundle, block: int) -> torch.Tensor:
    if block not in taps:
        raise StructuralError(f"Block {block} not in feature bundle (have {taps.indices})")
    return taps[block].detach()


def channel_pool(activation: torch.Tensor) -> torch.Tensor:
    """Mean over channels of |activation|: (N, C, H, W) -> (N, H, W)."""
    if activation.dim() != 4:
        raise StructuralError(f"Expected (N, C, H, W) activations, got {tuple(activation.shape)}")
    return activation.abs().mean(dim=1)


def pooled_activation(taps: FeatureBundle, block: int) -> PooledMap:
    return PooledMap(channel_pool(_block(taps, block)), block)


def pooled_activations(taps: FeatureBundle, blocks: Iterable[int]) -> Dict[int, PooledMap]:
    return {block: pooled_activation(taps, block) for block in blocks}


def diff_mask(pooled_a: PooledMap, pooled_b: PooledMap) -> torch.Tensor:
    """1 where `pooled_b` is strictly larger than `pooled_a`, else 0."""
    if pooled_a.shape != pooled_b.shape:
        raise StructuralError(f"Cannot diff maps of shapes {pooled_a.shape} and {pooled_b.shape}")
    return (pooled_b.values - pooled_a.values > 0).to(torch.uint8)


def block_noise_map(taps: FeatureBundle, block_i: int, block_j: int) -> PooledMap:
    """Cross-channel mean of |g_j - g_i|: what the blocks between i and j added."""
    a, b = _block(taps, block_i), _block(taps, block_j)
    if a.shape != b.shape:
        raise StructuralError(
            f"Blocks {block_i} and {block_j} differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}"
        )
    return PooledMap(channel_pool(b - a), block_j, kind=f"noise_{block_i}_{block_j}")


def consecutive_noise_maps(taps: FeatureBundle, blocks: Iterable[int]) -> List[PooledMap]:
    blocks = sorted(blocks)
    return [block_noise_map(taps, i, j) for i, j in zip(blocks, blocks[1:])]
