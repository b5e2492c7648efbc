# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import torch
from collections import OrderedDict
from typing import Iterable, Iterator, List, Tuple

from structattack.shared.errors import StructuralError


class FeatureBundle:
    """
    Ordered per-block activations of one generator forward pass.

    Block indices are strictly increasing and all activations share the batch
    dimension.
    """

    def __init__(self, blocks: Iterable[Tuple[int, torch.Tensor]] = ()):
        self._blocks: "OrderedDict[int, torch.Tensor]" = OrderedDict()
        for index, activation in blocks:
            self.append(index, activation)

    def append(self, index: int, activation: torch.Tensor):
        index = int(index)
        if self._blocks and index <= next(reversed(self._blocks)):
            raise StructuralError(
                f"Block indices must be strictly increasing, got {index} after {self.indices}"
            )
        if self._blocks and activation.shape[0] != self.batch_size:
            raise StructuralError(
                f"Block {index} has batch size {activation.shape[0]}, expected {self.batch_size}"
            )
        self._blocks[index] = activation

    @property
    def indices(self) -> List[int]:
        return list(self._blocks.keys())

    @property
    def batch_size(self) -> int:
        if not self._blocks:
            return 0
        return next(iter(self._blocks.values())).shape[0]

    def __getitem__(self, index: int) -> torch.Tensor:
        try:
            return self._blocks[int(index)]
        except KeyError:
            raise StructuralError(
                f"Block {index} is not in the bundle (available: {self.indices})"
            )

    def __contains__(self, index) -> bool:
        return int(index) in self._blocks

    def __iter__(self) -> Iterator[Tuple[int, torch.Tensor]]:
        return iter(self._blocks.items())

    def __len__(self) -> int:
        return len(self._blocks)

    def detach(self) -> "FeatureBundle":
        return FeatureBundle((i, a.detach()) for i, a in self)

    def select(self, indices: Iterable[int]) -> "FeatureBundle":
        return FeatureBundle((i, self[i]) for i in sorted(int(i) for i in indices))

    def __repr__(self):
        shapes = ", ".join(f"{i}: {tuple(a.shape)}" for i, a in self)
        return f"FeatureBundle({shapes})"
