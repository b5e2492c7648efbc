# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import torch
import torch.nn as nn
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Tuple, Union
from loguru import logger

from structattack.constants import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    SURROGATE_ID,
    SURROGATE_LAYER,
)
from structattack.models.registry import ModelEntry, build_model, get_entry
from structattack.shared.errors import ConfigurationError


@dataclass
class SurrogateSpec:
    model_id: str = SURROGATE_ID
    feature_layer: Union[int, str] = SURROGATE_LAYER
    mean: Tuple[float, float, float] = IMAGENET_MEAN
    std: Tuple[float, float, float] = IMAGENET_STD
    frozen: bool = True

    @classmethod
    def from_entry(cls, entry: ModelEntry, feature_layer=SURROGATE_LAYER) -> "SurrogateSpec":
        return cls(entry.id, feature_layer, entry.mean, entry.std)

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "feature_layer": self.feature_layer,
            "mean": list(self.mean),
            "std": list(self.std),
            "frozen": self.frozen,
        }


def argmax_lowest(logits: torch.Tensor) -> torch.Tensor:
    """Per-row argmax; ties go to the lowest class index."""
    best = logits.max(dim=1, keepdim=True).values
    index = torch.arange(logits.shape[1], device=logits.device).expand_as(logits)
    sentinel = torch.full_like(index, logits.shape[1])
    return torch.where(logits == best, index, sentinel).min(dim=1).values


def maxpool_index(model: nn.Module, n: int) -> int:
    """Index inside `model.features` of the n-th (1-based) max-pooling layer."""
    features = getattr(model, "features", None)
    if not isinstance(features, nn.Sequential):
        raise ConfigurationError("Model has no sequential `features` stack to count pools in")
    seen = 0
    for index, layer in enumerate(features):
        if isinstance(layer, nn.MaxPool2d):
            seen += 1
            if seen == n:
                return index
    raise ConfigurationError(f"Model has only {seen} max-pooling layers, asked for #{n}")


def resolve_layer(
    model_id: str,
    layer: Union[int, str],
    registry: Optional[Dict[str, ModelEntry]] = None,
    model: Optional[nn.Module] = None,
) -> Union[int, str]:
    """
    Normalize a feature-layer selector: an int or digit string indexes
    `features`, `pool<n>` names the n-th max-pool (VGG-16 `pool3` -> 16), and
    anything else is kept as a module name.
    """
    if isinstance(layer, int):
        return layer
    text = str(layer).strip()
    if text.lstrip("-").isdigit():
        return int(text)
    if text.startswith("pool") and text[4:].isdigit():
        if model is None:
            model = build_model(get_entry(model_id, registry), pretrained=False)
        return maxpool_index(model, int(text[4:]))
    return text


class Normalize(nn.Module):
    def __init__(self, mean, std):
        super().__init__()
        self.register_buffer("mean", torch.tensor(mean, dtype=torch.float32).view(1, -1, 1, 1))
        self.register_buffer("std", torch.tensor(std, dtype=torch.float32).view(1, -1, 1, 1))

    def forward(self, x):
        return (x - self.mean) / self.std


class Classifier(nn.Module):
    """
    Frozen classifier on [0, 1] images: applies its own input normalization,
    returns logits and argmax predictions. Victims use this directly.
    """

    def __init__(self, model: nn.Module, mean=IMAGENET_MEAN, std=IMAGENET_STD, model_id: str = ""):
        super().__init__()
        self.model_id = model_id
        self.model = model
        self.normalize = Normalize(mean, std)
        self.model.eval()
        self.model.requires_grad_(False)

    def train(self, mode: bool = True):
        # The wrapped network stays in eval mode.
        super().train(mode)
        self.model.eval()
        return self

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        out = self.model(self.normalize(x))
        # torchvision inception returns a namedtuple in some modes
        return out.logits if hasattr(out, "logits") else out

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.logits(x)

    @torch.no_grad()
    def predict(self, x: torch.Tensor) -> torch.Tensor:
        return argmax_lowest(self.logits(x))


class Surrogate(Classifier):
    """
    Classifier that also exposes the activation of one mid-level layer.

    An integer `feature_layer` indexes `model.features` (torchvision VGG
    convention, 16 = third max-pool of VGG-16) and the stack is truncated
    there; a string names any submodule, read with a forward hook.
    """

    def __init__(self, model: nn.Module, spec: SurrogateSpec):
        super().__init__(model, spec.mean, spec.std, model_id=spec.model_id)
        self.spec = spec
        self._hooked = None
        self._truncated = None

        layer = spec.feature_layer
        features = getattr(model, "features", None)
        if isinstance(layer, int):
            if not isinstance(features, nn.Sequential):
                raise ConfigurationError(
                    f"'{spec.model_id}' has no sequential `features`; pass a module name as feature layer"
                )
            if not 0 <= layer < len(features):
                raise ConfigurationError(
                    f"Feature layer {layer} outside 0..{len(features) - 1} for '{spec.model_id}'"
                )
            self._truncated = features[: layer + 1]
        else:
            modules = dict(model.named_modules())
            if layer not in modules:
                raise ConfigurationError(f"'{spec.model_id}' has no module named '{layer}'")
            self._hooked = modules[layer]

    def features_raw(self, x_normalized: torch.Tensor) -> torch.Tensor:
        if self._truncated is not None:
            return self._truncated(x_normalized)

        captured = {}

        def hook(module, inputs, output):
            captured["out"] = output

        handle = self._hooked.register_forward_hook(hook)
        try:
            self.model(x_normalized)
        finally:
            handle.remove()
        return captured["out"]

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.features_raw(self.normalize(x))


def load_classifier(
    model_id: str,
    registry: Optional[Dict[str, ModelEntry]] = None,
    device: Union[str, torch.device] = "cpu",
    pretrained: bool = True,
) -> Classifier:
    entry = get_entry(model_id, registry)
    logger.info(f"Loading classifier '{model_id}' ({entry.source}:{entry.name})")
    model = build_model(entry, pretrained=pretrained)
    return Classifier(model, entry.mean, entry.std, model_id=model_id).to(device)


def load_surrogate(
    spec: SurrogateSpec,
    registry: Optional[Dict[str, ModelEntry]] = None,
    device: Union[str, torch.device] = "cpu",
    pretrained: bool = True,
) -> Surrogate:
    entry = get_entry(spec.model_id, registry)
    logger.info(f"Loading surrogate '{spec.model_id}' feature layer {spec.feature_layer}")
    model = build_model(entry, pretrained=pretrained)
    return Surrogate(model, spec).to(device)


def features(surrogate: Surrogate, x: torch.Tensor) -> torch.Tensor:
    return surrogate.features(x)


def predict(
    model: Union[Classifier, str],
    x: torch.Tensor,
    registry: Optional[Dict[str, ModelEntry]] = None,
) -> torch.Tensor:
    if isinstance(model, str):
        model = load_classifier(model, registry, device=x.device)
    return model.predict(x)


def mid_layer_sweep(
    spec: SurrogateSpec,
    candidate_layers: Iterable[Union[int, str]],
    model: Optional[nn.Module] = None,
) -> List[SurrogateSpec]:
    """Spec variants for a mid-layer ablation; checked against `model` when given."""
    variants = [replace(spec, feature_layer=layer) for layer in candidate_layers]
    if model is not None:
        for variant in variants:
            Surrogate(model, variant)
    return variants
