# The MIT License (MIT)
# Copyright © 2024 structattack contributors

"""
Model registry: model id -> how to build it and how to normalize its input.

Entries come from the built-in table below and may be overridden or extended
by a YAML file of the same shape:

    resnet50:
      source: torchvision
      name: resnet50
      weights: IMAGENET1K_V2
    my_cub_resnet:
      source: file
      name: resnet50
      checkpoint: ~/ckpts/cub_resnet50.pth
      num_classes: 200
      resolution: 448
"""

import os
import yaml
import torch
import torch.nn as nn
from dataclasses import dataclass, field, asdict, fields
from typing import Dict, Optional, Tuple
from dotenv import load_dotenv
from loguru import logger

from structattack.constants import (
    CACHE_ENV_VAR,
    CROP_SIZE,
    IMAGENET_MEAN,
    IMAGENET_STD,
)
from structattack.shared.errors import ConfigurationError

SOURCES = ("torchvision", "timm", "file")


@dataclass
class ModelEntry:
    id: str
    source: str = "torchvision"
    name: Optional[str] = None
    weights: Optional[str] = "DEFAULT"
    checkpoint: Optional[str] = None
    num_classes: int = 1000
    mean: Tuple[float, float, float] = IMAGENET_MEAN
    std: Tuple[float, float, float] = IMAGENET_STD
    resolution: int = CROP_SIZE

    def __post_init__(self):
        self.name = self.name or self.id
        self.mean = tuple(float(m) for m in self.mean)
        self.std = tuple(float(s) for s in self.std)
        if self.source not in SOURCES:
            raise ConfigurationError(
                f"Model '{self.id}' has unknown source '{self.source}', expected one of {SOURCES}"
            )
        if self.source == "file" and not self.checkpoint:
            raise ConfigurationError(f"Model '{self.id}' has source 'file' but no checkpoint")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mean"], d["std"] = list(self.mean), list(self.std)
        return d


_TORCHVISION = [
    "vgg16",
    "vgg19",
    "resnet50",
    "resnet152",
    "densenet121",
    "densenet169",
    "inception_v3",
    "mobilenet_v3_large",
    "efficientnet_b0",
    "regnet_y_1_6gf",
    "squeezenet1_1",
    "mnasnet1_0",
    "vit_b_16",
    "swin_t",
    "convnext_tiny",
    "maxvit_t",
]

BUILTIN_REGISTRY: Dict[str, ModelEntry] = {
    model_id: ModelEntry(id=model_id) for model_id in _TORCHVISION
}


def configure_cache():
    """Point torch hub downloads at $STRUCTATTACK_CACHE when set (`.env` honoured)."""
    load_dotenv()
    cache = os.environ.get(CACHE_ENV_VAR)
    if cache:
        cache = os.path.expanduser(cache)
        os.makedirs(cache, exist_ok=True)
        os.environ["TORCH_HOME"] = cache
        logger.debug(f"Model weights cache: {cache}")
    return cache


def load_registry(path: Optional[str] = None) -> Dict[str, ModelEntry]:
    registry = dict(BUILTIN_REGISTRY)
    if path is None:
        return registry

    path = os.path.expanduser(path)
    if not os.path.exists(path):
        raise ConfigurationError(f"Model registry file does not exist: {path}")
    with open(path, "r") as f:
        raw = yaml.safe_load(f) or {}

    known = {f.name for f in fields(ModelEntry)}
    for model_id, values in raw.items():
        values = dict(values or {})
        unknown = set(values) - known
        if unknown:
            raise ConfigurationError(f"Registry entry '{model_id}' has unknown keys {sorted(unknown)}")
        values.pop("id", None)
        registry[model_id] = ModelEntry(id=model_id, **values)
    logger.info(f"Loaded {len(raw)} registry entries from {path}")
    return registry


def get_entry(model_id: str, registry: Optional[Dict[str, ModelEntry]] = None) -> ModelEntry:
    registry = registry if registry is not None else BUILTIN_REGISTRY
    if model_id not in registry:
        raise ConfigurationError(
            f"Unknown model id '{model_id}'. Registered: {', '.join(sorted(registry))}"
        )
    return registry[model_id]


def build_model(entry: ModelEntry, pretrained: bool = True) -> nn.Module:
    """Instantiate the classifier described by `entry`, in eval mode."""
    if entry.source == "torchvision":
        import torchvision

        weights = entry.weights if pretrained else None
        kwargs = {} if pretrained else {"num_classes": entry.num_classes}
        try:
            model = torchvision.models.get_model(entry.name, weights=weights, **kwargs)
        except ValueError as e:
            raise ConfigurationError(f"torchvision cannot build '{entry.name}': {e}")

    elif entry.source == "timm":
        try:
            import timm
        except ImportError:
            raise ConfigurationError(
                f"Model '{entry.id}' needs the optional 'timm' package; install it to use timm victims"
            )
        model = timm.create_model(entry.name, pretrained=pretrained, num_classes=entry.num_classes)

    else:
        import torchvision

        model = torchvision.models.get_model(entry.name, weights=None, num_classes=entry.num_classes)
        checkpoint = os.path.expanduser(entry.checkpoint)
        if not os.path.exists(checkpoint):
            raise ConfigurationError(f"Checkpoint for '{entry.id}' not found: {checkpoint}")
        state = torch.load(checkpoint, map_location="cpu")
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        model.load_state_dict(state)

    return model.eval()
