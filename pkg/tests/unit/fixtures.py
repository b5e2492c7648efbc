import os
import numpy as np
import torch
import torch.nn as nn
from PIL import Image

from structattack.models.generator import GeneratorConfig
from structattack.models.surrogate import Classifier, Surrogate, SurrogateSpec


class TinyVGG(nn.Module):
    """VGG-shaped classifier small enough for unit tests."""

    def __init__(self, num_classes: int = 5):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 8, 3, padding=1),
            nn.ReLU(inplace=False),
            nn.MaxPool2d(2),
            nn.Conv2d(8, 16, 3, padding=1),
            nn.ReLU(inplace=False),
            nn.MaxPool2d(2),
        )
        self.avgpool = nn.AdaptiveAvgPool2d(1)
        self.classifier = nn.Linear(16, num_classes)

    def forward(self, x):
        return self.classifier(torch.flatten(self.avgpool(self.features(x)), 1))


def tiny_surrogate(seed: int = 0, layer: int = 4) -> Surrogate:
    torch.manual_seed(seed)
    return Surrogate(TinyVGG(), SurrogateSpec(model_id="tiny", feature_layer=layer))


def tiny_classifier(seed: int = 0, num_classes: int = 5) -> Classifier:
    torch.manual_seed(seed)
    return Classifier(TinyVGG(num_classes), model_id="tiny")


def small_generator_config(**kwargs) -> GeneratorConfig:
    values = dict(base_width=8, num_residual_blocks=6, tap_blocks=(1, 2))
    values.update(kwargs)
    return GeneratorConfig(**values)


def make_image_folder(root, classes=2, per_class=4, size=40, seed=0, flat=False):
    """Random RGB PNGs in class-folder (or flat) layout. Returns the root."""
    rng = np.random.default_rng(seed)
    for c in range(classes):
        folder = root if flat else os.path.join(root, f"class_{c:02d}")
        os.makedirs(folder, exist_ok=True)
        for i in range(per_class):
            pixels = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
            Image.fromarray(pixels).save(os.path.join(folder, f"c{c:02d}_img_{i:03d}.png"))
    return root
