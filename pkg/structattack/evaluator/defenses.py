# The MIT License (MIT)
# Copyright © 2024 structattack contributors

"""
Input-transformation defenses applied to adversarial images before the
victim sees them: bit-depth reduction, random resize-and-pad, JPEG.

Every defense maps a [0, 1] batch to a [0, 1] batch and runs after the
perturbation has been projected onto its budget.
"""

import io
import torch
import torch.nn.functional as F
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Union
from loguru import logger
from PIL import Image, features as pil_features
from torchvision.transforms.functional import pil_to_tensor, to_pil_image

from structattack.constants import BDR_BITS, JPEG_QUALITY, RP_SCALE_HIGH, RP_SCALE_LOW
from structattack.shared.errors import UnsupportedDefenseError

DEFENSES: Dict[str, Callable] = {}
ALIASES = {"rp": "randomization", "r&p": "randomization", "jpg": "jpeg", "bit": "bdr"}


def register_defense(name: str):
    def wrap(fn):
        DEFENSES[name] = fn
        return fn

    return wrap


@dataclass
class DefenseSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = ALIASES.get(self.kind.lower(), self.kind.lower())

    def validate(self):
        if self.kind not in DEFENSES:
            raise UnsupportedDefenseError(
                f"Unknown defense '{self.kind}', expected one of {sorted(DEFENSES)}"
            )
        if self.kind == "bdr":
            bits = self.params.setdefault("bits", BDR_BITS)
            if not isinstance(bits, int) or not 1 <= bits <= 8:
                raise UnsupportedDefenseError(f"bdr bits must be an integer in 1..8, got {bits}")
        elif self.kind == "randomization":
            low = self.params.setdefault("low", RP_SCALE_LOW)
            high = self.params.setdefault("high", RP_SCALE_HIGH)
            if not 0 < low <= high:
                raise UnsupportedDefenseError(f"Resize range must satisfy 0 < low <= high, got {low}-{high}")
        elif self.kind == "jpeg":
            quality = self.params.setdefault("quality", JPEG_QUALITY)
            if not isinstance(quality, int) or not 1 <= quality <= 100:
                raise UnsupportedDefenseError(f"JPEG quality must be an integer in 1..100, got {quality}")
        return self

    @classmethod
    def parse(cls, text: str) -> "DefenseSpec":
        """Parse `bdr:4`, `randomization`, `rp:0.9-1.1` or `jpeg:75`."""
        kind, _, arg = text.strip().partition(":")
        spec = cls(kind)
        if arg:
            try:
                if spec.kind == "bdr":
                    spec.params["bits"] = int(arg)
                elif spec.kind == "randomization":
                    low, _, high = arg.partition("-")
                    spec.params["low"], spec.params["high"] = float(low), float(high or low)
                elif spec.kind == "jpeg":
                    spec.params["quality"] = int(arg)
            except ValueError:
                raise UnsupportedDefenseError(f"Malformed defense parameter in '{text}'")
        return spec.validate()

    def __str__(self):
        if "bits" in self.params:
            return f"{self.kind}:{self.params['bits']}"
        if "low" in self.params:
            return f"{self.kind}:{self.params['low']:g}-{self.params['high']:g}"
        if "quality" in self.params:
            return f"{self.kind}:{self.params['quality']}"
        return self.kind


def parse_defenses(value: Union[str, List[str], None]) -> List[DefenseSpec]:
    if not value:
        return []
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    return [v if isinstance(v, DefenseSpec) else DefenseSpec.parse(v) for v in value]


@register_defense("bdr")
def bit_depth_reduction(x: torch.Tensor, bits: int = BDR_BITS, generator=None) -> torch.Tensor:
    """Round to the nearest of 2**bits evenly spaced levels."""
    levels = 2**bits - 1
    return torch.floor(x * levels + 0.5) / levels


@register_defense("randomization")
def random_resize_pad(
    x: torch.Tensor,
    low: float = RP_SCALE_LOW,
    high: float = RP_SCALE_HIGH,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """
    Resize the batch to a random side in [low*H, high*H], then zero-pad it
    at a random offset to the canonical side round(high*H).
    """
    _, _, h, w = x.shape
    canvas_h, canvas_w = round(high * h), round(high * w)
    scale = low + (high - low) * torch.rand(1, generator=generator).item()
    new_h = min(max(1, round(scale * h)), canvas_h)
    new_w = min(max(1, round(scale * w)), canvas_w)

    out = F.interpolate(x, size=[new_h, new_w], mode="bicubic", align_corners=False).clamp(0.0, 1.0)
    pad_top = int(torch.randint(0, canvas_h - new_h + 1, (1,), generator=generator).item())
    pad_left = int(torch.randint(0, canvas_w - new_w + 1, (1,), generator=generator).item())
    return F.pad(
        out,
        [pad_left, canvas_w - pad_left - new_w, pad_top, canvas_h - pad_top - new_h],
        value=0.0,
    )


def jpeg_available() -> bool:
    return bool(pil_features.check_codec("jpg"))


@register_defense("jpeg")
def jpeg(x: torch.Tensor, quality: int = JPEG_QUALITY, generator=None) -> torch.Tensor:
    if not jpeg_available():
        raise UnsupportedDefenseError("JPEG defense requested but Pillow has no JPEG codec")
    out = torch.empty_like(x)
    for i, image in enumerate(x.detach().cpu()):
        buffer = io.BytesIO()
        to_pil_image(image.clamp(0.0, 1.0)).save(buffer, "JPEG", quality=quality)
        buffer.seek(0)
        with Image.open(buffer) as decoded:
            out[i] = (pil_to_tensor(decoded.convert("RGB")).float() / 255.0).to(x.device)
    return out


def defend(
    x: torch.Tensor,
    spec: Union[DefenseSpec, str],
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    if isinstance(spec, str):
        spec = DefenseSpec.parse(spec)
    spec.validate()
    logger.trace(f"defend({spec}) on batch {tuple(x.shape)}")
    return DEFENSES[spec.kind](x, generator=generator, **spec.params)


def defend_all(
    x: torch.Tensor,
    specs: List[DefenseSpec],
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Apply `specs` in order."""
    for spec in specs:
        x = defend(x, spec, generator=generator)
    return x
