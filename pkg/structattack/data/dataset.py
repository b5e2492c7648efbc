# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import os
import json
import yaml
import torch
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple
from PIL import Image, UnidentifiedImageError
from torch.utils.data import DataLoader, Dataset, Subset
from torchvision import transforms
from loguru import logger

from structattack.constants import CROP_SIZE, IMAGE_EXTENSIONS, RESIZE_SHORTER
from structattack.shared.errors import DataError, EmptyDatasetError

SPLITS = ("train", "val")
UNLABELED = -1


@dataclass
class DatasetHandle:
    """
    Images under `root` in class-folder layout (`root/<class>/<image>`), or a
    flat folder of unlabeled images. `samples` is in lexicographic order.
    """

    root: str
    split: str
    resolution: int
    samples: List[Tuple[str, int]] = field(default_factory=list)
    classes: List[str] = field(default_factory=list)
    label_map: Optional[Dict[str, int]] = None
    skipped: int = 0

    def __len__(self):
        return len(self.samples)

    @property
    def labeled(self) -> bool:
        return bool(self.classes)

    def head(self, n: Optional[int]) -> "DatasetHandle":
        """The first `n` samples in ingest order."""
        if n is None or n >= len(self.samples):
            return self
        return replace(self, samples=self.samples[:n])


def _is_image(name: str) -> bool:
    return name.lower().endswith(IMAGE_EXTENSIONS)


def _decodable(path: str) -> bool:
    try:
        with Image.open(path) as im:
            im.verify()
        return True
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError):
        return False


def load_label_map(path: Optional[str]) -> Optional[Dict[str, int]]:
    if not path:
        return None
    path = os.path.expanduser(path)
    if not os.path.exists(path):
        raise DataError(f"Label map does not exist: {path}")
    with open(path, "r") as f:
        mapping = json.load(f) if path.endswith(".json") else yaml.safe_load(f)
    return {str(k): int(v) for k, v in mapping.items()}


def ingest(
    root: str,
    split: str = "train",
    resolution: int = CROP_SIZE,
    label_map: Optional[Dict[str, int]] = None,
    verify: bool = True,
    num_classes: Optional[int] = None,
) -> DatasetHandle:
    """
    Index the images under `root` (or `root/<split>` when that exists).

    Class folders are sorted lexicographically and numbered in that order
    unless `label_map` names their ids. Undecodable files are skipped with a
    warning and counted in `skipped`.
    """
    if split not in SPLITS:
        raise DataError(f"Unknown split '{split}', expected one of {SPLITS}")
    root = os.path.expanduser(root)
    if not os.path.isdir(root):
        raise DataError(f"Dataset directory does not exist: {root}")
    base = os.path.join(root, split) if os.path.isdir(os.path.join(root, split)) else root

    entries = sorted(os.listdir(base))
    classes = [e for e in entries if os.path.isdir(os.path.join(base, e))]

    candidates: List[Tuple[str, int]] = []
    if classes:
        for index, name in enumerate(classes):
            label = label_map[name] if label_map and name in label_map else index
            if label_map and name not in label_map:
                raise DataError(f"Class folder '{name}' is missing from the label map")
            class_dir = os.path.join(base, name)
            for dirpath, dirnames, filenames in sorted(os.walk(class_dir)):
                dirnames.sort()
                for filename in sorted(filenames):
                    if _is_image(filename):
                        candidates.append((os.path.join(dirpath, filename), label))
    else:
        candidates = [(os.path.join(base, e), UNLABELED) for e in entries if _is_image(e)]

    samples, skipped = [], 0
    for path, label in candidates:
        if verify and not _decodable(path):
            logger.warning(f"Skipping undecodable image: {path}")
            skipped += 1
            continue
        samples.append((path, label))

    if not samples:
        raise EmptyDatasetError(f"No decodable images found under {base}")

    if num_classes is not None and classes:
        top = max(label for _, label in samples)
        if top >= num_classes:
            raise DataError(
                f"Label {top} does not fit a {num_classes}-class model; provide a label map"
            )

    logger.info(
        f"Ingested {len(samples)} images from {base} "
        f"({len(classes)} classes, {skipped} skipped)"
    )
    return DatasetHandle(base, split, resolution, samples, classes, label_map, skipped)


def build_transform(resolution: int = CROP_SIZE, resize_shorter: Optional[int] = None):
    """Resize the shorter side (256 for 224 crops, scaled alike for other sizes) and center-crop."""
    if resize_shorter is None:
        resize_shorter = round(resolution * RESIZE_SHORTER / CROP_SIZE)
    return transforms.Compose(
        [
            transforms.Resize(resize_shorter),
            transforms.CenterCrop(resolution),
            transforms.ToTensor(),
        ]
    )


class ImageDataset(Dataset):
    def __init__(self, handle: DatasetHandle, transform=None):
        self.handle = handle
        self.transform = transform or build_transform(handle.resolution)

    def __len__(self):
        return len(self.handle)

    def __getitem__(self, index: int):
        path, label = self.handle.samples[index]
        try:
            with Image.open(path) as im:
                image = im.convert("RGB")
        except (UnidentifiedImageError, OSError) as e:
            raise DataError(f"Failed to decode {path}: {e}")
        return self.transform(image), label, index


def make_loader(
    handle: DatasetHandle,
    batch_size: int,
    shuffle: bool = False,
    seed: int = 0,
    num_workers: int = 0,
    limit: Optional[int] = None,
    drop_last: bool = False,
    transform=None,
) -> DataLoader:
    """
    DataLoader over `handle`. Shuffling draws from a generator seeded with
    `seed` so the sample order is reproducible; `limit` keeps the first n
    images (pre-shuffle order).
    """
    dataset = ImageDataset(handle, transform=transform)
    if limit is not None and limit < len(dataset):
        dataset = Subset(dataset, list(range(limit)))
    generator = torch.Generator()
    generator.manual_seed(seed)
    return DataLoader(
        dataset,
        batch_size=batch_size,
        shuffle=shuffle,
        num_workers=num_workers,
        generator=generator,
        drop_last=drop_last,
        pin_memory=torch.cuda.is_available(),
    )
