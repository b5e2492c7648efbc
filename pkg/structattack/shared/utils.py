# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import os
import json
import random
import hashlib
import numpy as np
import torch
from typing import Iterable, Mapping, Union
from loguru import logger

from structattack.shared.errors import ConfigurationError


def hash_data(data) -> str:
    """
    Compute a SHA-256 hex digest of the input.

    Non-bytes inputs are JSON-encoded (sorted keys) when possible and str()-ed
    otherwise, so that resolved configs hash identically across runs.
    """
    if not isinstance(data, (bytes, bytearray)):
        try:
            data = json.dumps(data, sort_keys=True, default=str)
        except TypeError:
            data = str(data)
        data = data.encode()
    return hashlib.sha256(data).hexdigest()


def hash_file(path: str, chunksize: int = 1 << 20) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(chunksize), b""):
            h.update(chunk)
    return h.hexdigest()


def seed_everything(seed: int, deterministic: bool = False):
    """
    Seeds python, numpy and torch RNGs.

    With `deterministic` set, cuDNN autotuning is disabled and torch is asked
    for deterministic kernels (warn-only, as some ops have no deterministic
    implementation on every backend).
    """
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if torch.cuda.is_available():
        torch.cuda.manual_seed_all(seed)
    if deterministic:
        os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
        torch.backends.cudnn.benchmark = False
        torch.backends.cudnn.deterministic = True
        torch.use_deterministic_algorithms(True, warn_only=True)
    logger.debug(f"seed_everything(seed={seed}, deterministic={deterministic})")


def get_rng_state() -> dict:
    state = {
        "python": random.getstate(),
        "numpy": np.random.get_state(),
        "torch": torch.get_rng_state(),
    }
    if torch.cuda.is_available():
        state["cuda"] = torch.cuda.get_rng_state_all()
    return state


def set_rng_state(state: dict):
    random.setstate(state["python"])
    np.random.set_state(state["numpy"])
    torch.set_rng_state(state["torch"])
    if "cuda" in state and torch.cuda.is_available():
        torch.cuda.set_rng_state_all(state["cuda"])


def resolve_device(device: Union[str, torch.device, None]) -> torch.device:
    if device is None or device == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    return torch.device(device)


def parameter_checksum(params: Union[torch.nn.Module, Mapping, Iterable]) -> str:
    """
    Digest of every parameter's bytes, in name order.

    Used to assert that frozen networks (surrogate, teacher outside of EMA)
    did not move across a training step.
    """
    if isinstance(params, torch.nn.Module):
        items = list(params.state_dict().items())
    elif isinstance(params, Mapping):
        items = list(params.items())
    else:
        items = [(str(i), p) for i, p in enumerate(params)]

    h = hashlib.sha256()
    for name, tensor in sorted(items, key=lambda kv: kv[0]):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def parse_int_list(value: Union[str, Iterable[int], None]):
    """Parse "1,2" or "1-6" (inclusive) into a tuple of ints."""
    if value is None:
        return None
    if not isinstance(value, str):
        return tuple(int(v) for v in value)
    out = []
    for part in value.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise ConfigurationError(f"Malformed integer list '{value}'")
    return tuple(out)
