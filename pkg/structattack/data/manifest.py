# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import os
import json
import datetime
from dataclasses import dataclass, field, asdict
from typing import Iterable, Optional
from loguru import logger

from structattack import __version__
from structattack.shared.config import to_dict
from structattack.shared.utils import hash_data, hash_file


def _now() -> str:
    return datetime.datetime.now().isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """What was run, with which resolved config and inputs; enough to re-run it."""

    command: str
    config: dict
    seed: Optional[int] = None
    content_hash: str = ""
    inputs: dict = field(default_factory=dict)
    started_at: str = field(default_factory=_now)
    finished_at: Optional[str] = None
    version: str = __version__

    @classmethod
    def create(cls, command: str, config, seed: Optional[int] = None, inputs: Iterable[str] = ()):
        plain = to_dict(config)
        input_hashes = {
            path: hash_file(path) for path in inputs if path and os.path.isfile(path)
        }
        content_hash = hash_data({"config": plain, "inputs": input_hashes})
        return cls(command, plain, seed, content_hash, input_hashes)

    def finish(self):
        self.finished_at = _now()
        return self

    def save(self, path: str):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2, default=str)
        logger.debug(f"Wrote run manifest {path}")
        return path

    @classmethod
    def load(cls, path: str) -> "RunManifest":
        with open(path, "r") as f:
            return cls(**json.load(f))
