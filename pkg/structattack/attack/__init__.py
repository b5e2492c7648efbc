# The MIT License (MIT)
# Copyright © 2024 structattack contributors

from . import projector
from . import objectives
