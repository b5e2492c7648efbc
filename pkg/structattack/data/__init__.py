# The MIT License (MIT)
# Copyright © 2024 structattack contributors

from . import dataset
from . import manifest
