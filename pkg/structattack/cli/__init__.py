# The MIT License (MIT)
# Copyright © 2024 structattack contributors

from .default_values import defaults
