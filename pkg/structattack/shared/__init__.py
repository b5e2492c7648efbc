# The MIT License (MIT)
# Copyright © 2024 structattack contributors

from . import errors
from . import utils
from . import config
from . import logging
