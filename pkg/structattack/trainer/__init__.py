# The MIT License (MIT)
# Copyright © 2024 structattack contributors

from . import config
from . import event
from . import state
from . import train
