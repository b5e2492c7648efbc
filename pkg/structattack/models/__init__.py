# The MIT License (MIT)
# Copyright © 2024 structattack contributors

from . import features
from . import generator
from . import unet
from . import mean_teacher
from . import registry
from . import surrogate
