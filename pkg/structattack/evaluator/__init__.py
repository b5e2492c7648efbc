# The MIT License (MIT)
# Copyright © 2024 structattack contributors

from . import defenses
from . import metrics
from . import config
from . import evaluate
from . import report
