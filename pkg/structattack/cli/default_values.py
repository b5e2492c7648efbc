# The MIT License (MIT)
# Copyright © 2024 structattack contributors

from munch import munchify, Munch

# Default output locations and model lists for the structattack cli.
defaults: Munch = munchify(
    {
        "train": {"out": "checkpoints/generator.pth", "checkpoint_every": 1000, "log_every": 10},
        "monitor": {"size": 16, "every": 100},
        "eval": {
            "report": "reports",
            "victims": "vgg16,vgg19,resnet50,resnet152,densenet121,densenet169",
        },
        "analyze": {"out": "figs", "blocks": "1-6", "limit": 4},
        "wandb": {"project_name": "structattack", "entity": None},
    }
)
