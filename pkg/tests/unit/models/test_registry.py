import os
import tempfile
from unittest import TestCase

import yaml

from structattack.constants import CACHE_ENV_VAR
from structattack.models.registry import (
    BUILTIN_REGISTRY,
    ModelEntry,
    build_model,
    configure_cache,
    get_entry,
    load_registry,
)
from structattack.shared.errors import ConfigurationError


class TestRegistry(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "registry.yaml")

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, content):
        with open(self.path, "w") as f:
            yaml.safe_dump(content, f)
        return self.path

    def test_builtin_has_surrogate_and_victims(self):
        for model_id in ("vgg16", "resnet152", "densenet121", "vit_b_16"):
            self.assertIn(model_id, BUILTIN_REGISTRY)

    def test_yaml_extends_and_overrides(self):
        registry = load_registry(
            self.write(
                {
                    "resnet50": {"weights": "IMAGENET1K_V1"},
                    "cub_resnet": {"source": "file", "name": "resnet50", "checkpoint": "/x.pth", "num_classes": 200},
                }
            )
        )
        self.assertEqual(registry["resnet50"].weights, "IMAGENET1K_V1")
        self.assertEqual(registry["cub_resnet"].num_classes, 200)
        self.assertIn("vgg16", registry)

    def test_unknown_keys(self):
        with self.assertRaises(ConfigurationError):
            load_registry(self.write({"m": {"colour": "red"}}))

    def test_missing_file(self):
        with self.assertRaises(ConfigurationError):
            load_registry(os.path.join(self.tmp.name, "nope.yaml"))

    def test_unknown_id(self):
        with self.assertRaises(ConfigurationError):
            get_entry("alexnet_v9")

    def test_entry_validation(self):
        with self.assertRaises(ConfigurationError):
            ModelEntry(id="m", source="onnx")
        with self.assertRaises(ConfigurationError):
            ModelEntry(id="m", source="file")

    def test_missing_checkpoint_file(self):
        entry = ModelEntry(id="m", source="file", name="squeezenet1_1", checkpoint=self.path, num_classes=3)
        with self.assertRaises(ConfigurationError):
            build_model(entry)

    def test_cache_env_sets_torch_home(self):
        cache = os.path.join(self.tmp.name, "cache")
        previous = {k: os.environ.get(k) for k in (CACHE_ENV_VAR, "TORCH_HOME")}
        os.environ[CACHE_ENV_VAR] = cache
        try:
            self.assertEqual(configure_cache(), cache)
            self.assertEqual(os.environ["TORCH_HOME"], cache)
            self.assertTrue(os.path.isdir(cache))
        finally:
            for k, v in previous.items():
                if v is None:
                    os.environ.pop(k, None)
                else:
                    os.environ[k] = v
