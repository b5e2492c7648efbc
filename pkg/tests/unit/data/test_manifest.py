import os
import tempfile
from unittest import TestCase

from munch import Munch

from structattack import __version__
from structattack.data.manifest import RunManifest


class TestRunManifest(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_save_and_load(self):
        config = Munch(train=Munch(seed=3, lr=2e-4))
        manifest = RunManifest.create("train", config, seed=3).finish()
        path = manifest.save(os.path.join(self.tmp.name, "sub", "run.manifest.json"))
        loaded = RunManifest.load(path)
        self.assertEqual(loaded.command, "train")
        self.assertEqual(loaded.config["train"]["lr"], 2e-4)
        self.assertEqual(loaded.version, __version__)
        self.assertIsNotNone(loaded.finished_at)
        self.assertEqual(loaded.content_hash, manifest.content_hash)

    def test_hash_tracks_config_and_inputs(self):
        path = os.path.join(self.tmp.name, "input.yaml")
        with open(path, "w") as f:
            f.write("a: 1\n")
        a = RunManifest.create("train", {"x": 1}, inputs=[path])
        b = RunManifest.create("train", {"x": 2}, inputs=[path])
        self.assertIn(path, a.inputs)
        self.assertNotEqual(a.content_hash, b.content_hash)
        self.assertEqual(a.content_hash, RunManifest.create("train", {"x": 1}, inputs=[path]).content_hash)
