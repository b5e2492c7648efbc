import tempfile

from structattack.data.dataset import ingest
from structattack.trainer.config import TrainConfig
from tests.unit.fixtures import make_image_folder, small_generator_config


def tiny_train_config(**kwargs) -> TrainConfig:
    values = dict(
        batch_size=2,
        max_iters=3,
        device="cpu",
        log_every=1,
        monitor_every=2,
        checkpoint_every=100,
        generator=small_generator_config(),
    )
    values.update(kwargs)
    return TrainConfig(**values)


class TinyDataMixin:
    """Six 40px images in two classes, ingested at resolution 32."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.data_root = make_image_folder(f"{self.tmp.name}/data", classes=2, per_class=3)
        self.handle = ingest(self.data_root, resolution=32)

    def tearDown(self):
        self.tmp.cleanup()
