from unittest import TestCase

import torch
import torch.nn as nn
from parameterized import parameterized
from torchvision.models.vgg import cfgs, make_layers

from structattack.models.surrogate import (
    Surrogate,
    SurrogateSpec,
    argmax_lowest,
    maxpool_index,
    mid_layer_sweep,
    resolve_layer,
)
from structattack.shared.errors import ConfigurationError
from tests.unit.fixtures import TinyVGG, tiny_classifier, tiny_surrogate


class VGG16Features(nn.Module):
    def __init__(self):
        super().__init__()
        self.features = make_layers(cfgs["D"])


class TestArgmax(TestCase):
    @parameterized.expand(
        [
            [[[1.0, 3.0, 3.0]], [1]],
            [[[2.0, 2.0, 2.0]], [0]],
            [[[0.0, -1.0, 5.0]], [2]],
            [[[4.0, 4.0, 1.0], [0.0, 7.0, 7.0]], [0, 1]],
        ]
    )
    def test_ties_go_to_lowest_index(self, logits, expected):
        self.assertEqual(argmax_lowest(torch.tensor(logits)).tolist(), expected)

    def test_agrees_with_argmax_without_ties(self):
        torch.manual_seed(0)
        logits = torch.randn(64, 10)
        self.assertTrue(torch.equal(argmax_lowest(logits), logits.argmax(dim=1)))


class TestLayerSelection(TestCase):
    def test_third_pool_of_vgg16_is_index_16(self):
        self.assertEqual(maxpool_index(VGG16Features(), 3), 16)

    @parameterized.expand([[16, 16], ["16", 16], ["features.4", "features.4"]])
    def test_resolve_layer(self, layer, expected):
        self.assertEqual(resolve_layer("vgg16", layer), expected)

    def test_resolve_pool_name(self):
        self.assertEqual(resolve_layer("vgg16", "pool3", model=VGG16Features()), 16)
        self.assertEqual(resolve_layer("tiny", "pool2", model=TinyVGG()), 5)

    def test_missing_pool(self):
        with self.assertRaises(ConfigurationError):
            maxpool_index(TinyVGG(), 3)


class TestSurrogate(TestCase):
    def test_truncated_features_match_manual_slice(self):
        surrogate = tiny_surrogate(layer=4)
        x = torch.rand(2, 3, 32, 32)
        expected = surrogate.model.features[:5](surrogate.normalize(x))
        self.assertTrue(torch.allclose(surrogate.features(x), expected))
        self.assertEqual(tuple(surrogate.features(x).shape), (2, 16, 16, 16))

    def test_named_layer_uses_hook(self):
        torch.manual_seed(0)
        model = TinyVGG()
        by_index = Surrogate(model, SurrogateSpec("tiny", 2))
        by_name = Surrogate(model, SurrogateSpec("tiny", "features.2"))
        x = torch.rand(1, 3, 32, 32)
        self.assertTrue(torch.allclose(by_index.features(x), by_name.features(x)))

    def test_frozen_and_stays_in_eval(self):
        surrogate = tiny_surrogate()
        surrogate.train()
        self.assertFalse(surrogate.model.training)
        self.assertTrue(all(not p.requires_grad for p in surrogate.parameters()))

    def test_features_are_differentiable_in_input(self):
        surrogate = tiny_surrogate()
        x = torch.rand(1, 3, 32, 32, requires_grad=True)
        surrogate.features(x).sum().backward()
        self.assertIsNotNone(x.grad)
        self.assertGreater(float(x.grad.abs().sum()), 0.0)

    @parameterized.expand([[6], [-1]])
    def test_layer_out_of_range(self, layer):
        with self.assertRaises(ConfigurationError):
            tiny_surrogate(layer=layer)

    def test_unknown_module_name(self):
        with self.assertRaises(ConfigurationError):
            Surrogate(TinyVGG(), SurrogateSpec("tiny", "features.99"))

    def test_predict_shape(self):
        classifier = tiny_classifier(num_classes=7)
        predictions = classifier.predict(torch.rand(3, 3, 32, 32))
        self.assertEqual(predictions.shape, (3,))
        self.assertTrue(bool(((predictions >= 0) & (predictions < 7)).all()))

    def test_mid_layer_sweep(self):
        variants = mid_layer_sweep(SurrogateSpec("tiny", 4), [1, 2, 4], model=TinyVGG())
        self.assertEqual([v.feature_layer for v in variants], [1, 2, 4])
        with self.assertRaises(ConfigurationError):
            mid_layer_sweep(SurrogateSpec("tiny", 4), [9], model=TinyVGG())
