from unittest import TestCase

import torch

from structattack.analysis.maps import (
    PooledMap,
    block_noise_map,
    channel_pool,
    consecutive_noise_maps,
    diff_mask,
    pooled_activation,
    pooled_activations,
)
from structattack.models.features import FeatureBundle
from structattack.models.generator import build_generator
from structattack.shared.errors import StructuralError
from tests.unit.fixtures import small_generator_config


def brute_pool(a):
    n, c, h, w = a.shape
    out = torch.zeros(n, h, w, dtype=torch.float64)
    for i in range(n):
        for y in range(h):
            for x in range(w):
                out[i, y, x] = sum(abs(float(a[i, k, y, x])) for k in range(c)) / c
    return out


class TestMaps(TestCase):
    def setUp(self):
        torch.manual_seed(0)
        self.a = torch.randn(2, 5, 4, 3)
        self.b = torch.randn(2, 5, 4, 3)
        self.taps = FeatureBundle([(1, self.a), (2, self.b)])

    def test_pooled_activation_matches_brute_force(self):
        pooled = pooled_activation(self.taps, 1)
        self.assertEqual(pooled.shape, (2, 4, 3))
        self.assertEqual(pooled.block_index, 1)
        self.assertTrue(torch.allclose(pooled.values.double(), brute_pool(self.a), atol=1e-6))

    def test_diff_mask_matches_brute_force(self):
        maps = pooled_activations(self.taps, [1, 2])
        mask = diff_mask(maps[1], maps[2])
        self.assertEqual(mask.dtype, torch.uint8)
        for i in range(2):
            for y in range(4):
                for x in range(3):
                    expected = 1 if float(maps[2][i][y, x]) - float(maps[1][i][y, x]) > 0 else 0
                    self.assertEqual(int(mask[i, y, x]), expected)

    def test_equal_maps_give_empty_mask(self):
        pooled = pooled_activation(self.taps, 1)
        self.assertEqual(int(diff_mask(pooled, pooled).sum()), 0)

    def test_noise_map(self):
        noise = block_noise_map(self.taps, 1, 2)
        self.assertEqual(noise.kind, "noise_1_2")
        self.assertTrue(torch.allclose(noise.values.double(), brute_pool(self.b - self.a), atol=1e-6))

    def test_consecutive_noise_maps_over_generator_blocks(self):
        generator = build_generator(small_generator_config(tap_blocks=(1, 2, 3, 4, 5, 6)))
        _, taps = generator(torch.rand(1, 3, 16, 16))
        maps = consecutive_noise_maps(taps, [3, 1, 2])
        self.assertEqual([m.kind for m in maps], ["noise_1_2", "noise_2_3"])
        self.assertTrue(all(bool((m.values >= 0).all()) for m in maps))

    def test_shape_errors(self):
        with self.assertRaises(StructuralError):
            PooledMap(torch.zeros(3, 3), 1)
        with self.assertRaises(StructuralError):
            channel_pool(torch.zeros(2, 3, 3))
        with self.assertRaises(StructuralError):
            diff_mask(PooledMap(torch.zeros(1, 2, 2), 1), PooledMap(torch.zeros(1, 3, 3), 1))
        with self.assertRaises(StructuralError):
            pooled_activation(self.taps, 5)
