import math
from unittest import TestCase

import torch
import torch.nn as nn
from parameterized import parameterized

from structattack.attack.objectives import (
    DistillConfig,
    adv_loss,
    block_weights,
    compute_losses,
    cosine,
    distill_loss,
    total_loss,
)
from structattack.models.features import FeatureBundle
from structattack.shared.errors import ConfigurationError, DegenerateValueError, StructuralError


def bundle(*tensors):
    return FeatureBundle((i, t) for i, t in enumerate(tensors, start=1))


class TestCosine(TestCase):
    def test_matches_torch_reference(self):
        torch.manual_seed(0)
        a, b = torch.randn(4, 3, 5, 5), torch.randn(4, 3, 5, 5)
        expected = nn.functional.cosine_similarity(a.flatten(1), b.flatten(1), dim=1)
        self.assertTrue(torch.allclose(cosine(a, b), expected, atol=1e-6))

    @parameterized.expand([[1.0, 1.0], [-1.0, -1.0]])
    def test_parallel_vectors(self, sign, expected):
        a = torch.rand(2, 6) + 0.1
        self.assertTrue(torch.allclose(cosine(a, sign * 3 * a), torch.full((2,), expected), atol=1e-6))

    def test_zero_vector_gives_zero(self):
        a = torch.zeros(1, 4)
        b = torch.ones(1, 4)
        out = cosine(a, b)
        self.assertEqual(float(out), 0.0)
        self.assertTrue(torch.isfinite(out).all())

    def test_spatial_averages_over_locations(self):
        a = torch.zeros(1, 2, 1, 2)
        a[0, 0, 0, 0], a[0, 1, 0, 1] = 1.0, 1.0
        b = torch.zeros(1, 2, 1, 2)
        b[0, 0, 0, 0], b[0, 0, 0, 1] = 1.0, 1.0
        # location 0 agrees, location 1 is orthogonal
        self.assertAlmostEqual(float(cosine(a, b, spatial=True)), 0.5, places=6)

    def test_shape_mismatch(self):
        with self.assertRaises(StructuralError):
            cosine(torch.rand(1, 4), torch.rand(1, 5))

    def test_adv_loss_is_batch_mean(self):
        f = torch.rand(3, 8) + 0.1
        self.assertAlmostEqual(float(adv_loss(f, f)), 1.0, places=5)
        self.assertAlmostEqual(float(adv_loss(f, -f)), -1.0, places=5)


class TestDistill(TestCase):
    def test_uniform_weights_at_zero_logits(self):
        cfg = DistillConfig(early_blocks=(1, 2))
        self.assertTrue(torch.allclose(block_weights(cfg.weight_logits), torch.tensor([0.5, 0.5])))

    def test_identical_taps_give_zero(self):
        t = bundle(torch.rand(2, 4, 3, 3), torch.rand(2, 4, 3, 3))
        loss, hinges = distill_loss(t, t, DistillConfig(tau=0.9))
        self.assertEqual(float(loss), 0.0)
        self.assertEqual(len(hinges), 2)

    def test_worked_example(self):
        # block 1 cos = 0, block 2 cos = 1; weights softmax([0, ln 3]) = [1/4, 3/4]
        s = bundle(torch.tensor([[1.0, 0.0]]), torch.tensor([[1.0, 1.0]]))
        t = bundle(torch.tensor([[0.0, 1.0]]), torch.tensor([[2.0, 2.0]]))
        logits = nn.Parameter(torch.tensor([0.0, torch.log(torch.tensor(3.0)).item()]))
        loss, hinges = distill_loss(s, t, DistillConfig(tau=0.9, weight_logits=logits))
        self.assertAlmostEqual(float(hinges[0]), 0.9, places=5)
        self.assertAlmostEqual(float(hinges[1]), 0.0, places=5)
        self.assertAlmostEqual(float(loss), 0.225, places=5)

    def test_batch_mean_versus_per_sample_hinge(self):
        # cosines 1 and -1: mean-then-hinge sees 0, per-sample sees (0 + 1.9)/2
        s = bundle(torch.tensor([[1.0, 0.0], [1.0, 0.0]]))
        t = bundle(torch.tensor([[1.0, 0.0], [-1.0, 0.0]]))
        batch, _ = distill_loss(s, t, DistillConfig(tau=0.9, early_blocks=(1,)))
        per_sample, _ = distill_loss(s, t, DistillConfig(tau=0.9, early_blocks=(1,), per_sample_hinge=True))
        self.assertAlmostEqual(float(batch), 0.9, places=5)
        self.assertAlmostEqual(float(per_sample), 0.95, places=5)

    def test_teacher_receives_no_gradient(self):
        s_tensor = torch.rand(2, 3, requires_grad=True)
        t_tensor = torch.rand(2, 3, requires_grad=True)
        loss, _ = distill_loss(bundle(s_tensor), bundle(t_tensor), DistillConfig(tau=1.0, early_blocks=(1,)))
        loss.backward()
        self.assertIsNotNone(s_tensor.grad)
        self.assertIsNone(t_tensor.grad)

    def test_missing_block(self):
        t = bundle(torch.rand(1, 3))
        with self.assertRaises(StructuralError):
            distill_loss(t, t, DistillConfig(early_blocks=(1, 2)))

    def test_gradcheck_in_logits_and_student_features(self):
        torch.manual_seed(0)
        teacher = bundle(torch.randn(3, 5, dtype=torch.float64), torch.randn(3, 5, dtype=torch.float64))
        s1 = torch.randn(3, 5, dtype=torch.float64, requires_grad=True)
        s2 = torch.randn(3, 5, dtype=torch.float64, requires_grad=True)
        logits = torch.tensor([0.3, -0.2], dtype=torch.float64, requires_grad=True)

        def fn(w, a, b):
            cfg = DistillConfig(tau=0.9, weight_logits=w)
            return distill_loss(bundle(a, b), teacher, cfg)[0]

        self.assertTrue(torch.autograd.gradcheck(fn, (logits, s1, s2), eps=1e-6, atol=1e-5))

    @parameterized.expand(
        [
            [dict(tau=1.5)],
            [dict(lambda_distill=-1.0)],
            [dict(early_blocks=(1, 1))],
            [dict(early_blocks=(1, 2), weight_logits=nn.Parameter(torch.zeros(3)))],
        ]
    )
    def test_invalid_config(self, kwargs):
        with self.assertRaises(ConfigurationError):
            DistillConfig(**kwargs).validate()


class TestTotal(TestCase):
    def test_total_combines_terms(self):
        self.assertAlmostEqual(float(total_loss(torch.tensor(0.5), torch.tensor(0.2), 2.0)), 0.9, places=6)

    def test_disabled_distill_is_zero(self):
        f = torch.rand(2, 8)
        taps = bundle(torch.rand(2, 3), torch.rand(2, 3))
        out = compute_losses(f, f, taps, None, DistillConfig(), distill_enabled=True)
        self.assertEqual(float(out.distill), 0.0)
        self.assertAlmostEqual(float(out.total), float(out.adv), places=6)
        out = compute_losses(f, f, taps, taps, DistillConfig(), distill_enabled=False)
        self.assertEqual(out.per_block_distill, [])


class TestObjectiveInvariances(TestCase):
    @parameterized.expand([[0.01], [3.0], [1000.0]])
    def test_cosine_ignores_positive_scaling(self, c):
        torch.manual_seed(1)
        a, b = torch.randn(3, 4, 2, 2), torch.randn(3, 4, 2, 2)
        for spatial in (False, True):
            reference = cosine(a, b, spatial=spatial)
            self.assertTrue(torch.allclose(cosine(c * a, b, spatial=spatial), reference, atol=1e-5))
            self.assertTrue(torch.allclose(cosine(a, c * b, spatial=spatial), reference, atol=1e-5))
        self.assertAlmostEqual(float(adv_loss(c * a, b)), float(adv_loss(a, b)), places=5)

    @parameterized.expand([[0.01, False], [3.0, False], [1000.0, False], [3.0, True]])
    def test_hinge_ignores_positive_scaling(self, c, per_sample):
        torch.manual_seed(2)
        s = bundle(torch.randn(2, 4, 3, 3), torch.randn(2, 4, 3, 3))
        t = bundle(torch.randn(2, 4, 3, 3), torch.randn(2, 4, 3, 3))
        cfg = DistillConfig(tau=0.6, per_sample_hinge=per_sample)
        reference, _ = distill_loss(s, t, cfg)
        scaled_student = bundle(*(c * a for _, a in s))
        scaled_teacher = bundle(*(c * a for _, a in t))
        self.assertAlmostEqual(float(distill_loss(scaled_student, t, cfg)[0]), float(reference), places=5)
        self.assertAlmostEqual(float(distill_loss(s, scaled_teacher, cfg)[0]), float(reference), places=5)

    @parameterized.expand([[-50.0], [0.0], [7.5], [100.0]])
    def test_block_weights_ignore_logit_shift(self, shift):
        logits = torch.tensor([0.3, -1.2, 2.0, 0.0])
        self.assertTrue(torch.allclose(block_weights(logits + shift), block_weights(logits), atol=1e-6))

    @parameterized.expand([[[0.0]], [[0.0, 0.0]], [[5.0, -5.0, 0.1]], [[30.0, -30.0]]])
    def test_block_weights_lie_on_simplex(self, logits):
        weights = block_weights(torch.tensor(logits))
        self.assertTrue(bool((weights > 0).all()))
        self.assertAlmostEqual(float(weights.sum()), 1.0, places=6)

    def test_log_two_logits_give_two_thirds(self):
        weights = block_weights(torch.tensor([math.log(2.0), 0.0]))
        self.assertAlmostEqual(float(weights[0]), 2 / 3, places=6)
        self.assertAlmostEqual(float(weights[1]), 1 / 3, places=6)

    def test_cosines_point_four_and_point_six_at_default_tau(self):
        s = bundle(torch.tensor([[1.0, 0.0]]), torch.tensor([[1.0, 0.0]]))
        t = bundle(torch.tensor([[0.4, math.sqrt(0.84)]]), torch.tensor([[0.6, 0.8]]))
        loss, hinges = distill_loss(s, t, DistillConfig(tau=0.6))
        self.assertAlmostEqual(float(hinges[0]), 0.2, places=5)
        self.assertAlmostEqual(float(hinges[1]), 0.0, places=6)
        self.assertAlmostEqual(float(loss), 0.1, places=5)


class TestStrictCosine(TestCase):
    @parameterized.expand([[False], [True]])
    def test_zero_vector_raises_when_strict(self, spatial):
        a = torch.zeros(1, 2, 2, 2)
        with self.assertRaises(DegenerateValueError) as ctx:
            cosine(a, torch.ones(1, 2, 2, 2), spatial=spatial, strict=True)
        self.assertEqual(ctx.exception.exit_code, 4)

    def test_nonzero_vectors_pass_when_strict(self):
        a = torch.rand(2, 5) + 0.1
        self.assertTrue(torch.allclose(cosine(a, a, strict=True), torch.ones(2), atol=1e-6))

    def test_losses_propagate_strict_setting(self):
        f = torch.rand(2, 4) + 0.1
        taps = bundle(torch.rand(2, 3), torch.zeros(2, 3))
        compute_losses(f, f, taps, taps, DistillConfig())
        with self.assertRaises(DegenerateValueError):
            compute_losses(f, f, taps, taps, DistillConfig(strict_cosine=True))
        with self.assertRaises(DegenerateValueError):
            adv_loss(torch.zeros(2, 4), f, strict=True)
