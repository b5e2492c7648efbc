import math
from unittest import TestCase

import pandas as pd
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from parameterized import parameterized

from structattack.evaluator.metrics import (
    PredictionRecord,
    aggregate,
    compute_metrics,
    make_records,
    psnr,
)
from structattack.shared.errors import ShapeError, UndefinedMetricError


def records_from(y, clean, adv):
    return make_records(range(len(y)), y, clean, adv)


def prediction_triples(classes: int, max_size: int):
    """Lists of (label, clean prediction, attacked prediction)."""
    label = st.integers(0, classes - 1)
    return st.lists(st.tuples(label, label, label), min_size=1, max_size=max_size)


def brute_force(records):
    """Set definitions enumerated directly."""
    D = set(range(len(records)))
    C = {i for i in D if records[i].clean == records[i].label}
    I = D - C  # noqa: E741
    acc = len({i for i in D if records[i].adv == records[i].label}) / len(D)
    fr = len({i for i in D if records[i].adv != records[i].clean}) / len(D)
    asr = len({i for i in C if records[i].adv != records[i].label}) / len(C) if C else None
    acr = len({i for i in I if records[i].adv == records[i].label}) / len(I) if I else None
    return {"accuracy": acc, "fr": fr, "asr": asr, "acr": acr, "n_clean_correct": len(C), "n_clean_wrong": len(I)}


class TestComputeMetrics(TestCase):
    def test_worked_example(self):
        report = compute_metrics(records_from([0, 0, 1, 1, 2], [0, 1, 1, 2, 2], [1, 1, 0, 1, 2]))
        self.assertAlmostEqual(report.accuracy, 0.4)
        self.assertAlmostEqual(report.asr, 2 / 3)
        self.assertAlmostEqual(report.fr, 0.6)
        self.assertAlmostEqual(report.acr, 0.5)
        self.assertEqual((report.n_clean_correct, report.n_clean_wrong), (3, 2))
        self.assertEqual(report.undefined, [])

    def test_no_prediction_changes(self):
        report = compute_metrics(records_from([0, 1, 2, 0], [0, 1, 0, 1], [0, 1, 0, 1]))
        self.assertEqual((report.fr, report.asr, report.acr), (0.0, 0.0, 0.0))
        self.assertEqual(report.accuracy, report.clean_accuracy)

    def test_all_clean_correct_all_fooled(self):
        report = compute_metrics(records_from([0, 1, 2], [0, 1, 2], [1, 2, 0]))
        self.assertEqual((report.asr, report.fr, report.accuracy), (1.0, 1.0, 0.0))
        self.assertIsNone(report.acr)
        self.assertEqual(report.undefined, ["acr"])

    def test_all_clean_wrong(self):
        report = compute_metrics(records_from([0, 0], [1, 2], [0, 2]))
        self.assertIsNone(report.asr)
        self.assertEqual(report.acr, 0.5)

    def test_empty(self):
        with self.assertRaises(UndefinedMetricError):
            compute_metrics([])

    @settings(max_examples=1000, deadline=None)
    @given(triples=prediction_triples(classes=5, max_size=50))
    def test_matches_brute_force_on_random_sets(self, triples):
        records = records_from(*zip(*triples))
        report = compute_metrics(records)
        expected = brute_force(records)
        for name, value in expected.items():
            self.assertEqual(getattr(report, name), value, name)
        for name in ("accuracy", "fr", "asr", "acr"):
            value = getattr(report, name)
            self.assertTrue(value is None or 0.0 <= value <= 1.0)
        self.assertEqual(report.n_clean_correct + report.n_clean_wrong, report.n_total)

    @settings(max_examples=300, deadline=None)
    @given(triples=prediction_triples(classes=4, max_size=30))
    def test_flip_decomposition(self, triples):
        r = compute_metrics(records_from(*zip(*triples)))
        lhs = r.fr * r.n_total
        rhs = (r.asr or 0.0) * r.n_clean_correct + (r.acr or 0.0) * r.n_clean_wrong
        self.assertGreaterEqual(lhs + 1e-9, rhs)
        self.assertAlmostEqual(lhs, rhs + r.n_wrong_to_wrong, places=9)

    def test_decomposition_equality_without_wrong_to_wrong(self):
        # initially wrong samples either stay put or become correct
        records = records_from([0, 1, 2, 3, 4, 0], [0, 1, 0, 1, 4, 3], [2, 1, 2, 3, 0, 3])
        r = compute_metrics(records)
        self.assertEqual(r.n_wrong_to_wrong, 0)
        self.assertAlmostEqual(r.fr * r.n_total, r.asr * r.n_clean_correct + r.acr * r.n_clean_wrong)

    @settings(max_examples=100, deadline=None)
    @given(data=st.data())
    def test_permutation_invariance(self, data):
        triples = data.draw(prediction_triples(classes=5, max_size=40))
        shuffled = data.draw(st.permutations(triples))
        self.assertEqual(
            compute_metrics(records_from(*zip(*triples))), compute_metrics(records_from(*zip(*shuffled)))
        )

    def test_report_dict_roundtrip(self):
        report = compute_metrics(records_from([0, 1], [0, 0], [1, 1]))
        self.assertEqual(type(report).from_dict(report.to_dict()), report)


class TestAggregate(TestCase):
    def test_mean_row_skips_undefined(self):
        a = compute_metrics(records_from([0, 1], [0, 0], [1, 1]))  # asr 1, acr 1
        b = compute_metrics(records_from([0, 1], [0, 1], [0, 0]))  # asr 0.5, acr undefined
        table = aggregate([("a", a), ("b", b)])
        self.assertEqual(list(table.index), ["a", "b", "mean"])
        self.assertAlmostEqual(table.loc["mean", "asr"], 0.75)
        self.assertAlmostEqual(table.loc["mean", "acr"], 1.0)
        self.assertTrue(pd.isna(table.loc["b", "acr"]))
        self.assertAlmostEqual(table.loc["mean", "accuracy"], (0.5 + 0.5) / 2)


class TestPSNR(TestCase):
    @parameterized.expand([[0.1, 20.0], [0.01, 40.0]])
    def test_uniform_offset(self, offset, expected):
        x = torch.full((2, 3, 4, 4), 0.5)
        self.assertAlmostEqual(psnr(x, x + offset), expected, places=3)

    def test_identical_is_infinite(self):
        x = torch.rand(1, 3, 4, 4)
        self.assertTrue(math.isinf(psnr(x, x)))

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            psnr(torch.rand(1, 3, 4, 4), torch.rand(1, 3, 4, 5))
