"""Tests for odf.metrics: chamfer, depth F-score, mask scores, reports."""

import csv
import json

import numpy as np
import pytest

from odf.domain import make_rng
from odf.errors import DataError
from odf.metrics import (
    CHAMFER_VARIANT,
    chamfer,
    chamfer_brute_force,
    depth_metrics,
    fscore_depth,
    mask_metrics,
    pivot,
    report_rows,
    write_report,
)


def _cloud(rng, n):
    return rng.uniform(-1, 1, size=(n, 3))


class TestChamfer:
    def test_single_points(self):
        assert chamfer([[0, 0, 0]], [[0.01, 0, 0]]) == pytest.approx(0.2)

    def test_identical_sets_are_zero(self, rng):
        a = _cloud(rng, 500)
        assert chamfer(a, a) == 0.0

    def test_symmetric_exactly(self, rng):
        a, b = _cloud(rng, 700), _cloud(rng, 300)
        assert chamfer(a, b) == chamfer(b, a)

    def test_kd_tree_matches_brute_force(self, rng):
        a, b = _cloud(rng, 5000), _cloud(rng, 5000)
        assert chamfer(a, b) == chamfer_brute_force(a, b)

    def test_empty_set_raises(self):
        with pytest.raises(DataError, match="empty"):
            chamfer(np.zeros((0, 3)), [[0, 0, 0]])


class TestFscore:
    def test_perfect(self, rng):
        a = _cloud(rng, 100)
        assert fscore_depth(a, a) == pytest.approx(100.0)

    def test_half_precision(self, rng):
        gt = _cloud(rng, 100)
        pred = np.concatenate([gt, gt + 10.0])
        assert fscore_depth(pred, gt) == pytest.approx(200 / 3)

    def test_disjoint_sets_score_zero(self, rng):
        a = _cloud(rng, 50)
        assert fscore_depth(a, a + 5.0) == 0.0

    def test_monotone_in_threshold(self):
        rng = make_rng(3)
        a, b = _cloud(rng, 400), _cloud(rng, 400)
        scores = [fscore_depth(a, b, t) for t in (0.01, 0.05, 0.1, 0.3, 1.0)]
        assert scores == sorted(scores)
        assert scores[-1] == pytest.approx(100.0)

    def test_depth_metrics_bundle(self, rng):
        a, b = _cloud(rng, 200), _cloud(rng, 200)
        m = depth_metrics(a, b, 0.1)
        assert m.chamfer_x1000 == chamfer(a, b)
        assert m.fscore_depth == fscore_depth(a, b, 0.1)


class TestMaskMetrics:
    def test_perfect(self):
        gt = np.array([True, False, True, False])
        m = mask_metrics(gt, gt)
        assert (m.recall, m.precision, m.fscore) == (100.0, 100.0, 100.0)
        assert (m.tp, m.fp, m.fn, m.tn) == (2, 0, 0, 2)

    def test_all_positive_on_balanced_labels(self):
        gt = np.array([True, False] * 50)
        m = mask_metrics(np.ones(100, dtype=bool), gt)
        assert m.recall == 100.0
        assert m.precision == 50.0
        assert m.fscore == pytest.approx(200 / 3)

    def test_probabilities_are_thresholded(self):
        gt = np.array([True, True, False, False])
        m = mask_metrics(np.array([0.9, 0.4, 0.6, 0.1]), gt)
        assert (m.tp, m.fp, m.fn, m.tn) == (1, 1, 1, 1)

    def test_no_positives(self):
        m = mask_metrics(np.zeros(4, dtype=bool), np.zeros(4, dtype=bool))
        assert (m.recall, m.precision, m.fscore) == (0.0, 0.0, 0.0)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            mask_metrics(np.ones(3, dtype=bool), np.ones(4, dtype=bool))


class TestReports:
    def test_report_rows_long_form(self):
        rows = report_rows("n=3", {"chamfer_x1000": 0.5, "recall": 99}, "abc123")
        assert rows == [
            {"experiment": "n=3", "metric": "chamfer_x1000", "value": 0.5, "config_hash": "abc123"},
            {"experiment": "n=3", "metric": "recall", "value": 99.0, "config_hash": "abc123"},
        ]

    def test_report_rows_from_dataclass(self):
        m = mask_metrics(np.array([True, False]), np.array([True, False]))
        rows = report_rows("mask", m, "h")
        assert {r["metric"] for r in rows} == {"recall", "precision", "fscore", "tp", "fp", "fn", "tn"}

    def test_pivot(self):
        rows = report_rows("n=1", {"a": 1, "b": 2}, "h") + report_rows("n=3", {"a": 3, "c": 4}, "h")
        table, columns = pivot(rows)
        assert columns == ["experiment", "a", "b", "c"]
        assert table == [{"experiment": "n=1", "a": 1.0, "b": 2.0}, {"experiment": "n=3", "a": 3.0, "c": 4.0}]

    def test_write_report(self, tmp_path):
        rows = report_rows("n=1", {"chamfer_x1000": 0.1}, "h") + report_rows("n=5", {"chamfer_x1000": 0.05}, "h")
        write_report(rows, tmp_path / "r.json", tmp_path / "sub" / "r.csv", {"suite": "recursion"})

        doc = json.loads((tmp_path / "r.json").read_text())
        assert doc["rows"] == rows
        assert doc["chamfer_variant"] == CHAMFER_VARIANT
        assert doc["suite"] == "recursion"

        with open(tmp_path / "sub" / "r.csv", newline="") as f:
            lines = list(csv.reader(f))
        assert lines[0] == ["experiment", "chamfer_x1000"]
        assert [line[0] for line in lines[1:]] == ["n=1", "n=5"]
