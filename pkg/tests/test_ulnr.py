import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safebal.errors import ConfigError, ContractError
from safebal.nncore import Rng
from safebal.telemetry import Window
from safebal import ulnr


def make_windows(labels):
    return [
        Window(f"w{i:05d}", np.full((25, 4), float(i)), int(lab), 0)
        for i, lab in enumerate(labels)
    ]


class TestZscore:
    def test_center_maps_to_zero(self):
        scores = np.array([1.0, 2.0, 3.0])
        labels = np.zeros(3, dtype=int)
        stats, z = ulnr.zscore(scores, labels)
        assert stats.mu == pytest.approx(2.0)
        assert stats.sigma == pytest.approx(math.sqrt(2.0 / 3.0), abs=1e-12)
        assert stats.sigma == pytest.approx(0.8165, abs=1e-4)
        assert z[1] == pytest.approx(0.0, abs=1e-12)

    def test_unit_deviation(self):
        scores = np.array([1.0, 2.0, 3.0, 2.0 + math.sqrt(2.0 / 3.0)])
        labels = np.array([0, 0, 0, 1])
        stats, z = ulnr.zscore(scores[:3], labels[:3])
        _, z_all = ulnr.zscore(scores, np.array([0, 0, 0, 1]))
        # score mu + sigma maps to 1 up to the epsilon guard
        # (safe stats exclude the unsafe 4th entry)
        assert abs(z_all[3] - 1.0) < 1e-7

    def test_degenerate_all_identical(self):
        scores = np.full(5, 3.0)
        stats, z = ulnr.zscore(scores, np.zeros(5, dtype=int))
        assert stats.sigma == 0.0
        np.testing.assert_array_equal(z, np.zeros(5))

    def test_safe_stats_exclude_unsafe(self):
        scores = np.array([0.0, 0.0, 100.0])
        labels = np.array([0, 0, 1])
        stats, _ = ulnr.zscore(scores, labels)
        assert stats.mu == 0.0

    def test_no_safe_windows_rejected(self):
        with pytest.raises(ConfigError):
            ulnr.zscore(np.array([1.0, 2.0]), np.array([1, 1]))


class TestFlipProbability:
    def test_zero_at_tau(self):
        assert float(ulnr.flip_probability(3.0, 0, 3.0)) == 0.0

    def test_tanh_one_above_tau(self):
        p = float(ulnr.flip_probability(4.0, 0, 3.0))
        assert p == pytest.approx(0.761594, abs=1e-6)
        assert p == pytest.approx(math.tanh(1.0), abs=1e-12)

    def test_unsafe_always_zero(self):
        for z in (-5.0, 0.0, 3.0, 50.0):
            assert float(ulnr.flip_probability(z, 1, 0.0)) == 0.0

    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-5, 5))
    @settings(max_examples=60, deadline=None)
    def test_monotonicity(self, z, dz, tau):
        p1 = float(ulnr.flip_probability(z, 0, tau))
        p2 = float(ulnr.flip_probability(z + abs(dz), 0, tau))
        assert p2 >= p1                      # non-decreasing in z
        p3 = float(ulnr.flip_probability(z, 0, tau + 1.0))
        assert p3 <= p1                      # non-increasing in tau
        assert 0.0 <= p1 < 1.0
        if z <= tau:
            assert p1 == 0.0


class TestRelabel:
    def test_zero_probability_regime(self):
        windows = make_windows([0] * 20 + [1] * 2)
        scores = np.linspace(0, 1, 22)  # all z small
        out, report = ulnr.relabel(windows, scores, tau=10.0, rng=Rng(0))
        assert report.labels_flipped == 0
        assert [w.safety_label for w in out] == [w.safety_label for w in windows]

    def test_saturation_regime(self):
        windows = make_windows([0] * 50 + [1] * 2)
        rng = np.random.default_rng(0)
        scores = np.concatenate([rng.normal(0, 1, 50), [0, 0]])
        out, report = ulnr.relabel(windows, scores, tau=-50.0, rng=Rng(1))
        assert report.labels_flipped == 50  # every safe window flips
        assert all(w.safety_label == 1 for w in out)

    def test_never_unflips_unsafe(self):
        windows = make_windows([0, 1, 0, 1, 0])
        scores = np.array([5.0, -100.0, 5.0, -100.0, 5.0])
        out, _ = ulnr.relabel(windows, scores, tau=-10.0, rng=Rng(2))
        assert out[1].safety_label == 1
        assert out[3].safety_label == 1

    def test_original_windows_not_mutated(self):
        windows = make_windows([0] * 10)
        scores = np.full(10, 100.0)
        before = [w.safety_label for w in windows]
        ulnr.relabel(windows, scores, tau=-10.0, rng=Rng(3))
        assert [w.safety_label for w in windows] == before

    def test_determinism(self):
        windows = make_windows([0] * 200 + [1] * 5)
        rng = np.random.default_rng(7)
        scores = np.concatenate([rng.normal(0, 1, 200), np.full(5, 2.0)])
        _, r1 = ulnr.relabel(windows, scores, 0.5, Rng(99))
        _, r2 = ulnr.relabel(windows, scores, 0.5, Rng(99))
        assert [rec.flipped for rec in r1.records] == [rec.flipped for rec in r2.records]
        assert r1.labels_flipped == r2.labels_flipped

    def test_misaligned_scores_rejected(self):
        with pytest.raises(ContractError):
            ulnr.relabel(make_windows([0, 0]), np.zeros(3), 1.0, Rng(0))

    def test_report_accounting(self):
        windows = make_windows([0] * 90 + [1] * 10)
        rng = np.random.default_rng(3)
        scores = np.concatenate([rng.normal(0, 1, 90), np.zeros(10)])
        out, report = ulnr.relabel(windows, scores, 0.8, Rng(5))
        flipped_records = [r for r in report.records if r.flipped]
        assert report.labels_flipped == len(flipped_records)
        assert all(r.orig_label == 0 and r.new_label == 1 for r in flipped_records)
        assert report.flip_ratio == pytest.approx(report.labels_flipped / 100)
        assert report.final_minority_ratio == pytest.approx((10 + report.labels_flipped) / 100)
        unsafe_out = sum(w.safety_label for w in out)
        assert unsafe_out == 10 + report.labels_flipped

    def test_flip_count_within_poisson_binomial_interval(self):
        # 10,000 safe windows with known flip probabilities; one relabel pass
        # must land inside the central 99.9% interval of the sum of Bernoullis
        n = 10_000
        rng = np.random.default_rng(11)
        scores = rng.normal(0.0, 1.0, n)
        windows = make_windows([0] * n)
        labels = np.zeros(n, dtype=int)
        tau = 1.0
        _, z = ulnr.zscore(scores, labels)
        p = np.asarray(ulnr.flip_probability(z, labels, tau))
        mean, sd = p.sum(), math.sqrt(float((p * (1 - p)).sum()))
        _, report = ulnr.relabel(windows, scores, tau, Rng(123))
        assert abs(report.labels_flipped - mean) <= 3.29 * sd

    def test_expected_flips_over_seeds(self):
        n = 400
        rng = np.random.default_rng(2)
        scores = rng.normal(0, 1, n)
        windows = make_windows([0] * n)
        labels = np.zeros(n, dtype=int)
        _, z = ulnr.zscore(scores, labels)
        p = np.asarray(ulnr.flip_probability(z, labels, 1.0))
        counts = [ulnr.relabel(windows, scores, 1.0, Rng(s))[1].labels_flipped for s in range(100)]
        se = math.sqrt(float((p * (1 - p)).sum()) / 100)
        assert abs(np.mean(counts) - p.sum()) <= 3 * se


class TestSweep:
    def test_monotone_per_seed(self):
        n = 300
        rng = np.random.default_rng(4)
        scores = np.concatenate([rng.normal(0, 1, n - 10), np.zeros(10)])
        windows = make_windows([0] * (n - 10) + [1] * 10)
        rows = ulnr.sweep_tau(windows, scores, taus=(0.0, 0.5, 1.0, 2.0), seeds=(1, 2, 3))
        for seed in (1, 2, 3):
            flips = [r["labels_flipped"] for r in rows if r["seed"] == seed]
            assert flips == sorted(flips, reverse=True)

    def test_subset_property_same_seed(self):
        # with one seed, the flip set at a larger tau is a subset of the
        # flip set at a smaller tau (same uniform draws)
        n = 500
        rng = np.random.default_rng(8)
        scores = rng.normal(0, 1, n)
        windows = make_windows([0] * n)
        _, rep_low = ulnr.relabel(windows, scores, 0.2, Rng(42))
        _, rep_high = ulnr.relabel(windows, scores, 1.0, Rng(42))
        low = {r.window_id for r in rep_low.records if r.flipped}
        high = {r.window_id for r in rep_high.records if r.flipped}
        assert high <= low

    def test_accounting_identity(self):
        windows = make_windows([0] * 95 + [1] * 5)
        rng = np.random.default_rng(9)
        scores = rng.normal(0, 1, 100)
        rows = ulnr.sweep_tau(windows, scores, taus=(0.5,), seeds=(0, 1))
        for row in rows:
            assert row["final_ratio"] == pytest.approx(
                (5 + row["labels_flipped"]) / 100
            )

    def test_csv_shape(self, tmp_path):
        windows = make_windows([0] * 20 + [1] * 2)
        scores = np.linspace(-1, 1, 22)
        rows = ulnr.sweep_tau(windows, scores, taus=(0.5, 1.0), seeds=(0, 1))
        path = ulnr.write_sweep_csv(tmp_path / "sweep.csv", rows)
        lines = path.read_text().splitlines()
        assert lines[0] == "tau,seed,labels_flipped,flip_ratio,final_ratio"
        assert len(lines) == 1 + 2 * 3  # per-seed rows plus one mean row per tau

    def test_empty_tau_list_rejected(self):
        with pytest.raises(ConfigError):
            ulnr.sweep_tau(make_windows([0, 1]), np.zeros(2), taus=(), seeds=(0,))


class TestReportFiles:
    def test_csv_and_summary(self, tmp_path):
        windows = make_windows([0] * 30 + [1] * 3)
        rng = np.random.default_rng(6)
        scores = np.concatenate([rng.normal(0, 1, 30), np.zeros(3)])
        _, report = ulnr.relabel(windows, scores, 0.5, Rng(77))
        csv_path = report.write_csv(tmp_path / "report.csv")
        assert csv_path.read_text().splitlines()[0] == "window_id,orig_label,z,p_flip,flipped,new_label"
        summary_path = report.write_summary(tmp_path / "summary.json")
        payload = json.loads(summary_path.read_text())
        assert payload["seed"] == 77
        assert payload["labels_flipped"] == report.labels_flipped
        assert payload["tau"] == 0.5
