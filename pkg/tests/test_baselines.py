import numpy as np
import pytest

from safebal.errors import ConfigError, ContractError
from safebal.nncore import Rng
from safebal.telemetry import Window
from safebal import baselines


def make_windows(labels):
    return [Window(f"w{i:04d}", np.zeros((25, 4)), int(l), 0) for i, l in enumerate(labels)]


class TestClassWeights:
    def test_paper_scale_ratio(self):
        labels = [0] * 46 + [1]
        assert baselines.class_weights(labels) == (1.0, 46.0)

    def test_balanced(self):
        assert baselines.class_weights([0, 1, 0, 1]) == (1.0, 1.0)

    def test_counting(self):
        labels = [0] * 90 + [1] * 10
        w_safe, w_unsafe = baselines.class_weights(labels)
        assert (w_safe, w_unsafe) == (1.0, 9.0)

    def test_single_class_rejected(self):
        with pytest.raises(ConfigError):
            baselines.class_weights([0, 0, 0])


class TestRandomUndersample:
    def test_target_one_to_one(self):
        windows = make_windows([0] * 460 + [1] * 10)
        out = baselines.random_undersample(windows, 1.0, Rng(3))
        labels = [w.safety_label for w in out]
        assert labels.count(1) == 10
        assert labels.count(0) == 10

    def test_noop_when_already_below_target(self):
        windows = make_windows([0] * 10 + [1] * 10)
        out = baselines.random_undersample(windows, 5.0, Rng(0))
        assert len(out) == 20

    def test_deterministic(self):
        windows = make_windows([0] * 100 + [1] * 4)
        ids1 = [w.window_id for w in baselines.random_undersample(windows, 2.0, Rng(9))]
        ids2 = [w.window_id for w in baselines.random_undersample(windows, 2.0, Rng(9))]
        assert ids1 == ids2

    def test_minority_never_dropped(self):
        windows = make_windows([0] * 50 + [1] * 7)
        out = baselines.random_undersample(windows, 3.0, Rng(1))
        assert sum(w.safety_label for w in out) == 7

    def test_output_ratio_bounded(self):
        windows = make_windows([0] * 200 + [1] * 8)
        for ratio in (1.0, 2.5, 10.0):
            out = baselines.random_undersample(windows, ratio, Rng(2))
            labels = [w.safety_label for w in out]
            assert labels.count(0) <= ratio * labels.count(1)

    def test_order_preserved(self):
        windows = make_windows([0] * 30 + [1] * 3)
        out = baselines.random_undersample(windows, 1.0, Rng(4))
        ids = [w.window_id for w in out]
        assert ids == sorted(ids)

    def test_ratio_below_one_rejected(self):
        with pytest.raises(ContractError):
            baselines.random_undersample(make_windows([0, 1]), 0.5, Rng(0))
