import numpy as np
import pytest

from safebal.errors import ConfigError, ContractError
from safebal.nncore import AdamWConfig, Rng, bce_with_logits, check_gradients
from safebal.telemetry import Window
from safebal import uncertainty as unc


def small_config(epochs=5, dropout=0.0):
    return unc.UncertaintyConfig(
        proj_dim=8, expand_dim=16, head_dim=4, dropout=dropout,
        optim=AdamWConfig(1e-3, 1e-4, batch_size=32, epochs=epochs),
    )


def oscillating_window(wid, rng, amplitude):
    values = rng.standard_normal((25, 4)) * 0.05
    values[:, 0] += amplitude * np.where(np.arange(25) % 2 == 0, 1.0, -1.0)
    return values


def make_dataset(n, rng, uncertain_frac=0.5):
    windows = []
    for i in range(n):
        uncertain = int(rng.uniform() < uncertain_frac)
        amp = 1.0 if uncertain else 0.0
        windows.append(Window(f"w{i:05d}", oscillating_window(i, rng, amp), 0, uncertain))
    return windows


class TestForward:
    def test_transform_equal_projection_passthrough(self):
        # if the transform pathway output equals the projected input, the
        # blended output equals the projected input for any gate value
        cfg = small_config()
        rng = Rng(0)
        model = unc.init_uncertainty_model(cfg, rng)
        p = cfg.proj_dim
        # identity transform: W2 @ relu(W1 x + b1) + b2 == x on the relu-active cone
        model.params["W1"] = np.vstack([np.eye(p), np.zeros((cfg.expand_dim - p, p))])
        model.params["b1"] = np.full(cfg.expand_dim, 10.0)  # keep relu active
        model.params["W2"] = np.hstack([np.eye(p), np.zeros((p, cfg.expand_dim - p))])
        model.params["b2"] = np.full(p, -10.0)
        feats = rng.standard_normal((3, 16))
        proj, _ = _projected(model, feats)
        blended = _blended(model, feats)
        np.testing.assert_allclose(blended, proj, atol=1e-10)

    def test_gate_closed_limit(self):
        cfg = small_config()
        model = unc.init_uncertainty_model(cfg, Rng(1))
        model.params["W_gate"] = np.zeros_like(model.params["W_gate"])
        model.params["b_gate"] = np.full_like(model.params["b_gate"], -1000.0)
        feats = Rng(2).standard_normal((4, 16))
        proj, _ = _projected(model, feats)
        blended = _blended(model, feats)
        np.testing.assert_allclose(blended, proj, atol=1e-6)

    def test_gate_range_open_interval(self):
        cfg = small_config()
        model = unc.init_uncertainty_model(cfg, Rng(3))
        feats = Rng(4).standard_normal((10, 16)) * 5
        gate = _gate(model, feats)
        assert np.all(gate > 0.0)
        assert np.all(gate < 1.0)

    def test_inference_deterministic(self):
        cfg = small_config(dropout=0.3)
        model = unc.init_uncertainty_model(cfg, Rng(5))
        feats = Rng(6).standard_normal(16)
        a = unc.forward(model, feats, training=False)
        b = unc.forward(model, feats, training=False)
        assert a == b

    def test_training_mode_dropout_varies(self):
        cfg = small_config(dropout=0.5)
        model = unc.init_uncertainty_model(cfg, Rng(5))
        feats = Rng(6).standard_normal(16)
        rng = Rng(7)
        outs = {unc.forward(model, feats, training=True, rng=rng) for _ in range(8)}
        assert len(outs) > 1


def _projected(model, feats):
    from safebal import nncore
    pre, _ = nncore.dense_forward(feats, model.params["W_proj"], model.params["b_proj"])
    return nncore.relu_forward(pre)


def _blended(model, feats):
    from safebal import nncore
    proj, _ = _projected(model, feats)
    pre_e, _ = nncore.dense_forward(proj, model.params["W1"], model.params["b1"])
    eh, _ = nncore.relu_forward(pre_e)
    h, _ = nncore.dense_forward(eh, model.params["W2"], model.params["b2"])
    g = _gate(model, feats)
    return g * h + (1 - g) * proj


def _gate(model, feats):
    from safebal import nncore
    proj, _ = _projected(model, feats)
    pre_g, _ = nncore.dense_forward(proj, model.params["W_gate"], model.params["b_gate"])
    return nncore.sigmoid(pre_g)


class TestGradients:
    def test_full_stack_gradcheck(self):
        cfg = small_config()
        model = unc.init_uncertainty_model(cfg, Rng(11))
        rng = Rng(12)
        feats = rng.standard_normal((6, 16))
        y = (rng.uniform(size=6) > 0.5).astype(float)

        def loss_fn(params):
            logits, cache = unc.forward_batch(params, feats)
            loss, dlogits = bce_with_logits(logits, y)
            return loss, unc.backward_batch(dlogits, cache)

        report = check_gradients(loss_fn, model.params)
        assert report.passed, report.summary()
        assert report.max_rel_error < 1e-4


class TestTraining:
    def test_separable_data_reaches_f1(self):
        rng = Rng(21)
        train = make_dataset(300, rng)
        val = make_dataset(120, rng)
        model, history = unc.train_uncertainty(train, val, small_config(epochs=12), seed=5)
        best = max(h.val_f1 for h in history)
        assert best >= 0.95
        # independent oracle: logistic regression on the single std(r)
        # feature separates the same data at least as well
        from sklearn.linear_model import LogisticRegression
        from safebal.metrics import prf1_from_predictions
        xs = np.array([[w.values[:, 0].std()] for w in train])
        ys = np.array([w.uncertainty_label for w in train])
        xv = np.array([[w.values[:, 0].std()] for w in val])
        yv = np.array([w.uncertainty_label for w in val])
        lr = LogisticRegression().fit(xs, ys)
        f1_oracle = prf1_from_predictions(lr.predict(xv), yv)[2]
        assert f1_oracle >= 0.95

    def test_zero_epochs_returns_initialized_model(self):
        rng = Rng(22)
        train = make_dataset(50, rng)
        cfg = small_config(epochs=0)
        model, history = unc.train_uncertainty(train, train[:10], cfg, seed=9)
        reference = unc.init_uncertainty_model(cfg, Rng(9).spawn("init"))
        assert history == []
        for key in reference.params:
            np.testing.assert_array_equal(model.params[key], reference.params[key])

    def test_same_seed_identical_params(self):
        rng = Rng(23)
        train = make_dataset(80, rng)
        val = make_dataset(30, Rng(24))
        cfg = small_config(epochs=3, dropout=0.3)
        m1, _ = unc.train_uncertainty(train, val, cfg, seed=13)
        m2, _ = unc.train_uncertainty(train, val, cfg, seed=13)
        for key in m1.params:
            np.testing.assert_array_equal(m1.params[key], m2.params[key])

    def test_empty_training_set_rejected(self):
        with pytest.raises(ConfigError):
            unc.train_uncertainty([], [], small_config(), seed=0)

    def test_missing_labels_rejected(self):
        w = Window("w", np.zeros((25, 4)), 0, None)
        with pytest.raises(ContractError):
            unc.train_uncertainty([w], [], small_config(), seed=0)


class TestScoreAll:
    def test_empty_input(self):
        model = unc.init_uncertainty_model(small_config(), Rng(0))
        assert len(unc.score_all(model, [])) == 0

    def test_duplicates_score_equal(self):
        model = unc.init_uncertainty_model(small_config(), Rng(1))
        w = Window("w", Rng(2).standard_normal((25, 4)), 0, 0)
        scores = unc.score_all(model, [w, w, w])
        assert scores[0] == scores[1] == scores[2]

    def test_separable_scores_ordered_by_class(self):
        rng = Rng(31)
        train = make_dataset(300, rng)
        val = make_dataset(100, rng)
        model, _ = unc.train_uncertainty(train, val, small_config(epochs=12), seed=3)
        test = make_dataset(100, Rng(32))
        scores = unc.score_all(model, test)
        labels = np.array([w.uncertainty_label for w in test])
        assert scores[labels == 1].mean() > scores[labels == 0].mean()

    def test_order_preserving(self):
        model = unc.init_uncertainty_model(small_config(), Rng(4))
        windows = make_dataset(10, Rng(5))
        scores = unc.score_all(model, windows)
        singles = np.array([
            unc.forward(model, _features_of(w)) for w in windows
        ])
        np.testing.assert_allclose(scores, singles, atol=1e-12)


def _features_of(window):
    from safebal.features import extract_features
    return extract_features(window.values)


class TestConfig:
    def test_bottleneck_constraint(self):
        with pytest.raises(ConfigError):
            unc.UncertaintyConfig(proj_dim=64, expand_dim=64)

    def test_roundtrip_model_file(self, tmp_path):
        cfg = small_config()
        model = unc.init_uncertainty_model(cfg, Rng(9))
        model.feat_mean = Rng(10).standard_normal(16)
        model.feat_std = np.abs(Rng(11).standard_normal(16)) + 0.5
        path = unc.save(model, tmp_path / "u.model")
        loaded = unc.load(path)
        assert loaded.config.proj_dim == cfg.proj_dim
        for key in model.params:
            np.testing.assert_array_equal(loaded.params[key], model.params[key])
        np.testing.assert_array_equal(loaded.feat_mean, model.feat_mean)
        w = Window("w", Rng(12).standard_normal((25, 4)), 0, 0)
        assert unc.score_all(model, [w])[0] == unc.score_all(loaded, [w])[0]
