import numpy as np
import pytest

import denoisekit.diffgraph as dg
from denoisekit import recognizer as rec
from denoisekit.cochlea import FilterBankConfig
from denoisekit.errors import ConfigError, ShapeError

FB = FilterBankConfig(n_filters=12, f_min_hz=40, f_max_hz=3600,
                      sample_rate_hz=8000, downsample_to_hz=4000)

SMALL = rec.RecognizerConfig(
    layers=(rec.LayerSpec(6, 3, 5, 1, 2), rec.LayerSpec(8, 3, 3, 2, 2),
            rec.LayerSpec(8, 3, 3, 2, 2), rec.LayerSpec(12, 3, 3, 3, 2)),
    n_classes=8, seed=5, filter_bank=FB)


class TestBuild:
    def test_same_seed_bitwise_identical(self):
        a, b = rec.build(SMALL), rec.build(SMALL)
        assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)

    def test_he_variance(self):
        big = rec.RecognizerConfig(
            layers=(rec.LayerSpec(64, 5, 5), rec.LayerSpec(64, 5, 5),
                    rec.LayerSpec(64, 3, 3), rec.LayerSpec(64, 3, 3)),
            n_classes=4, seed=0, filter_bank=FB)
        m = rec.build(big)
        w = m.params["conv1.w"]  # fan_in = 64*5*5
        fan_in = 64 * 5 * 5
        assert abs(w.var() / (2.0 / fan_in) - 1) < 0.2

    def test_layer_count_bounds(self):
        with pytest.raises(ConfigError):
            rec.RecognizerConfig(layers=(rec.LayerSpec(4, 3, 3),) * 3,
                                 filter_bank=FB).validate()
        with pytest.raises(ConfigError):
            rec.RecognizerConfig(layers=(rec.LayerSpec(4, 3, 3),) * 9,
                                 filter_bank=FB).validate()

    def test_checkpoint_round_trip(self, tmp_path):
        from denoisekit import trainer as tr
        m = rec.build(SMALL)
        m.trained = True
        path = tmp_path / "r.pdck"
        tr.save_checkpoint(m, None, path)
        m2, _ = tr.load_checkpoint(path)
        assert m2.trained
        assert m2.config == SMALL
        assert all(np.array_equal(m.params[k], m2.params[k]) for k in m.params)
        assert all(np.array_equal(m.running[k], m2.running[k]) for k in m.running)


class TestFeatures:
    def test_zero_input_zero_activations(self):
        m = rec.build(SMALL)
        feats = rec.features(m, np.zeros((12, 50)))
        assert all(np.all(f == 0) for f in feats)

    def test_shapes_follow_stride_arithmetic(self):
        m = rec.build(SMALL)
        f_dim, t_dim = 12, 64
        feats = rec.features(m, np.abs(np.random.default_rng(0).standard_normal((f_dim, t_dim))))
        f_cur, t_cur = f_dim, t_dim
        for tap, layer in zip(feats, SMALL.layers):
            assert tap.shape == (layer.channels, f_cur, t_cur)
            f_cur = -(-f_cur // layer.pool_stride_freq)
            t_cur = -(-t_cur // layer.pool_stride_time)

    def test_wrong_band_count_rejected(self):
        m = rec.build(SMALL)
        with pytest.raises(ShapeError):
            rec.features(m, np.zeros((5, 50)))

    def test_distinct_inputs_distinct_features(self):
        m = rec.build(SMALL)
        rng = np.random.default_rng(1)
        a = rec.features(m, np.abs(rng.standard_normal((12, 40))))
        b = rec.features(m, np.abs(rng.standard_normal((12, 40))))
        assert any(not np.allclose(x, y) for x, y in zip(a, b))

    def test_frozen_mode_is_pure(self):
        m = rec.build(SMALL)
        x = np.abs(np.random.default_rng(2).standard_normal((12, 40)))
        r1 = rec.features(m, x)
        running_before = {k: v.copy() for k, v in m.running.items()}
        r2 = rec.features(m, x)
        assert all(np.array_equal(a, b) for a, b in zip(r1, r2))
        assert all(np.array_equal(running_before[k], m.running[k]) for k in m.running)

    def test_input_gradient_passes_grad_check(self):
        m = rec.build(SMALL)
        for k in m.params:
            m.params[k] = m.params[k].astype(np.float64)
        x0 = np.abs(np.random.default_rng(3).standard_normal((12, 20))) + 0.05

        def f(v):
            vals = {k: dg.const(p) for k, p in m.params.items()}
            taps, _ = rec.features_graph(vals, m.running, m.config, v, taps_only=True)
            total = None
            for t in taps:
                s = dg.mean(t)
                total = s if total is None else dg.add(total, s)
            return total

        assert dg.grad_check(f, dg.Value(x0)) < 1e-5


class TestToyTraining:
    @pytest.fixture(scope="class")
    def corpus(self):
        fb = rec.word_task_filter_bank(8000)
        return rec.build_toy_word_corpus(fb, n_train_per_class=4, n_val_per_class=2,
                                         seed=0)

    def test_zero_steps_leaves_parameters(self, corpus):
        cfg = rec.loss_net_config(8000)
        m = rec.build(cfg)
        before = {k: v.copy() for k, v in m.params.items()}
        rec.train_toy_words(m, corpus, steps=0)
        assert all(np.array_equal(before[k], m.params[k]) for k in m.params)

    def test_untrained_accuracy_near_chance(self, corpus):
        m = rec.build(rec.loss_net_config(8000, seed=3))
        acc = rec.accuracy(m, corpus.val_features, corpus.val_words)
        assert abs(acc - 1 / 16) <= 0.05 + 1e-9

    @pytest.mark.slow
    def test_short_training_improves(self, corpus):
        m = rec.build(rec.loss_net_config(8000, seed=1))
        before = rec.accuracy(m, corpus.val_features, corpus.val_words)
        res = rec.train_toy_words(m, corpus, steps=220, lr=2e-3, seed=0, val_every=220)
        assert res.model.trained
        assert res.final_val_accuracy > before + 0.2
