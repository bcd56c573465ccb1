import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import gradient_check, lstm_forward_reference
from ticklstm.errors import CorruptFile, EmptyInput, ShapeMismatch, VersionMismatch
from ticklstm.neural import AdamState, CellState, EarlyStopping, LstmModel, LstmParams, \
    TrainConfig, adam_step, backward, batch_size, evaluate, forward, init_params, \
    learning_rate, load_model, loss, lstm_cell, save_model, softmax, train


def _jitter(params, rng, scale=0.3):
    for _, a in params.items():
        a += rng.normal(0.0, scale, a.shape)
    return params


class TestCell:
    def test_zero_params_zero_state(self):
        p = LstmParams.zeros(3, 2)
        s = lstm_cell(np.ones(2), CellState(np.zeros(3), np.zeros(3)), p)
        assert np.all(s.c == 0) and np.all(s.a == 0)

    def test_zero_params_carry_cell(self):
        p = LstmParams.zeros(3, 2)
        v = np.array([1.0, -2.0, 0.5])
        s = lstm_cell(np.ones(2), CellState(np.zeros(3), v), p)
        np.testing.assert_allclose(s.c, 0.5 * v, rtol=1e-15)
        np.testing.assert_allclose(s.a, 0.5 * np.tanh(0.5 * v), rtol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            lstm_cell(np.ones(3), CellState(np.zeros(3), np.zeros(3)), LstmParams.zeros(3, 2))


class TestForward:
    def test_zero_params_give_half(self):
        probs, _ = forward(np.ones((4, 7)), LstmParams.zeros(5, 7))
        assert probs.tolist() == [0.5, 0.5]

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_reference(self, seed):
        rng = np.random.default_rng(seed)
        p = _jitter(init_params(4, 7, rng), rng)
        x = rng.standard_normal((6, 7))
        np.testing.assert_allclose(forward(x, p)[0], lstm_forward_reference(x, p),
                                   rtol=1e-12, atol=1e-12)

    def test_cell_loop_agrees(self, rng):
        p = _jitter(init_params(3, 7, rng), rng)
        x = rng.standard_normal((5, 7))
        s = CellState(np.zeros(3), np.zeros(3))
        for row in x:
            s = lstm_cell(row, s, p)
        np.testing.assert_allclose(forward(x, p)[0], softmax(p.W_dense @ s.a + p.b_dense),
                                   rtol=1e-13)

    def test_batch_equals_singles(self, rng):
        p = init_params(4, 7, rng)
        X = rng.standard_normal((9, 5, 7))
        batch = forward(X, p)[0]
        for i in range(9):
            np.testing.assert_allclose(batch[i], forward(X[i], p)[0], rtol=1e-13)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31), scale=st.floats(0.0, 50.0))
    def test_softmax_normalised(self, seed, scale):
        rng = np.random.default_rng(seed)
        p = _jitter(init_params(3, 7, rng), rng, scale)
        probs = forward(rng.standard_normal((4, 3, 7)), p)[0]
        assert np.all(probs >= 0) and np.all(probs <= 1)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_inference_ignores_dropout_seed(self, rng):
        p = init_params(4, 7, 0)
        x = rng.standard_normal((3, 7))
        assert np.array_equal(forward(x, p)[0], forward(x, p, None)[0])

    def test_dropout_scales_kept_units(self):
        p = init_params(4, 7, 1)
        x = np.ones((2, 7))
        _, plain = forward(x, p)
        mask = np.array([True, False, True, False])
        _, dropped = forward(x, p, mask, keep_prob=0.5)
        np.testing.assert_allclose(dropped["h"][0], plain["h"][0] * mask * 2.0)


class TestLoss:
    def test_examples(self):
        assert loss([0.5, 0.5], [1, 0]) == pytest.approx(math.log(2))
        assert loss([0.5, 0.5], [0, 1]) == pytest.approx(math.log(2))
        assert loss([1.0, 0.0], [1, 0]) == pytest.approx(0.0, abs=1e-11)
        assert loss([0.0, 1.0], [1, 0]) == pytest.approx(-math.log(1e-12))

    def test_batch_mean(self):
        assert loss([[0.5, 0.5], [0.9, 0.1]], [[1, 0], [1, 0]]) == pytest.approx(
            (math.log(2) - math.log(0.9)) / 2)


class TestBackward:
    @pytest.mark.parametrize("seed", range(8))
    def test_gradient_check(self, seed):
        rng = np.random.default_rng(100 + seed)
        T, N, B = int(rng.integers(1, 9)), int(rng.integers(1, 7)), int(rng.integers(1, 4))
        p = _jitter(init_params(N, 7, rng), rng)
        X = rng.standard_normal((B, T, 7))
        Y = np.eye(2)[rng.integers(0, 2, B)]
        mask = rng.random((B, N)) < 0.5
        assert gradient_check(p, X, Y, mask) <= 1e-4

    def test_gradient_check_inference_mode(self, rng):
        p = _jitter(init_params(3, 7, rng), rng)
        assert gradient_check(p, rng.standard_normal((2, 4, 7)), np.eye(2)) <= 1e-4

    def test_saturated_dense_gradient_vanishes(self):
        p = LstmParams.zeros(2, 7)
        p.b_dense[:] = [40.0, -40.0]
        _, cache = forward(np.ones((3, 7)), p)
        g = backward(cache, np.array([1.0, 0.0]), p)
        assert np.abs(g.W_dense).max() < 1e-8 and np.abs(g.b_dense).max() < 1e-8

    def test_masked_units_get_no_dense_gradient(self, rng):
        p = _jitter(init_params(4, 7, rng), rng)
        mask = np.array([True, False, True, False])
        _, cache = forward(rng.standard_normal((5, 7)), p, mask)
        g = backward(cache, np.array([0.0, 1.0]), p)
        assert np.all(g.W_dense[:, ~mask] == 0.0)
        assert np.any(g.W_dense[:, mask] != 0.0)


class TestAdam:
    def test_first_step_moves_by_lr(self, rng):
        p = init_params(3, 7, rng)
        before = p.copy()
        g = p.zeros_like()
        for _, a in g.items():
            a[...] = rng.standard_normal(a.shape)
        adam_step(p, g, AdamState.for_params(p), 0.001)
        for name, a in p.items():
            np.testing.assert_allclose(a - getattr(before, name),
                                       -0.001 * np.sign(getattr(g, name)), atol=1e-6)

    def test_zero_gradient_leaves_params(self, rng):
        p = init_params(3, 7, rng)
        before = p.copy()
        state = AdamState.for_params(p)
        adam_step(p, p.zeros_like(), state, 0.001)
        assert p == before
        assert state.m == p.zeros_like() and state.v == p.zeros_like()

    def test_moments_decay_under_zero_gradient(self, rng):
        p = init_params(3, 7, rng)
        state = AdamState.for_params(p)
        g = p.zeros_like()
        for _, a in g.items():
            a[...] = 1.0
        adam_step(p, g, state, 0.001)
        m1, v1 = state.m.copy(), state.v.copy()
        adam_step(p, p.zeros_like(), state, 0.001)
        for name, a in state.m.items():
            np.testing.assert_allclose(a, 0.9 * getattr(m1, name), rtol=1e-15)
            np.testing.assert_allclose(getattr(state.v, name), 0.999 * getattr(v1, name),
                                       rtol=1e-15)

    def test_schedule(self):
        cfg = TrainConfig()
        lrs = [learning_rate(e, cfg) for e in (0, 15, 30, 45, 60)]
        np.testing.assert_allclose(lrs, [0.001, 0.0007, 0.0004, 0.0001, 0.0001], rtol=1e-12)
        assert [batch_size(e, cfg) for e in (0, 14, 15, 30, 99)] == [128, 128, 64, 32, 32]


class TestEarlyStopping:
    def test_patience(self):
        es = EarlyStopping(20, 1.05)
        trace = [1.0, 0.9, 0.8] + [0.8] * 40
        stops = [(e, es.update(e, v)) for e, v in enumerate(trace)]
        first = next(e for e, s in stops if s)
        assert first == 2 + 20 and stops[first][1] == "patience"

    def test_divergence(self):
        es = EarlyStopping(20, 1.05)
        trace = [1.0, 0.8, 0.83, 0.84, 0.8401, 0.85]
        res = [es.update(e, v) for e, v in enumerate(trace)]
        # 0.8401 is the first value above 1.05 * 0.8 = 0.84
        assert res[:5] == [None, None, None, None, "divergence"]

    def test_exactly_at_factor_does_not_diverge(self):
        es = EarlyStopping(20, 1.05)
        es.update(0, 1.0)
        assert es.update(1, 1.05) is None


class TestTrain:
    def _toy(self, rng, n=3000, T=3):
        X = rng.random((n, T, 3))
        up = X[:, -1, 0] > 0.5
        return X, np.column_stack([up, ~up]).astype(float)

    def test_learns_toy_rule(self, rng):
        X, Y = self._toy(rng)
        cfg = TrainConfig(max_epochs=40, seed=1)
        res = train(X[:2500], Y[:2500], X[2500:], Y[2500:], 8, cfg)
        assert res.best_val_acc > 0.9
        assert res.history[res.best_epoch]["val_loss"] == min(h["val_loss"] for h in res.history)
        loss_b, acc_b, _ = evaluate(res.params, X[2500:], Y[2500:])
        assert loss_b == res.best_val_loss and acc_b == res.best_val_acc

    def test_deterministic(self, rng):
        X, Y = self._toy(rng, 200)
        cfg = TrainConfig(max_epochs=5, seed=3)
        a = train(X[:150], Y[:150], X[150:], Y[150:], 4, cfg)
        b = train(X[:150], Y[:150], X[150:], Y[150:], 4, cfg)
        assert a.history == b.history and a.params == b.params

    def test_empty(self, rng):
        with pytest.raises(EmptyInput):
            train(np.empty((0, 3, 2)), np.empty((0, 2)), np.ones((1, 3, 2)), np.eye(2)[:1], 2)

    def test_config_violations(self):
        bad = TrainConfig(lr_floor=0.01, batch_schedule=(32, 64), dropout_rate=1.0)
        assert len(bad.violations()) == 3
        assert TrainConfig().violations() == []

    def test_evaluate_ties_go_up(self):
        p = LstmParams.zeros(2, 3)
        _, acc, _ = evaluate(p, np.zeros((4, 2, 3)), np.array([[1, 0]] * 4))
        assert acc == 1.0
        _, acc, _ = evaluate(p, np.zeros((4, 2, 3)), np.array([[1, 0], [0, 1]] * 2))
        assert acc == 0.5


class TestPersistence:
    def _model(self, rng):
        return LstmModel(_jitter(init_params(5, 7, rng), rng), T=6, interval_ms=60_000,
                         horizon_m=2, feature_names=tuple("abcdefg"), differenced=("f",))

    def test_round_trip_bit_exact(self, rng, tmp_path):
        m = self._model(rng)
        save_model(m, tmp_path / "m.bin")
        back = load_model(tmp_path / "m.bin")
        assert back.params == m.params
        assert back.config() == m.config()
        X = rng.standard_normal((10, 6, 7))
        assert np.array_equal(back.predict(X), m.predict(X))

    def test_bad_magic(self, tmp_path):
        (tmp_path / "m.bin").write_bytes(b"nope" * 20)
        with pytest.raises(CorruptFile):
            load_model(tmp_path / "m.bin")

    def test_truncated(self, rng, tmp_path):
        save_model(self._model(rng), tmp_path / "m.bin")
        data = (tmp_path / "m.bin").read_bytes()
        (tmp_path / "m.bin").write_bytes(data[:-8])
        with pytest.raises(CorruptFile):
            load_model(tmp_path / "m.bin")

    def test_major_version(self, rng, tmp_path):
        save_model(self._model(rng), tmp_path / "m.bin")
        data = bytearray((tmp_path / "m.bin").read_bytes())
        data[8] = 9
        (tmp_path / "m.bin").write_bytes(bytes(data))
        with pytest.raises(VersionMismatch):
            load_model(tmp_path / "m.bin")
