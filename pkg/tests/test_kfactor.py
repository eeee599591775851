import numpy as np
import pytest

from adafisher.errors import ConfigError, DimensionError, InputError, StateError
from adafisher.kfactor import (FactoredEFIM, KFState, efim_assemble, ema_update,
                               fresh_factors, kf_conv, kf_dense, kf_identity,
                               kf_norm, minmax_normalize, precondition)
from adafisher.nn import (Activation, BatchNorm, Conv2d, Dense, Flatten,
                          LayerCapture, LayerNorm, Model)
from adafisher.tensor import Rng, kron_diag


class TestKfDense:
    def test_forced_arithmetic(self):
        cap = LayerCapture(h_bar=np.array([[1.0], [2.0], [1.0]]), s=np.array([[0.5]]))
        h, s = kf_dense(cap)
        assert np.array_equal(h, [1.0, 4.0, 1.0])
        assert np.array_equal(s, [0.25])

    def test_zero_gradients(self):
        cap = LayerCapture(h_bar=np.ones((2, 4)), s=np.zeros((3, 4)))
        _, s = kf_dense(cap)
        assert np.all(s == 0.0)

    def test_matches_dense_gram(self):
        rng = Rng(0)
        h_bar = np.vstack([rng.normal((5, 16)), np.ones((1, 16))])
        s = rng.normal((3, 16))
        h, sd = kf_dense(LayerCapture(h_bar=h_bar, s=s))
        assert np.max(np.abs(h - np.diag(h_bar @ h_bar.T) / 16)) < 1e-12
        assert np.max(np.abs(sd - np.diag(s @ s.T) / 16)) < 1e-12
        assert abs(h[-1] - 1.0) < 1e-15  # homogeneous bias coordinate

    def test_empty_batch(self):
        with pytest.raises(InputError):
            kf_dense(LayerCapture(h_bar=np.zeros((2, 0)), s=np.zeros((1, 0))))

    def test_unpopulated(self):
        with pytest.raises(StateError):
            kf_dense(LayerCapture(h_bar=None, s=None))


class TestKfConv:
    def test_reduces_to_dense_on_1x1(self):
        cap = LayerCapture(h_bar=np.array([[2.0], [1.0]]), s=np.array([[3.0]]),
                           spatial_count=1)
        assert np.array_equal(kf_conv(cap)[0], kf_dense(cap)[0])

    def test_constant_input(self):
        cap = LayerCapture(h_bar=np.ones((5, 4)), s=np.ones((2, 4)), spatial_count=4)
        h, s = kf_conv(cap)
        assert np.all(h == 1.0)
        assert np.all(s == 1.0)

    def test_matches_dense_gram_with_spatial_scaling(self):
        # columns = M * |T|; diag(HH^T) / (M*|T|) convention
        rng = Rng(1)
        m, t = 3, 4
        h_bar = np.vstack([rng.normal((6, m * t)), np.ones((1, m * t))])
        s = rng.normal((2, m * t))
        cap = LayerCapture(h_bar=h_bar, s=s, spatial_count=t)
        h, sd = kf_conv(cap)
        assert np.max(np.abs(h - np.diag(h_bar @ h_bar.T) / (m * t))) < 1e-12
        assert np.max(np.abs(sd - np.diag(s @ s.T) / (m * t))) < 1e-12

    def test_missing_spatial_count(self):
        with pytest.raises(StateError):
            kf_conv(LayerCapture(h_bar=np.ones((2, 2)), s=np.ones((1, 2)),
                                 spatial_count=0))


class TestKfNorm:
    def test_exactly_normalized_input(self):
        h = np.array([[1.0, -1.0], [1.0, -1.0]])  # zero mean, unit variance rows
        cap = LayerCapture(h_bar=h, s=np.zeros((2, 2)))
        h_scale, h_shift, _ = kf_norm(cap)
        assert np.array_equal(h_scale, [1.0, 1.0])
        assert np.array_equal(h_shift, [1.0, 1.0])

    def test_shift_factor_always_ones(self):
        rng = Rng(2)
        cap = LayerCapture(h_bar=rng.normal((3, 10)), s=rng.normal((3, 10)))
        _, h_shift, _ = kf_norm(cap)
        assert np.array_equal(h_shift, np.ones(3))

    def test_matches_dense_gram(self):
        rng = Rng(3)
        h = rng.normal((4, 12))
        cap = LayerCapture(h_bar=h, s=rng.normal((4, 12)))
        h_scale, _, _ = kf_norm(cap)
        assert np.max(np.abs(h_scale - np.diag(h @ h.T) / 12)) < 1e-12

    def test_empty_window(self):
        with pytest.raises(InputError):
            kf_norm(LayerCapture(h_bar=np.zeros((2, 0)), s=np.zeros((2, 0))))


class TestKfIdentity:
    def test_definition(self):
        h, s = kf_identity(4, 4)
        assert np.array_equal(h, np.ones(4))
        assert np.array_equal(s, np.ones(4))

    def test_minmax_of_identity_is_degenerate(self):
        h, _ = kf_identity(4, 4)
        assert np.array_equal(minmax_normalize(h), np.zeros(4))

    def test_assembled_divisor_is_pure_damping(self):
        state = KFState(lam=0.001, factors={0: {"h": np.ones(2), "s": np.ones(2)}})
        efim = efim_assemble(state)
        assert np.max(np.abs(efim.implied_diagonal(0) - 0.001)) < 1e-18


class TestEmaUpdate:
    def test_forced_arithmetic(self):
        assert ema_update(np.zeros(1), np.ones(1), 0.8)[0] == pytest.approx(0.8)

    def test_fixed_point(self):
        v = np.array([0.3, 0.7])
        assert np.array_equal(ema_update(v, v, 0.8), v)

    def test_geometric_approach_closed_form(self):
        c, gamma = 0.25, 0.8
        val = np.ones(1)
        for t in range(1, 30):
            val = ema_update(val, np.full(1, c), gamma)
            expected = c + (1 - gamma) ** t * (1 - c)
            assert abs(val[0] - expected) < 1e-14

    def test_affine_in_fresh_argument(self):
        rng = Rng(4)
        old, fa, fb = rng.normal((5,)), rng.normal((5,)), rng.normal((5,))
        a, b = 0.3, 1.2
        lhs = ema_update((a + b) * old, a * fa + b * fb, 0.8)
        rhs = a * ema_update(old, fa, 0.8) + b * ema_update(old, fb, 0.8)
        assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_bad_gamma(self):
        with pytest.raises(ConfigError):
            ema_update(np.zeros(1), np.zeros(1), 0.0)
        with pytest.raises(ConfigError):
            ema_update(np.zeros(1), np.zeros(1), 1.5)


class TestMinMax:
    def test_forced_arithmetic(self):
        assert np.array_equal(minmax_normalize(np.array([1.0, 2.0, 3.0])), [0.0, 0.5, 1.0])

    def test_degenerate_constant(self):
        assert np.array_equal(minmax_normalize(np.array([5.0, 5.0])), [0.0, 0.0])

    def test_range(self):
        v = minmax_normalize(Rng(5).normal((20,)))
        assert v.min() == 0.0
        assert v.max() == 1.0

    def test_nan_rejected(self):
        with pytest.raises(InputError):
            minmax_normalize(np.array([1.0, float("nan")]))


class TestEfimAssemble:
    def test_forced_arithmetic(self):
        # already-normalized factors pass through min-max unchanged
        state = KFState(lam=0.001, factors={0: {"h": np.array([0.0, 1.0]),
                                                "s": np.array([0.0, 1.0])}})
        diag = efim_assemble(state).implied_diagonal(0)
        assert np.allclose(diag, [0.001, 0.001, 0.001, 1.001], atol=1e-15)

    def test_degenerate_factors_pure_damping(self):
        state = KFState(lam=0.5, factors={0: {"h": np.full(3, 2.0), "s": np.full(2, 7.0)}})
        assert np.max(np.abs(efim_assemble(state).implied_diagonal(0) - 0.5)) == 0.0

    def test_matches_dense_kron_oracle(self):
        rng = Rng(6)
        for trial in range(10):
            h = np.abs(rng.normal((5,)))
            s = np.abs(rng.normal((4,)))
            state = KFState(lam=0.001, factors={0: {"h": h, "s": s}})
            efim = efim_assemble(state)
            dense = np.diag(np.kron(np.diag(minmax_normalize(h)),
                                    np.diag(minmax_normalize(s)))) + 0.001
            assert np.max(np.abs(efim.implied_diagonal(0) - dense)) < 1e-15

    def test_range_invariant(self):
        rng = Rng(7)
        state = KFState(lam=0.001, factors={0: {"h": np.abs(rng.normal((6,))),
                                                "s": np.abs(rng.normal((3,)))}})
        diag = efim_assemble(state).implied_diagonal(0)
        assert np.all(diag >= 0.001 - 1e-15)
        assert np.all(diag <= 1.001 + 1e-15)

    def test_bad_lambda(self):
        state = KFState(lam=0.0, factors={})
        with pytest.raises(ConfigError):
            efim_assemble(state)


class TestPrecondition:
    def test_forced_arithmetic(self):
        efim = FactoredEFIM(lam=1.0, layers={0: {"h": np.array([1.0]), "s": np.array([1.0])}})
        out = precondition(np.array([[4.0]]), efim, 0)
        assert out[0, 0] == 2.0

    def test_pure_damping(self):
        efim = FactoredEFIM(lam=0.001, layers={0: {"h": np.zeros(3), "s": np.zeros(2)}})
        g = np.arange(6.0).reshape(2, 3)
        assert np.max(np.abs(precondition(g, efim, 0) - g / 0.001)) < 1e-9

    def test_matches_dense_inverse_times_vec(self):
        rng = Rng(8)
        for trial in range(20):
            p_out, p_in = int(rng.integers(1, 7)), int(rng.integers(1, 7))
            h = minmax_normalize(np.abs(rng.normal((p_in,)))) if p_in > 1 else np.zeros(1)
            s = minmax_normalize(np.abs(rng.normal((p_out,)))) if p_out > 1 else np.zeros(1)
            lam = 0.001
            efim = FactoredEFIM(lam=lam, layers={0: {"h": h, "s": s}})
            g = rng.normal((p_out, p_in))
            dense = np.diag(kron_diag(h, s) + lam)  # vec order: h slow, s fast
            oracle = np.linalg.solve(dense, g.T.ravel()).reshape(p_in, p_out).T
            assert np.max(np.abs(precondition(g, efim, 0) - oracle)) < 1e-12

    def test_dimension_mismatch(self):
        efim = FactoredEFIM(lam=1.0, layers={0: {"h": np.zeros(2), "s": np.zeros(2)}})
        with pytest.raises(DimensionError):
            precondition(np.zeros((3, 3)), efim, 0)

    def test_norm_layer_divisors(self):
        efim = FactoredEFIM(lam=0.001, layers={0: {"h_scale": np.array([0.0, 1.0]),
                                                   "h_shift": np.array([0.0, 0.0]),
                                                   "s": np.array([0.5, 1.0])}})
        div = efim.divisors(0)
        assert np.allclose(div["scale"], [0.001, 1.001])
        assert np.allclose(div["shift"], [0.501, 1.001])


class TestStateLifecycle:
    def make_model(self):
        return Model([
            Conv2d(1, 2, (2, 2)),
            Activation("relu"),
            BatchNorm(2),
            Flatten(),
            Dense(8, 4),
            LayerNorm(4),
        ]).init(Rng(9))

    def test_for_model_shapes(self):
        model = self.make_model()
        state = KFState.for_model(model)
        assert np.array_equal(state.factors[0]["h"], np.ones(5))  # 1*2*2 + bias
        assert np.array_equal(state.factors[0]["s"], np.ones(2))
        assert np.array_equal(state.factors[4]["h"], np.ones(9))
        assert set(state.factors[2]) == {"h_scale", "h_shift", "s"}

    def test_fresh_factors_and_update(self):
        model = self.make_model()
        rng = Rng(10)
        x = rng.normal((4, 1, 3, 3))
        model.train_batch(x, rng.integers(0, 4, size=4))
        fresh = fresh_factors(model)
        state = KFState.for_model(model, gamma=0.8)
        state.update(fresh)
        assert state.step == 1
        expected = 0.8 * fresh[0]["h"] + 0.2 * np.ones(5)
        assert np.max(np.abs(state.factors[0]["h"] - expected)) < 1e-15
        # factors are Gram diagonals: nonnegative throughout
        for entry in fresh.values():
            for vec in entry.values():
                assert np.all(vec >= 0.0)

    def test_csv_export_roundtrip(self, tmp_path):
        model = self.make_model()
        state = KFState.for_model(model)
        path = tmp_path / "kf.csv"
        state.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "layer,factor,index,value"
        n_values = sum(vec.size for entry in state.factors.values() for vec in entry.values())
        assert len(lines) == 1 + n_values

    def test_norm_fisher_off_uses_identity(self):
        model = self.make_model()
        rng = Rng(11)
        x = rng.normal((4, 1, 3, 3))
        model.train_batch(x, rng.integers(0, 4, size=4))
        state = KFState.for_model(model)
        state.update(fresh_factors(model))
        efim = efim_assemble(state, norm_fisher_off=True)
        for layer_id in (2, 5):  # BatchNorm / LayerNorm layers
            div = efim.divisors(layer_id)
            assert np.allclose(div["scale"], state.lam)
            assert np.allclose(div["shift"], state.lam)
