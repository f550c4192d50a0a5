import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid
from scipy.stats import norm

from gbrbm_ae.rbm import (
    ContractError,
    EnumerationBoundError,
    GbrbmParams,
    SampleState,
    cd_stats,
    energy,
    exact_gradient,
    exact_log_likelihood,
    exact_stats,
    free_energy,
    gibbs_step,
    hidden_conditional,
    sample_exact,
    stats_from_samples,
    visible_conditional,
)
from gbrbm_ae.gradients import cd_gradient

from oracles import (
    all_hidden,
    central_difference,
    enum_free_energy,
    enum_hidden_marginals,
    grid_joint_2d,
    mp_energy,
    naive_energy,
    random_params,
    relative_error,
)


def zero_params(n_v, n_h, b=None):
    return GbrbmParams(np.zeros((n_v, n_h)), np.zeros(n_v) if b is None else b,
                       np.zeros(n_h), np.ones(n_v))


class TestParams:
    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(ContractError):
            GbrbmParams(np.zeros((2, 1)), np.zeros(2), np.zeros(1), np.array([1.0, 0.0]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ContractError):
            GbrbmParams(np.zeros((2, 3)), np.zeros(2), np.zeros(2), np.ones(2))

    def test_rejects_nan(self):
        with pytest.raises(ContractError):
            GbrbmParams(np.full((1, 1), np.nan), np.zeros(1), np.zeros(1), np.ones(1))

    def test_initialize(self, rng):
        p = GbrbmParams.initialize(9, 64, rng)
        assert p.weights.shape == (9, 64)
        assert np.all(p.visible_bias == 0) and np.all(p.hidden_bias == 0)
        assert abs(p.weights.std() - 0.01) < 0.002


class TestEnergy:
    def test_zero_model_at_bias(self):
        b = np.array([0.3, -1.2])
        p = zero_params(2, 3, b)
        for h in all_hidden(3):
            assert energy(SampleState(b, h), p) == 0.0

    def test_single_unit(self):
        p = GbrbmParams(np.zeros((1, 1)), np.zeros(1), np.ones(1), np.ones(1))
        assert energy(SampleState(np.array([2.0]), np.array([1.0])), p) == pytest.approx(1.0)

    def test_matches_high_precision_summation(self, rng):
        for _ in range(20):
            p = random_params(rng, 3, 2)
            v = rng.normal(size=3)
            h = rng.integers(0, 2, size=2).astype(float)
            assert energy(SampleState(v, h), p) == pytest.approx(float(mp_energy(v, h, p)), abs=1e-12)
            assert energy(SampleState(v, h), p) == pytest.approx(naive_energy(v, h, p), abs=1e-12)

    def test_rejects_nonbinary_hidden(self, rng):
        p = random_params(rng, 2, 2)
        with pytest.raises(ContractError):
            energy(SampleState(np.zeros(2), np.array([0.5, 1.0])), p)

    def test_dimension_mismatch(self, rng):
        p = random_params(rng, 2, 2)
        with pytest.raises(ContractError):
            energy(SampleState(np.zeros(3), np.zeros(2)), p)


class TestFreeEnergy:
    def test_zero_model(self):
        b = np.array([1.0, 2.0])
        assert free_energy(b, zero_params(2, 3, b)) == pytest.approx(-3 * np.log(2.0), abs=1e-15)

    def test_no_hidden_units(self):
        p = GbrbmParams(np.zeros((2, 0)), np.array([1.0, -1.0]), np.zeros(0), np.array([1.0, 2.0]))
        v = np.array([0.0, 3.0])
        assert free_energy(v, p) == pytest.approx(0.5 + 16 / 8)

    def test_matches_enumeration(self, rng):
        for _ in range(10):
            p = random_params(rng, 3, 3)
            v = rng.normal(size=3)
            assert free_energy(v, p) == pytest.approx(enum_free_energy(v, p), abs=1e-10)

    def test_marginal_ratio_constant(self, rng):
        # exp(-F(v)) / sum_h exp(-E(v, h)) must not depend on v
        p = random_params(rng, 3, 4)
        H = np.array(all_hidden(4))
        ratios = []
        for _ in range(100):
            v = rng.normal(scale=2.0, size=3)
            E = np.array([naive_energy(v, h, p) for h in H])
            m = E.min()
            ratios.append(np.exp(-free_energy(v, p) + m) / np.sum(np.exp(-(E - m))))
        ratios = np.array(ratios)
        assert (ratios.max() - ratios.min()) / ratios.mean() < 1e-10

    def test_batch_matches_rows(self, rng):
        p = random_params(rng, 4, 3)
        V = rng.normal(size=(5, 4))
        np.testing.assert_allclose(free_energy(V, p), [free_energy(v, p) for v in V], rtol=0, atol=1e-14)


class TestConditionals:
    def test_zero_weights_give_half(self, rng):
        p = zero_params(3, 4)
        np.testing.assert_array_equal(hidden_conditional(rng.normal(size=3), p), 0.5)

    def test_saturation(self):
        p = GbrbmParams(np.zeros((2, 1)), np.zeros(2), np.array([100.0]), np.ones(2))
        assert hidden_conditional(np.array([5.0, -5.0]), p)[0] >= 1 - 1e-10

    def test_hidden_matches_enumeration(self, rng):
        for _ in range(10):
            p = random_params(rng, 2, 3)
            v = rng.normal(size=2)
            np.testing.assert_allclose(hidden_conditional(v, p), enum_hidden_marginals(v, p),
                                       rtol=0, atol=1e-10)

    @settings(max_examples=50, deadline=None)
    # pre-activations stay below ~36, where float64 sigmoid still differs from 0 and 1
    @given(st.lists(st.floats(-5, 5), min_size=3, max_size=3),
           st.floats(-15, 15), st.floats(0, 5))
    def test_hidden_in_open_interval_and_monotone_in_bias(self, v, c0, dc):
        p = random_params(np.random.default_rng(0), 3, 2)
        v = np.array(v)
        lo = hidden_conditional(v, p.replace(hidden_bias=np.array([c0, 0.0])))
        hi = hidden_conditional(v, p.replace(hidden_bias=np.array([c0 + dc, 0.0])))
        assert np.all(lo > 0) and np.all(lo < 1)
        assert hi[0] >= lo[0]

    def test_visible_zero_weights(self):
        b = np.array([0.5, -0.5])
        mean, var = visible_conditional(np.array([1.0, 0.0, 1.0]), zero_params(2, 3, b))
        np.testing.assert_array_equal(mean, b)
        np.testing.assert_array_equal(var, 1.0)

    def test_visible_single_column(self, rng):
        p = random_params(rng, 3, 4)
        h = np.array([0.0, 0.0, 1.0, 0.0])
        mean, var = visible_conditional(h, p)
        np.testing.assert_allclose(mean, p.visible_bias + p.weights[:, 2], rtol=0, atol=1e-15)
        np.testing.assert_allclose(var, p.sigma**2)

    def test_visible_matches_quadrature(self, rng):
        for _ in range(3):
            p = random_params(rng, 2, 2)
            h = rng.integers(0, 2, size=2).astype(float)
            # unnormalised exp(-E(v, h)) for the fixed h on a dense grid
            g0 = np.linspace(p.visible_bias[0] - 12, p.visible_bias[0] + 12, 1201)
            g1 = np.linspace(p.visible_bias[1] - 12, p.visible_bias[1] + 12, 1201)
            V0, V1 = np.meshgrid(g0, g1, indexing="ij")
            E = ((V0 - p.visible_bias[0]) ** 2 / (2 * p.sigma[0] ** 2)
                 + (V1 - p.visible_bias[1]) ** 2 / (2 * p.sigma[1] ** 2)
                 - (p.weights[0] @ h) * V0 / p.sigma[0] ** 2
                 - (p.weights[1] @ h) * V1 / p.sigma[1] ** 2)
            w = np.exp(-(E - E.min()))

            def integral(f):
                return trapezoid(trapezoid(f, g1, axis=1), g0)

            z = integral(w)
            m0, m1 = integral(w * V0) / z, integral(w * V1) / z
            v0, v1 = integral(w * (V0 - m0) ** 2) / z, integral(w * (V1 - m1) ** 2) / z
            mean, var = visible_conditional(h, p)
            np.testing.assert_allclose(mean, [m0, m1], atol=1e-4)
            np.testing.assert_allclose(var, [v0, v1], atol=1e-4)

    def test_visible_rejects_nonbinary(self, rng):
        with pytest.raises(ContractError):
            visible_conditional(np.array([0.2, 1.0]), random_params(rng, 2, 2))


class TestGibbs:
    def test_deterministic_replay(self, rng):
        p = random_params(rng, 4, 3)
        v = rng.normal(size=(6, 4))
        a = gibbs_step(v, p, np.random.default_rng(42))
        b = gibbs_step(v, p, np.random.default_rng(42))
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_off_hidden_gives_gaussian_at_bias(self):
        b = np.array([1.5, -0.5])
        p = GbrbmParams(np.zeros((2, 3)), b, np.full(3, -100.0), np.array([1.0, 2.0]))
        n = 100_000
        h, v_next, _ = gibbs_step(np.zeros((n, 2)), p, np.random.default_rng(7))
        assert np.all(h == 0)
        se = p.sigma / np.sqrt(n)
        assert np.all(np.abs(v_next.mean(axis=0) - b) < 3 * se)

    def test_stationary_hidden_marginals(self):
        # 1000 independent chains x 1000 sweeps = 1e6 samples
        rng = np.random.default_rng(11)
        p = random_params(rng, 2, 2, scale=0.8)
        H = np.array(all_hidden(2))
        # exact marginal of h: weights from closed-form visible integrals
        logw = []
        for h in H:
            m = p.visible_bias + p.weights @ h
            logw.append(np.sum((m**2 - p.visible_bias**2) / (2 * p.sigma**2)) + p.hidden_bias @ h)
        w = np.exp(np.array(logw) - max(logw))
        exact = (w / w.sum()) @ H

        v = rng.normal(size=(1000, 2))
        for _ in range(50):
            _, v, _ = gibbs_step(v, p, rng)
        per_chain = np.zeros((1000, 2))
        for _ in range(1000):
            h, v, _ = gibbs_step(v, p, rng)
            per_chain += h
        per_chain /= 1000
        est = per_chain.mean(axis=0)
        se = per_chain.std(axis=0, ddof=1) / np.sqrt(1000)
        assert np.all(np.abs(est - exact) < 3 * se)


class TestCdStats:
    def test_shapes(self, rng):
        p = random_params(rng, 4, 3)
        s = cd_stats(rng.normal(size=(8, 4)), p, 1, rng)
        assert s.data_vh.shape == s.model_vh.shape == (4, 3)
        assert s.data_v.shape == s.model_v.shape == (4,)
        assert s.data_h.shape == s.model_h.shape == (3,)
        assert s.batch_size == 8
        assert s.model_visible.shape == (8, 4)

    def test_model_equal_to_data_gives_zero_gradient(self, rng):
        p = random_params(rng, 4, 3)
        batch = rng.normal(size=(8, 4))
        g = cd_gradient(stats_from_samples(batch, batch, p), p)
        assert np.all(g.dW == 0) and np.all(g.db == 0) and np.all(g.dc == 0)

    def test_invariants(self, rng):
        p = random_params(rng, 3, 5)
        batch = rng.normal(scale=2.0, size=(16, 3))
        s = cd_stats(batch, p, 2, rng)
        vmax = max(np.abs(batch).max(), np.abs(s.model_visible).max())
        assert np.all(np.abs(s.data_vh) <= vmax) and np.all(np.abs(s.model_vh) <= vmax)
        for h in (s.data_h, s.model_h):
            assert np.all((h >= 0) & (h <= 1))

    def test_errors(self, rng):
        p = random_params(rng, 3, 2)
        with pytest.raises(ContractError):
            cd_stats(np.zeros((0, 3)), p, 1, rng)
        with pytest.raises(ContractError):
            cd_stats(np.zeros((2, 3)), p, 0, rng)

    def test_deterministic(self, rng):
        p = random_params(rng, 3, 2)
        batch = rng.normal(size=(5, 3))
        a = cd_stats(batch, p, 3, np.random.default_rng(5))
        b = cd_stats(batch, p, 3, np.random.default_rng(5))
        assert np.array_equal(a.model_vh, b.model_vh)


class TestExactLikelihood:
    def test_factorised_model(self, rng):
        b = rng.normal(size=3)
        p = GbrbmParams(np.zeros((3, 2)), b, rng.normal(size=2), np.ones(3))
        data = rng.normal(size=(10, 3))
        expected = np.mean(np.sum(norm.logpdf(data, loc=b, scale=1.0), axis=1))
        assert exact_log_likelihood(data, p) == pytest.approx(expected, abs=1e-12)

    def test_translation_invariance_zero_weights(self, rng):
        b = rng.normal(size=3)
        p = GbrbmParams(np.zeros((3, 2)), b, rng.normal(size=2), np.ones(3))
        data = rng.normal(size=(10, 3))
        delta = rng.normal(size=3)
        shifted = p.replace(visible_bias=b + delta)
        assert exact_log_likelihood(data + delta, shifted) == pytest.approx(
            exact_log_likelihood(data, p), abs=1e-12)

    def test_translation_invariance_with_compensated_hidden_bias(self, rng):
        # with coupling, a visible shift also moves the hidden input by W^T delta / sigma^2
        p = random_params(rng, 3, 3)
        data = rng.normal(size=(10, 3))
        delta = rng.normal(size=3)
        shifted = p.replace(visible_bias=p.visible_bias + delta,
                            hidden_bias=p.hidden_bias - p.weights.T @ (delta / p.sigma**2))
        assert exact_log_likelihood(data + delta, shifted) == pytest.approx(
            exact_log_likelihood(data, p), abs=1e-12)

    def test_matches_2d_quadrature(self, rng):
        for _ in range(3):
            p = random_params(rng, 2, 2)
            data = rng.normal(size=(10, 2))
            g0, g1, dens = grid_joint_2d(p)
            logz = np.log(trapezoid(trapezoid(dens, g1, axis=1), g0))
            expected = np.mean([-enum_free_energy(v, p) for v in data]) - logz
            assert exact_log_likelihood(data, p) == pytest.approx(expected, abs=1e-4)

    def test_enumeration_bound(self):
        p = GbrbmParams(np.zeros((1, 21)), np.zeros(1), np.zeros(21), np.ones(1))
        with pytest.raises(EnumerationBoundError, match="20"):
            exact_log_likelihood(np.zeros((1, 1)), p)
        with pytest.raises(EnumerationBoundError):
            exact_gradient(np.zeros((1, 1)), p)

    def test_sample_exact_moments(self, rng):
        p = random_params(rng, 2, 3)
        x = sample_exact(p, 200_000, rng)
        s = exact_stats(x[:1], p)
        se = x.std(axis=0) / np.sqrt(len(x))
        assert np.all(np.abs(x.mean(axis=0) - s.model_v) < 4 * se)


class TestExactGradient:
    def test_zero_weights_bias_at_data_mean(self, rng):
        data = rng.normal(size=(10, 3))
        p = GbrbmParams(np.zeros((3, 2)), data.mean(axis=0), rng.normal(size=2), np.ones(3))
        g = exact_gradient(data, p)
        np.testing.assert_allclose(g.db, 0.0, atol=1e-14)
        np.testing.assert_allclose(g.dc, 0.0, atol=1e-14)

    def test_zero_weights_hidden_bias_gradient_vanishes(self, rng):
        p = GbrbmParams(np.zeros((3, 2)), rng.normal(size=3), rng.normal(size=2), np.ones(3))
        g = exact_gradient(rng.normal(size=(10, 3)), p)
        np.testing.assert_allclose(g.dc, 0.0, atol=1e-15)

    def test_matches_finite_differences(self, rng):
        for _ in range(5):
            p = random_params(rng, 3, 3)
            data = rng.normal(size=(10, 3))
            g = exact_gradient(data, p)
            fd_W = central_difference(lambda W: exact_log_likelihood(data, p.replace(weights=W)), p.weights)
            fd_b = central_difference(lambda b: exact_log_likelihood(data, p.replace(visible_bias=b)), p.visible_bias)
            fd_c = central_difference(lambda c: exact_log_likelihood(data, p.replace(hidden_bias=c)), p.hidden_bias)
            assert relative_error(g.dW, fd_W) < 1e-6
            assert relative_error(g.db, fd_b) < 1e-6
            assert relative_error(g.dc, fd_c) < 1e-6
