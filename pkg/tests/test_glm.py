import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twophase_ate.glm import (
    GlmError,
    P_MIN,
    expit,
    fit_fluctuation,
    fit_glm,
    logit,
)

from util import bisect_oracle


class TestExpitLogit:
    def test_expit_zero(self):
        assert expit(0.0) == 0.5

    def test_logit_half(self):
        assert logit(0.5) == 0.0

    def test_round_trip_on_clipped_domain(self):
        p = np.linspace(1e-12, 1 - 1e-12, 1001)
        np.testing.assert_allclose(expit(logit(p)), p, atol=1e-10)

    def test_symmetry(self):
        x = np.random.default_rng(0).normal(size=200) * 5
        np.testing.assert_allclose(expit(-x), 1 - expit(x), atol=1e-12)

    def test_logit_clips_boundary(self):
        assert np.isfinite(logit(0.0)) and np.isfinite(logit(1.0))


class TestFitGlm:
    def test_intercept_only_bernoulli_is_weighted_mean(self):
        X = np.ones((4, 1))
        fit = fit_glm(X, [0, 1, 1, 1], family="bernoulli")
        assert fit.converged
        np.testing.assert_allclose(fit.predict(X), 0.75, atol=1e-9)

    def test_gaussian_matches_normal_equations(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            X = np.column_stack([np.ones(40), rng.normal(size=(40, 3))])
            y = rng.normal(size=40)
            w = rng.uniform(0.1, 2.0, size=40)
            fit = fit_glm(X, y, w, family="gaussian")
            beta_ref = np.linalg.solve((X * w[:, None]).T @ X, (X * w[:, None]).T @ y)
            np.testing.assert_allclose(fit.coefficients, beta_ref, atol=1e-10)

    @pytest.mark.parametrize("family", ["gaussian", "bernoulli"])
    def test_weight_two_equals_duplicated_row(self, family):
        rng = np.random.default_rng(2)
        X = np.column_stack([np.ones(20), rng.normal(size=(20, 2))])
        y = (rng.random(20) < 0.5).astype(float)
        w = np.ones(20)
        w[3] = 2.0
        X_dup = np.vstack([X, X[3:4]])
        y_dup = np.append(y, y[3])
        f1 = fit_glm(X, y, w, family=family)
        f2 = fit_glm(X_dup, y_dup, family=family)
        np.testing.assert_allclose(f1.coefficients, f2.coefficients, atol=1e-10)

    def test_zero_weight_rows_have_no_influence(self):
        rng = np.random.default_rng(3)
        X = np.column_stack([np.ones(30), rng.normal(size=30)])
        y = (rng.random(30) < 0.4).astype(float)
        w = np.ones(30)
        w[10:] = 0.0
        X[10:] = 1e6  # garbage in zero-weight rows must not matter
        y_sub, X_sub = y[:10], X[:10]
        f1 = fit_glm(X, y, w, family="bernoulli")
        f2 = fit_glm(X_sub, y_sub, family="bernoulli")
        np.testing.assert_allclose(f1.coefficients, f2.coefficients, atol=1e-9)

    def test_score_small_at_convergence(self):
        rng = np.random.default_rng(4)
        X = np.column_stack([np.ones(100), rng.normal(size=(100, 2))])
        y = (rng.random(100) < expit(X @ [0.2, 0.5, -0.3])).astype(float)
        w = rng.uniform(0.5, 2.0, size=100)
        fit = fit_glm(X, y, w, family="bernoulli")
        assert fit.converged
        p = fit.predict(X)
        score = X.T @ (w * (y - p))
        assert np.max(np.abs(score)) <= 1e-8

    def test_separable_data_stays_finite(self):
        # perfectly separated: plain IRLS would diverge
        x = np.concatenate([-np.ones(10) - np.arange(10) * 0.1,
                            np.ones(10) + np.arange(10) * 0.1])
        y = (x > 0).astype(float)
        X = np.column_stack([np.ones(20), x])
        fit = fit_glm(X, y, family="bernoulli")
        assert np.all(np.isfinite(fit.coefficients))
        assert np.all((fit.predict(X) > 0) & (fit.predict(X) < 1))

    def test_collinear_design_uses_ridge(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=50)
        X = np.column_stack([np.ones(50), x, x])  # exact collinearity
        y = (rng.random(50) < expit(x)).astype(float)
        fit = fit_glm(X, y, family="bernoulli")
        assert np.all(np.isfinite(fit.coefficients))

    def test_totally_singular_raises(self):
        X = np.zeros((10, 2))
        with pytest.raises(GlmError, match="singular"):
            fit_glm(X, np.zeros(10), family="gaussian")

    def test_all_zero_weights_rejected(self):
        with pytest.raises(GlmError, match="positive"):
            fit_glm(np.ones((3, 1)), [0.0, 1.0, 1.0], w=[0, 0, 0], family="bernoulli")

    def test_nan_rejected(self):
        with pytest.raises(GlmError):
            fit_glm(np.array([[1.0], [np.nan]]), [0.0, 1.0], family="gaussian")


class TestFitFluctuation:
    def test_exact_offset_gives_zero(self):
        rng = np.random.default_rng(6)
        offset = rng.normal(size=50)
        h = rng.normal(size=50)
        y = expit(offset)  # score at 0 vanishes exactly
        fit = fit_fluctuation(y, offset, h)
        assert fit.epsilon == 0.0 and fit.converged

    def test_zero_covariate_gives_zero(self):
        y = np.array([0.0, 1.0, 1.0])
        fit = fit_fluctuation(y, np.zeros(3), np.zeros(3))
        assert fit.epsilon == 0.0 and fit.converged

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_matches_bisection_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = 20
        offset = rng.normal(scale=0.8, size=n)
        h = rng.normal(size=n)
        y = (rng.random(n) < 0.5).astype(float)
        w = rng.uniform(0.2, 3.0, size=n)

        def score(eps):
            return float((w * h) @ (y - expit(offset + eps * h)))

        if score(-20) * score(20) > 0:
            with pytest.raises(GlmError):
                fit_fluctuation(y, offset, h, w)
            return
        fit = fit_fluctuation(y, offset, h, w, tol=1e-12)
        eps_ref = bisect_oracle(score, -20.0, 20.0)
        assert fit.epsilon == pytest.approx(eps_ref, abs=1e-8)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000), c=st.floats(0.2, 5.0))
    def test_equivariance_under_covariate_scaling(self, seed, c):
        rng = np.random.default_rng(seed)
        n = 30
        offset = rng.normal(scale=0.5, size=n)
        h = rng.normal(size=n) + 0.1
        y = (rng.random(n) < 0.6).astype(float)

        def score(eps):
            return float(h @ (y - expit(offset + eps * h)))

        if score(-20) * score(20) > 0:
            return
        f1 = fit_fluctuation(y, offset, h, tol=1e-13)
        f2 = fit_fluctuation(y, offset, c * h, tol=1e-13)
        assert f2.epsilon == pytest.approx(f1.epsilon / c, abs=1e-8)
        np.testing.assert_allclose(expit(offset + f1.epsilon * h),
                                   expit(offset + f2.epsilon * (c * h)), atol=1e-8)

    def test_degenerate_score_raises(self):
        # all responses 1 with positive covariate: score never changes sign
        y = np.ones(10)
        h = np.ones(10)
        with pytest.raises(GlmError, match="degenerate"):
            fit_fluctuation(y, np.zeros(10), h)
