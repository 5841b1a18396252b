import numpy as np
import pytest

from policast.errors import DomainError, ShapeError
from policast.gp import (
    KernelSpec,
    gp_posterior,
    gp_predict,
    gram,
    kernel_eval,
    matern_value,
    multi_output_gp,
    mvn_logpdf_chol,
)
from refimpl import dense_gp_posterior, mvn_logpdf


def spec(family="matern_three_half", ls=1.0, signal=1.0, noise=0.0):
    return KernelSpec(family, np.atleast_1d(ls), signal, noise)


class TestKernel:
    def test_zero_distance_gives_signal_variance(self):
        k = spec(signal=2.5)
        assert kernel_eval(k, [0.3, -1.0], [0.3, -1.0]) == pytest.approx(2.5)

    def test_decay_to_zero(self):
        k = spec()
        assert kernel_eval(k, [0.0], [200.0]) < 1e-12

    def test_matern_three_half_frozen_value(self):
        # (1 + sqrt(3)) * exp(-sqrt(3)), re-checked by script.
        assert kernel_eval(spec(), [0.0], [1.0]) == pytest.approx(0.4833577245965077,
                                                                  rel=1e-12)

    @pytest.mark.parametrize("family,expected", [
        ("matern_half", np.exp(-1.0)),
        ("matern_five_half", (1 + np.sqrt(5) + 5 / 3) * np.exp(-np.sqrt(5))),
    ])
    def test_other_families(self, family, expected):
        assert kernel_eval(spec(family), [0.0], [1.0]) == pytest.approx(expected, rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            kernel_eval(spec(ls=[1.0, 2.0]), [0.0], [0.0])

    def test_bad_hyperparameters(self):
        with pytest.raises(DomainError):
            KernelSpec("matern_three_half", np.array([-1.0]), 1.0, 0.0)
        with pytest.raises(DomainError):
            KernelSpec("rbf", np.array([1.0]), 1.0, 0.0)

    def test_gram_psd_over_random_matrices(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(100):
            n, d = rng.integers(2, 50), rng.integers(1, 4)
            x = rng.standard_normal((n, d)) * rng.uniform(0.5, 3)
            k = spec(family=rng.choice(["matern_half", "matern_three_half",
                                        "matern_five_half"]),
                     ls=rng.uniform(0.1, 5, d), signal=rng.uniform(0.1, 4))
            eig = np.linalg.eigvalsh(gram(k, x))
            worst = min(worst, eig.min())
        assert worst >= -1e-8


class TestPosterior:
    def test_no_training_points_falls_back_to_prior(self):
        post = gp_posterior(lambda x: np.full(x.shape[0], 3.0), spec(signal=2.0),
                            np.empty((0, 1)), np.empty(0))
        mean, var = gp_predict(post, [[0.5]])
        assert mean[0] == pytest.approx(3.0)
        assert var[0] == pytest.approx(2.0)

    def test_noiseless_interpolation(self):
        # Well-separated inputs: the documented 1e-8*signal jitter then
        # bounds the interpolation residual at 1e-8 * |target|.
        x = np.arange(6, dtype=float).reshape(-1, 1) * 3.0
        y = np.array([0.9, -0.4, 0.2, 0.8, -0.7, 0.1])
        post = gp_posterior(None, spec(), x, y)
        mean, var = gp_predict(post, x)
        np.testing.assert_allclose(mean, y, atol=1e-8)
        assert np.all(var <= 1e-8)

    def test_single_point_hand_example(self):
        # k(x,x)=1, k(x*,x)=0.5, noise 0, target 2 -> mean 1.0, var 0.75.
        from scipy.optimize import brentq

        k = spec()
        post = gp_posterior(None, k, np.array([[0.0]]), np.array([2.0]))
        r = brentq(lambda d: matern_value("matern_three_half", np.asarray(d)) - 0.5, 0.1, 5.0)
        mean, var = gp_predict(post, [[r]])
        # Residual scale is the documented jitter (1e-8 * signal) times the target.
        assert mean[0] == pytest.approx(1.0, abs=1e-7)
        assert var[0] == pytest.approx(0.75, abs=1e-7)

    def test_two_point_matches_dense_oracle(self):
        # The oracle models the same documented jitter term but solves
        # densely, without the Cholesky code path under test.
        k = spec(ls=1.3, signal=1.7, noise=0.2)
        x = np.array([[0.0], [0.9]])
        y = np.array([1.0, -0.5])
        queries = np.array([[0.4], [2.0], [-1.0]])
        post = gp_posterior(None, k, x, y)
        mean, cov = gp_predict(post, queries, want_covariance=True)
        oracle_mean, oracle_cov = dense_gp_posterior(
            lambda a, b: gram(k, a, b), x, y, 0.2 + post.jitter_used, queries
        )
        np.testing.assert_allclose(mean, oracle_mean, atol=1e-10)
        np.testing.assert_allclose(cov, oracle_cov, atol=1e-10)

    def test_far_query_reverts_to_prior(self):
        mean_fn = lambda x: np.full(x.shape[0], -4.0)
        post = gp_posterior(mean_fn, spec(signal=1.3), np.array([[0.0]]), np.array([5.0]))
        mean, var = gp_predict(post, [[40.0]])
        assert mean[0] == pytest.approx(-4.0, abs=1e-6)
        assert var[0] == pytest.approx(1.3, abs=1e-6)

    def test_repeated_queries_identical(self):
        post = gp_posterior(None, spec(noise=0.1), np.array([[0.0], [1.0]]),
                            np.array([0.5, 1.5]))
        mean, var = gp_predict(post, [[0.3], [0.3], [0.3]])
        assert np.all(mean == mean[0])
        assert np.all(var == var[0])

    def test_posterior_variance_bounded_by_prior(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            n = rng.integers(1, 12)
            k = spec(ls=rng.uniform(0.3, 2), signal=rng.uniform(0.2, 3),
                     noise=rng.uniform(0, 0.5))
            post = gp_posterior(None, k, rng.standard_normal((n, 1)),
                                rng.standard_normal(n))
            _, var = gp_predict(post, rng.standard_normal((7, 1)))
            assert np.all(var <= k.signal_variance + 1e-8)

    def test_adding_point_never_increases_variance(self):
        rng = np.random.default_rng(11)
        k = spec(noise=0.05)
        x = rng.standard_normal((5, 1))
        y = rng.standard_normal(5)
        queries = rng.standard_normal((9, 1))
        _, var_before = gp_predict(gp_posterior(None, k, x, y), queries)
        x2 = np.vstack([x, [[0.25]]])
        y2 = np.append(y, 0.7)
        _, var_after = gp_predict(gp_posterior(None, k, x2, y2), queries)
        assert np.all(var_after <= var_before + 1e-8)

    def test_prior_mean_shift_invariance(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((4, 1))
        y = rng.standard_normal(4)
        queries = rng.standard_normal((6, 1))
        k = spec(noise=0.1)
        shift = 11.5
        m0, v0 = gp_predict(gp_posterior(None, k, x, y), queries)
        m1, v1 = gp_predict(
            gp_posterior(lambda q: np.full(q.shape[0], shift), k, x, y + shift), queries
        )
        np.testing.assert_allclose(m1, m0 + shift, atol=1e-10)
        np.testing.assert_allclose(v1, v0, atol=1e-12)

    def test_duplicate_inputs_need_jitter(self):
        x = np.array([[0.0], [0.0], [1.0]])
        post = gp_posterior(None, spec(), x, np.array([1.0, 1.0, 2.0]))
        assert post.jitter_used > 0

    def test_with_targets_reuses_factor(self):
        k = spec(noise=0.1)
        x = np.array([[0.0], [1.0]])
        post = gp_posterior(None, k, x, np.array([1.0, 2.0]))
        rebuilt = gp_posterior(None, k, x, np.array([3.0, -1.0]))
        swapped = post.with_targets(np.array([3.0, -1.0]))
        m1, v1 = gp_predict(rebuilt, [[0.5]])
        m2, v2 = gp_predict(swapped, [[0.5]])
        assert m1[0] == pytest.approx(m2[0], abs=1e-12)
        assert v1[0] == pytest.approx(v2[0], abs=1e-12)

    def test_mvn_logpdf_matches_scipy(self):
        rng = np.random.default_rng(3)
        k = gram(spec(signal=1.2), rng.standard_normal((5, 1))) + 0.3 * np.eye(5)
        resid = rng.standard_normal(5)
        ours = mvn_logpdf_chol(resid, np.linalg.cholesky(k))
        assert ours == pytest.approx(mvn_logpdf(resid, np.zeros(5), k), abs=1e-10)


class TestMultiOutput:
    def test_single_output_equals_gp_posterior(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4, 2))
        y = rng.standard_normal(4)
        k = spec(ls=[1.0, 1.0], noise=0.05)
        multi = multi_output_gp(["a"], x, {"a": y}, {"a": k})
        direct = gp_posterior(None, k, x, y)
        q = rng.standard_normal((3, 2))
        np.testing.assert_allclose(gp_predict(multi["a"], q)[0], gp_predict(direct, q)[0])

    def test_identical_outputs_identical_predictions(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((5, 1))
        y = rng.standard_normal(5)
        k = spec(noise=0.1)
        multi = multi_output_gp(["u", "v"], x, {"u": y, "v": y.copy()}, {"u": k, "v": k})
        q = rng.standard_normal((4, 1))
        np.testing.assert_array_equal(gp_predict(multi["u"], q)[0],
                                      gp_predict(multi["v"], q)[0])

    def test_five_outputs_match_separate_calls(self):
        # Compositional equivalence on a 3-region toy input set.
        rng = np.random.default_rng(8)
        inputs = rng.standard_normal((3, 4))
        names = ["timescale", "contact", "incubation", "recovery", "mortality"]
        targets = {n: rng.standard_normal(3) for n in names}
        kernels = {n: spec(ls=rng.uniform(0.5, 2, 4), signal=rng.uniform(0.5, 2),
                           noise=0.01) for n in names}
        multi = multi_output_gp(names, inputs, targets, kernels)
        q = rng.standard_normal((6, 4))
        for n in names:
            direct = gp_posterior(None, kernels[n], inputs, targets[n])
            np.testing.assert_array_equal(gp_predict(multi[n], q)[0],
                                          gp_predict(direct, q)[0])
            np.testing.assert_array_equal(gp_predict(multi[n], q)[1],
                                          gp_predict(direct, q)[1])

    def test_misaligned_targets(self):
        with pytest.raises(ShapeError):
            multi_output_gp(["a"], np.zeros((3, 1)), {"a": np.zeros(2)},
                            {"a": spec()})
