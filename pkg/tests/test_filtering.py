"""Filter moment algebra and marginal likelihood against independent oracles."""

import numpy as np
import pytest

from hamsid.beliefs import (
    AffineMap,
    FunctionMap,
    GaussianBelief,
    HmmModel,
    NoiseModel,
    make_uniform_mult_noise,
)
from hamsid.errors import NumericalError
from hamsid.filtering import (
    LINEAR_EXACT,
    UNSCENTED,
    gaussian_moments,
    kalman_update,
    log_marginal_likelihood,
    observe_moments,
    predict_moments,
)

from _oracles import (
    additive_ukf_loglik,
    kalman_loglik,
    mc_mult_noise_moments,
    mc_transform_moments,
)


def _belief(mean, cov):
    return GaussianBelief(np.atleast_1d(np.asarray(mean, dtype=float)),
                          np.atleast_2d(np.asarray(cov, dtype=float)))


def _scalar_noise(add=0.0, mult_mean=1.0, mult_var=0.0):
    return NoiseModel(
        add_cov=np.array([[add]]),
        mult_mean=np.array([mult_mean]),
        mult_cov=np.array([[mult_var]]),
    )


class TestGaussianMoments:
    def test_identity_is_passthrough(self):
        belief = _belief([1.0, -2.0], [[2.0, 0.3], [0.3, 1.0]])
        for method in (LINEAR_EXACT, UNSCENTED):
            mom = gaussian_moments(AffineMap.identity(2), belief, method)
            np.testing.assert_allclose(mom.mean, belief.mean, atol=1e-9)
            np.testing.assert_allclose(mom.cov, belief.cov, atol=1e-9)
            np.testing.assert_allclose(mom.cross_cov, belief.cov, atol=1e-9)

    def test_affine_exactness(self):
        belief = _belief([0.0], [[1.0]])
        fn = FunctionMap(lambda x: 2.0 * x + 1.0, 1, 1)
        for method in (LINEAR_EXACT, UNSCENTED):
            mom = gaussian_moments(fn, belief, method)
            assert mom.mean[0] == pytest.approx(1.0, abs=1e-9)
            assert mom.cov[0, 0] == pytest.approx(4.0, abs=1e-8)
            assert mom.cross_cov[0, 0] == pytest.approx(2.0, abs=1e-9)

    def test_quadratic_against_monte_carlo(self):
        # x^2 under N(0,1): exact values 1, 2, 0; the sigma-point scheme nails
        # the mean and the symmetric zero cross term, and the 1e7-sample
        # Monte-Carlo oracle brackets the variance at 1%.
        rng = np.random.default_rng(42)
        mc_mean, mc_var, mc_cross = mc_transform_moments(
            lambda x: x**2, 0.0, 1.0, 10_000_000, rng
        )
        assert mc_mean == pytest.approx(1.0, rel=0.01)
        assert mc_var == pytest.approx(2.0, rel=0.01)
        belief = _belief([0.0], [[1.0]])
        fn = FunctionMap(lambda x: x**2, 1, 1)
        mom = gaussian_moments(fn, belief, UNSCENTED)
        assert mom.mean[0] == pytest.approx(1.0, abs=1e-6)
        assert mom.cross_cov[0, 0] == pytest.approx(0.0, abs=1e-6)
        assert abs(mc_cross) < 2e-3
        assert mom.cov[0, 0] == pytest.approx(mc_var, rel=0.01)

    def test_linear_exact_rejects_nonlinear_map(self):
        belief = _belief([0.0], [[1.0]])
        fn = FunctionMap(lambda x: x**2, 1, 1)
        with pytest.raises(ValueError, match="affine"):
            gaussian_moments(fn, belief, LINEAR_EXACT)


class TestPredictMoments:
    def test_pure_multiplicative_scaling(self):
        # Deterministic output 1 scaled by noisy factor: mean 2, cov 0.25.
        prior = _belief([1.0], [[0.0]])
        noise = _scalar_noise(add=0.0, mult_mean=2.0, mult_var=0.25)
        out = predict_moments(prior, AffineMap.identity(1), noise, LINEAR_EXACT)
        assert out.mean[0] == pytest.approx(2.0)
        assert out.cov[0, 0] == pytest.approx(0.25)

    def test_additive_reduction(self):
        prior = _belief([0.3], [[0.7]])
        noise = _scalar_noise(add=0.2)
        out = predict_moments(prior, AffineMap.identity(1), noise, LINEAR_EXACT)
        assert out.cov[0, 0] == pytest.approx(0.7 + 0.2)

    def test_mixed_noise_hand_value(self):
        # Var 0.12, mean 1, additive 0.01, no multiplicative spread.
        prior = _belief([1.0], [[0.12]])
        noise = _scalar_noise(add=0.01)
        out = predict_moments(prior, AffineMap.identity(1), noise, LINEAR_EXACT)
        assert out.mean[0] == pytest.approx(1.0)
        assert out.cov[0, 0] == pytest.approx(0.13)

    def test_against_monte_carlo_generative_model(self):
        # Linear map through multiplicative uniform and additive noise,
        # 1e7-sample brute force, three standard errors.
        rng = np.random.default_rng(3)
        for a in (0.1, 0.3):
            slope, x_mean, x_var, add_var = 1.3, 0.8, 0.5, 0.04
            mc_mean, mc_var, se_mean, se_var = mc_mult_noise_moments(
                lambda x: slope * x, x_mean, x_var, a, add_var, 10_000_000, rng
            )
            prior = _belief([x_mean], [[x_var]])
            noise = NoiseModel(
                add_cov=np.array([[add_var]]),
                mult_mean=np.array([1.0]),
                mult_cov=np.array([[a * a / 3.0]]),
            )
            out = predict_moments(
                prior, AffineMap(np.array([[slope]])), noise, LINEAR_EXACT
            )
            assert abs(out.mean[0] - mc_mean) < 3.0 * se_mean
            assert abs(out.cov[0, 0] - mc_var) < 3.0 * se_var


class TestObserveMoments:
    def test_hand_value_with_mult_noise(self):
        pred = _belief([2.0], [[0.5]])
        noise = _scalar_noise(mult_var=0.1**2 / 3.0)
        out = observe_moments(pred, AffineMap.identity(1), noise, LINEAR_EXACT)
        assert out.mean[0] == pytest.approx(2.0)
        expected = 0.5 * (0.1**2 / 3.0 + 1.0) + 4.0 * (0.1**2 / 3.0)
        assert out.cov[0, 0] == pytest.approx(expected)
        assert out.cov[0, 0] == pytest.approx(0.515, abs=1e-3)

    def test_additive_reduction(self):
        pred = _belief([2.0], [[0.5]])
        noise = _scalar_noise(add=0.3)
        out = observe_moments(pred, AffineMap.identity(1), noise, LINEAR_EXACT)
        assert out.cov[0, 0] == pytest.approx(0.8)

    def test_linear_gaussian_case(self):
        pred = _belief([0.4, -0.2], np.array([[0.5, 0.1], [0.1, 0.3]]))
        r = np.diag([0.2, 0.4])
        noise = NoiseModel.additive(r)
        out = observe_moments(pred, AffineMap.identity(2), noise, LINEAR_EXACT)
        np.testing.assert_allclose(out.mean, pred.mean)
        np.testing.assert_allclose(out.cov, pred.cov + r)
        np.testing.assert_allclose(out.cross_cov, pred.cov)


class TestKalmanUpdate:
    def test_zero_gain_leaves_belief(self):
        pred = _belief([1.0], [[2.0]])
        from hamsid.filtering import MomentTriple

        obs = MomentTriple(np.array([0.5]), np.array([[1.0]]), np.array([[0.0]]))
        out = kalman_update(pred, obs, np.array([3.0]))
        np.testing.assert_allclose(out.mean, pred.mean)
        np.testing.assert_allclose(out.cov, pred.cov)

    def test_scalar_hand_algebra(self):
        from hamsid.filtering import MomentTriple

        pred = _belief([0.0], [[1.0]])
        obs = MomentTriple(np.array([0.0]), np.array([[2.0]]), np.array([[1.0]]))
        out = kalman_update(pred, obs, np.array([2.0]))
        assert out.mean[0] == pytest.approx(1.0)
        assert out.cov[0, 0] == pytest.approx(0.5)

    def test_zero_innovation_shrinks_cov_only(self):
        from hamsid.filtering import MomentTriple

        pred = _belief([0.7], [[1.0]])
        obs = MomentTriple(np.array([0.7]), np.array([[2.0]]), np.array([[1.0]]))
        out = kalman_update(pred, obs, np.array([0.7]))
        assert out.mean[0] == pytest.approx(0.7)
        assert out.cov[0, 0] == pytest.approx(0.5)


def _random_linear_model(rng, n, m, n_data):
    a_mat = rng.normal(scale=0.6 / np.sqrt(n), size=(n, n)) + 0.3 * np.eye(n)
    h_mat = rng.normal(size=(m, n))
    q_sqrt = rng.normal(size=(n, n))
    q_cov = q_sqrt @ q_sqrt.T / n + 0.1 * np.eye(n)
    r_sqrt = rng.normal(size=(m, m))
    r_cov = r_sqrt @ r_sqrt.T / m + 0.1 * np.eye(m)
    m0 = rng.normal(size=n)
    p0 = np.eye(n)
    xs = [rng.multivariate_normal(m0, p0)]
    ys = []
    for _ in range(n_data):
        ys.append(h_mat @ xs[-1] + rng.multivariate_normal(np.zeros(m), r_cov))
        xs.append(a_mat @ xs[-1] + rng.multivariate_normal(np.zeros(n), q_cov))
    model = HmmModel(
        propagator=AffineMap(a_mat),
        measurement_fn=AffineMap(h_mat),
        process_noise=NoiseModel.additive(q_cov),
        measurement_noise=NoiseModel.additive(r_cov),
        initial_belief=GaussianBelief(m0, p0),
    )
    return model, (a_mat, h_mat, q_cov, r_cov, m0, p0), np.array(ys)


class TestLogMarginalLikelihood:
    def test_empty_data(self):
        model, _, _ = _random_linear_model(np.random.default_rng(0), 2, 2, 3)
        result = log_marginal_likelihood(model, np.zeros((0, 2)))
        assert result.log_lik == 0.0
        assert result.per_step.size == 0

    def test_single_datum_closed_form(self):
        # x1 ~ N(0,1), identity h, near-degenerate multiplicative noise,
        # additive measurement variance 1, y = 0: log N(0; 0, 2).
        noise = NoiseModel(
            add_cov=np.array([[1.0]]),
            mult_mean=np.array([1.0]),
            mult_cov=np.array([[1e-16]]),
        )
        model = HmmModel(
            propagator=AffineMap.identity(1),
            measurement_fn=AffineMap.identity(1),
            process_noise=NoiseModel.additive(np.array([[1.0]])),
            measurement_noise=noise,
            initial_belief=GaussianBelief(np.zeros(1), np.eye(1)),
        )
        result = log_marginal_likelihood(model, np.array([[0.0]]), LINEAR_EXACT)
        assert result.log_lik == pytest.approx(-0.5 * np.log(4.0 * np.pi), abs=1e-12)
        assert result.log_lik == pytest.approx(-1.26551, abs=1e-5)

    # The sigma-point scheme is exact on affine maps only up to cancellation
    # in its O(1e6) weights, hence the looser unscented tolerance.
    @pytest.mark.parametrize(
        "method,rel", [(LINEAR_EXACT, 1e-12), (UNSCENTED, 1e-8)]
    )
    def test_matches_textbook_kalman(self, method, rel):
        rng = np.random.default_rng(11)
        for _ in range(5):
            n, m = rng.integers(1, 5), rng.integers(1, 5)
            model, mats, ys = _random_linear_model(rng, int(n), int(m), 50)
            ours = log_marginal_likelihood(model, ys, method).log_lik
            reference = kalman_loglik(*mats, ys)
            assert ours == pytest.approx(reference, rel=rel)

    def test_per_step_sums_to_total(self):
        rng = np.random.default_rng(5)
        model, _, ys = _random_linear_model(rng, 3, 2, 30)
        result = log_marginal_likelihood(model, ys)
        assert result.log_lik == pytest.approx(np.sum(result.per_step), abs=1e-10)

    def test_degenerate_mult_formulas_reduce_exactly(self):
        # With mult_mean = 1 and mult_cov = 0 the moment assembly collapses
        # to the plain additive form bit-for-bit (x*1 = x, +0 = x).
        rng = np.random.default_rng(31)
        for _ in range(10):
            mean_f = rng.normal(size=3)
            half = rng.normal(size=(3, 3))
            cov_f = half @ half.T
            add = np.diag(rng.uniform(0.1, 1.0, size=3))
            noise = NoiseModel.additive(add)
            prior = _belief(mean_f, cov_f)
            out = predict_moments(prior, AffineMap.identity(3), noise,
                                  LINEAR_EXACT)
            np.testing.assert_array_equal(out.mean, mean_f)
            np.testing.assert_array_equal(out.cov, 0.5 * (cov_f + cov_f.T) + add)

    def test_additive_reduction_matches_ukf_oracle(self):
        # Degenerate multiplicative model with a nonlinear propagator equals
        # a standard additive sigma-point filter (independently coded; the
        # residual difference is summation-order rounding in the large
        # sigma-point weights).
        rng = np.random.default_rng(17)
        q_cov, r_cov = 0.05 * np.eye(2), 0.1 * np.eye(2)

        def dynamics(x):
            return np.stack(
                [x[..., 0] + 0.1 * np.sin(x[..., 1]), 0.95 * x[..., 1]], axis=-1
            )

        model = HmmModel(
            propagator=FunctionMap(dynamics, 2, 2),
            measurement_fn=AffineMap.identity(2),
            process_noise=NoiseModel.additive(q_cov),
            measurement_noise=NoiseModel.additive(r_cov),
            initial_belief=GaussianBelief(np.zeros(2), np.eye(2)),
        )
        ys = rng.normal(size=(20, 2))
        ours = log_marginal_likelihood(model, ys, UNSCENTED).log_lik
        reference = additive_ukf_loglik(
            lambda x: dynamics(x), lambda x: x, q_cov, r_cov,
            np.zeros(2), np.eye(2), ys,
        )
        assert ours == pytest.approx(reference, rel=1e-10)

    def test_permutation_equivariance(self):
        # Relabeling coordinates maps every filter quantity by the same
        # permutation (exact for linear dynamics under any moment scheme).
        rng = np.random.default_rng(23)
        model, (a_mat, h_mat, q_cov, r_cov, m0, p0), ys = _random_linear_model(
            rng, 3, 3, 25
        )
        perm = np.array([2, 0, 1])
        pmat = np.eye(3)[perm]
        permuted_model = HmmModel(
            propagator=AffineMap(pmat @ a_mat @ pmat.T),
            measurement_fn=AffineMap(pmat @ h_mat @ pmat.T),
            process_noise=NoiseModel.additive(pmat @ q_cov @ pmat.T),
            measurement_noise=NoiseModel.additive(pmat @ r_cov @ pmat.T),
            initial_belief=GaussianBelief(pmat @ m0, pmat @ p0 @ pmat.T),
        )
        base = log_marginal_likelihood(model, ys, UNSCENTED)
        permuted = log_marginal_likelihood(model := permuted_model,
                                           ys @ pmat.T, UNSCENTED)
        assert permuted.log_lik == pytest.approx(base.log_lik, rel=1e-10)
        np.testing.assert_allclose(
            permuted.final_belief.mean, pmat @ base.final_belief.mean, atol=1e-10
        )
        np.testing.assert_allclose(
            permuted.final_belief.cov,
            pmat @ base.final_belief.cov @ pmat.T,
            atol=1e-10,
        )

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        model, _, ys = _random_linear_model(rng, 2, 2, 40)
        first = log_marginal_likelihood(model, ys, UNSCENTED)
        second = log_marginal_likelihood(model, ys, UNSCENTED)
        assert first.log_lik == second.log_lik
        np.testing.assert_array_equal(first.per_step, second.per_step)

    def test_nan_data_rejected(self):
        model, _, ys = _random_linear_model(np.random.default_rng(0), 2, 2, 5)
        ys[3, 0] = np.nan
        with pytest.raises(ValueError, match="NaN"):
            log_marginal_likelihood(model, ys)

    def test_failure_reports_step_index(self):
        # A measurement covariance that collapses to exactly zero cannot be
        # factorized even with jitter once the state covariance hits zero.
        zero = NoiseModel.additive(np.zeros((1, 1)))
        model = HmmModel(
            propagator=AffineMap(np.zeros((1, 1))),
            measurement_fn=AffineMap(np.zeros((1, 1))),
            process_noise=NoiseModel.additive(np.zeros((1, 1))),
            measurement_noise=zero,
            initial_belief=GaussianBelief(np.zeros(1), np.zeros((1, 1))),
        )
        with pytest.raises(NumericalError, match="step 0"):
            log_marginal_likelihood(model, np.ones((3, 1)), LINEAR_EXACT)
