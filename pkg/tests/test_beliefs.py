"""Data-model contracts: beliefs, noise moments, model validation, parameters."""

import numpy as np
import pytest

from hamsid.beliefs import (
    AffineMap,
    GaussianBelief,
    HmmModel,
    NoiseModel,
    ParameterVector,
    default_initial_belief,
    make_uniform_mult_noise,
    validate_model,
)
from hamsid.errors import ValidationError


class TestUniformMultNoise:
    def test_moments_a_01(self):
        noise = make_uniform_mult_noise(0.1, 2)
        np.testing.assert_allclose(noise.mult_mean, np.ones(2))
        np.testing.assert_allclose(noise.mult_cov, (0.01 / 3.0) * np.eye(2))
        np.testing.assert_allclose(noise.mult_cov[0, 0], 0.003333, atol=5e-7)
        assert not noise.add_cov.any()

    def test_zero_width_keeps_positive_definite(self):
        noise = make_uniform_mult_noise(0.0, 2)
        np.testing.assert_allclose(noise.mult_cov, 1e-16 * np.eye(2))

    def test_wide_grid(self):
        noise = make_uniform_mult_noise(0.2, 128)
        np.testing.assert_allclose(noise.mult_cov, (0.04 / 3.0) * np.eye(128))
        assert noise.mult_cov[0, 0] == pytest.approx(0.013333, abs=5e-7)

    @pytest.mark.parametrize("bad", [-0.1, 1.0, 1.5])
    def test_rejects_out_of_range(self, bad):
        with pytest.raises(ValueError):
            make_uniform_mult_noise(bad, 2)

    def test_sampling_moments(self):
        # Empirical mean within 4 sigma of its standard error, variance
        # within 1% relative, at a million draws.
        rng = np.random.default_rng(7)
        for a in (0.05, 0.2, 0.3):
            v = rng.uniform(1.0 - a, 1.0 + a, size=1_000_000)
            se_mean = (a / np.sqrt(3.0)) / 1e3
            assert abs(v.mean() - 1.0) < 4.0 * se_mean
            assert abs(v.var() - a * a / 3.0) < 0.01 * (a * a / 3.0)


def _simple_model(n=2, m=None, add_var=1.0):
    m = n if m is None else m
    meas = AffineMap(np.eye(m, n))
    return HmmModel(
        propagator=AffineMap.identity(n),
        measurement_fn=meas,
        process_noise=NoiseModel.additive(add_var * np.eye(n)),
        measurement_noise=NoiseModel.additive(add_var * np.eye(m)),
        initial_belief=GaussianBelief(np.zeros(n), np.eye(n)),
    )


class TestValidateModel:
    def test_accepts_consistent_model(self):
        model = _simple_model()
        assert validate_model(model) is model

    def test_rejects_non_psd_additive_cov(self):
        cov = np.diag([1.0, -0.5])
        model = HmmModel(
            propagator=AffineMap.identity(2),
            measurement_fn=AffineMap.identity(2),
            process_noise=NoiseModel.additive(np.eye(2)),
            measurement_noise=NoiseModel.additive(cov),
            initial_belief=GaussianBelief(np.zeros(2), np.eye(2)),
        )
        with pytest.raises(ValidationError, match="non-PSD"):
            validate_model(model)

    def test_rejects_dimension_mismatch(self):
        model = HmmModel(
            propagator=AffineMap.identity(4),
            measurement_fn=AffineMap(np.eye(2, 4)),
            process_noise=NoiseModel.additive(np.eye(4)),
            measurement_noise=NoiseModel.additive(np.eye(3)),
            initial_belief=GaussianBelief(np.zeros(4), np.eye(4)),
        )
        with pytest.raises(ValidationError, match="measurement"):
            validate_model(model)

    def test_uniform_noise_round_trips(self):
        for a in (0.0, 0.05, 0.3):
            noise = make_uniform_mult_noise(a, 3)
            model = HmmModel(
                propagator=AffineMap.identity(3),
                measurement_fn=AffineMap.identity(3),
                process_noise=NoiseModel.additive(np.eye(3)),
                measurement_noise=noise,
                initial_belief=GaussianBelief(np.zeros(3), np.eye(3)),
            )
            validate_model(model)


class TestGaussianBelief:
    def test_symmetrizes_on_construction(self):
        cov = np.array([[1.0, 0.1 + 2e-13], [0.1, 1.0]])
        belief = GaussianBelief(np.zeros(2), cov)
        np.testing.assert_array_equal(belief.cov, belief.cov.T)

    def test_validate_flags_negative_eigenvalue(self):
        belief = GaussianBelief(np.zeros(2), np.diag([1.0, -1e-3]))
        with pytest.raises(ValidationError):
            belief.validate()

    def test_tiny_negative_eigenvalue_tolerated(self):
        belief = GaussianBelief(np.zeros(2), np.diag([1.0, -1e-12]))
        belief.validate()


class TestDefaultInitialBelief:
    def test_uses_measurement_cov(self):
        noise = NoiseModel.additive(2.0 * np.eye(2))
        belief = default_initial_belief(np.array([1.0, -1.0]), noise)
        np.testing.assert_allclose(belief.cov, 2.0 * np.eye(2))

    def test_degenerate_cov_falls_back(self):
        noise = make_uniform_mult_noise(0.1, 2)  # zero additive part
        belief = default_initial_belief(np.array([1.0, -1.0]), noise)
        np.testing.assert_allclose(belief.cov, 1e-2 * np.eye(2))


class TestParameterVector:
    def test_flat_partitions_exactly(self):
        theta = ParameterVector({"a": [1.0, 2.0], "b": [3.0]})
        np.testing.assert_array_equal(theta.flat, [1.0, 2.0, 3.0])
        slices = theta.slices()
        assert slices["a"] == slice(0, 2)
        assert slices["b"] == slice(2, 3)
        assert theta.size == 3

    def test_with_flat_round_trip(self):
        theta = ParameterVector({"a": [1.0, 2.0], "b": [3.0]}, positive=("b",))
        new = theta.with_flat(np.array([4.0, 5.0, 6.0]))
        np.testing.assert_array_equal(new["a"], [4.0, 5.0])
        np.testing.assert_array_equal(new["b"], [6.0])
        assert new.positive == frozenset({"b"})

    def test_positive_group_validation(self):
        theta = ParameterVector({"var": [1e-3]}, positive=("var",))
        theta.validate()
        with pytest.raises(ValidationError):
            theta.with_flat(np.array([-1e-3])).validate()

    def test_values_are_immutable(self):
        theta = ParameterVector({"a": [1.0]})
        with pytest.raises(ValueError):
            theta["a"][0] = 2.0
