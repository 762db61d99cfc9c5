"""Gaussian filtering and marginal likelihood for additive + multiplicative noise.

The recursion alternates three moment computations.  With ``psi`` the
deterministic dynamics output and ``h`` the deterministic measurement output,
and noise moments as in :mod:`hamsid.beliefs`:

    prediction   m  = E[psi] * w_bar
                 C  = Var[psi] * (S_mult + w_bar w_bar^T)
                      + (E[psi] E[psi]^T) * S_mult + S_add
    observation  mu = E[h] * v_bar
                 S  = Var[h] * (G_mult + v_bar v_bar^T)
                      + (E[h] E[h]^T) * G_mult + G_add
                 U  = Cov[x, h] * v_bar            (columns scaled)
    update       K  = U S^{-1}
                 m+ = m + K (y - mu),   C+ = C - K U^T

``*`` is elementwise.  Second moments are assembled from (mean, variance)
only, never from raw quadrature of outer products: function outputs are
treated as Gaussian.  Expectations over the state come either from exact
affine propagation or from an unscented transform.

Everything here is pure and deterministic; likelihood evaluations for
different parameters or datasets can run in parallel freely.
"""

from dataclasses import dataclass

import numpy as np

from .beliefs import AffineMap, GaussianBelief
from .errors import NumericalError, ValidationError
from .linalg import cholesky_with_jitter, gaussian_logpdf, symmetrize

LINEAR_EXACT = "linear-exact"
UNSCENTED = "unscented"

# Unscented-transform scaling (2n+1 sigma points, standard defaults).
UT_ALPHA = 1e-3
UT_BETA = 2.0
UT_KAPPA = 0.0


@dataclass(frozen=True)
class MomentTriple:
    """Output mean/covariance plus the state-output cross covariance."""

    mean: np.ndarray
    cov: np.ndarray
    cross_cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cov", symmetrize(np.asarray(self.cov, dtype=float)))
        m = self.mean.size
        if self.cov.shape != (m, m):
            raise ValidationError(
                f"cov shape {self.cov.shape} does not match mean length {m}"
            )
        if self.cross_cov.shape[1] != m:
            raise ValidationError(
                f"cross_cov shape {self.cross_cov.shape} does not end in {m}"
            )


@dataclass(frozen=True)
class LogLikelihoodResult:
    """Recursive marginal likelihood: total, per-datum terms, final belief."""

    log_lik: float
    per_step: np.ndarray
    final_belief: GaussianBelief


def _sigma_points(belief):
    """2n+1 sigma points and mean/covariance weights for a Gaussian belief."""
    n = belief.dim
    lam = UT_ALPHA**2 * (n + UT_KAPPA) - n
    scale = np.sqrt(n + lam)
    lower = cholesky_with_jitter(belief.cov)
    points = np.empty((2 * n + 1, n))
    points[0] = belief.mean
    points[1 : n + 1] = belief.mean + scale * lower.T
    points[n + 1 :] = belief.mean - scale * lower.T
    w_mean = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    w_cov = w_mean.copy()
    w_mean[0] = lam / (n + lam)
    w_cov[0] = w_mean[0] + (1.0 - UT_ALPHA**2 + UT_BETA)
    return points, w_mean, w_cov


def _probe_affine(f, mean):
    """Extract (A, b) from a callable assumed affine; verify on one probe point."""
    n = mean.size
    f0 = np.atleast_1d(np.asarray(f(mean), dtype=float))
    cols = np.empty((f0.size, n))
    eye = np.eye(n)
    for i in range(n):
        cols[:, i] = np.atleast_1d(f(mean + eye[i])) - f0
    probe = mean + 0.5
    expected = f0 + cols @ (probe - mean)
    actual = np.atleast_1d(f(probe))
    scale = 1.0 + np.max(np.abs(expected))
    if np.max(np.abs(actual - expected)) > 1e-8 * scale:
        raise ValueError(
            "method 'linear-exact' requires an affine map; the supplied "
            "callable failed the affinity probe"
        )
    return cols, f0 - cols @ mean


def gaussian_moments(f, belief, method=UNSCENTED):
    """First two moments of ``f(x)`` and Cov[x, f(x)] under ``x ~ belief``.

    ``method='linear-exact'`` requires ``f`` affine (an :class:`AffineMap`, or
    any callable passing an affinity probe) and returns exact moments.
    ``method='unscented'`` uses 2n+1 sigma points.
    """
    mean, cov = belief.mean, belief.cov
    if method == LINEAR_EXACT:
        if isinstance(f, AffineMap):
            a, b = f.matrix, f.offset
        else:
            a, b = _probe_affine(f, mean)
        out_mean = a @ mean + b
        cross = cov @ a.T
        out_cov = a @ cross
        return MomentTriple(out_mean, symmetrize(out_cov), cross)
    if method != UNSCENTED:
        raise ValueError(f"unknown moment method '{method}'")
    points, w_mean, w_cov = _sigma_points(belief)
    values = np.atleast_2d(np.asarray(f(points), dtype=float))
    if values.shape[0] != points.shape[0]:
        raise ValidationError(
            "state map must be vectorized over leading batch dimension"
        )
    out_mean = w_mean @ values
    dev_out = values - out_mean
    dev_in = points - mean
    out_cov = (dev_out * w_cov[:, None]).T @ dev_out
    cross = (dev_in * w_cov[:, None]).T @ dev_out
    return MomentTriple(out_mean, symmetrize(out_cov), cross)


def _mult_moments(mean_f, cov_f, noise):
    """Mean/covariance of ``f(x) * z + add`` from moments of f and noise z."""
    zbar = noise.mult_mean
    out_mean = mean_f * zbar
    out_cov = (
        cov_f * (noise.mult_cov + np.outer(zbar, zbar))
        + np.outer(mean_f, mean_f) * noise.mult_cov
        + noise.add_cov
    )
    return out_mean, symmetrize(out_cov)


def predict_moments(prior, propagator, process_noise, method=UNSCENTED):
    """One prediction step: propagate a belief through noisy dynamics."""
    moments = gaussian_moments(propagator, prior, method)
    mean, cov = _mult_moments(moments.mean, moments.cov, process_noise)
    return GaussianBelief(mean=mean, cov=cov)


def observe_moments(pred, measurement_fn, measurement_noise, method=UNSCENTED):
    """Predicted measurement mean/covariance and state-measurement cross covariance."""
    moments = gaussian_moments(measurement_fn, pred, method)
    mean, cov = _mult_moments(moments.mean, moments.cov, measurement_noise)
    cross = moments.cross_cov * measurement_noise.mult_mean
    return MomentTriple(mean, cov, cross)


def kalman_update(pred, obs, y):
    """Linear-MMSE update of a prediction belief given one measurement.

    K = U S^{-1} via Cholesky of S; the updated covariance C - K U^T is
    re-symmetrized.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != obs.mean.shape:
        raise ValueError(f"measurement shape {y.shape} != {obs.mean.shape}")
    lower = cholesky_with_jitter(obs.cov)
    # K = U S^{-1}  <=>  K^T = S^{-1} U^T
    kt = np.linalg.solve(lower.T, np.linalg.solve(lower, obs.cross_cov.T))
    gain = kt.T
    mean = pred.mean + gain @ (y - obs.mean)
    cov = symmetrize(pred.cov - gain @ obs.cross_cov.T)
    return GaussianBelief(mean=mean, cov=cov)


def log_marginal_likelihood(model, data, method=UNSCENTED):
    """Recursive Gaussian-filter evaluation of log p(y_1, ..., y_N | theta).

    Follows the marginalize -> update -> predict recursion: the first datum is
    scored against the initial belief itself (the first prediction happens
    between data), and after the final datum only the update runs, so
    ``final_belief`` is the filtered belief at the last time index.

    Parameters
    ----------
    model : HmmModel
    data : ndarray, shape (N, m)
        Measurement sequence; N = 0 gives log-likelihood 0.
    method : str or (str, str)
        Moment scheme, 'unscented' (default) or 'linear-exact'; a pair applies
        the first scheme to prediction and the second to observation.

    Raises
    ------
    ValueError
        NaN in the data.
    NumericalError
        Covariance breakdown; the message reports the failing step index.
    """
    predict_method, observe_method = (
        (method, method) if isinstance(method, str) else method
    )
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n_data = data.shape[0] if data.size else 0
    if np.any(np.isnan(data)):
        raise ValueError("measurement sequence contains NaN")
    belief = model.initial_belief
    per_step = np.zeros(n_data)
    for k in range(n_data):
        try:
            obs = observe_moments(
                belief, model.measurement_fn, model.measurement_noise,
                observe_method,
            )
            per_step[k] = gaussian_logpdf(data[k], obs.mean, obs.cov)
            belief = kalman_update(belief, obs, data[k])
            if k + 1 < n_data:
                belief = predict_moments(
                    belief, model.propagator, model.process_noise,
                    predict_method,
                )
        except NumericalError as err:
            raise NumericalError(
                f"filter failed at step {k}: {err}", context=err.context
            ) from err
    return LogLikelihoodResult(
        log_lik=float(np.sum(per_step)), per_step=per_step, final_belief=belief
    )
