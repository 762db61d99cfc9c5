"""Symplectic dimension reduction and the reduced-dimension likelihood.

Pipeline, run once per dataset:

1. stack measurements into position/momentum snapshot matrices,
2. build a block-diagonal symplectic basis from the SVD of the extended
   snapshot matrix (cotangent lift),
3. project the data,

then, per candidate nonlinearity parameter:

4. infer the symmetric quadratic operators by solving two Lyapunov equations
   (operator inference with symmetry constraints),
5. propagate the reduced state with the splitting integrator and filter the
   projected data under an identity observation map with learned stationary
   additive noise,
6. add the noise-parameter priors.

The basis is computed once from the noisy data and then frozen; it is not
re-estimated inside any optimization loop.  Evaluations for different
parameters are pure and may run in parallel.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .beliefs import (
    AffineMap,
    GaussianBelief,
    HmmModel,
    NoiseModel,
    default_initial_belief,
)
from .errors import ConditioningError, NumericalError, ValidationError
from .filtering import LINEAR_EXACT, UNSCENTED, log_marginal_likelihood
from .hamiltonians import ReducedQuadraticNl
from .integrators import hamiltonian_propagator
from .linalg import canonical_symplectic_matrix, symmetrize


@dataclass(frozen=True)
class SnapshotMatrix:
    """Column-per-time-index position and momentum snapshots."""

    positions: np.ndarray  # (d, N)
    momenta: np.ndarray  # (d, N)
    times: np.ndarray  # (N,)

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        mom = np.atleast_2d(np.asarray(self.momenta, dtype=float))
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "momenta", mom)
        object.__setattr__(self, "times", times)
        if pos.shape != mom.shape:
            raise ValidationError(
                f"position/momentum snapshot shapes differ: {pos.shape}, {mom.shape}"
            )
        if times.shape != (pos.shape[1],):
            raise ValidationError("times length must equal the snapshot count")
        if times.size >= 2:
            gaps = np.diff(times)
            if np.any(gaps <= 0):
                raise ValidationError("times must be strictly increasing")
            if np.max(np.abs(gaps - gaps[0])) > 1e-9 * max(gaps[0], 1e-30):
                raise ValidationError("times must be uniformly spaced")

    @classmethod
    def from_state_rows(cls, states, times):
        """Split (N, 2d) rows of [q, p] into d x N snapshot matrices."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        d = states.shape[1] // 2
        return cls(states[:, :d].T, states[:, d:].T, np.asarray(times, dtype=float))

    @property
    def dim(self):
        return self.positions.shape[0]

    @property
    def extended(self):
        """Extended snapshot matrix [Q, P] of shape (d, 2N)."""
        return np.hstack([self.positions, self.momenta])

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])


@dataclass(frozen=True)
class SymplecticBasis:
    """Block-diagonal symplectic basis diag(Phi, Phi) with orthonormal Phi."""

    phi: np.ndarray  # (d, r)

    def __post_init__(self):
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float))

    @property
    def full_dim(self):
        return self.phi.shape[0]

    @property
    def reduced_dim(self):
        return self.phi.shape[1]

    @property
    def v_matrix(self):
        d, r = self.phi.shape
        v = np.zeros((2 * d, 2 * r))
        v[:d, :r] = self.phi
        v[d:, r:] = self.phi
        return v

    def project(self, y):
        """V^T y for rows y = [q, p] of length 2d; batched over leading dims."""
        y = np.asarray(y, dtype=float)
        d = self.full_dim
        if y.shape[-1] != 2 * d:
            raise ValidationError(
                f"expected trailing length {2 * d}, got {y.shape[-1]}"
            )
        return np.concatenate(
            [y[..., :d] @ self.phi, y[..., d:] @ self.phi], axis=-1
        )

    def lift(self, y_reduced):
        """V y for reduced rows [q_r, p_r] of length 2r."""
        y_reduced = np.asarray(y_reduced, dtype=float)
        r = self.reduced_dim
        return np.concatenate(
            [y_reduced[..., :r] @ self.phi.T, y_reduced[..., r:] @ self.phi.T],
            axis=-1,
        )

    def validate(self, tol=1e-10):
        """Check orthonormality and symplecticity of the lifted basis."""
        r = self.reduced_dim
        gram = self.phi.T @ self.phi
        if np.max(np.abs(gram - np.eye(r))) > tol:
            raise ValidationError("basis columns are not orthonormal")
        v = self.v_matrix
        j_big = canonical_symplectic_matrix(2 * self.full_dim)
        j_small = canonical_symplectic_matrix(2 * r)
        if np.max(np.abs(v.T @ j_big @ v - j_small)) > tol:
            raise ValidationError("lifted basis is not symplectic")
        return self


@dataclass(frozen=True)
class ReducedOperators:
    """Symmetric quadratic operators of the reduced Hamiltonian."""

    dq_op: np.ndarray
    dp_op: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dq_op", np.asarray(self.dq_op, dtype=float))
        object.__setattr__(self, "dp_op", np.asarray(self.dp_op, dtype=float))
        for name in ("dq_op", "dp_op"):
            mat = getattr(self, name)
            if np.max(np.abs(mat - mat.T)) > 1e-10:
                raise ValidationError(f"{name} is not symmetric")


def cotangent_lift(snapshots, r):
    """Symplectic basis from the leading left singular vectors of [Q, P].

    The symplectic inverse of the lifted basis is its transpose, so projection
    is plain matrix transposition.
    """
    d = snapshots.dim
    max_r = min(d, 2 * snapshots.positions.shape[1])
    if not 1 <= r <= max_r:
        raise ValueError(f"r must lie in [1, {max_r}], got {r}")
    try:
        left, _, _ = np.linalg.svd(snapshots.extended, full_matrices=False)
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"SVD of extended snapshots failed: {err}") from err
    return SymplecticBasis(phi=left[:, :r])


def project_data(basis, measurements):
    """Project full-field measurement rows onto the reduced subspace."""
    return basis.project(np.atleast_2d(np.asarray(measurements, dtype=float)))


def fd_time_derivatives(series, dt):
    """Second-order time derivatives of an (r, N) series sampled every dt.

    Central differences inside, one-sided second-order stencils at both ends.
    """
    series = np.atleast_2d(np.asarray(series, dtype=float))
    n = series.shape[1]
    if n < 3:
        raise ValueError(f"need at least 3 columns for second-order stencils, got {n}")
    out = np.empty_like(series)
    out[:, 1:-1] = (series[:, 2:] - series[:, :-2]) / (2.0 * dt)
    out[:, 0] = (-3.0 * series[:, 0] + 4.0 * series[:, 1] - series[:, 2]) / (2.0 * dt)
    out[:, -1] = (
        3.0 * series[:, -1] - 4.0 * series[:, -2] + series[:, -3]
    ) / (2.0 * dt)
    return out


def build_forcings(phi, positions, momenta, nonlinearity):
    """Projected nonlinear forcing snapshots.

    The pointwise term acts per grid point: column k of the position forcing
    stacks d(H_nl)/dp at each grid point of snapshot k and is then projected
    by Phi^T (and symmetrically for the momentum forcing with d(H_nl)/dq).
    """
    dnl_dq, dnl_dp = nonlinearity.grads(positions, momenta)
    if not (np.all(np.isfinite(dnl_dq)) and np.all(np.isfinite(dnl_dp))):
        raise NumericalError("nonlinear forcing gradients are non-finite")
    return phi.T @ dnl_dp, phi.T @ dnl_dq


def hopinf_infer(q_red, p_red, dq_red, dp_red, forcing_q, forcing_p):
    """Symmetric reduced operators via the Lyapunov form of operator inference.

    Solves, with R_q = -dP - F_p and R_p = dQ - F_q,

        (Q Q^T) D_q + D_q (Q Q^T) = Q R_q^T + R_q Q^T
        (P P^T) D_p + D_p (P P^T) = P R_p^T + R_p P^T

    and symmetrizes the outputs.  Requires numerically nonsingular Gram
    matrices; otherwise a :class:`ConditioningError` advises a smaller r.
    """
    q_red, p_red = np.atleast_2d(q_red), np.atleast_2d(p_red)
    residual_q = -np.atleast_2d(dp_red) - np.atleast_2d(forcing_p)
    residual_p = np.atleast_2d(dq_red) - np.atleast_2d(forcing_q)
    out = []
    for data, residual, label in (
        (q_red, residual_q, "position"),
        (p_red, residual_p, "momentum"),
    ):
        gram = symmetrize(data @ data.T)
        eigs = np.linalg.eigvalsh(gram)
        if eigs[0] <= 1e-12 * max(eigs[-1], np.finfo(float).tiny):
            raise ConditioningError(
                f"{label} Gram matrix is numerically singular "
                f"(min/max eig {eigs[0]:.3e}/{eigs[-1]:.3e}); try a smaller r"
            )
        rhs = data @ residual.T + residual @ data.T
        op = scipy.linalg.solve_continuous_lyapunov(gram, rhs)
        out.append(symmetrize(op))
    return ReducedOperators(dq_op=out[0], dp_op=out[1])


def hopinf_residual(ops, q_red, p_red, dq_red, dp_red, forcing_q, forcing_p):
    """Frobenius norm of the operator-inference data misfit at given operators."""
    top = dq_red - forcing_q - ops.dp_op @ p_red
    bottom = dp_red + forcing_p + ops.dq_op @ q_red
    return float(np.sqrt(np.sum(top**2) + np.sum(bottom**2)))


class ReducedPipeline:
    """Frozen-basis reduced-likelihood evaluator for one full-field dataset.

    Parameters
    ----------
    measurements : ndarray, shape (N, 2d)
        Full-field measurement rows [q, p].
    times : ndarray, shape (N,)
        Uniformly spaced measurement times.
    r : int
        Reduced dimension per field.
    nonlinearity_factory : callable
        Maps the nonlinear parameter theta_nl (scalar) to a pointwise
        nonlinearity object with ``value``/``grads``.
    integrator_cfg : IntegratorConfig
        Step configuration of the reduced propagator over one measurement
        interval (dt must equal the sampling interval).
    priors : sequence of Prior, optional
        Log-prior terms added to the likelihood; they see the full parameter
        vector.
    """

    def __init__(self, measurements, times, r, nonlinearity_factory,
                 integrator_cfg, priors=()):
        measurements = np.atleast_2d(np.asarray(measurements, dtype=float))
        self.snapshots = SnapshotMatrix.from_state_rows(measurements, times)
        self.r = int(r)
        self.basis = cotangent_lift(self.snapshots, self.r)
        self.projected = project_data(self.basis, measurements)
        self.q_red = self.projected[:, : self.r].T
        self.p_red = self.projected[:, self.r :].T
        dt = self.snapshots.dt
        self.dq_red = fd_time_derivatives(self.q_red, dt)
        self.dp_red = fd_time_derivatives(self.p_red, dt)
        self.nonlinearity_factory = nonlinearity_factory
        self.integrator_cfg = integrator_cfg
        self.priors = tuple(priors)

    def operators(self, theta_nl):
        """H-OpInf quadratic operators for one nonlinear parameter value."""
        nl = self.nonlinearity_factory(theta_nl)
        forcing_q, forcing_p = build_forcings(
            self.basis.phi, self.snapshots.positions, self.snapshots.momenta, nl
        )
        return hopinf_infer(
            self.q_red, self.p_red, self.dq_red, self.dp_red,
            forcing_q, forcing_p,
        )

    def hamiltonian(self, theta_nl):
        """Reduced Hamiltonian with inferred quadratic part."""
        ops = self.operators(theta_nl)
        return ReducedQuadraticNl(
            ops.dq_op, ops.dp_op,
            basis=self.basis.phi,
            nonlinearity=self.nonlinearity_factory(theta_nl),
        )

    def log_posterior(self, theta):
        """Log posterior of grouped parameters (nl, sigma_plus, gamma_plus).

        ``theta`` is a ParameterVector with groups 'nl' (scalar nonlinear
        parameter), 'sigma_plus' (2r process-noise diagonal), and
        'gamma_plus' (2r measurement-noise diagonal).  Stage failures are
        re-raised with the failing stage named.
        """
        theta_nl = float(theta["nl"][0])
        sigma_diag = theta["sigma_plus"]
        gamma_diag = theta["gamma_plus"]
        two_r = 2 * self.r
        if sigma_diag.size != two_r or gamma_diag.size != two_r:
            raise ValidationError(
                f"noise diagonals must have length {two_r}, got "
                f"{sigma_diag.size} and {gamma_diag.size}"
            )
        try:
            hamiltonian = self.hamiltonian(theta_nl)
        except (NumericalError, ValidationError) as err:
            raise type(err)(f"[stage: operator inference] {err}") from err
        propagator = hamiltonian_propagator(hamiltonian, self.integrator_cfg, self.r)
        process_noise = NoiseModel.additive(np.diag(sigma_diag))
        measurement_noise = NoiseModel.additive(np.diag(gamma_diag))
        model = HmmModel(
            propagator=propagator,
            measurement_fn=AffineMap.identity(two_r),
            process_noise=process_noise,
            measurement_noise=measurement_noise,
            initial_belief=default_initial_belief(
                self.projected[0], measurement_noise
            ),
        )
        try:
            result = log_marginal_likelihood(
                model, self.projected, method=(UNSCENTED, LINEAR_EXACT)
            )
        except NumericalError as err:
            raise NumericalError(f"[stage: filtering] {err}") from err
        log_prior = sum(prior.log_density(theta) for prior in self.priors)
        return result.log_lik + log_prior

    def innovations(self, theta):
        """One-step-ahead prediction residuals of the reduced filter."""
        from .filtering import kalman_update, observe_moments, predict_moments

        theta_nl = float(theta["nl"][0])
        hamiltonian = self.hamiltonian(theta_nl)
        propagator = hamiltonian_propagator(hamiltonian, self.integrator_cfg, self.r)
        process_noise = NoiseModel.additive(np.diag(theta["sigma_plus"]))
        measurement_noise = NoiseModel.additive(np.diag(theta["gamma_plus"]))
        measurement_fn = AffineMap.identity(2 * self.r)
        belief = default_initial_belief(self.projected[0], measurement_noise)
        residuals = np.empty_like(self.projected)
        for k, row in enumerate(self.projected):
            obs = observe_moments(
                belief, measurement_fn, measurement_noise, LINEAR_EXACT
            )
            residuals[k] = row - obs.mean
            belief = kalman_update(belief, obs, row)
            if k + 1 < self.projected.shape[0]:
                belief = predict_moments(
                    belief, propagator, process_noise, UNSCENTED
                )
        return residuals


def reduced_log_posterior(theta_nl, theta_noise, measurements, times, r,
                          nonlinearity_factory, integrator_cfg, priors=()):
    """One-shot reduced log posterior; see :class:`ReducedPipeline`.

    ``theta_noise`` must carry groups 'sigma_plus' and 'gamma_plus'.  Building
    the pipeline redoes the SVD; reuse a :class:`ReducedPipeline` inside
    optimization loops.
    """
    from .beliefs import ParameterVector

    pipeline = ReducedPipeline(
        measurements, times, r, nonlinearity_factory, integrator_cfg, priors
    )
    groups = {"nl": np.atleast_1d(float(np.asarray(theta_nl).ravel()[0]))}
    for name in theta_noise.names:
        groups[name] = theta_noise[name]
    theta = ParameterVector(groups, positive=theta_noise.positive)
    return pipeline.log_posterior(theta)
