"""Training objectives, priors, the Adam-style optimizer, and MCMC.

The optimizer treats the parameter vector group by group: each group can
carry its own learning rate (optionally scaled by the current parameter
magnitude), beta pair, decay schedule, and update rule (adam or plain
gradient descent).  Variance-type parameters are optimized in their natural
scale; whenever a step drives a positivity-constrained coordinate to zero or
below, it is reset to 0.9 times its previous (positive) value.

The sampler cycles through parameter groups; each group is updated with an
adaptive Metropolis proposal (empirical covariance, scaled 2.38^2/dim after a
warm-up) with one delayed-rejection retry at one fifth of the proposal scale.
All randomness flows through an explicitly passed generator, so chains are
bit-reproducible.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .beliefs import ParameterVector
from .errors import NumericalError, ValidationError

logger = logging.getLogger(__name__)

# Filter failures map to this penalty plus ||theta||^2 so optimizers keep a
# gradient pointing back toward feasibility instead of seeing NaN/inf.
PENALTY_BASE = 1e10

CENTRAL_FD = "central-fd"
FORWARD_FD = "forward-fd"
ANALYTIC = "analytic"


def half_normal_logpdf(x, sigma2):
    """Log density of the half-normal distribution with scale sigma^2.

    Returns -inf for x < 0 (rejection signal); raises for sigma2 <= 0.
    """
    if sigma2 <= 0.0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    x = np.asarray(x, dtype=float)
    out = 0.5 * np.log(2.0 / (np.pi * sigma2)) - x**2 / (2.0 * sigma2)
    return np.where(x < 0.0, -np.inf, out)


@dataclass(frozen=True)
class Prior:
    """Prior over one named parameter group.

    ``improper_uniform`` contributes zero log density; ``half_normal`` sums an
    independent half-normal log pdf over the group's entries.
    """

    group: str
    kind: str = "improper_uniform"
    sigma2: float = 1.0

    def __post_init__(self):
        if self.kind not in ("improper_uniform", "half_normal"):
            raise ValueError(f"unknown prior kind '{self.kind}'")
        if self.kind == "half_normal" and self.sigma2 <= 0.0:
            raise ValueError("half_normal prior needs sigma2 > 0")

    def log_density(self, theta):
        if self.kind == "improper_uniform":
            return 0.0
        return float(np.sum(half_normal_logpdf(theta[self.group], self.sigma2)))


def neg_log_posterior(theta, model_builder, data, priors=(), method="unscented",
                      log_likelihood_fn=None):
    """Negative log posterior of grouped parameters under a filter likelihood.

    ``model_builder(theta)`` returns an ``HmmModel`` (the evidence constant is
    omitted).  Filter or model-construction failures never surface as NaN or
    inf: they map to a large finite penalty, ``1e10 + ||theta||^2``, with a
    logged warning.

    ``log_likelihood_fn`` overrides the default
    :func:`hamsid.filtering.log_marginal_likelihood` (used by reduced
    pipelines that evaluate their own likelihood).
    """
    from .filtering import log_marginal_likelihood

    try:
        if log_likelihood_fn is not None:
            log_lik = float(log_likelihood_fn(theta))
        else:
            model = model_builder(theta)
            log_lik = log_marginal_likelihood(model, data, method).log_lik
        log_prior = sum(prior.log_density(theta) for prior in priors)
        value = -(log_lik + log_prior)
        if not np.isfinite(value):
            raise NumericalError(f"non-finite posterior value {value}")
    except (NumericalError, ValidationError) as err:
        flat = theta.flat
        penalty = PENALTY_BASE + float(flat @ flat)
        logger.warning("posterior evaluation failed (%s); penalty %.3e", err, penalty)
        return penalty
    return value


def l1_forecast_terms(aug, targets):
    """Per-pair sum of the four L1 terms: physical and fictitious forecasts,
    both compared against the same target rows."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    d = targets.shape[1] // 2
    tq, tp = targets[:, :d], targets[:, d:]
    return (
        np.sum(np.abs(tq - aug.q), axis=-1)
        + np.sum(np.abs(tp - aug.p), axis=-1)
        + np.sum(np.abs(tq - aug.q_bar), axis=-1)
        + np.sum(np.abs(tp - aug.p_bar), axis=-1)
    )


def l1_nssnn_loss(inputs, targets, hamiltonian, cfg, horizon=None):
    """Mean L1 discrepancy of augmented-integrator forecasts.

    Each input row [q, p] seeds the integrator with the fictitious pair copied
    from the physical one; after ``horizon / cfg.dt`` steps, both the physical
    and the fictitious pair are compared against the same target row, four L1
    norms in total, averaged over pairs.
    """
    from .integrators import AugmentedState, tao_step

    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if inputs.shape != targets.shape:
        raise ValueError(f"inputs {inputs.shape} and targets {targets.shape} differ")
    horizon = cfg.dt if horizon is None else float(horizon)
    n_steps = horizon / cfg.dt
    if abs(n_steps - round(n_steps)) > 1e-9:
        raise ValueError(f"horizon {horizon} is not a multiple of dt {cfg.dt}")
    d = inputs.shape[1] // 2
    q, p = inputs[:, :d], inputs[:, d:]
    aug = AugmentedState(q=q, p=p, q_bar=q.copy(), p_bar=p.copy())
    for _ in range(round(n_steps)):
        aug = tao_step(hamiltonian, aug, cfg)
    return float(np.mean(l1_forecast_terms(aug, targets)))


@dataclass(frozen=True)
class GroupSchedule:
    """Per-group optimizer overrides; unset fields inherit the global schedule.

    ``relative_lr`` multiplies the scheduled rate elementwise by the current
    parameter magnitude (a multiplicative search on positive scales);
    ``method='sgd'`` uses a plain gradient step instead of Adam.
    """

    lr0: float = None
    betas: tuple = None
    decay: float = None
    decay_every: int = None
    relative_lr: bool = False
    method: str = "adam"


@dataclass(frozen=True)
class OptimizerSchedule:
    """Global learning-rate schedule plus per-group overrides."""

    lr0: float
    decay: float = 1.0
    decay_every: int = 1
    betas: tuple = (0.9, 0.999)
    epochs: int = 100
    batch: int = None
    grad_mode: str = CENTRAL_FD
    fd_step: float = 1e-6
    groups: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr0 <= 0.0:
            raise ValidationError(f"lr0 must be positive, got {self.lr0}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 < self.decay <= 1.0:
            raise ValidationError(f"decay must lie in (0, 1], got {self.decay}")
        if self.grad_mode not in (CENTRAL_FD, FORWARD_FD, ANALYTIC):
            raise ValueError(f"unknown grad_mode '{self.grad_mode}'")

    def for_group(self, name):
        override = self.groups.get(name, GroupSchedule())
        return (
            override.lr0 if override.lr0 is not None else self.lr0,
            override.betas if override.betas is not None else self.betas,
            override.decay if override.decay is not None else self.decay,
            override.decay_every
            if override.decay_every is not None
            else self.decay_every,
            override.relative_lr,
            override.method,
        )


def scheduled_lr(lr0, decay, decay_every, completed_epochs):
    """Learning rate in effect after ``completed_epochs`` full epochs."""
    return lr0 * decay ** (completed_epochs // decay_every)


def _fd_gradient(fn, theta, step, mode, positive_slices):
    """Coordinate-wise finite-difference gradient on the flat vector.

    Coordinates of positivity groups fall back to a one-sided difference when
    the central probe would cross zero.
    """
    flat = theta.flat
    base = fn(theta) if mode == FORWARD_FD else None
    grad = np.empty(flat.size)
    for i in range(flat.size):
        h = step
        forward_only = mode == FORWARD_FD
        if not forward_only and positive_slices[i] and flat[i] - h <= 0.0:
            forward_only = True
            if base is None:
                base = fn(theta)
        plus = flat.copy()
        plus[i] += h
        f_plus = fn(theta.with_flat(plus))
        if forward_only:
            grad[i] = (f_plus - (base if base is not None else fn(theta))) / h
        else:
            minus = flat.copy()
            minus[i] -= h
            grad[i] = (f_plus - fn(theta.with_flat(minus))) / (2.0 * h)
    return grad, base


def adam_fit(objective, theta0, schedule, positivity_groups=(), rng=None,
             grad=None):
    """Minimize a grouped objective with per-group Adam/SGD updates.

    Parameters
    ----------
    objective : callable or batched objective
        ``objective(theta) -> float``.  Objects exposing ``value(theta,
        indices)``, ``grad(theta, indices)`` and ``num_items`` get mini-batched
        when ``schedule.batch`` is set (the L1 path); filter likelihoods are
        sequential over the trajectory and run full-batch.  An optional
        ``value_and_grad(theta)`` is used when both are wanted at once.
    theta0 : ParameterVector
        Start point; the objective must be finite here.
    schedule : OptimizerSchedule
    positivity_groups : iterable of str
        Groups whose coordinates must stay strictly positive; a step landing
        at or below zero is replaced by 0.9x the previous value.
    rng : numpy Generator, optional
        Used only for mini-batch shuffling.
    grad : callable, optional
        ``grad(theta) -> flat gradient`` for ``grad_mode='analytic'``.

    Returns
    -------
    (theta, trace)
        Final parameters and the objective value at the start of each epoch.
    """
    positivity_groups = tuple(positivity_groups)
    has_batch_api = hasattr(objective, "value") and hasattr(objective, "grad")
    value_fn = objective.value if has_batch_api else objective
    value_and_grad = getattr(objective, "value_and_grad", None)
    if schedule.grad_mode == ANALYTIC:
        if grad is None:
            grad = objective.grad if has_batch_api else None
        if grad is None and value_and_grad is None:
            raise ValueError("grad_mode 'analytic' requires a gradient callable")

    theta = theta0
    first_value = value_fn(theta)
    if not np.isfinite(first_value):
        raise ValueError(f"objective is not finite at theta0: {first_value}")

    slices = theta.slices()
    positive_mask = np.zeros(theta.size, dtype=bool)
    for name in positivity_groups:
        positive_mask[slices[name]] = True

    moment1 = np.zeros(theta.size)
    moment2 = np.zeros(theta.size)
    step_count = {name: 0 for name in theta.names}
    trace = []

    batch = schedule.batch
    n_items = getattr(objective, "num_items", None)
    use_batches = (
        has_batch_api and batch is not None and n_items is not None
        and batch < n_items
    )
    if use_batches and rng is None:
        raise ValueError("mini-batching requires an rng for shuffling")

    def apply_update(theta, g, epoch):
        flat = theta.flat
        new_flat = flat.copy()
        for name in theta.names:
            sl = slices[name]
            lr0, betas, decay, decay_every, relative, method = (
                schedule.for_group(name)
            )
            lr = scheduled_lr(lr0, decay, decay_every, epoch)
            rate = lr * np.abs(flat[sl]) if relative else lr
            if method == "sgd":
                new_flat[sl] = flat[sl] - rate * g[sl]
            else:
                step_count[name] += 1
                t = step_count[name]
                b1, b2 = betas
                moment1[sl] = b1 * moment1[sl] + (1.0 - b1) * g[sl]
                moment2[sl] = b2 * moment2[sl] + (1.0 - b2) * g[sl] ** 2
                m_hat = moment1[sl] / (1.0 - b1**t)
                v_hat = moment2[sl] / (1.0 - b2**t)
                new_flat[sl] = flat[sl] - rate * m_hat / (np.sqrt(v_hat) + 1e-8)
        # Positivity projection: fall back to 0.9x the previous value.
        bad = positive_mask & (new_flat <= 0.0)
        new_flat[bad] = 0.9 * flat[bad]
        return theta.with_flat(new_flat)

    for epoch in range(schedule.epochs):
        epoch_value = None
        if use_batches:
            epoch_value = float(value_fn(theta))
            order = rng.permutation(n_items)
            for start in range(0, n_items, batch):
                indices = order[start : start + batch]
                g = np.asarray(objective.grad(theta, indices), dtype=float)
                theta = apply_update(theta, g, epoch)
        else:
            if schedule.grad_mode == ANALYTIC:
                if value_and_grad is not None:
                    epoch_value, g = value_and_grad(theta)
                    g = np.asarray(g, dtype=float)
                else:
                    epoch_value = float(value_fn(theta))
                    g = np.asarray(grad(theta), dtype=float)
            else:
                fn = (
                    (lambda t: objective.value(t, None))
                    if has_batch_api
                    else objective
                )
                g, base = _fd_gradient(
                    fn, theta, schedule.fd_step, schedule.grad_mode, positive_mask
                )
                epoch_value = float(fn(theta)) if base is None else float(base)
            theta = apply_update(theta, g, epoch)
        trace.append(float(epoch_value))
    return theta, trace


@dataclass
class PosteriorChain:
    """Ordered MCMC output: retained samples plus acceptance bookkeeping."""

    samples: np.ndarray  # (n_samples, size) flat parameter rows
    log_posts: np.ndarray
    accept_counts: dict
    n_sweeps: int
    seed: object
    template: ParameterVector

    def __post_init__(self):
        if self.samples.shape[0] != self.log_posts.shape[0]:
            raise ValidationError("samples and log_posts lengths differ")

    @property
    def accept_rates(self):
        return {
            name: count / max(self.n_sweeps, 1)
            for name, count in self.accept_counts.items()
        }

    def group_samples(self, name):
        return self.samples[:, self.template.slices()[name]]

    def column_names(self):
        names = []
        for group in self.template.names:
            size = self.template[group].size
            names.extend(
                [group] if size == 1 else [f"{group}_{i}" for i in range(size)]
            )
        return names


class _RunningMoments:
    """Streaming mean and covariance for proposal adaptation."""

    def __init__(self, dim):
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim))

    def push(self, x):
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += np.outer(delta, x - self.mean)

    @property
    def cov(self):
        if self.count < 2:
            return np.zeros_like(self.m2)
        return self.m2 / (self.count - 1)


def _mvn_logpdf_chol(x, mean, chol_lower):
    diff = x - mean
    alpha = np.linalg.solve(chol_lower, diff)
    logdet = 2.0 * np.sum(np.log(np.diag(chol_lower)))
    return -0.5 * (diff.size * np.log(2.0 * np.pi) + logdet + alpha @ alpha)


def dram_gibbs_sample(log_post, theta0, n_samples, burn_in, rng,
                      initial_scales=None, warmup_sweeps=200, dr_shrink=0.2,
                      adapt_reg=1e-10):
    """Delayed-rejection adaptive Metropolis within Gibbs.

    Per sweep, every group of ``theta0`` is updated in turn: a Gaussian
    random-walk proposal (empirical covariance scaled by 2.38^2/dim once
    ``warmup_sweeps`` sweeps have accumulated) with one delayed-rejection
    stage at ``dr_shrink`` times the proposal scale.  Runs ``burn_in +
    n_samples`` sweeps and returns the post-burn-in samples.

    Raises
    ------
    ValueError
        Non-finite log posterior at the start point.
    NumericalError
        A group accepted nothing during warm-up (suggests a smaller initial
        scale).
    """
    current = theta0
    current_lp = float(log_post(current))
    if not np.isfinite(current_lp):
        raise ValueError(f"log posterior is not finite at theta0: {current_lp}")

    names = theta0.names
    slices = theta0.slices()
    dims = {g: theta0[g].size for g in names}
    if initial_scales is None:
        initial_scales = {
            g: 0.1 * (1.0 + np.abs(theta0[g])) for g in names
        }
    elif np.isscalar(initial_scales):
        initial_scales = {
            g: float(initial_scales) * np.ones(dims[g]) for g in names
        }
    prop_chol = {
        g: np.diag(np.atleast_1d(np.asarray(initial_scales[g], dtype=float)))
        for g in names
    }
    moments = {g: _RunningMoments(dims[g]) for g in names}
    accept_counts = {g: 0 for g in names}

    total = burn_in + n_samples
    size = theta0.size
    samples = np.empty((n_samples, size))
    log_posts = np.empty(n_samples)

    for sweep in range(total):
        for g in names:
            dim = dims[g]
            x = current[g]
            chol = prop_chol[g]
            y1 = x + chol @ rng.standard_normal(dim)
            cand1 = current.with_group(g, y1)
            lp_y1 = float(log_post(cand1))
            log_a1 = min(0.0, lp_y1 - current_lp)
            if np.log(rng.uniform()) < log_a1:
                current, current_lp = cand1, lp_y1
                accept_counts[g] += 1
            else:
                # Delayed rejection: bolder-to-timid second stage.
                y2 = x + dr_shrink * (chol @ rng.standard_normal(dim))
                cand2 = current.with_group(g, y2)
                lp_y2 = float(log_post(cand2))
                log_a1_rev = min(0.0, lp_y1 - lp_y2)
                if log_a1_rev < 0.0 and np.isfinite(lp_y2):
                    num = (
                        lp_y2
                        + _mvn_logpdf_chol(y1, y2, chol)
                        + np.log1p(-np.exp(log_a1_rev))
                    )
                    den = (
                        current_lp
                        + _mvn_logpdf_chol(y1, x, chol)
                        + np.log1p(-np.exp(log_a1))
                    )
                    if np.log(rng.uniform()) < num - den:
                        current, current_lp = cand2, lp_y2
                        accept_counts[g] += 1
            moments[g].push(current[g])
            if sweep + 1 >= warmup_sweeps:
                cov = moments[g].cov
                scaled = (2.38**2 / dim) * (
                    cov + adapt_reg * np.eye(dim)
                )
                try:
                    prop_chol[g] = np.linalg.cholesky(scaled)
                except np.linalg.LinAlgError:
                    pass  # keep the previous factor
        if sweep + 1 == warmup_sweeps:
            dead = [g for g in names if accept_counts[g] == 0]
            if dead:
                raise NumericalError(
                    f"groups {dead} accepted nothing in {warmup_sweeps} "
                    "warm-up sweeps; use a smaller initial scale"
                )
        if sweep >= burn_in:
            samples[sweep - burn_in] = current.flat
            log_posts[sweep - burn_in] = current_lp

    return PosteriorChain(
        samples=samples,
        log_posts=log_posts,
        accept_counts=accept_counts,
        n_sweeps=total,
        seed=None,
        template=theta0,
    )
