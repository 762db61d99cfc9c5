"""Structure-preserving time integration for nonseparable Hamiltonians.

The explicit scheme doubles phase space with fictitious copies (q_bar, p_bar)
and integrates the augmented energy

    H(q, p_bar) + H(q_bar, p) + lambda * (||q - q_bar||^2 + ||p - p_bar||^2) / 2

by Strang splitting:

    A(dt/2) o B(dt/2) o C(dt) o B(dt/2) o A(dt/2)

where A updates (p, q_bar) from gradients at (q, p_bar), B updates (q, p_bar)
from gradients at (q_bar, p), and C is the exact linear flow of the binding
term: it fixes (q + q_bar, p + p_bar) and rotates (q - q_bar, p - p_bar) by
angle 2*lambda*dt.  A and B are exact too because their frozen variables make
the right-hand side constant, so the composition is explicit, symplectic, and
second order.

All state arrays may carry leading batch dimensions; integrating a batch of
sigma points or initial conditions costs one pass.
"""

from dataclasses import dataclass

import numpy as np

from .beliefs import FunctionMap
from .errors import NumericalError, ValidationError


@dataclass(frozen=True)
class PhaseState:
    """Canonical position/momentum pair; arrays of matching trailing length."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        p = np.asarray(self.p, dtype=float)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)
        if q.shape != p.shape:
            raise ValidationError(f"q shape {q.shape} != p shape {p.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValidationError("phase state has non-finite entries")


@dataclass(frozen=True)
class AugmentedState:
    """Physical pair plus fictitious copies used by the splitting scheme."""

    q: np.ndarray
    p: np.ndarray
    q_bar: np.ndarray
    p_bar: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("q", "p", "q_bar", "p_bar"):
            arrays[name] = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arrays[name])
        shapes = {a.shape for a in arrays.values()}
        if len(shapes) != 1:
            raise ValidationError(f"augmented components disagree in shape: {shapes}")

    @classmethod
    def from_phase(cls, state):
        """Initialize the fictitious pair as a copy of the physical pair."""
        return cls(q=state.q, p=state.p, q_bar=state.q.copy(), p_bar=state.p.copy())

    @property
    def physical(self):
        return PhaseState(q=self.q, p=self.p)


@dataclass(frozen=True)
class IntegratorConfig:
    """Timestep, binding constant, and substep count for one propagator call."""

    dt: float
    lam: float = 10.0
    substeps: int = 1

    def __post_init__(self):
        if self.dt < 0.0:
            raise ValidationError(f"dt must be >= 0, got {self.dt}")
        if self.lam <= 0.0:
            raise ValidationError(f"lambda must be > 0, got {self.lam}")
        if self.substeps < 1:
            raise ValidationError(f"substeps must be >= 1, got {self.substeps}")
        if self.dt * self.lam >= np.pi:
            raise ValidationError(
                f"dt * lambda = {self.dt * self.lam:.3g} >= pi: the binding "
                "rotation is unresolved; shrink dt or lambda"
            )


def _checked_grads(hamiltonian, q, p, flow_name):
    gq, gp = hamiltonian.grads(q, p)
    if not (np.all(np.isfinite(gq)) and np.all(np.isfinite(gp))):
        raise NumericalError(f"non-finite Hamiltonian gradient in flow {flow_name}")
    return gq, gp


def hamilton_rhs(hamiltonian, state):
    """Time derivatives (dq/dt, dp/dt) = (dH/dp, -dH/dq) at a phase state."""
    gq, gp = _checked_grads(hamiltonian, state.q, state.p, "rhs")
    return gp, -gq


def tao_step(hamiltonian, aug, cfg):
    """Advance an augmented state by one step of the splitting scheme."""
    if cfg.dt == 0.0:
        return aug
    q, p = aug.q, aug.p
    qb, pb = aug.q_bar, aug.p_bar
    dt = cfg.dt / cfg.substeps
    half = 0.5 * dt
    angle = 2.0 * cfg.lam * dt
    cos, sin = np.cos(angle), np.sin(angle)
    for _ in range(cfg.substeps):
        gq, gp = _checked_grads(hamiltonian, q, pb, "A")
        p = p - half * gq
        qb = qb + half * gp
        gq, gp = _checked_grads(hamiltonian, qb, p, "B")
        q = q + half * gp
        pb = pb - half * gq
        # Exact flow of the binding term: rotate differences, keep sums.
        sum_q, sum_p = q + qb, p + pb
        diff_q, diff_p = q - qb, p - pb
        rot_q = cos * diff_q + sin * diff_p
        rot_p = -sin * diff_q + cos * diff_p
        q, qb = 0.5 * (sum_q + rot_q), 0.5 * (sum_q - rot_q)
        p, pb = 0.5 * (sum_p + rot_p), 0.5 * (sum_p - rot_p)
        gq, gp = _checked_grads(hamiltonian, qb, p, "B")
        q = q + half * gp
        pb = pb - half * gq
        gq, gp = _checked_grads(hamiltonian, q, pb, "A")
        p = p - half * gq
        qb = qb + half * gp
    return AugmentedState(q=q, p=p, q_bar=qb, p_bar=pb)


def rollout(hamiltonian, x0, cfg, steps):
    """Integrate ``steps`` steps from a phase state, recording the physical pair.

    The fictitious pair starts as a copy of ``x0`` and is carried across steps.
    Returns a list of ``steps + 1`` :class:`PhaseState`, starting with ``x0``.
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    aug = AugmentedState.from_phase(x0)
    trajectory = [x0]
    for k in range(steps):
        try:
            aug = tao_step(hamiltonian, aug, cfg)
        except NumericalError as err:
            raise NumericalError(f"rollout failed at step {k}: {err}") from err
        trajectory.append(aug.physical)
    return trajectory


def rollout_array(hamiltonian, x0, cfg, steps):
    """Like :func:`rollout` but returns a (steps+1, 2d) array of [q, p] rows."""
    traj = rollout(hamiltonian, x0, cfg, steps)
    return np.stack([np.concatenate([s.q, s.p]) for s in traj])


def hamiltonian_propagator(hamiltonian, cfg, dim):
    """Deterministic state map x -> x' over one measurement interval.

    Packs x = [q, p] of total length ``2 * dim``, re-initializes the fictitious
    pair from x on every call (the map must be memoryless for filtering), and
    applies one configured step.  Vectorized over leading batch dimensions.
    """

    def step(x):
        q, p = x[..., :dim], x[..., dim:]
        aug = tao_step(
            hamiltonian,
            AugmentedState(q=q, p=p, q_bar=q.copy(), p_bar=p.copy()),
            cfg,
        )
        return np.concatenate([aug.q, aug.p], axis=-1)

    return FunctionMap(step, 2 * dim, 2 * dim)
