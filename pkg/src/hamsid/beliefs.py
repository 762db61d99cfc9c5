"""Probabilistic data model: Gaussian beliefs, noise moments, and the HMM contract.

The discrete-time model is

    x_{k+1} = psi(x_k) * w_k + xi_k        (dynamics)
    y_k     = h(x_k)   * v_k + eta_k       (measurements)

with ``*`` elementwise.  ``w, v`` are stationary multiplicative noises with
means ``mult_mean`` and covariances ``mult_cov``; ``xi, eta`` are zero-mean
additive noises with covariances ``add_cov``.  Only first and second moments
are tracked, so a :class:`NoiseModel` is just those moments.

All types here are immutable value objects; share them freely across threads.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .linalg import check_psd, check_symmetric, symmetrize


def _as_vector(x, name):
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance of a state estimate at one time index."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _as_vector(self.mean, "mean")
        cov = np.asarray(self.cov, dtype=float)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", symmetrize(cov))
        if cov.shape != (mean.size, mean.size):
            raise ValidationError(
                f"cov shape {cov.shape} does not match mean length {mean.size}"
            )
        if not np.all(np.isfinite(mean)):
            raise ValidationError("belief mean has non-finite entries")
        if not np.all(np.isfinite(cov)):
            raise ValidationError("belief cov has non-finite entries")

    @property
    def dim(self):
        return self.mean.size

    def validate(self):
        """Check the symmetry/PSD invariants; returns self."""
        check_symmetric(self.cov, "belief cov")
        check_psd(self.cov, "belief cov")
        return self


@dataclass(frozen=True)
class NoiseModel:
    """First two moments of stationary additive and multiplicative noise."""

    add_cov: np.ndarray
    mult_mean: np.ndarray
    mult_cov: np.ndarray

    def __post_init__(self):
        add_cov = symmetrize(np.asarray(self.add_cov, dtype=float))
        mult_mean = _as_vector(self.mult_mean, "mult_mean")
        mult_cov = symmetrize(np.asarray(self.mult_cov, dtype=float))
        object.__setattr__(self, "add_cov", add_cov)
        object.__setattr__(self, "mult_mean", mult_mean)
        object.__setattr__(self, "mult_cov", mult_cov)
        n = mult_mean.size
        if add_cov.shape != (n, n) or mult_cov.shape != (n, n):
            raise ValidationError(
                "noise moment dimensions disagree: "
                f"add_cov {add_cov.shape}, mult_mean {n}, mult_cov {mult_cov.shape}"
            )

    @property
    def dim(self):
        return self.mult_mean.size

    @classmethod
    def additive(cls, add_cov):
        """Purely additive noise: mult_mean = 1, mult_cov = 0."""
        add_cov = np.asarray(add_cov, dtype=float)
        n = add_cov.shape[0]
        return cls(add_cov=add_cov, mult_mean=np.ones(n), mult_cov=np.zeros((n, n)))

    @property
    def is_purely_additive(self):
        return np.all(self.mult_mean == 1.0) and not np.any(self.mult_cov)

    def validate(self):
        check_psd(self.add_cov, "add_cov")
        check_psd(self.mult_cov, "mult_cov")
        return self


def make_uniform_mult_noise(half_width, dim):
    """Noise moments for elementwise uniform multiplicative noise U[1-a, 1+a].

    The factor has mean 1 and variance a^2/3 per component.  ``a = 0`` swaps in
    a 1e-16 diagonal so downstream covariances stay positive definite.

    Parameters
    ----------
    half_width : float
        Noise half-width ``a``; must lie in [0, 1) so the factor stays positive.
    dim : int
        Number of measured components.

    Raises
    ------
    ValueError
        If ``a`` is outside [0, 1) (the multiplicative factor could be
        nonpositive) or ``dim < 1``.
    """
    a = float(half_width)
    if not 0.0 <= a < 1.0:
        raise ValueError(
            f"half_width must lie in [0, 1), got {a}: "
            "the multiplicative factor could be nonpositive"
        )
    dim = int(dim)
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    var = a * a / 3.0 if a > 0.0 else 1e-16
    return NoiseModel(
        add_cov=np.zeros((dim, dim)),
        mult_mean=np.ones(dim),
        mult_cov=var * np.eye(dim),
    )


class FunctionMap:
    """Wrap a vectorized callable ``(..., dim_in) -> (..., dim_out)`` as a state map."""

    def __init__(self, fn, dim_in, dim_out):
        self._fn = fn
        self.dim_in = int(dim_in)
        self.dim_out = int(dim_out)

    def __call__(self, x):
        return self._fn(np.asarray(x, dtype=float))


class AffineMap:
    """Affine state map x -> A x + b, exact under Gaussian moment propagation."""

    def __init__(self, matrix, offset=None):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.offset = (
            np.zeros(self.matrix.shape[0])
            if offset is None
            else np.asarray(offset, dtype=float)
        )
        if self.offset.shape != (self.matrix.shape[0],):
            raise ValidationError(
                f"offset shape {self.offset.shape} does not match matrix "
                f"output dim {self.matrix.shape[0]}"
            )
        self.dim_in = self.matrix.shape[1]
        self.dim_out = self.matrix.shape[0]

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim))

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ self.matrix.T + self.offset


@dataclass(frozen=True)
class HmmModel:
    """Deterministic maps plus noise moments plus initial belief.

    ``propagator`` and ``measurement_fn`` are deterministic state maps; all
    stochasticity lives in the two :class:`NoiseModel` fields.
    """

    propagator: object
    measurement_fn: object
    process_noise: NoiseModel
    measurement_noise: NoiseModel
    initial_belief: GaussianBelief


def default_initial_belief(first_measurement, measurement_noise,
                           fallback_var=1e-2):
    """Initial belief centered on the first (projected) measurement.

    Covariance defaults to the measurement noise's additive covariance; when
    that is degenerate (not strictly positive definite) a ``fallback_var * I``
    is used instead.  Record the choice in experiment configs so runs are
    reproducible.
    """
    mean = _as_vector(first_measurement, "first_measurement")
    cov = measurement_noise.add_cov
    eigs = np.linalg.eigvalsh(cov) if cov.size else np.zeros(0)
    if cov.size == 0 or eigs[0] <= 0.0:
        cov = fallback_var * np.eye(mean.size)
    return GaussianBelief(mean=mean, cov=cov)


def validate_model(model):
    """Check every dimension and PSD invariant of an :class:`HmmModel`.

    Returns the model unchanged.  Raises :class:`ValidationError` naming the
    offending field otherwise.
    """
    n = model.initial_belief.dim
    model.initial_belief.validate()
    prop, meas = model.propagator, model.measurement_fn
    if getattr(prop, "dim_in", n) != n or getattr(prop, "dim_out", n) != n:
        raise ValidationError(
            f"propagator maps {getattr(prop, 'dim_in', '?')} -> "
            f"{getattr(prop, 'dim_out', '?')}, expected {n} -> {n}"
        )
    m = getattr(meas, "dim_out", None)
    if getattr(meas, "dim_in", n) != n:
        raise ValidationError(
            f"measurement_fn input dim {getattr(meas, 'dim_in', '?')} != state dim {n}"
        )
    if m is None:
        m = np.asarray(meas(model.initial_belief.mean)).size
    if model.process_noise.dim != n:
        raise ValidationError(
            f"process_noise dim {model.process_noise.dim} != state dim {n}"
        )
    if model.measurement_noise.dim != m:
        raise ValidationError(
            f"measurement_noise dim {model.measurement_noise.dim} != "
            f"measurement dim {m}"
        )
    for name, noise in (("process_noise", model.process_noise),
                        ("measurement_noise", model.measurement_noise)):
        try:
            noise.validate()
        except ValidationError as err:
            raise ValidationError(f"{name}: non-PSD or asymmetric ({err})") from err
    return model


class ParameterVector:
    """Named, ordered parameter groups over a single flat vector.

    Group slices partition the flat vector exactly.  Groups listed in
    ``positive`` must stay strictly positive (``validate`` enforces it); the
    optimizer's positivity projection relies on the same names.
    """

    def __init__(self, groups, positive=()):
        self._names = tuple(groups.keys())
        self._values = {
            name: np.atleast_1d(np.asarray(val, dtype=float)).copy()
            for name, val in groups.items()
        }
        for name, val in self._values.items():
            val.flags.writeable = False
        self.positive = frozenset(positive)
        unknown = self.positive - set(self._names)
        if unknown:
            raise ValueError(f"positive groups not present: {sorted(unknown)}")

    @property
    def names(self):
        return self._names

    def group(self, name):
        return self._values[name]

    def __getitem__(self, name):
        return self._values[name]

    @property
    def flat(self):
        if not self._names:
            return np.zeros(0)
        return np.concatenate([self._values[n] for n in self._names])

    @property
    def size(self):
        return sum(self._values[n].size for n in self._names)

    def slices(self):
        """Mapping name -> slice into the flat vector."""
        out, start = {}, 0
        for name in self._names:
            stop = start + self._values[name].size
            out[name] = slice(start, stop)
            start = stop
        return out

    def with_flat(self, flat):
        """New vector with the same group layout and the given flat values."""
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.size,):
            raise ValueError(f"flat length {flat.shape} != {self.size}")
        groups = {n: flat[s] for n, s in self.slices().items()}
        return ParameterVector(groups, positive=self.positive)

    def with_group(self, name, value):
        groups = {n: self._values[n] for n in self._names}
        if name not in groups:
            raise KeyError(name)
        groups[name] = value
        return ParameterVector(groups, positive=self.positive)

    def validate(self):
        """Enforce strict positivity of variance-type groups; returns self."""
        for name in self.positive:
            if np.any(self._values[name] <= 0.0):
                raise ValidationError(f"group '{name}' must be strictly positive")
        return self

    def __repr__(self):
        parts = ", ".join(f"{n}[{self._values[n].size}]" for n in self._names)
        return f"ParameterVector({parts})"
