"""Parameterized Hamiltonians: closed-form systems, reduced form, and the MLP.

Every model exposes ``value(q, p) -> (...,)`` and ``grads(q, p) -> (dH/dq,
dH/dp)``, vectorized over leading batch dimensions with ``q, p`` of trailing
length ``dim``.  Closed-form gradients are hard-coded (derived once by hand)
and validated against central finite differences in the test suite; the MLP
propagates gradients layer by layer in reverse.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError


def _check_shapes(model, q, p):
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.shape != p.shape or q.shape[-1:] != (model.dim,):
        raise ValidationError(
            f"expected q, p with trailing length {model.dim}, "
            f"got {q.shape} and {p.shape}"
        )
    return q, p


class TaoToy:
    """One-degree-of-freedom polynomial nonseparable system.

    H(q, p) = (q^2 + 1)(p^2 + 1) / 2
    """

    dim = 1

    def value(self, q, p):
        q, p = _check_shapes(self, q, p)
        return 0.5 * (q[..., 0] ** 2 + 1.0) * (p[..., 0] ** 2 + 1.0)

    def grads(self, q, p):
        q, p = _check_shapes(self, q, p)
        gq = q * (p**2 + 1.0)
        gp = (q**2 + 1.0) * p
        return gq, gp


@dataclass(frozen=True)
class DoublePendulum:
    """Planar double pendulum; angles (q1, q2), conjugate momenta (p1, p2).

    Kinetic denominator is 2*l1*l2*m2*(m1 + m2 sin^2(q1 - q2)); with unit
    masses and lengths this coincides with the textbook l1^2 l2^2 form, which
    is the only regime exercised by the experiments.
    """

    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    g: float = 9.81

    dim = 2

    def value(self, q, p):
        q, p = _check_shapes(self, q, p)
        q1, q2 = q[..., 0], q[..., 1]
        p1, p2 = p[..., 0], p[..., 1]
        m1, m2, l1, l2, g = self.m1, self.m2, self.l1, self.l2, self.g
        c = np.cos(q1 - q2)
        denom = 2.0 * l1 * l2 * m2 * (m1 + m2 * np.sin(q1 - q2) ** 2)
        numer = (
            m2 * l2**2 * p1**2
            + (m1 + m2) * l1**2 * p2**2
            - 2.0 * m2 * l1 * l2 * p1 * p2 * c
        )
        return (
            numer / denom
            - (m1 + m2) * g * l1 * np.cos(q1)
            - m2 * g * l2 * np.cos(q2)
        )

    def grads(self, q, p):
        q, p = _check_shapes(self, q, p)
        q1, q2 = q[..., 0], q[..., 1]
        p1, p2 = p[..., 0], p[..., 1]
        m1, m2, l1, l2, g = self.m1, self.m2, self.l1, self.l2, self.g
        u = q1 - q2
        s, c = np.sin(u), np.cos(u)
        denom = 2.0 * l1 * l2 * m2 * (m1 + m2 * s**2)
        numer = (
            m2 * l2**2 * p1**2
            + (m1 + m2) * l1**2 * p2**2
            - 2.0 * m2 * l1 * l2 * p1 * p2 * c
        )
        ddenom_du = 4.0 * l1 * l2 * m2**2 * s * c
        dt_du = (2.0 * m2 * l1 * l2 * p1 * p2 * s) / denom - (
            numer * ddenom_du
        ) / denom**2
        gq = np.stack(
            [
                dt_du + (m1 + m2) * g * l1 * np.sin(q1),
                -dt_du + m2 * g * l2 * np.sin(q2),
            ],
            axis=-1,
        )
        gp = np.stack(
            [
                (2.0 * m2 * l2**2 * p1 - 2.0 * m2 * l1 * l2 * p2 * c) / denom,
                (2.0 * (m1 + m2) * l1**2 * p2 - 2.0 * m2 * l1 * l2 * p1 * c) / denom,
            ],
            axis=-1,
        )
        return gq, gp


@dataclass(frozen=True)
class NlseGrid:
    """Periodic 1-D grid for the semidiscrete cubic Schrodinger field.

    ``num_points`` equally spaced points over a domain of length ``length``;
    index num_points + 1 wraps to 1.  ``gamma`` weighs the cubic term.
    """

    num_points: int
    length: float
    gamma: float = 2.0

    def __post_init__(self):
        if self.num_points < 2:
            raise ValidationError("grid needs at least 2 points")
        if self.length <= 0.0:
            raise ValidationError("domain length must be positive")

    @property
    def dz(self):
        return self.length / self.num_points

    def with_gamma(self, gamma):
        return NlseGrid(self.num_points, self.length, float(gamma))


def _forward_diff(field, dz):
    # (f_{i+1} - f_i) / dz with periodic wrap.
    return (np.roll(field, -1, axis=-1) - field) / dz


@dataclass(frozen=True)
class NlseHamiltonian:
    """Spatially-discretized cubic Schrodinger Hamiltonian on a periodic grid.

    H = (1/2) sum_i [ p_z_i^2 + q_z_i^2 - (gamma/2)(p_i^2 + q_i^2)^2 ] dz

    with p_z_i = (p_{i+1} - p_i)/dz (forward difference, periodic wrap), used
    for both the energy and the momentum invariant.
    """

    grid: NlseGrid

    @property
    def dim(self):
        return self.grid.num_points

    def value(self, q, p):
        q, p = _check_shapes(self, q, p)
        dz = self.grid.dz
        qz = _forward_diff(q, dz)
        pz = _forward_diff(p, dz)
        quartic = (self.grid.gamma / 2.0) * (q**2 + p**2) ** 2
        return 0.5 * dz * np.sum(pz**2 + qz**2 - quartic, axis=-1)

    def grads(self, q, p):
        q, p = _check_shapes(self, q, p)
        dz = self.grid.dz
        gamma = self.grid.gamma
        amp2 = q**2 + p**2

        def second_diff(f):
            return np.roll(f, -1, axis=-1) - 2.0 * f + np.roll(f, 1, axis=-1)

        gq = -second_diff(q) / dz - gamma * dz * amp2 * q
        gp = -second_diff(p) / dz - gamma * dz * amp2 * p
        return gq, gp


def nlse_invariants(grid, q, p):
    """Energy, mass, and momentum of a discretized Schrodinger field.

    Returns (H, I1, I2) with I1 = sum (p^2 + q^2) dz and
    I2 = sum (p_z q - q_z p) dz.
    """
    ham = NlseHamiltonian(grid)
    q, p = _check_shapes(ham, q, p)
    dz = grid.dz
    mass = dz * np.sum(p**2 + q**2, axis=-1)
    qz = _forward_diff(q, dz)
    pz = _forward_diff(p, dz)
    momentum = dz * np.sum(pz * q - qz * p, axis=-1)
    return ham.value(q, p), mass, momentum


@dataclass(frozen=True)
class CubicNonlinearity:
    """Pointwise quartic term -(gamma * weight / 4)(q^2 + p^2)^2.

    ``weight`` carries any quadrature factor of the spatial discretization so
    derived forcings match the full model's Hamilton right-hand side.
    """

    gamma: float
    weight: float = 1.0

    def value(self, q, p):
        return -(self.gamma * self.weight / 4.0) * (q**2 + p**2) ** 2

    def grads(self, q, p):
        amp2 = q**2 + p**2
        factor = -self.gamma * self.weight
        return factor * amp2 * q, factor * amp2 * p

    def with_gamma(self, gamma):
        return CubicNonlinearity(float(gamma), self.weight)


class ReducedQuadraticNl:
    """Reduced Hamiltonian: quadratic forms plus a lifted pointwise term.

    H(q, p) = q^T Dq q / 2 + p^T Dp p / 2 + sum_i nl(Phi q, Phi p)_i

    ``basis`` (the tall factor Phi) and ``nonlinearity`` may be omitted for a
    purely quadratic model.
    """

    def __init__(self, dq_op, dp_op, basis=None, nonlinearity=None):
        self.dq_op = np.asarray(dq_op, dtype=float)
        self.dp_op = np.asarray(dp_op, dtype=float)
        r = self.dq_op.shape[0]
        if self.dq_op.shape != (r, r) or self.dp_op.shape != (r, r):
            raise ValidationError("reduced operators must be square and equal-size")
        self.basis = None if basis is None else np.asarray(basis, dtype=float)
        if self.basis is not None and self.basis.shape[1] != r:
            raise ValidationError(
                f"basis shape {self.basis.shape} incompatible with r={r}"
            )
        self.nonlinearity = nonlinearity
        self.dim = r

    def value(self, q, p):
        q, p = _check_shapes(self, q, p)
        quad = 0.5 * (
            np.einsum("...i,ij,...j->...", q, self.dq_op, q)
            + np.einsum("...i,ij,...j->...", p, self.dp_op, p)
        )
        if self.nonlinearity is None:
            return quad
        full_q = q @ self.basis.T
        full_p = p @ self.basis.T
        return quad + np.sum(self.nonlinearity.value(full_q, full_p), axis=-1)

    def grads(self, q, p):
        q, p = _check_shapes(self, q, p)
        gq = q @ self.dq_op.T
        gp = p @ self.dp_op.T
        if self.nonlinearity is not None:
            full_q = q @ self.basis.T
            full_p = p @ self.basis.T
            dnl_dq, dnl_dp = self.nonlinearity.grads(full_q, full_p)
            gq = gq + dnl_dq @ self.basis
            gp = gp + dnl_dp @ self.basis
        return gq, gp


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths of the Hamiltonian network: input 2d, hidden, output 1.

    Exactly six linear layers with sigmoid activations between all but the
    last; the output is scalar.
    """

    layer_sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) != 7:
            raise ValidationError(
                f"expected 7 widths (six linear layers), got {len(sizes)}"
            )
        if sizes[-1] != 1:
            raise ValidationError("output dimension must be 1")
        if sizes[0] % 2 != 0:
            raise ValidationError("input width must be 2d (positions + momenta)")

    @classmethod
    def for_dim(cls, d, hidden=16):
        return cls((2 * d, hidden, hidden, hidden, hidden, hidden, 1))

    @property
    def n_params(self):
        sizes = self.layer_sizes
        return sum(
            sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1)
        )

    def shapes(self):
        """Per-layer (weight shape, bias shape) in flat-vector order."""
        sizes = self.layer_sizes
        return [
            ((sizes[i + 1], sizes[i]), (sizes[i + 1],))
            for i in range(len(sizes) - 1)
        ]


def mlp_init(spec, seed):
    """Xavier-uniform weights, zero biases, flattened in layer order.

    Weights draw from U[-b, b] with b = sqrt(6 / (fan_in + fan_out));
    deterministic under the seed.
    """
    rng = np.random.default_rng(seed)
    chunks = []
    for (w_shape, b_shape) in spec.shapes():
        fan_out, fan_in = w_shape
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-bound, bound, size=w_shape).ravel())
        chunks.append(np.zeros(b_shape))
    return np.concatenate(chunks)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class MlpHamiltonian:
    """Scalar Hamiltonian network over the stacked state [q, p]."""

    def __init__(self, spec, params):
        self.spec = spec
        params = np.asarray(params, dtype=float)
        if params.shape != (spec.n_params,):
            raise ValidationError(
                f"expected {spec.n_params} parameters, got {params.shape}"
            )
        self.params = params
        self.weights, self.biases = [], []
        offset = 0
        for (w_shape, b_shape) in spec.shapes():
            w_size = w_shape[0] * w_shape[1]
            self.weights.append(params[offset : offset + w_size].reshape(w_shape))
            offset += w_size
            self.biases.append(params[offset : offset + b_shape[0]])
            offset += b_shape[0]
        self.dim = spec.layer_sizes[0] // 2

    def _forward(self, x):
        activations = [x]
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = activations[-1] @ w.T + b
            activations.append(_sigmoid(z) if i < n_layers - 1 else z)
        return activations

    def value(self, q, p):
        q, p = _check_shapes(self, q, p)
        x = np.concatenate([q, p], axis=-1)
        return self._forward(x)[-1][..., 0]

    def grads(self, q, p):
        q, p = _check_shapes(self, q, p)
        x = np.concatenate([q, p], axis=-1)
        activations = self._forward(x)
        # Reverse pass: d(output)/d(layer input), seeded by the scalar output.
        delta = np.ones_like(activations[-1])
        for i in range(len(self.weights) - 1, -1, -1):
            grad_input = delta @ self.weights[i]
            if i > 0:
                act = activations[i]
                delta = grad_input * act * (1.0 - act)
            else:
                grad_x = grad_input
        return grad_x[..., : self.dim], grad_x[..., self.dim :]


def eval_hamiltonian(model, q, p):
    """Scalar energy at (q, p); NaN inputs are rejected."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(np.isnan(q)) or np.any(np.isnan(p)):
        raise ValueError("NaN in phase-state input")
    return model.value(q, p)


def eval_gradients(model, q, p):
    """(dH/dq, dH/dp) at (q, p); non-finite results are rejected."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(np.isnan(q)) or np.any(np.isnan(p)):
        raise ValueError("NaN in phase-state input")
    gq, gp = model.grads(q, p)
    if not (np.all(np.isfinite(gq)) and np.all(np.isfinite(gp))):
        raise NumericalError("Hamiltonian gradient is non-finite")
    return gq, gp
