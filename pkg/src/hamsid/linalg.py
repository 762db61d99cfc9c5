"""Small dense linear-algebra helpers used throughout the package.

Covariances are stored as full symmetric matrices and re-symmetrized after
every update; PSD checks are relative to the largest eigenvalue.  Cholesky
factorizations go through a jitter ladder because filtering subtracts
matrices and tiny negative eigenvalues are expected round-off.
"""

import numpy as np

from .errors import NumericalError, ValidationError

# Relative tolerance for "is PSD": smallest eigenvalue >= -PSD_RTOL * largest.
PSD_RTOL = 1e-10
# Absolute tolerance for symmetry checks.
SYM_ATOL = 1e-12
# Jitter ladder: start at JITTER_START * (trace/n), escalate x10 up to JITTER_MAX.
JITTER_START = 1e-12
JITTER_MAX = 1e-6


def symmetrize(mat):
    """Return (A + A^T) / 2."""
    return 0.5 * (mat + mat.T)


def check_symmetric(mat, name="matrix", atol=SYM_ATOL):
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValidationError(f"{name} has non-finite entries")
    asym = np.max(np.abs(mat - mat.T)) if mat.size else 0.0
    if asym > atol:
        raise ValidationError(f"{name} is not symmetric (max asymmetry {asym:.3e})")


def check_psd(mat, name="matrix", rtol=PSD_RTOL):
    """Raise ValidationError unless ``mat`` is symmetric PSD within tolerance."""
    check_symmetric(mat, name)
    if mat.size == 0:
        return
    eigs = np.linalg.eigvalsh(symmetrize(mat))
    scale = max(eigs[-1], 0.0)
    floor = -rtol * max(scale, np.finfo(float).tiny)
    if eigs[0] < floor:
        raise ValidationError(
            f"{name} is non-PSD: min eigenvalue {eigs[0]:.3e} vs largest {eigs[-1]:.3e}"
        )


def cholesky_with_jitter(mat):
    """Cholesky factor of a symmetric matrix, adding jitter if needed.

    Jitter starts at ``JITTER_START * trace/n`` and is escalated tenfold up to
    ``JITTER_MAX * trace/n`` before giving up.

    Returns
    -------
    lower : ndarray
        Lower-triangular factor of ``mat + jitter * I``.

    Raises
    ------
    NumericalError
        If the factorization fails at the largest jitter level.  The offending
        matrix rides along as ``context``.
    """
    mat = symmetrize(np.asarray(mat, dtype=float))
    n = mat.shape[0]
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    base = np.trace(mat) / max(n, 1)
    if not np.isfinite(base) or base <= 0.0:
        raise NumericalError(
            "covariance has non-positive trace; jitter cannot repair it",
            context=mat,
        )
    jitter = JITTER_START
    eye = np.eye(n)
    while jitter <= JITTER_MAX * (1.0 + 1e-12):
        try:
            return np.linalg.cholesky(mat + jitter * base * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(
        "Cholesky failed even with maximum jitter", context=mat
    )


def solve_spd(mat, rhs):
    """Solve ``mat x = rhs`` for symmetric positive-definite ``mat`` via Cholesky."""
    lower = cholesky_with_jitter(mat)
    y = np.linalg.solve(lower, rhs)
    return np.linalg.solve(lower.T, y)


def gaussian_logpdf(x, mean, cov):
    """Log density of N(mean, cov) at x, via Cholesky (no explicit inverse)."""
    diff = np.atleast_1d(np.asarray(x, dtype=float) - mean)
    m = diff.shape[0]
    lower = cholesky_with_jitter(cov)
    alpha = np.linalg.solve(lower, diff)
    logdet = 2.0 * np.sum(np.log(np.diag(lower)))
    return -0.5 * (m * np.log(2.0 * np.pi) + logdet + alpha @ alpha)


def canonical_symplectic_matrix(two_d):
    """Canonical symplectic matrix J of even dimension ``two_d``.

    J = [[0, I], [-I, 0]] in (positions, momenta) block ordering.
    """
    if two_d % 2 != 0:
        raise ValueError(f"symplectic dimension must be even, got {two_d}")
    d = two_d // 2
    j = np.zeros((two_d, two_d))
    j[:d, d:] = np.eye(d)
    j[d:, :d] = -np.eye(d)
    return j
