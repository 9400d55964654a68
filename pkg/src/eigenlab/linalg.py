"""Dense linear algebra on small real matrices.

Matrices are plain ``float64`` ndarrays of shape ``(n, n)``; spectra are 1-d
arrays sorted non-increasing. The batched ``*_batch`` variants take stacks of
shape ``(B, n, n)`` and are what the samplers and statistics use.
"""
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import DegenerateReferenceError, PreconditionError, SingularMatrixError, SolverError

MAX_SWEEPS = 50
CONVERGENCE_RTOL = 1e-12
SINGULAR_RTOL = 1e-13
SIGMA_FLOOR = 1e-300


class EigenDecomposition(NamedTuple):
    values: np.ndarray
    """Eigenvalues, sorted non-increasing."""
    vectors: np.ndarray
    """Column ``k`` is the unit eigenvector for ``values[k]``."""


def as_matrix(m, name="matrix"):
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise PreconditionError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise PreconditionError(f"{name} has non-finite entries")
    return a


def as_stack(mats, name="matrix"):
    a = np.asarray(mats, dtype=np.float64)
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise PreconditionError(f"{name} stack must have shape (B, n, n), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise PreconditionError(f"{name} has non-finite entries")
    return a


def l1(a):
    """Elementwise L1 norm."""
    return float(np.abs(np.asarray(a, dtype=np.float64)).sum())


def _l1_stack(a):
    return np.abs(a).reshape(a.shape[0], -1).sum(axis=1)


def rel_l1(a, b):
    """``||a - b||_1 / ||b||_1`` with elementwise L1 norms."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise PreconditionError(f"shape mismatch: {a.shape} vs {b.shape}")
    ref = l1(b)
    if ref == 0.0:
        raise DegenerateReferenceError("reference has zero L1 norm")
    return l1(a - b) / ref


def symmetrize_upper(a):
    """Mirror the upper triangle onto the lower one (exact symmetry)."""
    a = np.array(a, dtype=np.float64)
    iu = np.triu_indices(a.shape[-1], 1)
    a[..., iu[1], iu[0]] = a[..., iu[0], iu[1]]
    return a


def canonicalize(values, vectors):
    """Sort eigenpairs non-increasing and fix column signs.

    Sign rule: the largest-magnitude entry of each column is positive, the
    lowest row index winning ties. Works on single decompositions and stacks.
    """
    values = np.asarray(values)
    vectors = np.asarray(vectors)
    order = np.argsort(-values, axis=-1, kind="stable")
    values = np.take_along_axis(values, order, axis=-1)
    vectors = np.take_along_axis(vectors, order[..., None, :], axis=-1)
    lead = np.argmax(np.abs(vectors), axis=-2)
    lead_val = np.take_along_axis(vectors, lead[..., None, :], axis=-2)
    vectors = np.where(lead_val < 0, -vectors, vectors)
    return values, vectors


def eig_sym_batch(mats):
    """Eigendecomposition of a stack of symmetric matrices.

    Returns ``(values, vectors)`` with shapes ``(B, n)`` and ``(B, n, n)``.
    """
    a = as_stack(mats)
    if not np.array_equal(a, np.swapaxes(a, 1, 2)):
        raise PreconditionError("eig_sym needs exactly symmetric input")
    if a.shape[0] == 0:
        n = a.shape[1]
        return np.empty((0, n)), np.empty((0, n, n))
    tols = CONVERGENCE_RTOL * _l1_stack(a)
    diag, vecs, sweeps = kernels.jacobi(a, tols, MAX_SWEEPS)
    bad = np.flatnonzero(sweeps < 0)
    if bad.size:
        raise SolverError(f"Jacobi did not converge in {MAX_SWEEPS} sweeps (batch items {bad[:5].tolist()})")
    # Jacobi accumulates orthogonal rotations, so columns have unit norm up to
    # roundoff; renormalize to pin them to 1 within a few ulps.
    vecs = vecs / np.sqrt((vecs * vecs).sum(axis=1, keepdims=True))
    return canonicalize(diag, vecs)


def eig_sym(m):
    """Eigendecomposition of one symmetric matrix by cyclic Jacobi."""
    values, vectors = eig_sym_batch(as_matrix(m)[None])
    return EigenDecomposition(values[0], vectors[0])


def invert_batch(mats, strict=True):
    """Inverses of a stack of square matrices.

    With ``strict=False`` returns ``(inverses, ok)`` instead of raising on
    singular members; rows where ``ok`` is False hold garbage.
    """
    a = as_stack(mats)
    thresholds = SINGULAR_RTOL * _l1_stack(a)
    inv, ok = kernels.gauss_jordan(a, thresholds)
    if strict:
        if not np.all(ok):
            raise SingularMatrixError(f"numerically singular (batch items {np.flatnonzero(~ok)[:5].tolist()})")
        return inv
    return inv, ok


def invert(m):
    """Inverse by Gauss-Jordan elimination with partial pivoting.

    Raises :class:`SingularMatrixError` when a pivot falls below
    ``1e-13 * ||m||_1``.
    """
    return invert_batch(as_matrix(m)[None])[0]


def cond_batch(mats):
    """Condition numbers ``sigma_max / sigma_min`` of a stack of matrices."""
    a = as_stack(mats)
    values, _ = eig_sym_batch(kernels.gram(a))
    sig2 = np.clip(values, 0.0, None)
    smax = np.sqrt(sig2[:, 0])
    smin = np.sqrt(sig2[:, -1])
    out = np.full(a.shape[0], np.inf)
    ok = smin >= SIGMA_FLOOR
    out[ok] = smax[ok] / smin[ok]
    return out


def cond(m):
    """Ratio of largest to smallest singular value, via the eigenvalues of
    ``m.T @ m``. Returns ``inf`` for numerically singular ``m``."""
    return float(cond_batch(as_matrix(m)[None])[0])


def reassemble_batch(values, vectors, check=True):
    values = np.asarray(values, dtype=np.float64)
    vectors = np.asarray(vectors, dtype=np.float64)
    if check:
        c = cond_batch(vectors)
        if not np.all(c < 1.0 + 1e-8):
            raise PreconditionError("reassemble needs orthogonal eigenvector matrices")
    return kernels.reassemble(values, vectors)


def reassemble(values, h):
    """``h @ diag(values) @ h.T``, exactly symmetric. ``h`` must be orthogonal."""
    h = as_matrix(h, "h")
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (h.shape[0],):
        raise PreconditionError("spectrum length must match h")
    return reassemble_batch(values[None], h[None])[0]
