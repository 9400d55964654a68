import math

import numpy as np
import pytest

from eigenlab import linalg
from eigenlab.errors import (DegenerateReferenceError, PreconditionError, SingularMatrixError,
                             SolverError)


def residual(m, dec):
    h = dec.vectors
    return linalg.rel_l1(h.T @ m @ h, np.diag(dec.values))


def random_orthogonal(n, rng):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


# -- eig_sym -----------------------------------------------------------------

def test_eig_diagonal():
    dec = linalg.eig_sym(np.diag([3.0, 1.0]))
    assert np.array_equal(dec.values, [3.0, 1.0])
    assert np.array_equal(dec.vectors, np.eye(2))


def test_eig_diagonal_unsorted_input_is_sorted():
    dec = linalg.eig_sym(np.diag([1.0, 3.0, -2.0]))
    assert np.array_equal(dec.values, [3.0, 1.0, -2.0])
    assert np.array_equal(dec.vectors, np.eye(3)[:, [1, 0, 2]])


def test_eig_identity():
    m = np.eye(5)
    dec = linalg.eig_sym(m)
    assert np.array_equal(dec.values, np.ones(5))
    assert residual(m, dec) == 0.0


def test_eig_analytic_2x2():
    dec = linalg.eig_sym(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(dec.values, [1.0, -1.0], atol=1e-15)
    s = 1 / math.sqrt(2)
    # sign rule: largest |entry| positive, lowest index wins the tie
    np.testing.assert_allclose(dec.vectors, [[s, s], [s, -s]], atol=1e-15)


def test_eig_random_invariants(sym5):
    values, vecs = linalg.eig_sym_batch(sym5)
    assert np.all(np.diff(values, axis=1) <= 0)
    for m, lam, h in zip(sym5, values, vecs):
        assert linalg.rel_l1(h.T @ m @ h, np.diag(lam)) < 1e-9
        norms = np.linalg.norm(h, axis=0)
        assert np.all(np.abs(norms - 1) <= 1e-12)
        assert linalg.cond(h) < 1 + 1e-8
        for k in range(5):
            col = h[:, k]
            j = int(np.argmax(np.abs(col)))
            assert col[j] > 0


def test_eig_matches_numpy(sym5):
    values, _ = linalg.eig_sym_batch(sym5[:100])
    ref = np.linalg.eigvalsh(sym5[:100])[:, ::-1]
    np.testing.assert_allclose(values, ref, rtol=0, atol=1e-10 * np.abs(ref).max())


def test_eig_reassemble_roundtrip(sym5):
    for m in sym5[:200]:
        dec = linalg.eig_sym(m)
        back = linalg.reassemble(dec.values, dec.vectors)
        assert linalg.rel_l1(back, m) < 1e-9


def test_eig_deterministic(sym5):
    a = linalg.eig_sym_batch(sym5)
    b = linalg.eig_sym_batch(sym5.copy())
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_eig_batch_equals_single(sym5):
    values, vecs = linalg.eig_sym_batch(sym5[:20])
    for i in range(20):
        d = linalg.eig_sym(sym5[i])
        assert np.array_equal(d.values, values[i]) and np.array_equal(d.vectors, vecs[i])


def test_eig_rejects_asymmetric():
    with pytest.raises(PreconditionError):
        linalg.eig_sym(np.array([[1.0, 2.0], [2.0 + 1e-15, 1.0]]))


def test_eig_rejects_nonfinite():
    with pytest.raises(PreconditionError):
        linalg.eig_sym(np.array([[1.0, np.nan], [np.nan, 1.0]]))


def test_eig_sweep_budget(monkeypatch):
    """A budget too small to converge must raise, not return garbage."""
    from eigenlab import kernels
    m = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]])
    orig = kernels.jacobi
    monkeypatch.setattr(linalg.kernels, "jacobi", lambda mats, tols, sweeps: orig(mats, tols, 1))
    with pytest.raises(SolverError):
        linalg.eig_sym(m)


def test_eig_zero_matrix():
    dec = linalg.eig_sym(np.zeros((3, 3)))
    assert np.array_equal(dec.values, np.zeros(3))
    assert np.array_equal(dec.vectors, np.eye(3))


# -- invert ------------------------------------------------------------------

def test_invert_diagonal():
    np.testing.assert_array_equal(linalg.invert(np.array([[2.0, 0.0], [0.0, 4.0]])),
                                  [[0.5, 0.0], [0.0, 0.25]])


def test_invert_identity():
    np.testing.assert_array_equal(linalg.invert(np.eye(4)), np.eye(4))


def test_invert_involution(gen5):
    for m in gen5[:200]:
        if linalg.cond(m) > 1e6:
            continue
        assert linalg.rel_l1(linalg.invert(linalg.invert(m)), m) < 1e-8


def test_invert_residual(gen5):
    conds = linalg.cond_batch(gen5)
    for m, c in zip(gen5, conds):
        if c < 1e8:
            p = linalg.invert(m)
            assert linalg.l1(p @ m - np.eye(5)) / 5 < 1e-9


def test_invert_needs_pivoting():
    m = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_array_equal(linalg.invert(m), m)


def test_invert_singular():
    with pytest.raises(SingularMatrixError):
        linalg.invert(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SingularMatrixError):
        linalg.invert(np.zeros((3, 3)))


def test_invert_batch_nonstrict(gen5):
    mats = gen5[:4].copy()
    mats[2] = 0.0
    inv, ok = linalg.invert_batch(mats, strict=False)
    assert ok.tolist() == [True, True, False, True]
    assert np.isnan(inv[2]).all()
    with pytest.raises(SingularMatrixError):
        linalg.invert_batch(mats)


# -- cond --------------------------------------------------------------------

def test_cond_orthogonal(rng):
    for _ in range(50):
        assert abs(linalg.cond(random_orthogonal(5, rng)) - 1.0) < 1e-9


def test_cond_diagonal():
    assert abs(linalg.cond(np.diag([10.0, 1.0])) - 10.0) < 1e-12


def test_cond_singular_is_inf():
    assert linalg.cond(np.zeros((3, 3))) == math.inf
    assert linalg.cond(np.array([[1.0, 0.0], [0.0, 0.0]])) == math.inf


def test_cond_symmetric_crosscheck(sym5):
    for m in sym5[:200]:
        lam = np.abs(linalg.eig_sym(m).values)
        assert abs(linalg.cond(m) / (lam.max() / lam.min()) - 1) < 1e-9


def test_cond_scale_invariant(gen5):
    """1e-12 where the m.T @ m route can deliver it; beyond that the
    smallest eigenvalue of the Gram matrix carries an absolute error of
    order eps * sigma_max**2, so the relative error grows like eps * cond**2."""
    eps = np.finfo(float).eps
    for m in gen5[:300]:
        c = linalg.cond(m)
        bound = 1e-12 if c < 50 else 4 * eps * c * c
        for a in (1e-3, 1.0, 1e3):
            assert abs(linalg.cond(a * m) / c - 1) < bound


def test_cond_vs_numpy(gen5):
    c = linalg.cond_batch(gen5[:200])
    ref = np.linalg.cond(gen5[:200])
    np.testing.assert_allclose(c, ref, rtol=1e-6)


# -- rel_l1 ------------------------------------------------------------------

def test_rel_l1_examples():
    b = np.array([[1.0, -2.0], [3.5, 4.0]])
    assert linalg.rel_l1(b, b) == 0.0
    assert linalg.rel_l1(np.array([1.0, 2.0]), np.array([2.0, 2.0])) == 0.25
    assert abs(linalg.rel_l1(1.05 * b, b) - 0.05) < 1e-15


def test_rel_l1_scale_invariant(rng):
    a, b = rng.standard_normal(10), rng.standard_normal(10)
    r = linalg.rel_l1(a, b)
    for s in (1e-5, 3.0, 1e7):
        assert abs(linalg.rel_l1(s * a, s * b) - r) < 1e-13


def test_rel_l1_degenerate():
    with pytest.raises(DegenerateReferenceError):
        linalg.rel_l1(np.ones(3), np.zeros(3))


def test_rel_l1_shape_mismatch():
    with pytest.raises(PreconditionError):
        linalg.rel_l1(np.ones(3), np.ones(4))


# -- reassemble --------------------------------------------------------------

def test_reassemble_identity(rng):
    h = random_orthogonal(5, rng)
    np.testing.assert_allclose(linalg.reassemble(np.ones(5), h), np.eye(5), atol=1e-12)


def test_reassemble_diag():
    np.testing.assert_array_equal(linalg.reassemble(np.array([2.0, 0.0]), np.eye(2)), np.diag([2.0, 0.0]))


def test_reassemble_exactly_symmetric(rng):
    h = random_orthogonal(6, rng)
    m = linalg.reassemble(rng.standard_normal(6), h)
    assert np.array_equal(m, m.T)


def test_reassemble_rejects_nonorthogonal():
    with pytest.raises(PreconditionError):
        linalg.reassemble(np.ones(2), np.array([[1.0, 0.1], [0.0, 1.0]]))
