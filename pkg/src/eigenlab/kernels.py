"""Batched dense kernels for small matrices.

Every kernel exists twice: a numba ``@njit`` loop over the batch and a
vectorized numpy version that performs the same floating-point operations in
the same order, one batch-wide array op at a time. Both produce bit-identical
results (checked in ``tests/test_kernels.py``); the public functions at the
bottom dispatch on :data:`eigenlab._accel.USE_NUMBA`.

All kernels take C-contiguous float64 stacks of shape ``(B, n, n)`` and never
modify their inputs.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

TINY_PIVOT = 1e-300
# Beyond this |theta|, theta**2 overflows; use the first-order root instead.
_THETA_BIG = 1e150


# ---------------------------------------------------------------------------
# numba versions
# ---------------------------------------------------------------------------

@njit(cache=True)
def _offdiag_l1_nb(a):
    n = a.shape[0]
    off = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                off += abs(a[i, j])
    return off


@njit(cache=True)
def _jacobi_nb(mats, tols, max_sweeps):
    nb, n, _ = mats.shape
    diag = np.empty((nb, n))
    vecs = np.empty((nb, n, n))
    sweeps = np.empty(nb, dtype=np.int64)
    for b in range(nb):
        a = mats[b].copy()
        v = np.eye(n)
        used = -1
        for sweep in range(max_sweeps + 1):
            if _offdiag_l1_nb(a) <= tols[b]:
                used = sweep
                break
            if sweep == max_sweeps:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = a[p, q]
                    if abs(apq) < TINY_PIVOT:
                        continue
                    theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                    if abs(theta) > _THETA_BIG:
                        t = 0.5 / theta
                    else:
                        t = 1.0 / (abs(theta) + math.sqrt(1.0 + theta * theta))
                        if theta < 0.0:
                            t = -t
                    c = 1.0 / math.sqrt(1.0 + t * t)
                    s = t * c
                    for k in range(n):
                        akp = a[k, p]
                        akq = a[k, q]
                        a[k, p] = c * akp - s * akq
                        a[k, q] = s * akp + c * akq
                    for k in range(n):
                        apk = a[p, k]
                        aqk = a[q, k]
                        a[p, k] = c * apk - s * aqk
                        a[q, k] = s * apk + c * aqk
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    for k in range(n):
                        vkp = v[k, p]
                        vkq = v[k, q]
                        v[k, p] = c * vkp - s * vkq
                        v[k, q] = s * vkp + c * vkq
        for i in range(n):
            diag[b, i] = a[i, i]
        vecs[b] = v
        sweeps[b] = used
    return diag, vecs, sweeps


@njit(cache=True)
def _gauss_jordan_nb(mats, thresholds):
    nb, n, _ = mats.shape
    out = np.empty((nb, n, n))
    ok = np.ones(nb, dtype=np.bool_)
    for b in range(nb):
        a = mats[b].copy()
        inv = np.eye(n)
        for k in range(n):
            r = k
            best = abs(a[k, k])
            for i in range(k + 1, n):
                if abs(a[i, k]) > best:
                    best = abs(a[i, k])
                    r = i
            if best < thresholds[b] or best == 0.0:
                ok[b] = False
                inv[:, :] = np.nan
                break
            if r != k:
                for j in range(n):
                    tmp = a[k, j]
                    a[k, j] = a[r, j]
                    a[r, j] = tmp
                    tmp = inv[k, j]
                    inv[k, j] = inv[r, j]
                    inv[r, j] = tmp
            piv = a[k, k]
            for j in range(n):
                a[k, j] = a[k, j] / piv
                inv[k, j] = inv[k, j] / piv
            for i in range(n):
                if i == k:
                    continue
                f = a[i, k]
                for j in range(n):
                    a[i, j] = a[i, j] - f * a[k, j]
                    inv[i, j] = inv[i, j] - f * inv[k, j]
        out[b] = inv
    return out, ok


@njit(cache=True)
def _gram_nb(mats):
    nb, n, _ = mats.shape
    out = np.empty((nb, n, n))
    for b in range(nb):
        m = mats[b]
        for i in range(n):
            for j in range(i, n):
                acc = 0.0
                for k in range(n):
                    acc += m[k, i] * m[k, j]
                out[b, i, j] = acc
                out[b, j, i] = acc
    return out


@njit(cache=True)
def _reassemble_nb(values, vecs):
    nb, n = values.shape
    out = np.empty((nb, n, n))
    for b in range(nb):
        h = vecs[b]
        lam = values[b]
        for i in range(n):
            for j in range(i, n):
                acc = 0.0
                for k in range(n):
                    acc += (h[i, k] * lam[k]) * h[j, k]
                out[b, i, j] = acc
                out[b, j, i] = acc
    return out


# ---------------------------------------------------------------------------
# numpy versions
# ---------------------------------------------------------------------------

def _offdiag_l1_np(a):
    n = a.shape[1]
    off = np.zeros(a.shape[0])
    for i in range(n):
        for j in range(n):
            if i != j:
                off = off + np.abs(a[:, i, j])
    return off


def _rotate_np(x, p, q, c, s, skip, axis):
    # axis=2 rotates columns p, q; axis=1 rotates rows p, q.
    if axis == 2:
        xp, xq = x[:, :, p].copy(), x[:, :, q].copy()
    else:
        xp, xq = x[:, p, :].copy(), x[:, q, :].copy()
    c = c[:, None]
    s = s[:, None]
    skip = skip[:, None]
    new_p = np.where(skip, xp, c * xp - s * xq)
    new_q = np.where(skip, xq, s * xp + c * xq)
    if axis == 2:
        x[:, :, p] = new_p
        x[:, :, q] = new_q
    else:
        x[:, p, :] = new_p
        x[:, q, :] = new_q


def _jacobi_np(mats, tols, max_sweeps):
    nb, n, _ = mats.shape
    a_all = mats.copy()
    v_all = np.broadcast_to(np.eye(n), (nb, n, n)).copy()
    sweeps = np.full(nb, -1, dtype=np.int64)
    pending = np.arange(nb)
    for sweep in range(max_sweeps + 1):
        if pending.size == 0:
            break
        done = _offdiag_l1_np(a_all[pending]) <= tols[pending]
        sweeps[pending[done]] = sweep
        pending = pending[~done]
        if pending.size == 0 or sweep == max_sweeps:
            break
        a = a_all[pending]
        v = v_all[pending]
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p, q].copy()
                skip = np.abs(apq) < TINY_PIVOT
                with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                    theta = (a[:, q, q] - a[:, p, p]) / (2.0 * np.where(skip, 1.0, apq))
                    big = np.abs(theta) > _THETA_BIG
                    t_small = 1.0 / (np.abs(theta) + np.sqrt(1.0 + theta * theta))
                    t_small = np.where(theta < 0.0, -t_small, t_small)
                    t = np.where(big, 0.5 / theta, t_small)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                _rotate_np(a, p, q, c, s, skip, axis=2)
                _rotate_np(a, p, q, c, s, skip, axis=1)
                a[:, p, q] = np.where(skip, a[:, p, q], 0.0)
                a[:, q, p] = np.where(skip, a[:, q, p], 0.0)
                _rotate_np(v, p, q, c, s, skip, axis=2)
        a_all[pending] = a
        v_all[pending] = v
    diag = np.diagonal(a_all, axis1=1, axis2=2).copy()
    return diag, v_all, sweeps


def _gauss_jordan_np(mats, thresholds):
    nb, n, _ = mats.shape
    a = mats.copy()
    inv = np.broadcast_to(np.eye(n), (nb, n, n)).copy()
    ok = np.ones(nb, dtype=bool)
    rows = np.arange(nb)
    for k in range(n):
        col = np.abs(a[:, k:, k])
        r = k + np.argmax(col, axis=1)
        best = col[np.arange(nb), r - k]
        ok &= ~((best < thresholds) | (best == 0.0))
        # singular matrices keep being processed with a dummy pivot; their
        # output is discarded
        a_k, a_r = a[rows, k, :].copy(), a[rows, r, :].copy()
        a[rows, k, :], a[rows, r, :] = a_r, a_k
        i_k, i_r = inv[rows, k, :].copy(), inv[rows, r, :].copy()
        inv[rows, k, :], inv[rows, r, :] = i_r, i_k
        piv = np.where(ok, a[:, k, k], 1.0)[:, None]
        a[:, k, :] = a[:, k, :] / piv
        inv[:, k, :] = inv[:, k, :] / piv
        for i in range(n):
            if i == k:
                continue
            f = a[:, i, k].copy()[:, None]
            a[:, i, :] = a[:, i, :] - f * a[:, k, :]
            inv[:, i, :] = inv[:, i, :] - f * inv[:, k, :]
    inv[~ok] = np.nan
    return inv, ok


def _gram_np(mats):
    nb, n, _ = mats.shape
    out = np.empty((nb, n, n))
    for i in range(n):
        for j in range(i, n):
            acc = np.zeros(nb)
            for k in range(n):
                acc = acc + mats[:, k, i] * mats[:, k, j]
            out[:, i, j] = acc
            out[:, j, i] = acc
    return out


def _reassemble_np(values, vecs):
    nb, n = values.shape
    out = np.empty((nb, n, n))
    for i in range(n):
        for j in range(i, n):
            acc = np.zeros(nb)
            for k in range(n):
                acc = acc + (vecs[:, i, k] * values[:, k]) * vecs[:, j, k]
            out[:, i, j] = acc
            out[:, j, i] = acc
    return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

NUMBA_KERNELS = {
    "jacobi": _jacobi_nb,
    "gauss_jordan": _gauss_jordan_nb,
    "gram": _gram_nb,
    "reassemble": _reassemble_nb,
}
NUMPY_KERNELS = {
    "jacobi": _jacobi_np,
    "gauss_jordan": _gauss_jordan_np,
    "gram": _gram_np,
    "reassemble": _reassemble_np,
}
_ACTIVE = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS


def _stack(mats):
    return np.ascontiguousarray(mats, dtype=np.float64)


def jacobi(mats, tols, max_sweeps):
    """Cyclic Jacobi on a stack of symmetric matrices.

    Returns ``(diagonal, vectors, sweeps)``; ``sweeps[b] == -1`` marks a
    matrix whose off-diagonal L1 mass never dropped to ``tols[b]``.
    Eigenvalues come back unsorted, paired with columns of ``vectors``.
    """
    return _ACTIVE["jacobi"](_stack(mats), np.ascontiguousarray(tols, dtype=np.float64),
                             int(max_sweeps))


def gauss_jordan(mats, thresholds):
    """Inverses by Gauss-Jordan with partial pivoting; ``ok`` is False when a
    pivot fell below the matrix's threshold."""
    return _ACTIVE["gauss_jordan"](_stack(mats), np.ascontiguousarray(thresholds, dtype=np.float64))


def gram(mats):
    """``m.T @ m`` for each matrix, exactly symmetric."""
    return _ACTIVE["gram"](_stack(mats))


def reassemble(values, vecs):
    """``h @ diag(values) @ h.T`` for each pair, exactly symmetric."""
    return _ACTIVE["reassemble"](np.ascontiguousarray(values, dtype=np.float64), _stack(vecs))
