"""Task metrics, learned-property probes and condition-number verifiers.

Accuracy is a relative L1 residual under tolerance ``tau`` (strict ``<``):

eigenvalues
    ``||pred - truth||_1 / ||truth||_1``
diagonalization
    ``||H^T M H - diag(L)||_1 / ||L||_1`` for a predicted pair ``(L, H)``
inversion
    ``||P M - I||_1 / ||I||_1`` with ``||I||_1 = n``

Verifiers predict success without the ground truth: ``cond(H) < 1.045`` from
a predicted diagonalization, ``cond(M) < 62`` from the input of an inversion
problem alone.

EvalRecord CSV columns, in order::

    task,success,malformed,residual,cond_H,cond_M,max_dot,eig_rel_err,min_norm,max_norm,inv_distance

Booleans are ``0``/``1``; missing values are empty fields.
"""
import csv
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import codec, linalg
from .errors import DecodeError, EigenlabError, PreconditionError

CSV_COLUMNS = ("task", "success", "malformed", "residual", "cond_H", "cond_M", "max_dot",
               "eig_rel_err", "min_norm", "max_norm", "inv_distance")


@dataclass(frozen=True)
class ToleranceConfig:
    tau: float = 0.05
    norm_band: tuple = (0.99, 1.01)
    angle_thresholds: tuple = (0.1, 0.05, 0.03)
    cond_h_threshold: float = 1.045
    cond_m_threshold: float = 62.0
    eig_rel_threshold: float = 0.01

    def __post_init__(self):
        lo, hi = self.norm_band
        values = (self.tau, lo, hi, self.cond_h_threshold, self.cond_m_threshold,
                  self.eig_rel_threshold) + tuple(self.angle_thresholds)
        if min(values) <= 0:
            raise ValueError("tolerances must be positive")
        if not lo <= 1.0 <= hi:
            raise ValueError("norm_band must bracket 1")

    def to_dict(self):
        d = asdict(self)
        d["norm_band"] = list(self.norm_band)
        d["angle_thresholds"] = list(self.angle_thresholds)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("norm_band", "angle_thresholds"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


DEFAULT_TOL = ToleranceConfig()


@dataclass
class EvalRecord:
    task: str
    success: bool
    residual: float
    malformed: bool = False
    cond_H: Optional[float] = None
    cond_M: Optional[float] = None
    max_dot: Optional[float] = None
    eig_rel_err: Optional[float] = None
    min_norm: Optional[float] = None
    max_norm: Optional[float] = None
    inv_distance: Optional[float] = None
    extra: dict = field(default_factory=dict, compare=False)

    def to_row(self):
        out = []
        for col in CSV_COLUMNS:
            v = getattr(self, col)
            if isinstance(v, bool):
                out.append("1" if v else "0")
            elif v is None:
                out.append("")
            elif isinstance(v, str):
                out.append(v)
            else:
                out.append(repr(float(v)))
        return out

    @classmethod
    def from_row(cls, row):
        kw = {}
        for col, raw in zip(CSV_COLUMNS, row):
            if col == "task":
                kw[col] = raw
            elif col in ("success", "malformed"):
                kw[col] = raw.strip() == "1"
            else:
                kw[col] = float(raw) if raw.strip() else None
        if kw["residual"] is None:
            kw["residual"] = math.inf
        return cls(**kw)


def _succeeds(residual, tol):
    return bool(residual < tol.tau)


def _safe_rel(a, b):
    try:
        return linalg.rel_l1(a, b)
    except EigenlabError:
        return math.inf


def eval_eigenvalues(pred, truth, tol=DEFAULT_TOL):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise PreconditionError(f"spectrum length mismatch: {pred.shape} vs {truth.shape}")
    r = _safe_rel(pred, truth)
    return EvalRecord("eigenvalues", _succeeds(r, tol), r, eig_rel_err=r)


def row_col_norms(h):
    h = np.asarray(h, dtype=np.float64)
    return np.concatenate([np.linalg.norm(h, axis=1), np.linalg.norm(h, axis=0)])


def max_successive_dot(h):
    """Largest ``|u_i . u_{i+1}|`` over consecutive normalized rows and over
    consecutive normalized columns (no wrap-around).

    For nearly orthogonal vectors this is the deviation of their angle from
    ``pi/2``, to second order.
    """
    h = linalg.as_matrix(h, "h")
    rows = h / _norms_or_raise(h, 1)[:, None]
    cols = h / _norms_or_raise(h, 0)[None, :]
    if h.shape[0] < 2:
        return 0.0
    d_rows = np.abs(np.einsum("ij,ij->i", rows[:-1], rows[1:]))
    d_cols = np.abs(np.einsum("ij,ij->j", cols[:, :-1], cols[:, 1:]))
    return float(max(d_rows.max(), d_cols.max()))


def _norms_or_raise(h, axis):
    nrm = np.linalg.norm(h, axis=axis)
    if np.any(nrm == 0):
        raise PreconditionError("zero row or column")
    return nrm


def eval_diagonalization(m, pred_values, pred_h, tol=DEFAULT_TOL):
    m = linalg.as_matrix(m)
    lam = np.asarray(pred_values, dtype=np.float64)
    h = np.asarray(pred_h, dtype=np.float64)
    n = m.shape[0]
    if lam.shape != (n,) or h.shape != (n, n):
        raise PreconditionError("prediction shapes do not match the matrix")
    r = _safe_rel(h.T @ m @ h, np.diag(lam))
    norms = row_col_norms(h)
    try:
        dot = max_successive_dot(h)
    except PreconditionError:
        dot = math.inf
    cond_h = linalg.cond(h) if np.all(np.isfinite(h)) else math.inf
    truth = linalg.eig_sym(m).values
    return EvalRecord("diagonalization", _succeeds(r, tol), r, cond_H=cond_h, max_dot=dot,
                      eig_rel_err=_safe_rel(lam, truth), min_norm=float(norms.min()),
                      max_norm=float(norms.max()))


def eval_inversion(m, pred_p, tol=DEFAULT_TOL):
    m = linalg.as_matrix(m)
    p = np.asarray(pred_p, dtype=np.float64)
    n = m.shape[0]
    if p.shape != (n, n):
        raise PreconditionError("prediction shape does not match the matrix")
    r = linalg.l1(p @ m - np.eye(n)) / n
    rec = EvalRecord("inversion", _succeeds(r, tol), r, cond_M=linalg.cond(m))
    try:
        rec.inv_distance = linalg.rel_l1(p, linalg.invert(m))
    except EigenlabError:
        rec.extra["invert_failed"] = True
    return rec


def predict_success(task, x, tol=DEFAULT_TOL):
    """Verifier decision: ``x`` is the predicted ``H`` (diagonalization) or
    the input ``M`` (inversion)."""
    if task == "diagonalization":
        return linalg.cond(x) < tol.cond_h_threshold
    if task == "inversion":
        return linalg.cond(x) < tol.cond_m_threshold
    raise ValueError(f"no verifier for task {task!r}")


def malformed_record(task, m=None):
    rec = EvalRecord(task, False, math.inf, malformed=True)
    if m is not None:
        rec.cond_M = linalg.cond(m)
    return rec


def score_tokens(task, m, pred_tokens, scheme, tol=DEFAULT_TOL):
    """Decode a model output for input matrix ``m`` and evaluate it.

    Undecodable output counts as a failure with ``malformed=True``.
    """
    m = linalg.as_matrix(m)
    n = m.shape[0]
    try:
        sol = codec.decode_target(task, pred_tokens, n, scheme)
    except DecodeError:
        return malformed_record(task, m)
    if task == "eigenvalues":
        rec = eval_eigenvalues(sol, linalg.eig_sym(m).values, tol)
        rec.cond_M = linalg.cond(m)
        return rec
    if task == "diagonalization":
        rec = eval_diagonalization(m, sol[0], sol[1], tol)
        rec.cond_M = linalg.cond(m)
        return rec
    return eval_inversion(m, sol, tol)


# -- aggregation -------------------------------------------------------------

@dataclass
class VerifierReport:
    task: str
    count: int
    accuracy: float
    malformed_rate: float
    success_predicted_rate: Optional[float] = None
    """Among successes, fraction the verifier predicts as successes."""
    failure_recall: Optional[float] = None
    """Among failures, fraction the verifier flags as failures."""
    agreement: Optional[float] = None
    cond_success_mean: Optional[float] = None
    cond_success_std: Optional[float] = None
    cond_failure_mean: Optional[float] = None
    cond_failure_std: Optional[float] = None
    eig_correct_rate: Optional[float] = None
    unit_norm_rate: Optional[float] = None
    angle_rates: dict = field(default_factory=dict)
    inv_within_tau_rate: Optional[float] = None

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _mean_std(x):
    if len(x) == 0:
        return None, None
    x = np.asarray(x, dtype=np.float64)
    return float(x.mean()), float(x.std())


def _rate(mask):
    return float(np.mean(mask)) if len(mask) else None


def verifier_report(records, tol=DEFAULT_TOL):
    """Aggregate statistics over records of a single task."""
    records = list(records)
    if not records:
        raise ValueError("verifier_report needs at least one record")
    tasks = {r.task for r in records}
    if len(tasks) != 1:
        raise ValueError(f"records mix tasks {sorted(tasks)}")
    task = tasks.pop()
    ok = np.array([r.success for r in records])
    rep = VerifierReport(task=task, count=len(records), accuracy=float(ok.mean()),
                         malformed_rate=float(np.mean([r.malformed for r in records])))

    def col(name):
        return np.array([math.inf if getattr(r, name) is None else getattr(r, name) for r in records],
                        dtype=np.float64)

    if task in ("diagonalization", "inversion"):
        c = col("cond_H" if task == "diagonalization" else "cond_M")
        thr = tol.cond_h_threshold if task == "diagonalization" else tol.cond_m_threshold
        said_ok = c < thr
        rep.success_predicted_rate = _rate(said_ok[ok])
        rep.failure_recall = _rate(~said_ok[~ok])
        rep.agreement = float(np.mean(said_ok == ok))
        finite = np.isfinite(c)
        rep.cond_success_mean, rep.cond_success_std = _mean_std(c[ok & finite])
        rep.cond_failure_mean, rep.cond_failure_std = _mean_std(c[~ok & finite])
    eig = col("eig_rel_err")
    rep.eig_correct_rate = float(np.mean(eig < tol.eig_rel_threshold))
    if task == "diagonalization":
        lo, hi = tol.norm_band
        rep.unit_norm_rate = float(np.mean((col("min_norm") >= lo) & (col("max_norm") <= hi)))
        dots = col("max_dot")
        rep.angle_rates = {repr(float(a)): float(np.mean(dots < a)) for a in tol.angle_thresholds}
    if task == "inversion":
        rep.inv_within_tau_rate = float(np.mean(col("inv_distance") < tol.tau))
    return rep


def write_records_csv(path, records):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(r.to_row())


def read_records_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"{path}: expected header {','.join(CSV_COLUMNS)}")
    return [EvalRecord.from_row(r) for r in rows[1:]]
