"""Token encodings of real numbers, matrices and task solutions.

Two schemes, both rounding to three significant digits (half away from zero)
and writing a value as ``sign * mantissa * 10**exponent`` with the mantissa in
[100, 999]:

``P1000``
    three tokens per value: ``+``/``-``, ``M100``..``M999``, ``E-102``..``E100``.
    Zero is ``+ M0 E0``.
``FP15``
    one token per value, ``F+314E-2``; exponent in [-16, 16]. Zero is ``F0E0``.

Magnitudes below the smallest grid value round to zero; magnitudes above the
largest raise :class:`EncodeRangeError`.

A sequence for an input matrix is the dimension token ``V{n}`` followed by the
``n*n`` coefficients, row-major. Targets carry no prefix: ``n`` eigenvalues;
``n`` eigenvalues then ``H`` row-major; or the ``n*n`` inverse.

Every vocabulary starts with the same specials and dimension tokens, so ids
0-2 are ``<pad> <bos> <eos>`` regardless of scheme.
"""
import decimal
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DecodeError, EncodeRangeError

SPECIALS = ("<pad>", "<bos>", "<eos>")
PAD, BOS, EOS = 0, 1, 2
DIM_RANGE = range(2, 17)
TASKS = ("eigenvalues", "diagonalization", "inversion")

_DEC_CTX = decimal.Context(prec=1200, rounding=decimal.ROUND_HALF_UP)


def _exact_round(a):
    """(mantissa, exponent) of positive float ``a`` on the 3-digit grid, from
    the exact binary value."""
    d = decimal.Decimal(float(a))
    e = d.adjusted() - 2
    m = int(d.scaleb(-e, _DEC_CTX).quantize(decimal.Decimal(1), context=_DEC_CTX))
    if m == 1000:
        m, e = 100, e + 1
    return m, e


def _pow10(e):
    return np.power(10.0, np.abs(e).astype(np.float64))


def quantize(x, e_min, e_max):
    """Round an array of reals onto the 3-significant-digit grid.

    Returns integer arrays ``(negative, mantissa, exponent)``; zeros (and
    underflows) have mantissa 0 and exponent 0.
    """
    x = np.asarray(x, dtype=np.float64)
    flat = x.ravel()
    if not np.all(np.isfinite(flat)):
        raise EncodeRangeError("cannot encode non-finite values")
    a = np.abs(flat)
    nz = a > 0
    safe = np.where(nz, a, 1.0)
    e = np.floor(np.log10(safe)).astype(np.int64) - 2
    # subnormals overflow 10**-e to inf here; they are redone exactly below
    with np.errstate(invalid="ignore", over="ignore"):
        p = _pow10(e)
        scaled = np.where(e >= 0, safe / p, safe * p)
        lo = scaled < 100.0
        hi = scaled >= 1000.0
        e = e - lo + hi
        p = _pow10(e)
        scaled = np.where(e >= 0, safe / p, safe * p)
        m = np.floor(np.where(np.isfinite(scaled), scaled, 0.0) + 0.5).astype(np.int64)
        frac = scaled - np.floor(scaled)
    # exact fix-up wherever float error could flip the decision
    doubt = nz & ((np.abs(frac - 0.5) < 1e-9) | (np.abs(e) > 22) | (scaled < 100.0 + 1e-9)
                  | (scaled > 1000.0 - 1e-9))
    for i in np.flatnonzero(doubt):
        m[i], e[i] = _exact_round(a[i])
    roll = m == 1000
    m = np.where(roll, 100, m)
    e = np.where(roll, e + 1, e)
    if np.any(nz & (e > e_max)):
        bad = flat[np.flatnonzero(nz & (e > e_max))[0]]
        raise EncodeRangeError(f"{bad!r} exceeds the encodable range (exponent > {e_max})")
    zero = ~nz | (e < e_min)
    neg = np.where(zero, 0, flat < 0).astype(np.int64)
    m = np.where(zero, 0, m)
    e = np.where(zero, 0, e)
    return neg.reshape(x.shape), m.reshape(x.shape), e.reshape(x.shape)


def compose(neg, mant, exp):
    """Exact decimal value ``(-1)**neg * mant * 10**exp``, correctly rounded."""
    neg = np.asarray(neg)
    mant = np.asarray(mant, dtype=np.int64)
    exp = np.asarray(exp, dtype=np.int64)
    p = _pow10(exp)
    v = np.where(exp >= 0, mant * p, mant / p)
    wide = np.flatnonzero((np.abs(exp) > 22).ravel())
    if wide.size:
        v = v.astype(np.float64).ravel()
        mf, ef = mant.ravel(), exp.ravel()
        for i in wide:
            v[i] = float(f"{mf[i]}e{ef[i]}")
        v = v.reshape(mant.shape)
    return np.where(neg != 0, -v, v)


class Scheme:
    """A value encoding plus its vocabulary."""

    name = ""
    tokens_per_value = 1
    e_min = 0
    e_max = 0

    def __init__(self):
        value_tokens = self._value_surfaces()
        self.surfaces = list(SPECIALS) + [f"V{n}" for n in DIM_RANGE] + value_tokens
        self.index = {s: i for i, s in enumerate(self.surfaces)}
        if len(self.index) != len(self.surfaces):
            raise AssertionError("duplicate surfaces")
        self.offset = len(SPECIALS) + len(DIM_RANGE)

    def __repr__(self):
        return f"<Scheme {self.name}>"

    def __len__(self):
        return len(self.surfaces)

    @property
    def vocab_size(self):
        return len(self.surfaces)

    def dim_id(self, n):
        if n not in DIM_RANGE:
            raise EncodeRangeError(f"no dimension token for n={n}")
        return len(SPECIALS) + n - DIM_RANGE.start

    def dim_of(self, token_id):
        k = token_id - len(SPECIALS)
        if 0 <= k < len(DIM_RANGE):
            return DIM_RANGE.start + k
        return None

    def value_ids(self, values):
        """Flat id array encoding ``values`` (any shape, row-major)."""
        raise NotImplementedError

    def parse_values(self, ids, start=0):
        """Decode a run of value ids. ``start`` offsets reported positions."""
        raise NotImplementedError


class P1000(Scheme):
    name = "P1000"
    tokens_per_value = 3
    e_min, e_max = -102, 100

    def _value_surfaces(self):
        out = ["+", "-", "M0"] + [f"M{m}" for m in range(100, 1000)]
        out += [f"E{e}" for e in range(self.e_min, self.e_max + 1)]
        return out

    @property
    def _sign0(self):
        return self.offset

    @property
    def _mant0(self):
        # id of M0; M100 is _mant0 + 1
        return self.offset + 2

    @property
    def _exp0(self):
        return self.offset + 3 + 900

    def value_ids(self, values):
        neg, m, e = quantize(np.ravel(values), self.e_min, self.e_max)
        sign_ids = self._sign0 + neg
        mant_ids = np.where(m == 0, self._mant0, self._mant0 + 1 + (m - 100))
        exp_ids = self._exp0 + (e - self.e_min)
        return np.stack([sign_ids, mant_ids, exp_ids], axis=1).ravel()

    def parse_values(self, ids, start=0):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size % 3:
            raise DecodeError(start + ids.size, "P1000 value run is not a multiple of 3 tokens")
        trip = ids.reshape(-1, 3)
        checks = (
            (trip[:, 0], self._sign0, self._sign0 + 2, "expected sign token"),
            (trip[:, 1], self._mant0, self._mant0 + 901, "expected mantissa token"),
            (trip[:, 2], self._exp0, self._exp0 + (self.e_max - self.e_min + 1), "expected exponent token"),
        )
        for col, (tok, lo, hi, reason) in enumerate(checks):
            bad = np.flatnonzero((tok < lo) | (tok >= hi))
            if bad.size:
                raise DecodeError(start + 3 * int(bad[0]) + col, reason)
        neg = trip[:, 0] - self._sign0
        k = trip[:, 1] - self._mant0
        mant = np.where(k == 0, 0, k + 99)
        exp = trip[:, 2] - self._exp0 + self.e_min
        return compose(neg, mant, exp)


class FP15(Scheme):
    name = "FP15"
    tokens_per_value = 1
    e_min, e_max = -16, 16
    _n_exp = 33

    def _value_surfaces(self):
        out = ["F0E0"]
        for s in "+-":
            for m in range(100, 1000):
                out += [f"F{s}{m}E{e}" for e in range(self.e_min, self.e_max + 1)]
        return out

    def value_ids(self, values):
        neg, m, e = quantize(np.ravel(values), self.e_min, self.e_max)
        ids = self.offset + 1 + neg * 900 * self._n_exp + (m - 100) * self._n_exp + (e - self.e_min)
        return np.where(m == 0, self.offset, ids)

    def parse_values(self, ids, start=0):
        ids = np.asarray(ids, dtype=np.int64)
        k = ids - self.offset
        bad = np.flatnonzero((k < 0) | (k > 2 * 900 * self._n_exp))
        if bad.size:
            raise DecodeError(start + int(bad[0]), "expected FP15 value token")
        k = k - 1
        zero = k < 0
        k = np.where(zero, 0, k)
        neg, rest = np.divmod(k, 900 * self._n_exp)
        m, e = np.divmod(rest, self._n_exp)
        mant = np.where(zero, 0, m + 100)
        exp = np.where(zero, 0, e + self.e_min)
        return compose(neg, mant, exp)


@lru_cache(maxsize=None)
def get_scheme(name):
    name = str(name).upper()
    if name == "P1000":
        return P1000()
    if name == "FP15":
        return FP15()
    raise ValueError(f"unknown scheme {name!r}; expected P1000 or FP15")


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple
    scheme: str

    @property
    def surfaces(self):
        vocab = get_scheme(self.scheme).surfaces
        return [vocab[i] for i in self.ids]

    def __len__(self):
        return len(self.ids)

    def __str__(self):
        return " ".join(self.surfaces)

    @classmethod
    def from_surfaces(cls, surfaces, scheme):
        """Parse surfaces; unknown tokens raise :class:`DecodeError`."""
        sch = get_scheme(scheme)
        if isinstance(surfaces, str):
            surfaces = surfaces.split()
        ids = []
        for pos, s in enumerate(surfaces):
            i = sch.index.get(s)
            if i is None:
                raise DecodeError(pos, f"unknown {sch.name} token {s!r}")
            ids.append(i)
        return cls(tuple(ids), sch.name)


def _ids_of(tokens, scheme):
    if isinstance(tokens, TokenSequence):
        if tokens.scheme != get_scheme(scheme).name:
            raise DecodeError(0, f"sequence is {tokens.scheme}, expected {scheme}")
        return np.asarray(tokens.ids, dtype=np.int64)
    if isinstance(tokens, str) or (len(tokens) and isinstance(tokens[0], str)):
        return np.asarray(TokenSequence.from_surfaces(tokens, scheme).ids, dtype=np.int64)
    return np.asarray(tokens, dtype=np.int64)


# -- single values ----------------------------------------------------------

def encode_value_p1000(x):
    """``3.14 -> ('+', 'M314', 'E-2')``."""
    sch = get_scheme("P1000")
    return tuple(sch.surfaces[i] for i in sch.value_ids([x]))


def decode_value_p1000(tokens):
    tokens = list(tokens)
    _check_len(tokens, 3)
    return float(get_scheme("P1000").parse_values(_ids_of(tokens, "P1000"))[0])


def encode_value_fp15(x):
    """``3.14 -> 'F+314E-2'``."""
    sch = get_scheme("FP15")
    return sch.surfaces[int(sch.value_ids([x])[0])]


def decode_value_fp15(token):
    if isinstance(token, str):
        token = [token]
    _check_len(token, 1)
    return float(get_scheme("FP15").parse_values(_ids_of(list(token), "FP15"))[0])


def _check_len(tokens, k):
    if len(tokens) != k:
        raise DecodeError(min(len(tokens), k), f"expected {k} tokens, got {len(tokens)}")
    return True


# -- matrices and task solutions -------------------------------------------

def encode_input(m, scheme):
    """``V{n}`` followed by the coefficients of ``m``, row-major."""
    sch = get_scheme(scheme)
    m = np.asarray(m, dtype=np.float64)
    n = m.shape[0]
    ids = np.concatenate([[sch.dim_id(n)], sch.value_ids(m)])
    return TokenSequence(tuple(int(i) for i in ids), sch.name)


def decode_input(tokens, scheme):
    sch = get_scheme(scheme)
    ids = _ids_of(tokens, scheme)
    if ids.size == 0:
        raise DecodeError(0, "empty input sequence")
    n = sch.dim_of(int(ids[0]))
    if n is None:
        raise DecodeError(0, "expected dimension token")
    need = 1 + n * n * sch.tokens_per_value
    if ids.size != need:
        raise DecodeError(min(ids.size, need), f"expected {need} tokens for n={n}, got {ids.size}")
    return sch.parse_values(ids[1:], start=1).reshape(n, n)


def target_values(task, n):
    """Number of encoded values in a target of this task and size."""
    if task == "eigenvalues":
        return n
    if task == "diagonalization":
        return n + n * n
    if task == "inversion":
        return n * n
    raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")


def flatten_solution(task, solution):
    if task == "diagonalization":
        values, h = solution
        return np.concatenate([np.ravel(values), np.ravel(h)])
    target_values(task, 2)
    return np.ravel(solution)


def encode_target(task, solution, scheme):
    sch = get_scheme(scheme)
    ids = sch.value_ids(flatten_solution(task, solution))
    return TokenSequence(tuple(int(i) for i in ids), sch.name)


def decode_target(task, tokens, n, scheme):
    """Inverse of :func:`encode_target`. Wrong counts and misplaced or unknown
    tokens raise :class:`DecodeError`."""
    sch = get_scheme(scheme)
    ids = _ids_of(tokens, scheme)
    count = target_values(task, n)
    need = count * sch.tokens_per_value
    if ids.size != need:
        raise DecodeError(min(ids.size, need), f"expected {need} tokens for {task} n={n}, got {ids.size}")
    v = sch.parse_values(ids)
    if task == "eigenvalues":
        return v
    if task == "inversion":
        return v.reshape(n, n)
    return v[:n], v[n:].reshape(n, n)


def infer_task(n_values, n):
    """Guess the task from a target's value count."""
    for task in TASKS:
        if target_values(task, n) == n_values:
            return task
    return None


def detect_scheme(surfaces):
    """``"FP15"`` if any token looks like an FP15 value, else ``"P1000"``."""
    for s in surfaces:
        if s.startswith("F"):
            return "FP15"
    return "P1000"
