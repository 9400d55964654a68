"""Seeded samplers for the random-matrix ensembles.

Every draw is a pure function of ``(config, index, attempt)``: the generator
for one example is a Philox counter-based bit generator keyed by the 128-bit
pair ``(seed, index)``, with the retry ``attempt`` placed in the high counter
word. Any example can therefore be regenerated in isolation, and disjoint
index ranges can be sampled in parallel with no coordination.

Kinds
-----
``wigner_uniform_general``
    all ``n*n`` entries iid Uniform[-sigma*sqrt(3), sigma*sqrt(3)].
``wigner_uniform_symmetric``, ``wigner_gaussian_symmetric``
    iid upper triangle (uniform as above, or Normal(0, sigma^2)), mirrored.
``semicircle``
    alias of ``wigner_gaussian_symmetric``.
``uniform``, ``gaussian``, ``laplace``, ``abs_laplace``
    a Gaussian Wigner draw with its spectrum replaced by iid draws from the
    named law (scaled to the Wigner eigenvalue std ``sigma*sqrt(n)``).
``abs_semicircle``
    a Gaussian Wigner draw with its eigenvalues replaced by their absolute
    values.
``marchenko_pastur``
    ``N.T @ N`` with N iid Normal(0, sigma) entries (variance sigma, i.e.
    standard deviation sqrt(sigma)).
"""
import math
from dataclasses import asdict, dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from . import kernels, linalg

DEFAULT_SIGMA = 10.0 / math.sqrt(3.0)
MASK64 = (1 << 64) - 1

BASE_KINDS = ("wigner_uniform_general", "wigner_uniform_symmetric", "wigner_gaussian_symmetric")
SPECTRUM_KINDS = ("uniform", "gaussian", "laplace", "abs_laplace")
# The seven ensembles of the out-of-distribution experiments, in table order.
OOD_KINDS = ("semicircle", "uniform", "gaussian", "laplace", "abs_semicircle", "abs_laplace",
             "marchenko_pastur")
KINDS = BASE_KINDS + OOD_KINDS
SYMMETRIC_KINDS = tuple(k for k in KINDS if k != "wigner_uniform_general")
POSITIVE_KINDS = ("abs_semicircle", "abs_laplace", "marchenko_pastur")

DISPLAY_NAMES = {
    "semicircle": "Semi-circle",
    "uniform": "Uniform",
    "gaussian": "Gaussian",
    "laplace": "Laplace",
    "abs_semicircle": "abs-semicircle",
    "abs_laplace": "abs-Laplace",
    "marchenko_pastur": "Marchenko-Pastur",
    "wigner_uniform_general": "Wigner uniform (general)",
    "wigner_uniform_symmetric": "Wigner uniform (symmetric)",
    "wigner_gaussian_symmetric": "Wigner Gaussian (symmetric)",
}


@dataclass(frozen=True)
class EnsembleConfig:
    kind: str
    n: int
    sigma: float = DEFAULT_SIGMA
    seed: int = 0
    spectrum_scale: Optional[float] = None
    """Std of replacement spectra; ``None`` means ``sigma * sqrt(n)``."""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown ensemble kind {self.kind!r}; expected one of {KINDS}")
        if int(self.n) != self.n or self.n < 2:
            raise ValueError("n must be an integer >= 2")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0 <= self.seed <= MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.spectrum_scale is not None and not self.spectrum_scale > 0:
            raise ValueError("spectrum_scale must be positive")

    @property
    def symmetric(self):
        return self.kind != "wigner_uniform_general"

    @property
    def target_std(self):
        if self.spectrum_scale is not None:
            return float(self.spectrum_scale)
        return self.sigma * math.sqrt(self.n)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class QuantileReport(NamedTuple):
    median: float
    q3: float
    p90: float
    count: int


def generator(seed, index, attempt=0):
    """Per-example random generator keyed by ``(seed, index)``."""
    if not 0 <= index <= MASK64:
        raise ValueError("index out of range")
    bits = np.random.Philox(key=(int(index) << 64) | (int(seed) & MASK64), counter=int(attempt) << 128)
    return np.random.Generator(bits)


def _normals(rng, size):
    # Box-Muller on the uniform stream: 1 - u lies in (0, 1], so log is finite.
    m = (size + 1) // 2
    u = rng.random(2 * m)
    r = np.sqrt(-2.0 * np.log(1.0 - u[:m]))
    phi = 2.0 * math.pi * u[m:]
    return np.concatenate([r * np.cos(phi), r * np.sin(phi)])[:size]


def _laplace(rng, size, scale):
    # inverse CDF; u in (-1/2, 1/2]
    u = 0.5 - rng.random(size)
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def sample_spectrum(kind, n, rng, scale):
    """``n`` iid eigenvalues with standard deviation ``scale``, sorted
    non-increasing. ``rng`` is a Generator or an integer seed."""
    if kind not in SPECTRUM_KINDS:
        raise ValueError(f"no replacement spectrum for kind {kind!r}")
    if not isinstance(rng, np.random.Generator):
        rng = generator(rng, 0)
    if kind == "uniform":
        half = scale * math.sqrt(3.0)
        values = half * (2.0 * rng.random(n) - 1.0)
    elif kind == "gaussian":
        values = scale * _normals(rng, n)
    else:
        values = _laplace(rng, n, scale / math.sqrt(2.0))
        if kind == "abs_laplace":
            values = np.abs(values)
    return np.sort(values)[::-1].copy()


def _upper(n, values):
    a = np.zeros((n, n))
    a[np.triu_indices(n)] = values
    return linalg.symmetrize_upper(a)


def _draw_raw(cfg, rng):
    """Random part of one example: a base matrix, plus the replacement
    spectrum when the kind has one."""
    n, sigma = cfg.n, cfg.sigma
    tri = n * (n + 1) // 2
    kind = cfg.kind
    if kind == "wigner_uniform_general":
        half = sigma * math.sqrt(3.0)
        return half * (2.0 * rng.random((n, n)) - 1.0), None
    if kind == "wigner_uniform_symmetric":
        half = sigma * math.sqrt(3.0)
        return _upper(n, half * (2.0 * rng.random(tri) - 1.0)), None
    if kind == "marchenko_pastur":
        return math.sqrt(sigma) * _normals(rng, n * n).reshape(n, n), None
    base = _upper(n, sigma * _normals(rng, tri))
    if kind in SPECTRUM_KINDS:
        return base, sample_spectrum(kind, n, rng, cfg.target_std)
    return base, None


def sample_batch(cfg, indices, attempt=0, return_spectra=False):
    """Draw the examples at ``indices`` as a ``(B, n, n)`` stack.

    Row ``b`` is bit-identical to ``sample_matrix(cfg, indices[b], attempt)``.
    With ``return_spectra`` also returns the internally drawn replacement
    spectra (NaN rows for kinds without one).
    """
    indices = [int(i) for i in indices]
    attempts = np.broadcast_to(np.asarray(attempt, dtype=np.int64), (len(indices),))
    n = cfg.n
    raws = [_draw_raw(cfg, generator(cfg.seed, i, int(a))) for i, a in zip(indices, attempts)]
    base = np.array([r[0] for r in raws]).reshape(len(indices), n, n)
    spectra = np.full((len(indices), n), np.nan)
    kind = cfg.kind
    if kind in SPECTRUM_KINDS or kind == "abs_semicircle":
        values, vecs = linalg.eig_sym_batch(base)
        if kind == "abs_semicircle":
            values, vecs = linalg.canonicalize(np.abs(values), vecs)
        else:
            values = np.array([r[1] for r in raws]).reshape(len(indices), n)
        spectra = values
        out = linalg.reassemble_batch(values, vecs, check=False)
    elif kind == "marchenko_pastur":
        out = kernels.gram(base)
    else:
        out = base
    if return_spectra:
        return out, spectra
    return out


def sample_matrix(cfg, index, attempt=0):
    """The ``index``-th matrix of the ensemble (deterministic)."""
    return sample_batch(cfg, [index], attempt)[0]


def _chunks(count, size):
    for start in range(0, count, size):
        yield range(start, min(count, start + size))


def _map_chunks(fn, cfg, count, workers, chunk=2000):
    chunks = list(_chunks(count, chunk))
    if workers <= 1 or len(chunks) <= 1:
        return [fn(cfg, c.start, c.stop) for c in chunks]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, cfg, c.start, c.stop) for c in chunks]
        return [f.result() for f in futures]


def _cond_chunk(cfg, start, stop):
    return linalg.cond_batch(sample_batch(cfg, range(start, stop)))


def _min_eig_chunk(cfg, start, stop):
    values, _ = linalg.eig_sym_batch(sample_batch(cfg, range(start, stop)))
    return values[:, -1]


def condition_numbers(cfg, count, workers=1):
    """Condition numbers of draws ``0 .. count-1``."""
    return np.concatenate(_map_chunks(_cond_chunk, cfg, count, workers))


def condition_stats(cfg, count=10_000, workers=1):
    """Median, third quartile and 90th percentile of the condition number
    over the first ``count`` draws."""
    if count < 1000:
        raise ValueError("condition_stats needs count >= 1000")
    c = condition_numbers(cfg, count, workers)
    median, q3, p90 = np.percentile(c, [50, 75, 90])
    return QuantileReport(float(median), float(q3), float(p90), int(count))


def positive_fraction(cfg, count=100_000, workers=1):
    """Fraction of draws whose smallest eigenvalue is strictly positive."""
    if count < 10_000:
        raise ValueError("positive_fraction needs count >= 10000")
    if not cfg.symmetric:
        raise ValueError("positive_fraction needs a symmetric ensemble")
    lo = np.concatenate(_map_chunks(_min_eig_chunk, cfg, count, workers))
    return float(np.mean(lo > 0.0))


def with_seed(cfg, seed):
    return replace(cfg, seed=int(seed))
