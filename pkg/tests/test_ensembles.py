import math

import numpy as np
import pytest

from eigenlab import ensembles, linalg
from eigenlab.ensembles import EnsembleConfig

SIGMA = 10 / math.sqrt(3)


def test_config_validation():
    with pytest.raises(ValueError):
        EnsembleConfig("semicircle", 1)
    with pytest.raises(ValueError):
        EnsembleConfig("semicircle", 3, sigma=0.0)
    with pytest.raises(ValueError):
        EnsembleConfig("cauchy", 3)


def test_config_roundtrip():
    cfg = EnsembleConfig("abs_laplace", 4, seed=17, spectrum_scale=2.5)
    assert EnsembleConfig.from_dict(cfg.to_dict()) == cfg


def test_uniform_general_bounds():
    m = ensembles.sample_batch(EnsembleConfig("wigner_uniform_general", 5, seed=3), range(2000))
    assert np.abs(m).max() <= 10.0
    assert np.abs(m).max() > 9.9
    assert not np.array_equal(m, np.swapaxes(m, 1, 2))


@pytest.mark.parametrize("kind", ensembles.SYMMETRIC_KINDS)
def test_symmetric_exact(kind):
    m = ensembles.sample_batch(EnsembleConfig(kind, 5, seed=5), range(200))
    assert np.array_equal(m, np.swapaxes(m, 1, 2))
    assert np.isfinite(m).all()


def test_semicircle_alias():
    a = ensembles.sample_batch(EnsembleConfig("semicircle", 4, seed=8), range(50))
    b = ensembles.sample_batch(EnsembleConfig("wigner_gaussian_symmetric", 4, seed=8), range(50))
    assert np.array_equal(a, b)


def test_semicircle_eigenvalue_std():
    m = ensembles.sample_batch(EnsembleConfig("semicircle", 5, seed=11), range(10000))
    values, _ = linalg.eig_sym_batch(m)
    assert abs(values.std() / (SIGMA * math.sqrt(5)) - 1) < 0.02


def test_coefficient_std():
    m = ensembles.sample_batch(EnsembleConfig("wigner_gaussian_symmetric", 5, seed=2), range(4000))
    iu = np.triu_indices(5)
    assert abs(m[:, iu[0], iu[1]].std() / SIGMA - 1) < 0.02
    m = ensembles.sample_batch(EnsembleConfig("wigner_uniform_symmetric", 5, seed=2), range(4000))
    assert abs(m[:, iu[0], iu[1]].std() / SIGMA - 1) < 0.02


@pytest.mark.parametrize("kind", ["abs_semicircle", "abs_laplace", "marchenko_pastur"])
def test_positive_kinds(kind):
    m = ensembles.sample_batch(EnsembleConfig(kind, 5, seed=4), range(500))
    values, _ = linalg.eig_sym_batch(m)
    scale = np.abs(values).max(axis=1, keepdims=True)
    assert (values >= -1e-12 * scale).all()


@pytest.mark.parametrize("kind", ensembles.SPECTRUM_KINDS)
def test_spectrum_sorted_and_scaled(kind):
    rng = ensembles.generator(1, 0)
    s = SIGMA * math.sqrt(5)
    draws = np.array([ensembles.sample_spectrum(kind, 5, ensembles.generator(1, i), s)
                      for i in range(10000)])
    assert (np.diff(draws, axis=1) <= 0).all()
    if kind == "abs_laplace":
        assert draws.min() >= 0
        # E|X|^2 = 2b^2 = s^2 for laplace scale b = s / sqrt(2)
        assert abs(math.sqrt((draws ** 2).mean()) / s - 1) < 0.02
    else:
        assert abs(draws.std() / s - 1) < 0.01 if kind != "laplace" else abs(draws.std() / s - 1) < 0.02
    del rng


def test_gaussian_spectrum_std_50k():
    s = SIGMA * math.sqrt(5)
    draws = np.concatenate([ensembles.sample_spectrum("gaussian", 5, ensembles.generator(9, i), s)
                            for i in range(10000)])
    assert draws.size == 50000
    assert abs(draws.std() / 12.91 - 1) < 0.01


def test_uniform_spectrum_bounds():
    s = 7.0
    draws = np.array([ensembles.sample_spectrum("uniform", 3, ensembles.generator(2, i), s)
                      for i in range(3000)])
    assert np.abs(draws).max() <= s * math.sqrt(3)


def test_replacement_fidelity():
    cfg = EnsembleConfig("gaussian", 5, seed=21)
    m, spectra = ensembles.sample_batch(cfg, range(300), return_spectra=True)
    values, _ = linalg.eig_sym_batch(m)
    for v, s in zip(values, spectra):
        assert linalg.rel_l1(v, s) < 1e-8


def test_abs_semicircle_is_abs_of_base():
    base = ensembles.sample_batch(EnsembleConfig("semicircle", 4, seed=6), range(50))
    absm = ensembles.sample_batch(EnsembleConfig("abs_semicircle", 4, seed=6), range(50))
    vb, _ = linalg.eig_sym_batch(base)
    va, _ = linalg.eig_sym_batch(absm)
    np.testing.assert_allclose(va, -np.sort(-np.abs(vb), axis=1), atol=1e-9)


def test_spectrum_scale_override():
    cfg = EnsembleConfig("uniform", 3, seed=1, spectrum_scale=1.0)
    _, spectra = ensembles.sample_batch(cfg, range(2000), return_spectra=True)
    assert np.abs(spectra).max() <= math.sqrt(3)
    assert abs(spectra.std() - 1) < 0.03


@pytest.mark.parametrize("kind", ensembles.KINDS)
def test_determinism_and_random_access(kind):
    cfg = EnsembleConfig(kind, 4, seed=12345)
    batch = ensembles.sample_batch(cfg, range(30))
    again = ensembles.sample_batch(cfg, range(30))
    assert np.array_equal(batch, again)
    for i in (0, 7, 29):
        assert np.array_equal(ensembles.sample_matrix(cfg, i), batch[i])
    assert np.array_equal(ensembles.sample_batch(cfg, [29, 3])[0], batch[29])


def test_seeds_and_attempts_differ():
    cfg = EnsembleConfig("semicircle", 3, seed=1)
    a = ensembles.sample_matrix(cfg, 0)
    assert not np.array_equal(a, ensembles.sample_matrix(ensembles.with_seed(cfg, 2), 0))
    assert not np.array_equal(a, ensembles.sample_matrix(cfg, 1))
    assert not np.array_equal(a, ensembles.sample_matrix(cfg, 0, attempt=1))


def test_condition_stats_workers_identical():
    cfg = EnsembleConfig("semicircle", 5, seed=0)
    a = ensembles.condition_stats(cfg, 4000, workers=1)
    b = ensembles.condition_stats(cfg, 4000, workers=3)
    assert a == b
    assert a.median <= a.q3 <= a.p90 and a.count == 4000


def test_condition_stats_preconditions():
    with pytest.raises(ValueError):
        ensembles.condition_stats(EnsembleConfig("semicircle", 5), 999)
    with pytest.raises(ValueError):
        ensembles.positive_fraction(EnsembleConfig("semicircle", 5), 9999)


def test_positive_fraction_abs_kinds():
    assert ensembles.positive_fraction(EnsembleConfig("abs_laplace", 3, seed=1), 10000) == 1.0


def test_positive_fraction_small_n():
    """Symmetric spectrum law: P(all n positive) = 2^-n; n=3 at 10k draws."""
    f = ensembles.positive_fraction(EnsembleConfig("laplace", 3, seed=5), 10000)
    assert abs(f - 0.125) < 3 * math.sqrt(0.125 * 0.875 / 10000)
