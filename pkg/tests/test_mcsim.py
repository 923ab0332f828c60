import math

import numpy as np
import pytest
from scipy.special import erf

from uncoded_match.errors import InvalidInputError, NumericalFailureError
from uncoded_match.mac_match import MacScheme
from uncoded_match.mcsim import SimConfig, cov_factor, radial_partner, simulate_bc, simulate_mac
from uncoded_match.model import BcChannel, CeoModel, SourceSpec, ceo_to_mac, normalize_alpha, scheme_from_alpha

SRC = SourceSpec([[1, 0.5], [0.5, 1]])
SCHEME = scheme_from_alpha([1, 1], SRC)
CH = BcChannel([2, 2])
MAC = ceo_to_mac(CeoModel(1, [1, 1], 1, [1, 1], [1, 1], 1))
N = 200_000


def test_bc_agrees_with_closed_form():
    r = simulate_bc(SRC, SCHEME, CH, SimConfig(N, seed=3))
    np.testing.assert_allclose(r.closed_form_d, [0.55, 0.55], rtol=1e-14)
    assert r.within(4)
    assert np.all(r.stderr > 0)
    assert r.power_target.tolist() == [3.0]


def test_mac_agrees_with_closed_form():
    r = simulate_mac(MAC, MacScheme((1, 1)), SimConfig(N, seed=5))
    assert r.closed_form_d[0] == pytest.approx(0.5, rel=1e-14)
    assert r.within(4)
    assert r.power_target.tolist() == [1.0, 1.0]


def test_repeat_runs_are_identical(monkeypatch):
    cfg = SimConfig(50_000, seed=11, batch_size=4096)
    a = simulate_bc(SRC, SCHEME, CH, cfg)
    monkeypatch.setenv("UNCODED_MATCH_THREADS", "4")
    b = simulate_bc(SRC, SCHEME, CH, cfg)
    assert np.array_equal(a.empirical_d, b.empirical_d)
    assert np.array_equal(a.stderr, b.stderr)
    c = simulate_bc(SRC, SCHEME, CH, SimConfig(50_000, seed=12, batch_size=4096))
    assert not np.array_equal(a.empirical_d, c.empirical_d)


def test_tiny_power_limit():
    sc = normalize_alpha([1, 1], SRC, 1e-9)
    r = simulate_bc(SRC, sc, CH, SimConfig(20_000, seed=1))
    np.testing.assert_allclose(r.closed_form_d, [1, 1], atol=1e-9)
    assert r.within(4)


def test_huge_noise_limit():
    r = simulate_bc(SRC, SCHEME, BcChannel([1e12, 1e12]), SimConfig(20_000, seed=2))
    np.testing.assert_allclose(r.closed_form_d, [1, 1], rtol=1e-11)
    assert r.within(4)
    blind = simulate_bc(SRC, SCHEME, BcChannel([math.inf, 2.0]), SimConfig(20_000, seed=2))
    assert blind.closed_form_d[0] == 1.0 and blind.within(4)


def test_negated_signs_same_distortion():
    cfg = SimConfig(N, seed=7)
    a = simulate_mac(MAC, MacScheme((1, 1)), cfg)
    b = simulate_mac(MAC, MacScheme((-1, -1)), cfg)
    combined = math.hypot(a.stderr[0], b.stderr[0])
    assert abs(a.empirical_d[0] - b.empirical_d[0]) <= 4 * combined


def test_antithetic_reduces_stderr():
    plain = simulate_bc(SRC, SCHEME, CH, SimConfig(N, seed=9))
    anti = simulate_bc(SRC, SCHEME, CH, SimConfig(N, seed=9, antithetic=True))
    assert anti.within(4)
    assert np.all(anti.stderr / plain.stderr <= 0.8)
    mac = simulate_mac(MAC, MacScheme((1, 1)), SimConfig(N, seed=9, antithetic=True))
    assert mac.within(4)


def test_single_sample_has_no_stderr():
    r = simulate_bc(SRC, SCHEME, CH, SimConfig(1, seed=0))
    assert np.all(np.isnan(r.stderr))
    assert not r.within(4)


def test_config_validation():
    for bad in ({"n_samples": 0}, {"batch_size": 0}, {"seed": -1}, {"seed": 2**64}):
        with pytest.raises(InvalidInputError):
            SimConfig(**bad)


def test_cov_factor(rng):
    a = rng.normal(size=(4, 3))
    cov = a @ a.T  # rank 3
    r = cov_factor(cov)
    np.testing.assert_allclose(r @ r.T, cov, atol=1e-12)
    with pytest.raises(NumericalFailureError):
        cov_factor([[1, 2], [2, 1]])


def test_radial_partner_complements_quantile(rng):
    x = rng.normal(size=1000)
    h = radial_partner(x)
    assert np.array_equal(np.sign(h), np.sign(x))
    u = erf(np.abs(x) / math.sqrt(2))
    v = erf(np.abs(h) / math.sqrt(2))
    np.testing.assert_allclose(u + v, 1.0, atol=1e-12)
