import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gen import matched_instance, source_scheme
from uncoded_match.analysis import symmetric_source
from uncoded_match.bc_match import (
    bc_distortions,
    build_sigma_v,
    certify,
    corollary1_monotone_check,
    corollary2_existence,
    corollary3_thresholds,
    lemma1_check,
    threshold_noise,
    verify_outer_bound_equality,
)
from uncoded_match.errors import InfeasibleDownstreamError, InvalidInputError
from uncoded_match.model import BcChannel, SourceSpec, scheme_from_alpha
from uncoded_match.symmat import ldl_psd_test

SRC = SourceSpec([[1, 0.5], [0.5, 1]])
SCHEME = scheme_from_alpha([1, 1], SRC)


def test_sigma_v_two_user():
    np.testing.assert_allclose(build_sigma_v(SCHEME, BcChannel([2, 2])).matrix.array,
                               [[0.3, -0.3], [-0.3, 0.3]], atol=1e-15)
    np.testing.assert_allclose(build_sigma_v(SCHEME, BcChannel([1.5, 1.5])).matrix.array,
                               [[0.25, -0.25], [-0.25, 0.25]], atol=1e-15)
    one = scheme_from_alpha([2.0], SourceSpec([[1.0]]))
    assert build_sigma_v(one, BcChannel([1.0])).matrix.tolist() == [[0.0]]


def test_certify_two_user_cases():
    c = certify(SCHEME, BcChannel([2, 2]), SRC)
    np.testing.assert_allclose(c.sigma0.array, [[0.05, -0.05], [-0.05, 0.05]], atol=1e-15)
    np.testing.assert_allclose(c.eigen.eigenvalues, [0.1, 0.0], atol=1e-15)
    assert c.matched
    b = certify(SCHEME, BcChannel([1.5, 1.5]), SRC)
    assert b.matched and np.max(np.abs(b.sigma0.array)) <= 1e-15
    assert not certify(SCHEME, BcChannel([1, 1]), SRC).matched
    assert not certify(SCHEME, BcChannel([1.5 - 1e-6, 1.5 - 1e-6]), SRC).matched


def test_distortions_and_outer_bound_two_user():
    ch = BcChannel([2, 2])
    d = bc_distortions(SCHEME, ch, SRC)
    np.testing.assert_allclose(d.d, [0.55, 0.55], rtol=1e-15)
    rep = verify_outer_bound_equality(certify(SCHEME, ch, SRC), d, ch, SRC)
    assert rep.terms[0] == 0.0
    assert rep.lhs == pytest.approx(5.0, rel=1e-14) and rep.rhs == 5.0
    ch = BcChannel([1.5, 1.5])
    d = bc_distortions(SCHEME, ch, SRC)
    np.testing.assert_allclose(d.d, [0.5, 0.5], rtol=1e-15)
    rep = verify_outer_bound_equality(certify(SCHEME, ch, SRC), d, ch, SRC)
    assert rep.lhs == pytest.approx(4.5, rel=1e-14) and rep.rhs == 4.5


def test_outer_bound_scalar_and_refusals():
    src = SourceSpec([[2.0]])
    s = scheme_from_alpha([1.5], src)
    ch = BcChannel([0.7])
    d = bc_distortions(s, ch, src)
    assert d.d[0] == pytest.approx(2.0 * 0.7 / (s.p + 0.7))
    rep = verify_outer_bound_equality(certify(s, ch, src), d, ch, src)
    assert rep.gap <= 1e-14
    with pytest.raises(InvalidInputError):
        ch = BcChannel([1, 1])
        verify_outer_bound_equality(certify(SCHEME, ch, SRC), bc_distortions(SCHEME, ch, SRC), ch, SRC)


def test_distortion_limit_large_noise():
    d = bc_distortions(SCHEME, BcChannel([1e12, math.inf]), SRC)
    np.testing.assert_allclose(d.d, [1.0, 1.0], rtol=1e-11)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_null_space_identity(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 7))
    src, sc = source_scheme(rng, m, positive=bool(seed % 2))
    noise = np.sort(rng.exponential(2.0, m) + 1e-3)[::-1]
    c = certify(sc, BcChannel(noise), src)
    s0 = c.sigma0.array
    assert np.max(np.abs(s0 @ sc.alpha)) <= 1e-10 * max(1.0, np.max(np.abs(s0))) * max(1.0, np.max(np.abs(sc.alpha)))
    sv = build_sigma_v(sc, BcChannel(noise)).matrix.array
    assert np.max(np.abs(sv @ sc.alpha)) <= 1e-10 * max(1.0, np.max(np.abs(sv))) * max(1.0, np.max(np.abs(sc.alpha)))


def test_outer_bound_equality_random_matches(rng):
    for _ in range(100):
        src, sc, noise = matched_instance(rng)
        ch = BcChannel(noise)
        cert = certify(sc, ch, src)
        assert cert.matched
        assert verify_outer_bound_equality(cert, bc_distortions(sc, ch, src), ch, src).gap <= 1e-9


def test_lemma1_examples():
    assert lemma1_check(SCHEME) == (True, ())
    s = scheme_from_alpha([1, 0.5], SourceSpec([[1, -0.9], [-0.9, 1]]))
    assert s.p == pytest.approx(0.35)
    ok, bad = lemma1_check(s)
    assert not ok and bad == (1,)
    rng = np.random.default_rng(0)
    s = scheme_from_alpha(rng.normal(size=4), SourceSpec(np.diag([1, 2, 3, 4.0])))
    assert lemma1_check(s)[0]


def _b_recursion_pivots(alpha, beta, b0):
    """Pivots of Sigma_V eliminated from the last index down, from the B^(k) recursion."""
    m = alpha.size
    ab = alpha * beta
    b = np.array(b0, dtype=float)
    pivots = []
    for k in range(m):
        i = m - 1 - k
        head = ab[:i].sum()
        pivots.append(beta[i] / alpha[i] * b[i] * head)
        if head != 0:
            upd = ab[i] / head * b[i]
            b[:i] = np.where(beta[:i] * head != 0, b[:i] + upd, b[:i])
    return pivots


def test_sigma_v_pivots_follow_b_recursion(rng):
    for _ in range(300):
        m = int(rng.integers(2, 7))
        src, sc = source_scheme(rng, m)
        if not np.all(sc.alpha * sc.beta > 0):
            continue
        noise = np.sort(rng.exponential(2.0, m) + 1e-2)[::-1]
        sv = build_sigma_v(sc, BcChannel(noise)).matrix
        trace = ldl_psd_test(sv, order=range(m - 1, -1, -1))
        b0 = sc.p * noise / (sc.p + noise)
        expect = _b_recursion_pivots(sc.alpha, sc.beta, b0)
        assert trace.psd
        np.testing.assert_allclose(trace.diag, expect, rtol=1e-9, atol=1e-12)


def test_corollary2_examples():
    r = corollary2_existence(SCHEME, SRC)
    assert r.exists
    assert r.lambda2 == pytest.approx(1 / 3, rel=1e-12)
    assert r.noise_floor == pytest.approx(1.5, rel=1e-12)
    ind = SourceSpec(np.eye(3))
    assert not corollary2_existence(scheme_from_alpha([1, 2, 3], ind), ind).exists


def test_corollary2_three_component_uses_second_largest():
    src = SourceSpec([[1, 0.5, 1 / 6], [0.5, 1, 0.5], [1 / 6, 0.5, 1]])
    sc = scheme_from_alpha([1, 1, 1], src)
    r = corollary2_existence(sc, src)
    np.testing.assert_allclose(r.eigenvalues, [1.0, 0.5, 0.2], atol=1e-12)
    assert r.lambda2 == pytest.approx(0.5, abs=1e-12)
    assert r.noise_floor == pytest.approx(sc.p, rel=1e-12)


def test_corollary2_negative_alpha_beta():
    s = scheme_from_alpha([1, 0.5], SourceSpec([[1, -0.9], [-0.9, 1]]))
    assert not corollary2_existence(s, SourceSpec([[1, -0.9], [-0.9, 1]])).exists


def test_corollary2_floor_is_equal_noise_boundary(rng):
    n = 0
    while n < 100:
        m = int(rng.integers(2, 6))
        src, sc = source_scheme(rng, m)
        r = corollary2_existence(sc, src)
        if not r.exists or r.noise_floor <= 0:
            continue
        n += 1
        f = r.noise_floor
        assert certify(sc, BcChannel([f * (1 + 1e-6)] * m), src).matched
        assert not certify(sc, BcChannel([f * (1 - 1e-6)] * m), src).matched


def test_corollary3_two_user_and_symmetric():
    r = corollary3_thresholds(SCHEME, SRC)
    assert r.applicable and r.thresholds == pytest.approx((1.5,), rel=1e-12)
    for m in (3, 5):
        for rho in (0.2, 0.7):
            src = symmetric_source(m, rho)
            sc = scheme_from_alpha(np.ones(m), src)
            t = (1 - rho) / (1 + (m - 1) * rho)
            r = corollary3_thresholds(sc, src)
            np.testing.assert_allclose(r.thresholds, [sc.p * t / (1 - t)] * (m - 1), rtol=1e-12)
    s = SourceSpec([[1, -0.3], [-0.3, 1]])
    assert not corollary3_thresholds(scheme_from_alpha([1, 1], s), s).applicable


def test_corollary3_thresholds_certify(rng):
    n = 0
    while n < 150:
        m = int(rng.integers(2, 7))
        src, sc = source_scheme(rng, m)
        r = corollary3_thresholds(sc, src)
        if not r.applicable:
            continue
        n += 1
        assert r.thresholds[-1] > 0
        lower = np.maximum(np.array((0.0,) + r.thresholds), 0.0)
        noise = lower * (1 + 1e-9) + rng.exponential(0.5, m) * lower.max()
        noise = np.maximum.accumulate(noise[::-1])[::-1]
        assert certify(sc, BcChannel(noise), src).matched


def test_threshold_noise_examples():
    assert threshold_noise(SCHEME, SRC) == pytest.approx(1.5, rel=1e-12)
    ind = SourceSpec(np.eye(2))
    assert threshold_noise(scheme_from_alpha([1, 1], ind), ind) == math.inf
    with pytest.raises(InfeasibleDownstreamError):
        threshold_noise(SCHEME, SRC, downstream=[1.0])


def test_threshold_noise_brackets_certify(rng):
    checked = 0
    for _ in range(200):
        m = int(rng.integers(2, 6))
        src, sc = source_scheme(rng, m)
        t_last = threshold_noise(sc, src)
        if not math.isfinite(t_last):
            continue
        # build the channel from the last receiver up, each just above its threshold
        noise = [t_last * (1 + rng.exponential(0.5))]
        feasible = True
        for _k in range(m - 1):
            t = threshold_noise(sc, src, downstream=list(reversed(noise)))
            if not math.isfinite(t):
                feasible = False
                break
            noise.append(max(t, noise[-1]) * (1 + rng.exponential(0.5)))
        if not feasible:
            continue
        ch = list(reversed(noise))
        assert certify(sc, BcChannel(ch), src).matched
        checked += 1
        t = threshold_noise(sc, src, downstream=ch[1:])
        if t > ch[1] * (1 + 1e-5):
            lo = [t * (1 - 1e-6)] + ch[1:]
            hi = [t * (1 + 1e-6)] + ch[1:]
            assert not certify(sc, BcChannel(lo), src).matched
            assert certify(sc, BcChannel(hi), src).matched
    assert checked > 20


def test_symmetric_grid_matches_closed_form():
    for m in (2, 3, 4):
        for rho in np.linspace(0.05, 0.95, 10):
            src = symmetric_source(m, rho)
            sc = scheme_from_alpha(np.ones(m), src)
            t = (1 - rho) / (1 + (m - 1) * rho)
            for s in np.geomspace(0.01, 100, 25):
                lhs = s / (sc.p + s)
                if abs(lhs - t) <= 1e-8:
                    continue
                assert certify(sc, BcChannel([s] * m), src).matched == (lhs >= t)


def test_corollary1_examples():
    assert corollary1_monotone_check(SCHEME, SRC, BcChannel([2, 2]), BcChannel([5, 2]))
    assert corollary1_monotone_check(SCHEME, SRC, BcChannel([1.5, 1.5]), BcChannel([1.5 + 1e-9, 1.5]))
    assert corollary1_monotone_check(SCHEME, SRC, BcChannel([2, 2]), BcChannel([2, 2]))
    with pytest.raises(InvalidInputError):
        corollary1_monotone_check(SCHEME, SRC, BcChannel([1, 1]), BcChannel([2, 2]))
