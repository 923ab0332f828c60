import csv
import math

import numpy as np
import pytest

from uncoded_match.analysis import (
    fan_overlays,
    from_transformed,
    grid_axis,
    overlay_path,
    rho_boundary_distance,
    rho_region_sweep,
    sweep_fan,
    symmetric_curve,
    symmetric_source,
    three_component_eigs,
    three_component_source,
    to_transformed,
    valid_rho_region,
    write_grid_csv,
)
from uncoded_match.bc_match import certify, corollary2_existence, pi_spectrum, threshold_noise
from uncoded_match.errors import InvalidInputError
from uncoded_match.model import BcChannel, scheme_from_alpha

P_FAN = 16 / 3


def _fan_case(layout):
    src = three_component_source(0.5, 1 / 6, layout)
    return src, scheme_from_alpha([1, 1, 1], src)


def _matched_at(layout, bx, by, receiver1="clamp"):
    src, sc = _fan_case(layout)
    s2, s3 = from_transformed([bx, by], sc.p)
    s1 = s2 if receiver1 == "clamp" else math.inf
    return certify(sc, BcChannel([s1, s2, s3]), src).matched


def test_three_component_eigs_examples():
    l1, l2, l3 = three_component_eigs(0.5, 1 / 6)
    assert l1 == 1.0
    assert l2 == pytest.approx(0.2, abs=1e-12)
    assert l3 == pytest.approx(0.5, abs=1e-12)
    assert three_component_eigs(0.0, 0.0) == (1.0, 1.0, 1.0)
    rho = 0.3
    _, l2, l3 = three_component_eigs(rho, rho)
    assert l2 == pytest.approx((1 - rho) / (1 + 2 * rho), rel=1e-14)
    assert l3 == pytest.approx((1 - rho) / (1 + 2 * rho), rel=1e-14)
    with pytest.raises(InvalidInputError):
        three_component_eigs(-0.5, -0.5)


def test_three_component_eigs_match_numeric(rng):
    n = 0
    while n < 500:
        r1, r2 = rng.uniform(-1, 1, 2)
        src = three_component_source(r1, r2, "cov1")
        if np.linalg.eigvalsh(src.sigma_s.array)[0] <= 1e-3:
            continue
        try:
            closed = three_component_eigs(r1, r2)
        except InvalidInputError:
            continue
        n += 1
        for layout in ("cov1", "cov2"):
            s = three_component_source(r1, r2, layout)
            spec = pi_spectrum(s.sigma_s.array, [1, 1, 1])
            if spec is None:
                continue
            # near rho1 = -1/2 one eigenvalue grows without bound, so compare on its scale
            want = np.sort(closed)[::-1]
            assert np.all(np.abs(want - spec[0].eigenvalues) <= 1e-10 * np.maximum(1.0, np.abs(want)))


def test_layouts_and_errors():
    a = three_component_source(0.5, 1 / 6, "cov1").sigma_s.array
    b = three_component_source(0.5, 1 / 6, "cov2").sigma_s.array
    assert a[0, 2] == b[0, 1] == pytest.approx(1 / 6)
    assert a[0, 1] == b[0, 2] == 0.5
    with pytest.raises(InvalidInputError):
        three_component_source(0.5, 0.5, "cov3")


def test_valid_rho_region_examples():
    assert valid_rho_region(0.5, 1 / 6)
    assert not valid_rho_region(0.0, 0.5)
    assert not valid_rho_region(0.5, -0.3)
    assert not valid_rho_region(0.9, 0.5)
    assert not valid_rho_region(0.3, 1.0)
    assert rho_boundary_distance(0.5, 1 / 6) == pytest.approx(0.5)


def test_region_agrees_with_corollary2_off_boundary(rng):
    for _ in range(2000):
        r1, r2 = rng.uniform(-1, 1, 2)
        src = three_component_source(r1, r2, "cov1")
        if np.linalg.eigvalsh(src.sigma_s.array)[0] <= 0 or rho_boundary_distance(r1, r2) < 1e-6:
            continue
        assert corollary2_existence(scheme_from_alpha([1, 1, 1], src), src).exists == valid_rho_region(r1, r2)


def test_transformed_round_trip():
    p = 3.0
    s = np.array([0.1, 1.0, 7.0, math.inf])
    b = to_transformed(s, p)
    assert b[-1] == p
    np.testing.assert_allclose(from_transformed(b, p), s, rtol=1e-14)
    with pytest.raises(InvalidInputError):
        from_transformed([0.0], p)
    with pytest.raises(InvalidInputError):
        from_transformed([3.5], p)


def test_grid_axis():
    np.testing.assert_allclose(grid_axis(4, 0, 1), [0.125, 0.375, 0.625, 0.875])
    assert grid_axis(1, 2.0, 2.0).tolist() == [2.0]
    with pytest.raises(InvalidInputError):
        grid_axis(0, 0, 1)
    with pytest.raises(InvalidInputError):
        grid_axis(3, 1, 1)


@pytest.mark.parametrize("layout", ["cov1", "cov2"])
def test_fan_upward_closed_and_excluded(layout):
    src, sc = _fan_case(layout)
    g = sweep_fan(src, sc, 40, 40)
    assert sc.p == pytest.approx(P_FAN)
    assert g.is_upward_closed()
    assert not g.cells[g.excluded].any()
    assert g.excluded[-1, 0] and not g.excluded[0, -1]
    assert g.cells.any() and not g.cells[~g.excluded].all()


def test_fan_receiver1_choice_does_not_change_region():
    src, sc = _fan_case("cov1")
    a = sweep_fan(src, sc, 30, 30, receiver1="clamp")
    b = sweep_fan(src, sc, 30, 30, receiver1="inf")
    assert np.array_equal(a.cells, b.cells)
    with pytest.raises(InvalidInputError):
        sweep_fan(src, sc, 3, 3, receiver1="zero")


def test_fan_first_pivot_overlay_value():
    src, sc = _fan_case("cov2")
    b3 = float(to_transformed(threshold_noise(sc, src), sc.p))
    assert b3 == pytest.approx(16 / 15, abs=1e-9)
    ov = fan_overlays(src, sc, (0, sc.p), (0, sc.p))
    assert ov["first_pivot"][0][1] == pytest.approx(16 / 15, abs=1e-9)
    assert ov["corollary3"][0][1] == pytest.approx(16 / 15, abs=1e-9)
    assert ov["corollary2"] == [(pytest.approx(0.5 * P_FAN), pytest.approx(0.5 * P_FAN))]


@pytest.mark.parametrize("layout", ["cov1", "cov2"])
@pytest.mark.parametrize("receiver1", ["clamp", "inf"])
def test_fan_noise_floor_point_on_boundary(layout, receiver1):
    # the second-largest eigenvalue of Pi Sigma Pi is 0.5 here, so the floor sits at (P/2, P/2)
    b = 0.5 * P_FAN
    assert _matched_at(layout, b, b, receiver1)
    assert not _matched_at(layout, b * (1 - 1e-4), b * (1 - 1e-4), receiver1)


def test_fan_range_errors():
    src, sc = _fan_case("cov1")
    with pytest.raises(InvalidInputError):
        sweep_fan(src, sc, 4, 4, x_range=(0, 2 * sc.p))
    with pytest.raises(InvalidInputError):
        sweep_fan(src, sc, 4, 4, y_range=(1, 1))
    with pytest.raises(InvalidInputError):
        sweep_fan(symmetric_source(2, 0.5), scheme_from_alpha([1, 1], symmetric_source(2, 0.5)))


@pytest.mark.parametrize("x,y", [(3.0, 2.0), (4.5, 1.2), (2.0, 2.0), (5.0, 0.5)])
def test_single_cell_sweep_equals_certify(x, y):
    src, sc = _fan_case("cov1")
    g = sweep_fan(src, sc, 1, 1, x_range=(x, x), y_range=(y, y))
    assert g.x_axis.tolist() == [x] and g.y_axis.tolist() == [y]
    assert bool(g.cells[0, 0]) == _matched_at("cov1", x, y)


def test_sweep_threads_deterministic(monkeypatch):
    src, sc = _fan_case("cov2")
    monkeypatch.setenv("UNCODED_MATCH_THREADS", "1")
    a = sweep_fan(src, sc, 25, 25)
    monkeypatch.setenv("UNCODED_MATCH_THREADS", "4")
    b = sweep_fan(src, sc, 25, 25)
    assert np.array_equal(a.cells, b.cells)
    monkeypatch.setenv("UNCODED_MATCH_THREADS", "many")
    with pytest.raises(InvalidInputError):
        sweep_fan(src, sc, 2, 2)


def test_rho_region_sweep_small():
    g = rho_region_sweep(40, 40, threads=2)
    band = np.array([[rho_boundary_distance(x, y) < 1e-6 for x in g.x_axis] for y in g.y_axis])
    ok = ~g.excluded & ~band
    assert np.array_equal(g.cells[ok], g.metadata["analytic"][ok])
    assert g.excluded.any()


def test_symmetric_curve_examples():
    assert symmetric_curve(2, 0.5, 3.0) == pytest.approx(1.5, rel=1e-15)
    assert symmetric_curve(3, 0.0, 1.0) == math.inf
    assert symmetric_curve(4, 1 - 1e-12, 2.0) == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(InvalidInputError):
        symmetric_curve(3, -0.6, 1.0)
    with pytest.raises(InvalidInputError):
        symmetric_curve(1, 0.5, 1.0)


def test_symmetric_curve_equals_threshold_noise():
    for m in (2, 3, 5):
        for rho in (0.1, 0.45, 0.8):
            src = symmetric_source(m, rho)
            sc = scheme_from_alpha(np.ones(m), src)
            assert threshold_noise(sc, src) == pytest.approx(symmetric_curve(m, rho, sc.p), rel=1e-9)


def test_write_grid_csv(tmp_path):
    src, sc = _fan_case("cov1")
    g = sweep_fan(src, sc, 3, 2)
    region, overlay = write_grid_csv(g, tmp_path / "fan.csv")
    assert overlay == overlay_path(region) == tmp_path / "fan_overlays.csv"
    rows = list(csv.reader(open(region)))
    assert rows[0] == ["x", "y", "matched"]
    assert len(rows) == 7
    assert [float(r[0]) for r in rows[1:4]] == g.x_axis.tolist()
    assert float(rows[1][1]) == float(rows[3][1]) == g.y_axis[0]
    assert {r[2] for r in rows[1:]} <= {"0", "1"}
    orows = list(csv.reader(open(overlay)))
    assert orows[0] == ["curve", "x", "y"]
    assert {r[0] for r in orows[1:]} == set(g.overlays)
