import numpy as np
import pytest
from scipy.integrate import quad
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hypcurv import hypcore as hc

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)
coords = arrays(np.float64, 3, elements=finite)


def _unit_tangent(p, v):
    w = hc.project_tangent(p, v)
    return w / hc.mnorm(w)


# --- points and distance ---------------------------------------------------


def test_make_point_rejects_off_hyperboloid():
    with pytest.raises(ValueError):
        hc.make_point([1.0, 0.5, 0.0, 0.0])


def test_make_point_rejects_lower_sheet():
    with pytest.raises(ValueError):
        hc.make_point([-1.0, 0.0, 0.0, 0.0])


def test_dist_to_self_is_zero():
    p = hc.point_from_euclidean([0.3, -0.2, 1.1])
    assert hc.dist(p, p) == 0.0


def test_dist_nearby_points_keeps_relative_accuracy():
    p = hc.point_from_euclidean([2.0, 0.0, 0.0])
    v = _unit_tangent(p, np.array([0.0, 0.0, 1.0, 0.0]))
    q = hc.exp_map(p, v, 1e-9)
    assert hc.dist(p, q) == pytest.approx(1e-9, rel=1e-6)


@given(coords, coords)
def test_dist_symmetric_and_nonnegative(a, b):
    p, q = hc.point_from_euclidean(a), hc.point_from_euclidean(b)
    assert hc.dist(p, q) >= 0
    assert hc.dist(p, q) == pytest.approx(hc.dist(q, p), abs=1e-12)


@given(coords, coords, coords)
@settings(max_examples=200)
def test_triangle_inequality(a, b, c):
    p, q, r = (hc.point_from_euclidean(x) for x in (a, b, c))
    assert hc.dist(p, r) <= hc.dist(p, q) + hc.dist(q, r) + 1e-9


# --- exp / log ---------------------------------------------------------------


@given(coords, coords, st.floats(0.01, 5.0))
@settings(max_examples=200)
def test_log_exp_roundtrip(a, v, t):
    p = hc.point_from_euclidean(a)
    if np.linalg.norm(v) < 1e-3:
        v = np.array([1.0, 0.0, 0.0])
    u = _unit_tangent(p, np.r_[0.0, v])
    q = hc.exp_map(p, u, t)
    res = hc.log_map(p, q)
    assert res.length == pytest.approx(t, abs=1e-9 * max(1, t))
    assert np.max(np.abs(res.vec - u)) <= 1e-9 * np.cosh(np.linalg.norm(a)) ** 2


def test_exp_map_requires_unit_tangent():
    p = hc.origin(3)
    with pytest.raises(ValueError):
        hc.exp_map(p, np.array([0.0, 2.0, 0.0, 0.0]), 1.0)


def test_log_map_degenerate_flagged():
    p = hc.point_from_euclidean([0.1, 0.2, 0.3])
    r = hc.log_map(p, p)
    assert r.degenerate and r.length == 0.0
    assert hc.mdot(r.vec, r.vec) == pytest.approx(1.0)


@given(coords, coords)
def test_midpoint_equidistant(a, b):
    p, q = hc.point_from_euclidean(a), hc.point_from_euclidean(b)
    m = hc.midpoint(p, q)
    assert hc.dist(p, m) == pytest.approx(hc.dist(m, q), abs=1e-10)


def test_geodesic_constant_speed_by_finite_differences():
    p = hc.point_from_euclidean([0.4, -1.0, 0.2])
    q = hc.point_from_euclidean([-0.7, 0.3, 1.5])
    s = np.linspace(0, 1, 201)
    pts = hc.geodesic_point(p, q, s)
    steps = hc.dist(pts[:-1], pts[1:])
    assert np.ptp(steps) <= 1e-10
    assert steps.sum() == pytest.approx(hc.dist(p, q), rel=1e-12)


def test_boost_is_isometry_mapping_origin():
    c = hc.point_from_euclidean([0.5, -0.3, 0.9])
    L = hc.boost(c)
    assert np.allclose(L @ hc.origin(3), c, atol=1e-14)
    J = hc.minkowski_metric(3)
    assert np.allclose(L.T @ J @ L, J, atol=1e-13)


# --- horospherical charts --------------------------------------------------------


def test_chart_origin_is_base_point():
    f = hc.HoroFrame.standard(3)
    assert np.allclose(hc.horo_chart(f, np.zeros(2), 0.0), f.base_point)


@given(arrays(np.float64, 2, elements=finite), st.floats(-3, 3), st.floats(-3, 3))
def test_vertical_lines_are_unit_speed(xi, z1, z2):
    f = hc.HoroFrame.standard(3)
    a, b = hc.horo_chart(f, xi, z1), hc.horo_chart(f, xi, z2)
    assert hc.dist(a, b) == pytest.approx(abs(z1 - z2), abs=1e-9 * max(1.0, np.exp(abs(z1) + abs(z2))))


@given(arrays(np.float64, 2, elements=finite), st.floats(-3, 3))
def test_unchart_inverts_chart(xi, z):
    f = hc.HoroFrame.from_point_normal(hc.point_from_euclidean([0.2, 0.1, -0.3]), np.array([0.0, 0.3, 1.0, 0.2]))
    x = hc.horo_chart(f, xi, z)
    xi2, z2 = hc.horo_unchart(f, x)
    assert np.allclose(xi2, xi, atol=1e-10 * np.exp(abs(z)))
    assert z2 == pytest.approx(z, abs=1e-10)


def test_chart_pulls_back_to_horospherical_metric():
    f = hc.HoroFrame.standard(3)
    rng = np.random.default_rng(1)
    xi, z = rng.normal(size=(200, 2)), rng.uniform(-2, 2, 200)
    J = hc.horo_chart_jacobian(f, xi, z)
    G = np.einsum("pai,ab,pbj->pij", J, hc.minkowski_metric(3), J)
    want = np.zeros_like(G)
    want[:, 0, 0] = want[:, 1, 1] = np.exp(2 * z)
    want[:, 2, 2] = 1.0
    assert np.max(np.abs(G - want) / np.exp(2 * np.abs(z))[:, None, None]) <= 1e-10


def test_zeta_is_signed_distance_to_reference_horosphere():
    f = hc.HoroFrame.standard(3)
    p = hc.horo_chart(f, np.array([0.0, 0.0]), -0.7)
    assert hc.dist(p, f.base_point) == pytest.approx(0.7, abs=1e-12)


def test_frame_roundtrip_dict():
    f = hc.HoroFrame.from_point_normal(hc.point_from_euclidean([0.2, 0.1, -0.3]), np.array([0.0, 0.3, 1.0, 0.2]))
    g = hc.HoroFrame.from_dict(f.to_dict())
    assert np.array_equal(f.base_point, g.base_point) and np.array_equal(f.tangent, g.tangent)


def test_chart_contraction_corrected_form_holds():
    # |xi_a - xi_b|^2 = 4 z_a z_b sinh^2(d/2) - (z_a - z_b)^2 in half-space heights z = e^{-zeta}
    f = hc.HoroFrame.standard(3)
    rng = np.random.default_rng(2)
    xa, xb = rng.normal(size=(10_000, 2)), rng.normal(size=(10_000, 2))
    za, zb = rng.uniform(-2, 2, 10_000), rng.uniform(-2, 2, 10_000)
    a, b = hc.horo_chart(f, xa, za), hc.horo_chart(f, xb, zb)
    lhs, _ = hc.chart_contraction(f, a, b)
    d = hc.dist(a, b)
    assert np.all(lhs <= 2 * np.exp(np.maximum(abs(za), abs(zb))) * np.sinh(d / 2) * (1 + 1e-10))


def test_chart_contraction_literal_form_fails_at_equal_negative_zeta():
    f = hc.HoroFrame.standard(3)
    a = hc.horo_chart(f, np.array([0.0, 0.0]), -1.0)
    b = hc.horo_chart(f, np.array([3.0, 0.0]), -1.0)
    lhs, rhs = hc.chart_contraction(f, a, b)
    assert lhs > rhs


# --- tube basis ------------------------------------------------------------------


@pytest.mark.parametrize("k, want", [(0, 1.4067151019617546919), (1, 0.69054892277090786489),
                                     (2, 0.40671510196175469192)])
def test_tube_basis_n3_at_one(k, want):
    assert hc.tube_basis_eval(3, k, 1.0) == pytest.approx(want, rel=1e-13)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_tube_basis_zero_at_zero(n):
    for k in range(n):
        assert hc.tube_basis_eval(n, k, 0.0) == 0.0


@pytest.mark.parametrize("n", [2, 3, 4])
def test_tube_basis_matches_quadrature(n):
    rho = np.linspace(0.01, 2.0, 40)
    for k in range(n):
        want = np.array([quad(lambda x: np.sinh(x) ** k * np.cosh(x) ** (n - 1 - k), 0, r, epsrel=1e-14)[0]
                         for r in rho])
        assert np.max(np.abs(hc.tube_basis_eval(n, k, rho) / want - 1)) <= 1e-10


def test_tube_basis_small_rho_series():
    # int_0^r sinh^2 = (sinh 2r - 2r)/4 ~ r^3/3
    assert hc.tube_basis_eval(3, 2, 1e-4) == pytest.approx(1e-12 / 3, rel=1e-7)


def test_tube_basis_index_checked():
    with pytest.raises(ValueError):
        hc.tube_basis_eval(3, 3, 0.5)


def test_ball_volume_closed_form():
    R = 0.8
    assert hc.ball_volume(3, R) == pytest.approx(np.pi * (np.sinh(2 * R) - 2 * R), rel=1e-13)


# --- sampling ----------------------------------------------------------------------


def test_sample_ball_radial_law():
    rng = np.random.default_rng(3)
    c = hc.point_from_euclidean([0.3, 0.0, -0.2])
    x = hc.sample_ball(c, 1.0, 200_000, rng, r_in=0.2)
    r = hc.dist(c, x)
    assert r.min() >= 0.2 - 1e-12 and r.max() <= 1.0 + 1e-12
    # fraction inside radius 0.6 against the shell volume ratio
    frac = np.mean(r <= 0.6)
    want = (hc.ball_volume(3, 0.6) - hc.ball_volume(3, 0.2)) / (hc.ball_volume(3, 1.0) - hc.ball_volume(3, 0.2))
    assert abs(frac - want) <= 4 * np.sqrt(want * (1 - want) / len(r))
