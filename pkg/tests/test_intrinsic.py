import json

import numpy as np
import pytest

from hypcurv import bodies as bd
from hypcurv import horograph as hg
from hypcurv import hypcore as hc
from hypcurv import intrinsic as it
from hypcurv import tubes as tb

INV_SINH2_08 = 1.2678573980718919637  # 1 / sinh^2 0.8


# --- meshes and distances ----------------------------------------------------------


@pytest.fixture(scope="module")
def flat_mesh():
    u = hg.constant(0.3, 0.5)
    return u, it.build_mesh(None, 0.04, u=u)


def test_flat_mesh_distance(flat_mesh):
    # lattice graph distances overestimate by a resolution-independent factor; one Steiner
    # level brings the worst case below 4%
    u, mesh = flat_mesh
    p = mesh.nearest_vertex([0.0, 0.0])
    d = mesh.distances_from(p)[0][: mesh.n_base]
    want = np.exp(0.3) * np.linalg.norm(mesh.points[: mesh.n_base] - mesh.points[p], axis=1)
    far = want > 0.1
    rel = d[far] / want[far] - 1
    assert rel.min() >= -1e-12 and rel.max() <= 0.04


def test_mesh_distance_symmetric(flat_mesh):
    _, mesh = flat_mesh
    d = mesh.distances_from([0, 5, 40])
    assert d[0, 5] == pytest.approx(d[1, 0], rel=1e-14) and d[1, 40] == pytest.approx(d[2, 5], rel=1e-14)


def test_steiner_points_shorten_paths():
    u = hg.random_smooth(1)
    coarse = it.build_mesh(None, 0.05, u=u, steiner=False)
    fine = it.build_mesh(None, 0.05, u=u, steiner=True)
    p, q = coarse.nearest_vertex([-0.3, 0.1]), coarse.nearest_vertex([0.3, -0.2])
    exact = it.geodesic_distance(u, coarse.points[p], coarse.points[q])[0]
    e0 = it.intrinsic_dist(coarse, p, q) - exact
    e1 = it.intrinsic_dist(fine, p, q) - exact
    assert e1 >= -1e-12 and e1 < e0


def test_mesh_distance_bias_does_not_vanish_with_resolution():
    u = hg.random_smooth(2)
    errs = []
    for h in (0.04, 0.02):
        m = it.build_mesh(None, h, u=u)
        p, q = m.nearest_vertex([-0.3, 0.0]), m.nearest_vertex([0.3, 0.1])
        exact = it.geodesic_distance(u, m.points[p], m.points[q])[0]
        errs.append(it.intrinsic_dist(m, p, q) / exact - 1)
    assert all(0 <= e <= 0.04 for e in errs)


def test_segment_length_flat_is_exact():
    u = hg.constant(-0.2, 0.5)
    L = it.segment_length(u, np.array([0.0, 0.0]), np.array([0.3, 0.4]))
    assert L == pytest.approx(0.5 * np.exp(-0.2), rel=1e-14)


def test_off_export(flat_mesh):
    _, mesh = flat_mesh
    lines = mesh.to_off().splitlines()
    assert lines[0] == "OFF" and lines[1].startswith("#")
    nv, nt, ne = map(int, lines[2].split())
    assert (nv, nt, ne) == (len(mesh.points), len(mesh.triangles), len(mesh.edges))
    i = lines.index("EDGES")
    a, b, L = lines[i + 1].split()
    assert float(L) == mesh.lengths[0]


def test_polytope_mesh_uses_exact_lengths():
    K = bd.random_polytope(0.8, 30, seed=0)
    m = it.build_mesh(K, 0.0)
    a, b = m.edges[0]
    assert m.lengths[0] == hc.dist(K.vertices[a], K.vertices[b])


# --- geodesics -----------------------------------------------------------------------


def test_geodesic_distance_flat():
    u = hg.constant(0.4, 0.5)
    a, b = np.array([[-0.2, 0.1]]), np.array([[0.25, -0.1]])
    assert it.geodesic_distance(u, a, b)[0] == pytest.approx(np.exp(0.4) * np.linalg.norm(a - b), rel=1e-10)


def test_geodesic_distance_ball_graph():
    # distance on the sphere of radius R: R_int * angle with intrinsic radius sinh R
    R = 0.8
    u = hg.ball_graph(R, domain_radius=0.6)
    C = hc.origin(3)
    f = hc.HoroFrame.standard(3)
    a, b = np.array([[-0.3, 0.1]]), np.array([[0.2, -0.25]])
    pa, pb = hc.horo_chart(f, a, u(a)), hc.horo_chart(f, b, u(b))
    va, vb = hc.log_map(C, pa).vec, hc.log_map(C, pb).vec
    angle = np.arccos(np.clip(hc.mdot(va, vb), -1, 1))
    assert it.geodesic_distance(u, a, b)[0] == pytest.approx(np.sinh(R) * angle[0], rel=1e-8)


def test_geodesic_flow_preserves_speed():
    u = hg.random_smooth(3)
    x0 = np.array([[0.0, 0.0]])
    g, _ = it.metric(u, x0)
    v0 = np.array([[0.3, 0.1]])
    x, v = it.geodesic_flow(u, x0, v0, 1.0, 200)
    g1, _ = it.metric(u, x)
    s0 = np.einsum("pi,pij,pj->p", v0, g, v0)
    s1 = np.einsum("pi,pij,pj->p", v, g1, v)
    assert s1 == pytest.approx(s0, rel=1e-7)


# --- intrinsic curvature ------------------------------------------------------------


def test_circle_defect_flat():
    est = it.circle_defect_curvature(hg.constant(0.2, 0.5), np.zeros(2), [0.05, 0.1, 0.15, 0.2])
    assert abs(est.value) <= 1e-6


def test_circle_defect_ball():
    est = it.circle_defect_curvature(hg.ball_graph(0.8), np.zeros(2), [0.05, 0.1, 0.15, 0.2])
    assert est.value == pytest.approx(INV_SINH2_08, rel=1e-3)


@pytest.mark.parametrize("seed", range(3))
def test_circle_defect_matches_extrinsic(seed):
    u = hg.random_smooth(seed)
    x0 = np.array([0.05, -0.05])
    want = float(hg.shape_operator(u.jet(x0)).sect)
    est = it.circle_defect_curvature(u, x0, [0.03, 0.06, 0.09, 0.12])
    assert est.value == pytest.approx(want, rel=0.01)


def test_circle_defect_needs_three_radii():
    with pytest.raises(ValueError):
        it.circle_defect_curvature(hg.constant(0.0, 0.5), np.zeros(2), [0.1, 0.2])


def test_circle_defect_mesh_is_coarse():
    u = hg.ball_graph(0.8)
    mesh = it.build_mesh(None, 0.02, u=u)
    est = it.circle_defect_curvature(u, np.zeros(2), [0.1, 0.15, 0.2, 0.25], method="mesh", mesh=mesh)
    assert np.isfinite(est.value) and est.method == "circle-defect-mesh"


@pytest.mark.parametrize("seed", range(4))
def test_brioschi_matches_shape_operator(seed):
    # Gauss equation: the metric-only curvature equals Sect = k1 k2 - 1
    u = hg.random_smooth(seed)
    x = np.array([0.1, -0.05])
    sd = hg.shape_operator(u.jet(x))
    assert it.brioschi_curvature(u, x) == pytest.approx(float(sd.sect), abs=1e-3)


def test_brioschi_horosphere_is_flat():
    assert abs(it.brioschi_curvature(hg.constant(0.3, 0.5), np.zeros(2))) <= 1e-6


# --- polytopes --------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_gauss_bonnet(seed):
    assert abs(it.gauss_bonnet_residual(bd.random_polytope(0.8, 40 + 30 * seed, seed=seed))) <= 1e-6


def test_triangle_area_equilateral():
    # equilateral with side a: angle alpha from cos a = (cos alpha + cos^2 alpha) / sin^2 alpha
    a = 1.0
    ca = np.cosh(a)
    alpha = np.arccos(ca / (1 + ca))
    assert it.triangle_area(a, a, a) == pytest.approx(np.pi - 3 * alpha, rel=1e-12)
    assert it.triangle_angle(a, a, a) == pytest.approx(alpha, rel=1e-12)


def test_tiny_polytope_is_almost_euclidean():
    K = bd.random_polytope(0.01, 30, seed=2)
    d, a = it.vertex_defects(K)
    assert d.sum() - 4 * np.pi == pytest.approx(a.sum(), rel=1e-6)
    assert a.sum() == pytest.approx(4 * np.pi * np.sinh(0.01) ** 2, rel=0.2)


def test_polytope_patch_additivity():
    K = bd.random_polytope(0.8, 60, seed=3)
    axis = np.array([0.0, 0.3, -0.2, 1.0])
    axis /= np.linalg.norm(axis[1:])
    # choose an angle whose boundary avoids every vertex
    v = hc.log_map(hc.origin(3), K.vertices).vec
    c = np.sort(hc.mdot(v, axis))
    gap = np.argmax(np.diff(c[10:-10])) + 10
    ang = float(np.arccos(0.5 * (c[gap] + c[gap + 1])))
    inner = bd.ConePatch(hc.origin(3), axis, ang)
    outer = bd.ConePatch(hc.origin(3), -axis, np.pi - ang)
    a = it.polytope_curvature(K, inner, level=5).value
    b = it.polytope_curvature(K, outer, level=5).value
    assert a + b == pytest.approx(4 * np.pi, abs=0.02)


def test_polytope_patch_through_vertex_rejected():
    K = bd.random_polytope(0.8, 30, seed=0)
    axis = hc.log_map(hc.origin(3), K.vertices[0]).vec
    with pytest.raises(ValueError):
        it.polytope_curvature(K, bd.ConePatch(hc.origin(3), axis, 0.0))


def test_polytope_area_approaches_sphere():
    errs = [abs(it.polytope_area(bd.random_polytope(0.8, m, seed=0)) - hc.sphere_area_h(3, 0.8)) for m in (50, 400)]
    assert errs[1] < errs[0]


# --- smooth patches ------------------------------------------------------------------------


def test_disc_quadrature_area():
    p, w = it.disc_quadrature(np.array([0.1, 0.2]), 0.3)
    assert w.sum() == pytest.approx(np.pi * 0.09, rel=1e-13)
    assert np.sum(w * p[:, 0] ** 2) == pytest.approx(np.pi * 0.3 ** 4 / 4 + np.pi * 0.09 * 0.01, rel=1e-12)


def test_patch_omega_of_ball_graph():
    u = hg.ball_graph(0.8)
    assert it.patch_omega(u, np.zeros(2), 0.3) == pytest.approx(INV_SINH2_08 * it.patch_area(u, np.zeros(2), 0.3),
                                                                 rel=1e-12)


def test_patch_omega_additive():
    u = hg.random_smooth(4)
    whole = it.patch_omega(u, np.zeros(2), 0.3)
    inner = it.patch_omega(u, np.zeros(2), 0.15)
    # ring by difference must be positive and smaller than the whole
    assert 0 < whole - inner < whole


# --- checks ----------------------------------------------------------------------------


def test_gauss_check_on_ball_measures():
    C = tb.ball_measures(3, 0.8)
    fit = tb.CurvatureMeasures(C, np.diag((0.01 * C) ** 2), 100.0, 1.0, 0.0, 0.0)
    good = it.CurvatureEstimate("whole", 4 * np.pi, "exact", {}, 0.0)
    bad = it.CurvatureEstimate("whole", 4.5 * np.pi, "exact", {}, 0.0)
    assert it.gauss_check(fit, good).passed and not it.gauss_check(fit, bad).passed
    assert json.loads(json.dumps(it.gauss_check(fit, good).to_dict()))["pass"] is True


def test_density_ratio_eps_floor():
    K = bd.HoroGraphBody(hc.HoroFrame.standard(3), hg.ball_graph(0.8))
    with pytest.raises(ValueError, match="floor"):
        it.density_ratio(K, np.zeros(2), [0.01], 1000, 0)


def test_density_ratio_ball_graph():
    K = bd.HoroGraphBody(hc.HoroFrame.standard(3), hg.ball_graph(0.8))
    dr = it.density_ratio(K, np.array([0.1, 0.0]), [0.2], 200_000, 0)
    assert dr.loccurv == pytest.approx(INV_SINH2_08, rel=1e-4)
    assert abs(dr.ratio[0] - INV_SINH2_08) <= max(4 * dr.se[0], 0.05 * INV_SINH2_08)


def test_bilipschitz_ball_graph_is_exact():
    # the osculating quadratic of a ball graph is not the same surface, but both have the
    # same curvature at q, so the relative error still shrinks like eps^2
    K = bd.HoroGraphBody(hc.HoroFrame.standard(3), hg.ball_graph(0.8))
    rows = it.bilipschitz_profile(K, np.array([0.05, 0.0]), eps_list=(0.2, 0.1), n_pairs=6)
    assert rows[1].max_rel < rows[0].max_rel


def test_curvature_estimate_json():
    e = it.circle_defect_curvature(hg.constant(0.0, 0.5), np.zeros(2), [0.1, 0.2, 0.3])
    d = json.loads(json.dumps(e.to_dict()))
    assert d["method"] == "circle-defect-shooting"
