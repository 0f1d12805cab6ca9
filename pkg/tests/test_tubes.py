import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hypcurv import bodies as bd
from hypcurv import horograph as hg
from hypcurv import hypcore as hc
from hypcurv import tubes as tb

R = 0.8
# pi (sinh 2(R+rho) - 2(R+rho)) - pi (sinh 2R - 2R), computed independently at 30 digits
BALL_TUBE = {0.1: 1.1517277684670254167, 0.3: 4.6543864380015863376, 0.5: 10.427462103005428800}
BALL_C = np.array([9.9115015880095181189, 29.852267319508733489, 22.477872202368691073])


def _exact_samples(rhos, se_rel=1e-3):
    mu = np.array([hc.sphere_area(2) * np.sum(BALL_C / hc.sphere_area(2) * hc.tube_basis_matrix(3, [r])[0])
                   for r in rhos])
    return tb.TubeSamples("ball", "all", np.asarray(rhos), mu, se_rel * mu, np.full(len(rhos), 10 ** 6), 0)


def test_ball_measures_closed_form():
    assert np.allclose(tb.ball_measures(3, R), BALL_C, rtol=1e-14)


def test_ball_measures_reproduce_tube_volume():
    for rho, v in BALL_TUBE.items():
        assert tb.ball_measures(3, R) @ hc.tube_basis_matrix(3, [rho])[0] == pytest.approx(v, rel=1e-13)


def test_ball_gauss_defect_closed_form():
    C = tb.ball_measures(3, R)
    assert C[2] - C[0] == pytest.approx(4 * np.pi, rel=1e-14)


@pytest.mark.parametrize("rho", [0.1, 0.3])
def test_ball_tube_volume_estimate(rho):
    K = bd.Ball(hc.origin(3), R)
    mu, se = tb.tube_volume(K, bd.WholeBoundary(), rho, 200_000, seed=1)
    assert abs(mu - BALL_TUBE[rho]) <= 4 * se


def test_tube_volume_independent_of_workers():
    K = bd.random_polytope(R, 60, seed=0)
    a = tb.tube_volume(K, bd.WholeBoundary(), 0.3, 150_000, seed=5, workers=1)
    b = tb.tube_volume(K, bd.WholeBoundary(), 0.3, 150_000, seed=5, workers=3)
    assert a == b


def test_tube_volume_changes_with_seed():
    K = bd.Ball(hc.origin(3), R)
    assert tb.tube_volume(K, bd.WholeBoundary(), 0.3, 70_000, 1) != tb.tube_volume(K, bd.WholeBoundary(), 0.3, 70_000, 2)


def test_polytope_bound_shortcut_matches_projection():
    K = bd.random_polytope(R, 80, seed=2)
    x = hc.sample_ball(hc.origin(3), R + 0.6, 20_000, np.random.default_rng(0))
    fast = tb.in_local_parallel(K, bd.WholeBoundary(), 0.4, x)
    pr = K.project(x)
    assert np.array_equal(fast, ~pr.inside & (pr.dist <= 0.4))


def test_rho_must_be_positive():
    with pytest.raises(ValueError):
        tb.in_local_parallel(bd.Ball(hc.origin(3), R), bd.WholeBoundary(), 0.0, hc.origin(3)[None])


# --- regions ----------------------------------------------------------------------


def test_chart_box_volume_by_monte_carlo():
    f = hc.HoroFrame.standard(3)
    box = tb.ChartBoxRegion(f, np.array([0.1, 0.0]), 0.3, -0.4, 0.2)
    # sample a ball containing the box and count membership
    ball = tb.BallRegion(hc.origin(3), 1.5)
    x = ball.sample(np.random.default_rng(0), 400_000)
    xi, z = hc.horo_unchart(f, x)
    inside = (np.linalg.norm(xi - box.center, axis=1) <= box.radius) & (z >= box.zeta_lo) & (z <= box.zeta_hi)
    p = inside.mean()
    est, se = ball.volume * p, ball.volume * np.sqrt(p * (1 - p) / len(x))
    assert abs(est - box.volume) <= 4 * se


def test_chart_box_samples_inside():
    f = hc.HoroFrame.standard(3)
    box = tb.ChartBoxRegion(f, np.array([0.1, 0.0]), 0.3, -0.4, 0.2)
    xi, z = hc.horo_unchart(f, box.sample(np.random.default_rng(1), 10_000))
    assert np.all(np.linalg.norm(xi - box.center, axis=1) <= 0.3 + 1e-12)
    assert np.all((z >= -0.4 - 1e-12) & (z <= 0.2 + 1e-12))


def test_chart_box_covers_tube():
    K = bd.HoroGraphBody(hc.HoroFrame.standard(3), hg.random_smooth(1))
    patch = bd.ChartDisc(K.frame, np.array([0.05, 0.0]), 0.2)
    rho = 0.8
    box = tb.bounding_region(K, patch, rho)
    # normal segments from densely sampled patch points fill the tube
    rng = np.random.default_rng(2)
    r, t = 0.2 * np.sqrt(rng.random(5000)), 2 * np.pi * rng.random(5000)
    xi = patch.center + np.stack([r * np.cos(t), r * np.sin(t)], 1)
    jet = K.u.jet(xi)
    q = hc.horo_chart(K.frame, xi, jet.value)
    x = hc.exp_map(q, hg.graph_normal(K.frame, jet), rng.uniform(0, rho, 5000))
    xb, zb = hc.horo_unchart(box.frame, x)
    assert np.all(np.linalg.norm(xb - box.center, axis=1) <= box.radius)
    assert np.all((zb >= box.zeta_lo) & (zb <= box.zeta_hi))


def test_tangent_frame_patch_region():
    K = bd.HoroGraphBody(hc.HoroFrame.standard(3), hg.random_smooth(5))
    rep = hg.tangent_reparam(K, np.array([0.05, -0.02]), eps=0.3)
    patch = bd.ChartDisc(rep.frame, np.zeros(2), 0.1)
    box = tb.bounding_region(K, patch, 0.5)
    assert isinstance(box, tb.ChartBoxRegion) and box.volume > 0


# --- Steiner fit -----------------------------------------------------------------------


def test_fit_recovers_exact_coefficients():
    fit = tb.steiner_fit(_exact_samples(tb.DEFAULT_RHOS))
    assert np.allclose(fit.coeffs, BALL_C, rtol=1e-10)
    assert fit.chi2_dof == pytest.approx(0.0, abs=1e-12)


def test_fit_covariance_matches_scatter():
    rhos = np.array(tb.DEFAULT_RHOS)
    base = _exact_samples(rhos, se_rel=0.01)
    rng = np.random.default_rng(3)
    draws = []
    for _ in range(400):
        mu = base.mu + base.se * rng.standard_normal(len(rhos))
        draws.append(tb.steiner_fit(tb.TubeSamples("b", "p", rhos, mu, base.se, base.n_samples, 0)).coeffs)
    emp = np.std(draws, axis=0)
    pred = tb.steiner_fit(base).stderr
    assert np.allclose(emp, pred, rtol=0.15)


def test_fit_density_delta_method():
    fit = tb.steiner_fit(_exact_samples(tb.DEFAULT_RHOS, 0.01))
    r, se = fit.density()
    assert r == pytest.approx(1 / np.sinh(R) ** 2, rel=1e-10)
    assert se > 0


def test_fit_rejects_too_few_rhos():
    with pytest.raises(tb.IllConditionedBasis):
        tb.steiner_fit(_exact_samples([0.1, 0.2]))


def test_fit_rejects_ill_conditioned_grid():
    with pytest.raises(tb.IllConditionedBasis):
        tb.steiner_fit(_exact_samples([1e-3, 1.1e-3, 1.2e-3]))


def test_condition_number_of_default_grid():
    assert np.linalg.cond(hc.tube_basis_matrix(3, tb.DEFAULT_RHOS)) < 200


def test_tube_samples_validation():
    with pytest.raises(ValueError):
        tb.TubeSamples("b", "p", np.array([0.2, 0.1, 0.3]), np.ones(3), np.ones(3), np.ones(3), 0)
    with pytest.raises(ValueError):
        tb.TubeSamples("b", "p", np.array([]), np.array([]), np.array([]), np.array([]), 0)


def test_tube_samples_csv():
    s = _exact_samples([0.1, 0.2, 0.3]).to_csv().splitlines()
    assert s[0] == "body_id,patch_id,rho,mu_hat,se,n_samples,seed"
    assert len(s) == 4 and s[1].startswith("ball,all,0.1,")


def test_monotone_violation_counter():
    t = tb.TubeSamples("b", "p", np.array([0.1, 0.2, 0.3]), np.array([1.0, 0.5, 2.0]),
                       np.array([0.01, 0.01, 0.01]), np.ones(3), 0)
    assert t.monotone_violations() == 1


# --- paired samples and convergence ---------------------------------------------------------


def test_paired_difference_of_identical_bodies_is_zero():
    K = bd.random_polytope(R, 40, seed=1)
    region = lambda r: tb.BallRegion(hc.origin(3), R + r + 1e-3)
    pt = tb.paired_tube_samples([K, K], bd.WholeBoundary(), [0.2, 0.4, 0.6], 50_000, 0, region)
    assert np.all(pt.diff_mu[1] == 0) and np.all(pt.diff_se[1] == 0)


def test_paired_samples_match_unpaired_estimates():
    B = bd.Ball(hc.origin(3), R)
    region = lambda r: tb.BallRegion(hc.origin(3), R + r + 1e-3)
    pt = tb.paired_tube_samples([B], bd.WholeBoundary(), [0.3], 200_000, 0, region)
    assert abs(pt.samples[0].mu[0] - BALL_TUBE[0.3]) <= 4 * pt.samples[0].se[0]


def test_paired_variance_smaller_than_unpaired():
    B = bd.Ball(hc.origin(3), R)
    K = bd.random_polytope(R, 400, seed=0)
    region = lambda r: tb.BallRegion(hc.origin(3), R + r + 1e-3)
    pt = tb.paired_tube_samples([B, K], bd.WholeBoundary(), [0.5], 100_000, 0, region)
    unpaired = np.hypot(pt.samples[0].se, pt.samples[1].se)
    assert pt.diff_se[1][0] < 0.5 * unpaired[0]


@pytest.mark.parametrize("vals, ses, want", [
    ([5, 4, 3, 2], [0.1] * 4, True),
    ([5, 4, 4.1, 2], [0.1] * 4, True),        # one inversion inside error bars
    ([5, 4.1, 4.2, 4.3], [0.1] * 4, False),   # two inversions
    ([5, 4, 6, 2], [0.1] * 4, False),         # inversion outside error bars
])
def test_decreasing_with_tolerance(vals, ses, want):
    assert tb.decreasing_with_tolerance(vals, ses) is want


@given(st.floats(0.05, 2.0), st.floats(0.05, 1.5))
@settings(max_examples=40, deadline=None)
def test_ball_measures_expand_sphere_area(Rb, x):
    # sum_k C_k sinh^k cosh^(2-k) evaluated at x is the area of the sphere of radius R + x
    C = tb.ball_measures(3, Rb)
    val = C @ np.array([np.cosh(x) ** 2, np.sinh(x) * np.cosh(x), np.sinh(x) ** 2])
    assert val == pytest.approx(4 * np.pi * np.sinh(Rb + x) ** 2, rel=1e-12)
