"""Monte Carlo tube volumes and Steiner-coefficient extraction.

The local parallel set M_rho(K, beta) holds the points outside K within
distance rho whose nearest point lies in the patch beta.  Its volume expands
as sum_k C_k b_k(rho) with b_k(rho) = int_0^rho sinh^k cosh^(n-1-k); the
coefficients C_k(K, beta) are recovered by weighted least squares over a rho grid.

Sampling is split into fixed-size chunks, each with its own generator seeded
from (seed, rho bits, chunk index).  Hit counts are integers, so estimates
do not depend on the number of workers or on reduction order.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import stats

from . import bodies as bd
from . import horograph as hg
from . import hypcore as hc
from .config import DEFAULT, Tolerances

CHUNK = 1 << 16
DEFAULT_RHOS = tuple(np.linspace(0.1, 1.0, 8))


# ---------------------------------------------------------------------------
# sampling regions


@dataclass(frozen=True, eq=False)
class BallRegion:
    center: np.ndarray
    r_out: float
    r_in: float = 0.0

    @property
    def n(self):
        return self.center.shape[-1] - 1

    @property
    def volume(self) -> float:
        n = self.n
        return float(hc.sphere_area(n - 1) * (hc.tube_basis_eval(n, n - 1, self.r_out)
                                             - hc.tube_basis_eval(n, n - 1, self.r_in)))

    def sample(self, rng, size):
        return hc.sample_ball(self.center, self.r_out, size, rng, self.r_in)


@dataclass(frozen=True, eq=False)
class ChartBoxRegion:
    """{chart(xi, zeta): |xi - center| <= radius, zeta_lo <= zeta <= zeta_hi} (n = 3)."""

    frame: hc.HoroFrame
    center: np.ndarray
    radius: float
    zeta_lo: float
    zeta_hi: float

    @property
    def volume(self) -> float:
        # volume form e^{2 zeta} dxi dzeta
        return float(np.pi * self.radius ** 2 * 0.5 * (np.exp(2 * self.zeta_hi) - np.exp(2 * self.zeta_lo)))

    def sample(self, rng, size):
        r = self.radius * np.sqrt(rng.random(size))
        t = 2 * np.pi * rng.random(size)
        xi = np.asarray(self.center) + np.stack([r * np.cos(t), r * np.sin(t)], -1)
        a, b = np.exp(2 * self.zeta_lo), np.exp(2 * self.zeta_hi)
        z = 0.5 * np.log(a + rng.random(size) * (b - a))
        return hc.horo_chart(self.frame, xi, z)


Region = Union[BallRegion, ChartBoxRegion]


def _max_dist_from(c, pts):
    return float(np.max(hc.dist(c, pts)))


def patch_surface_samples(K, patch: bd.ChartDisc, m: int = 41):
    """Boundary points and outward normals over a grid covering a chart-disc patch."""
    fr = patch.frame
    g = np.linspace(-1, 1, m)
    X, Y = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], -1)
    pts = pts[np.linalg.norm(pts, axis=1) <= 1.0]
    t = np.linspace(0, 2 * np.pi, 4 * m, endpoint=False)
    pts = np.concatenate([pts, np.stack([np.cos(t), np.sin(t)], -1)])
    xi = np.asarray(patch.center) + patch.radius * pts
    if isinstance(K, bd.HoroGraphBody):
        if fr is K.frame:
            jet = K.u.jet(xi)
            return hc.horo_chart(fr, xi, jet.value), hg.graph_normal(fr, jet)
        z = hg.vertical_crossing(fr, K.frame, K.u, xi, -0.5, 0.5)
        if np.any(~np.isfinite(z)):
            raise ValueError("chart-disc patch leaves the graph")
        q = hc.horo_chart(fr, xi, z)
        return q, K.outward_normal(q)
    if isinstance(K, bd.Ball):
        lo = np.full(len(xi), -20.0)
        hi = np.full(len(xi), 20.0)
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            inside = K.signed_gap(hc.horo_chart(fr, xi, mid)) >= 0
            # the facing sheet is the upper crossing; below it the vertical line is inside
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        q = hc.horo_chart(fr, xi, 0.5 * (lo + hi))
        if np.any(np.abs(K.signed_gap(q)) > 1e-9):
            raise ValueError("chart-disc patch misses the ball")
        return q, K.outward_normal(q)
    raise NotImplementedError("chart-disc patches are defined for balls and horograph bodies")


def bounding_region(K, patch, rho: float, margin: float = 1e-3) -> Region:
    """A region containing M_rho(K, patch) with exactly known volume."""
    if isinstance(K, bd.Ball):
        if isinstance(patch, bd.ChartDisc):
            return _box_region(K, patch, rho)
        return BallRegion(K.center, K.radius + rho + margin)
    if isinstance(K, bd.PolytopeHull):
        c = K.interior_point()
        return BallRegion(c, _max_dist_from(c, K.vertices) + rho + margin)
    if isinstance(K, bd.HoroGraphBody):
        if isinstance(patch, bd.ChartDisc):
            return _box_region(K, patch, rho)
        c = K.interior_point()
        R = K.u.domain_radius
        t = np.linspace(0, 2 * np.pi, 256, endpoint=False)
        rim = R * np.stack([np.cos(t), np.sin(t)], -1)
        zc = -0.5 * np.log(K.cap ** 2 - R * R)
        pts = np.concatenate([hc.horo_chart(K.frame, rim, K.u(rim)), hc.horo_chart(K.frame, rim, np.full(256, zc)),
                              hc.horo_chart(K.frame, np.zeros((1, 2)), np.array([-np.log(K.cap)]))])
        # the farthest point of K from c is an extreme point on these rims; the
        # graph rim is sampled, so pad by its sampling gap
        gap = 2 * np.pi * R / 256 * np.exp(float(np.max(K.u(rim))))
        return BallRegion(c, _max_dist_from(c, pts) + gap + rho + margin)
    raise TypeError(f"unsupported body {type(K).__name__}")


def _box_region(K, patch: bd.ChartDisc, rho: float) -> ChartBoxRegion:
    fr = patch.frame
    q, nu = patch_surface_samples(K, patch)
    ts = np.linspace(0, rho, 9)
    rays = hc.exp_map(q[None], nu[None], ts[:, None])
    xi, z = hc.horo_unchart(fr, rays)
    xq, zq = hc.horo_unchart(fr, q)
    rad = float(np.max(np.linalg.norm(xi - np.asarray(patch.center), axis=-1)))
    # zeta is convex along geodesics and increasing at t = 0 on the facing sheet,
    # so the tube lies above min zeta(q) and below max zeta(q) + rho
    return ChartBoxRegion(fr, np.asarray(patch.center, dtype=float), 1.05 * rad + 0.02 * rho,
                          float(zq.min()) - 1e-3, float(zq.max()) + rho + 1e-3)


# ---------------------------------------------------------------------------
# membership and counting


def in_local_parallel(K, patch, rho: float, x):
    """x outside K, d(x, K) <= rho, and the nearest point lies in the patch."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    if isinstance(K, bd.PolytopeHull) and isinstance(patch, bd.WholeBoundary):
        # decide by cheap bounds where possible; project only the undecided shell
        lo, hi = K.dist_bounds(x)
        hit = (lo > 0) & (hi <= rho)
        und = np.flatnonzero((lo > 0) & (lo <= rho) & (hi > rho))
        if len(und):
            pr = K.project(x[und])
            hit[und] = ~pr.inside & (pr.dist <= rho)
        return hit
    pr = K.project(x)
    hit = ~pr.inside & (pr.dist <= rho)
    if np.any(hit) and not isinstance(patch, bd.WholeBoundary):
        hit[hit] = patch.contains(pr.foot[hit], pr.normal[hit])
    return hit


def _rho_key(rho: float):
    b = np.float64(rho).view(np.uint64)
    return [int(b >> np.uint64(32)), int(b & np.uint64(0xFFFFFFFF))]


def _chunk_rng(seed: int, rho: float, chunk: int):
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *_rho_key(rho), chunk]))


def _chunks(n_samples: int):
    return [(i, min(CHUNK, n_samples - i * CHUNK)) for i in range((n_samples + CHUNK - 1) // CHUNK)]


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def tube_volume(K, patch, rho: float, n_samples: int, seed: int, workers: int = 1,
                region: Optional[Region] = None):
    """Unbiased estimate (mu_hat, se) of the volume of M_rho(K, patch)."""
    n_samples = int(n_samples)
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    region = bounding_region(K, patch, rho) if region is None else region

    def work(item):
        ci, size = item
        x = region.sample(_chunk_rng(seed, rho, ci), size)
        return int(np.count_nonzero(in_local_parallel(K, patch, rho, x)))

    hits = sum(_map(work, _chunks(n_samples), workers))
    V = region.volume
    p = hits / n_samples
    return V * p, V * np.sqrt(p * (1 - p) / n_samples)


@dataclass(frozen=True, eq=False)
class TubeSamples:
    body_id: str
    patch_id: str
    rhos: np.ndarray
    mu: np.ndarray
    se: np.ndarray
    n_samples: np.ndarray
    seed: int
    n: int = 3

    def __post_init__(self):
        r = np.asarray(self.rhos, dtype=float)
        if len(r) == 0 or np.any(np.diff(r) <= 0):
            raise ValueError("rho grid must be non-empty and strictly increasing")
        if np.any(np.asarray(self.mu) < 0):
            raise ValueError("tube volumes must be non-negative")

    def monotone_violations(self) -> int:
        mu, se = np.asarray(self.mu), np.asarray(self.se)
        drops = mu[:-1] - mu[1:]
        return int(np.sum(drops > 2 * np.hypot(se[:-1], se[1:])))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["body_id", "patch_id", "rho", "mu_hat", "se", "n_samples", "seed"])
        for r, m, s, k in zip(self.rhos, self.mu, self.se, self.n_samples):
            w.writerow([self.body_id, self.patch_id, repr(float(r)), repr(float(m)), repr(float(s)), int(k), self.seed])
        return buf.getvalue()


def tube_samples(K, patch, rhos: Sequence[float] = DEFAULT_RHOS, n_samples: int = 1_000_000, seed: int = 0,
                 workers: int = 1, region_fn: Optional[Callable[[float], Region]] = None,
                 body_id: str = "K", patch_id: str = "all") -> TubeSamples:
    rhos = np.asarray(rhos, dtype=float)
    mu, se = [], []
    for r in rhos:
        reg = region_fn(r) if region_fn else None
        m, s = tube_volume(K, patch, float(r), n_samples, seed, workers, reg)
        mu.append(m)
        se.append(s)
    return TubeSamples(body_id, patch_id, rhos, np.array(mu), np.array(se),
                       np.full(len(rhos), n_samples), seed, K.n)


@dataclass(frozen=True, eq=False)
class PairedTubes:
    """Tube volumes of several bodies on common samples, with paired differences."""

    samples: list            # TubeSamples per body
    diff_mu: np.ndarray      # (bodies, rhos): mu_j - mu_ref
    diff_se: np.ndarray


def paired_tube_samples(bodies: Sequence, patch, rhos, n_samples: int, seed: int,
                        region_fn: Callable[[float], Region], workers: int = 1,
                        body_ids: Optional[Sequence[str]] = None, reference: int = 0) -> PairedTubes:
    """Common-random-number estimates: every body sees the same sample points.

    The paired difference mu_j - mu_ref has variance set by the symmetric
    difference of the two tubes only, which is what makes convergence trends
    resolvable at fine refinement levels.
    """
    rhos = np.asarray(rhos, dtype=float)
    nb = len(bodies)
    hits = np.zeros((nb, len(rhos)), np.int64)
    plus = np.zeros((nb, len(rhos)), np.int64)
    minus = np.zeros((nb, len(rhos)), np.int64)
    vols = np.zeros(len(rhos))
    for k, r in enumerate(rhos):
        reg = region_fn(float(r))
        vols[k] = reg.volume

        def work(item, r=float(r), reg=reg):
            ci, size = item
            x = reg.sample(_chunk_rng(seed, r, ci), size)
            I = np.stack([in_local_parallel(B, patch, r, x) for B in bodies])
            ref = I[reference]
            return I.sum(1), (I & ~ref).sum(1), (~I & ref).sum(1)

        for h, p_, m_ in _map(work, _chunks(n_samples), workers):
            hits[:, k] += h
            plus[:, k] += p_
            minus[:, k] += m_
    N = n_samples
    p = hits / N
    mu = vols * p
    se = vols * np.sqrt(p * (1 - p) / N)
    dm = (plus - minus) / N
    var = ((plus + minus) / N - dm ** 2) / N
    ids = body_ids or [f"K{j}" for j in range(nb)]
    samples = [TubeSamples(ids[j], "all", rhos, mu[j], se[j], np.full(len(rhos), N), seed, bodies[j].n)
               for j in range(nb)]
    return PairedTubes(samples, vols * dm, vols * np.sqrt(np.maximum(var, 0.0)))


# ---------------------------------------------------------------------------
# Steiner fit


class IllConditionedBasis(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CurvatureMeasures:
    coeffs: np.ndarray
    cov: np.ndarray
    condition: float
    chi2_dof: float
    residual_norm: float
    misfit: bool

    @property
    def stderr(self):
        return np.sqrt(np.diag(self.cov))

    def gauss_defect(self):
        """(C_2 - C_0, standard error) for n = 3."""
        a = np.array([-1.0, 0.0, 1.0])
        return float(a @ self.coeffs), float(np.sqrt(a @ self.cov @ a))

    def density(self):
        """((C_2 - C_0)/C_0, delta-method standard error) for n = 3."""
        c0, c2 = self.coeffs[0], self.coeffs[2]
        r = (c2 - c0) / c0
        g = np.array([-c2 / c0 ** 2, 0.0, 1.0 / c0])
        return float(r), float(np.sqrt(g @ self.cov @ g))

    def to_dict(self):
        return {"coefficients": self.coeffs.tolist(), "covariance": self.cov.tolist(),
                "condition_number": self.condition, "chi2_dof": self.chi2_dof,
                "residual_norm": self.residual_norm, "misfit": self.misfit}


def steiner_fit(samples: TubeSamples, tol: Tolerances = DEFAULT) -> CurvatureMeasures:
    """Weighted least squares of mu_hat(rho_i) on the tube basis b_0..b_{n-1}."""
    n = samples.n
    rhos = np.asarray(samples.rhos, dtype=float)
    if len(np.unique(rhos)) < n:
        raise IllConditionedBasis(f"need at least {n} distinct rho values")
    B = hc.tube_basis_matrix(n, rhos)
    cond = float(np.linalg.cond(B))
    if cond >= tol.basis_condition_max:
        raise IllConditionedBasis(f"basis condition number {cond:.3g} exceeds {tol.basis_condition_max:.3g}")
    mu = np.asarray(samples.mu, dtype=float)
    se = np.asarray(samples.se, dtype=float)
    weighted = bool(np.all(se > 0))
    w = 1.0 / se if weighted else np.ones_like(mu)
    A = B * w[:, None]
    coef, *_ = np.linalg.lstsq(A, mu * w, rcond=None)
    resid = mu - B @ coef
    dof = len(mu) - n
    if weighted:
        cov = np.linalg.inv(A.T @ A)
        chi2 = float(np.sum((resid * w) ** 2) / dof) if dof > 0 else float("nan")
    else:
        cov = np.zeros((n, n))
        chi2 = float("nan")
    return CurvatureMeasures(coef, cov, cond, chi2, float(np.linalg.norm(resid)),
                             bool(weighted and dof > 0 and chi2 > tol.chi2_flag))


def fit_difference(diff_mu, diff_se, rhos, n: int = 3) -> CurvatureMeasures:
    """Steiner fit of signed paired tube-volume differences."""
    return _fit_signed(diff_mu, diff_se, rhos, n)


def _fit_signed(mu, se, rhos, n):
    B = hc.tube_basis_matrix(n, np.asarray(rhos))
    w = 1.0 / np.asarray(se)
    A = B * w[:, None]
    coef, *_ = np.linalg.lstsq(A, np.asarray(mu) * w, rcond=None)
    cov = np.linalg.inv(A.T @ A)
    resid = np.asarray(mu) - B @ coef
    dof = len(mu) - n
    chi2 = float(np.sum((resid * w) ** 2) / dof) if dof > 0 else float("nan")
    return CurvatureMeasures(coef, cov, float(np.linalg.cond(B)), chi2, float(np.linalg.norm(resid)), chi2 > 4.0)


def ball_measures(n: int, R: float) -> np.ndarray:
    """Exact C_k of a ball: expand area(S_{R+x}) = |S^{n-1}| sinh^{n-1}(R+x) in the basis."""
    from math import comb
    c = np.array([comb(n - 1, k) * np.sinh(R) ** (n - 1 - k) * np.cosh(R) ** k for k in range(n)])
    return hc.sphere_area(n - 1) * c


# ---------------------------------------------------------------------------
# Hausdorff convergence


@dataclass(frozen=True, eq=False)
class ConvergenceRow:
    j: int
    hausdorff_lower: float
    hausdorff_upper: float
    coeffs: np.ndarray
    err: np.ndarray          # C_k(K_j) - C_k(target) from paired samples
    err_se: np.ndarray
    rel_err_exact: np.ndarray  # relative to exact target values when known


@dataclass(frozen=True, eq=False)
class ConvergenceTable:
    rows: list
    spearman: np.ndarray     # per k, Spearman correlation of |err| with j
    decreasing: np.ndarray   # per k, strictly decreasing allowing one inversion within error bars
    mu_last_vs_target: tuple  # (difference, combined se) at the largest j and largest rho

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = len(self.rows[0].coeffs)
        w.writerow(["j", "hausdorff_lower", "hausdorff_upper"] + [f"C{k}" for k in range(n)]
                   + [f"err{k}" for k in range(n)] + [f"err_se{k}" for k in range(n)]
                   + [f"rel_err{k}" for k in range(n)])
        for r in self.rows:
            w.writerow([r.j, repr(r.hausdorff_lower), repr(r.hausdorff_upper)]
                       + [repr(float(v)) for v in (*r.coeffs, *r.err, *r.err_se, *r.rel_err_exact)])
        return buf.getvalue()


def decreasing_with_tolerance(vals, ses, allowed_inversions: int = 1) -> bool:
    """Strictly decreasing, except for at most one step that rises within 2 combined standard errors."""
    bad = 0
    for i in range(len(vals) - 1):
        if vals[i + 1] < vals[i]:
            continue
        if vals[i + 1] - vals[i] <= 2 * np.hypot(ses[i], ses[i + 1]):
            bad += 1
        else:
            return False
    return bad <= allowed_inversions


def convergence_experiment(target, builder: Callable[[int], object], j_grid: Sequence[int], patch,
                           rhos, n_samples: int, seed: int, region_fn: Callable[[float], Region],
                           exact_target: Optional[np.ndarray] = None, workers: int = 1,
                           n_dirs: int = 4000) -> ConvergenceTable:
    """C_k(K_j) against C_k(target) on common random numbers."""
    bodies = [target] + [builder(j) for j in j_grid]
    pt = paired_tube_samples(bodies, patch, rhos, n_samples, seed, region_fn, workers,
                             ["target"] + [f"j{j}" for j in j_grid])
    fit_t = steiner_fit(pt.samples[0])
    ref = fit_t.coeffs if exact_target is None else np.asarray(exact_target)
    rows = []
    for i, j in enumerate(j_grid, start=1):
        hb = bd.hausdorff_distance(bodies[i], target, n_dirs=n_dirs, seed=seed)
        fj = steiner_fit(pt.samples[i])
        dfit = _fit_signed(pt.diff_mu[i], np.maximum(pt.diff_se[i], 1e-300), rhos, target.n)
        rows.append(ConvergenceRow(int(j), hb.lower, hb.upper, fj.coeffs, dfit.coeffs, dfit.stderr,
                                   (fj.coeffs - ref) / ref))
    errs = np.array([np.abs(r.err) for r in rows])
    ses = np.array([r.err_se for r in rows])
    js = np.asarray(j_grid)
    sp = np.array([stats.spearmanr(js, errs[:, k]).statistic for k in range(errs.shape[1])])
    dec = np.array([decreasing_with_tolerance(errs[:, k], ses[:, k]) for k in range(errs.shape[1])])
    last = (float(pt.diff_mu[-1, -1]), float(pt.diff_se[-1, -1]))
    return ConvergenceTable(rows, sp, dec, last)
