"""Convex bodies in H^n: geodesic balls, polytopes, horograph bodies.

Each body offers membership, nearest-point projection (foot, outward unit
normal, distance) and an interior point.  Boundary patches select the
feet that count toward a local parallel set.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np
from scipy import optimize, spatial

from . import horograph as hg
from . import hypcore as hc
from .config import DEFAULT, Tolerances


class ProjectionFailure(RuntimeError):
    pass


class Projection(NamedTuple):
    foot: np.ndarray       # (..., n+1)
    normal: np.ndarray     # (..., n+1) outward unit normal at foot; zeros where inside
    dist: np.ndarray       # (...)
    inside: np.ndarray     # (...) bool


def _finish(x, foot, inside):
    d = np.where(inside, 0.0, hc.dist(foot, x))
    nrm = np.zeros_like(x)
    out = ~inside
    if np.any(out):
        nrm[out] = hc.log_map(foot[out], x[out]).vec
    return Projection(foot, nrm, d, inside)


# ---------------------------------------------------------------------------
# balls


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")
        object.__setattr__(self, "center", hc.make_point(self.center, Tolerances(hyperboloid=1e-9)))

    @property
    def n(self) -> int:
        return self.center.shape[-1] - 1

    def interior_point(self):
        return self.center.copy()

    def contains(self, x, tol: float = DEFAULT.membership):
        return hc.dist(self.center, x) <= self.radius + tol

    def project(self, x) -> Projection:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        v, d, _ = hc.log_map(self.center, x)
        inside = d <= self.radius
        foot = np.where(inside[:, None], x, hc.exp_map(self.center, v, self.radius))
        return _finish(x, foot, inside)

    def outward_normal(self, q):
        return _transport_radial(self.center, q)

    def signed_gap(self, x):
        return self.radius - hc.dist(self.center, x)

    def to_dict(self):
        return {"type": "ball", "center": self.center.tolist(), "radius": self.radius}


def _transport_radial(c, q):
    """Unit tangent at q pointing away from c."""
    v = hc.log_map(q, c).vec
    return -v


# ---------------------------------------------------------------------------
# polytopes


def _barycentric(tri, p):
    """Coefficients of p in the span of the rows of tri (Minkowski Gram system)."""
    TJ = tri.copy()
    TJ[..., 0] *= -1
    G = np.einsum("pia,pja->pij", TJ, tri)
    r = np.einsum("pia,pa->pi", TJ, p)
    return np.linalg.solve(G, r[..., None])[..., 0]


def _edge_nearest(X, A, B):
    """Nearest point to X on geodesic segments [A, B]; returns (cosh dist, foot)."""
    a = hc.mdot(X, A)
    b = hc.mdot(X, B)
    g = hc.mdot(A, B)
    # maximize -<X, sA + tB>/|sA + tB| over s, t >= 0: stationary point solves the 2x2 Gram system
    # Minkowski projection of X onto span{A, B}; g = <A, B> <= -1
    det = g * g - 1.0
    det = np.where(det > 0, det, np.inf)
    s_ = (a + g * b) / det
    t_ = (b + g * a) / det
    w = s_[:, None] * A + t_[:, None] * B
    interior = (s_ >= 0) & (t_ >= 0)
    q = -hc.mdot(w, w)
    interior &= q > 0
    ca, cb = -a, -b
    end_foot = np.where((ca <= cb)[:, None], A, B)
    end_cosh = np.minimum(ca, cb)
    wn = np.sqrt(np.where(interior, q, 1.0))
    cosh = np.where(interior, -hc.mdot(X, w) / wn, end_cosh)
    foot = np.where(interior[:, None], w / wn[:, None], end_foot)
    return cosh, foot


def _msolve_simplex(X, S):
    """Nearest points of the hyperbolic simplices spanned by rows of S to X.

    X: (P, n+1), S: (P, k, n+1).  Returns cosh of the distance and the foot.
    The affine-hull candidate w = c S with c = G^{-1} r (G the Minkowski Gram
    matrix of the vertices, r_i = <x, v_i>) is the nearest point of the cone
    hull when c >= 0; otherwise the minimum is attained on a proper face.
    """
    P, k, _ = S.shape
    if k == 1:
        w = S[:, 0]
        return -hc.mdot(X, w), w
    SJ = S.copy()
    SJ[..., 0] *= -1
    G = np.einsum("pia,pja->pij", SJ, S)
    r = np.einsum("pia,pa->pi", SJ, X)
    try:
        c = np.linalg.solve(G, r[..., None])[..., 0]
    except np.linalg.LinAlgError:
        c = np.full((P, k), -1.0)
    ok = np.all(c >= -1e-13, axis=1) & np.all(np.isfinite(c), axis=1)
    best_cosh = np.full(P, np.inf)
    best_foot = np.zeros((P, S.shape[2]))
    if np.any(ok):
        w = np.einsum("pi,pia->pa", np.maximum(c[ok], 0.0), S[ok])
        q = -hc.mdot(w, w)
        good = q > 0
        idx = np.flatnonzero(ok)[good]
        nw = np.sqrt(q[good])
        best_cosh[idx] = nw
        best_foot[idx] = w[good] / nw[:, None]
    rest = np.flatnonzero(~np.isfinite(best_cosh))
    if len(rest):
        Xr, Sr = X[rest], S[rest]
        subs = []
        for drop in range(k):
            keep = [i for i in range(k) if i != drop]
            subs.append(_msolve_simplex(Xr, Sr[:, keep]))
        cs = np.stack([s[0] for s in subs])
        fs = np.stack([s[1] for s in subs])
        j = np.argmin(cs, axis=0)
        best_cosh[rest] = cs[j, np.arange(len(rest))]
        best_foot[rest] = fs[j, np.arange(len(rest))]
    return best_cosh, best_foot


@dataclass(frozen=True, eq=False)
class PolytopeHull:
    """Convex hull of finitely many points, all of which must be extreme.

    Facets come from the Euclidean hull of the Beltrami-Klein images
    x[1:] / x[0], which maps geodesic convexity to linear convexity.
    """

    vertices: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float)
        V = hc.make_point(V, Tolerances(hyperboloid=1e-9))
        n = V.shape[1] - 1
        if V.shape[0] < n + 1 or np.linalg.matrix_rank(V, tol=1e-10) < n + 1:
            raise ValueError("degenerate polytope: vertices do not span H^n")
        k = V[:, 1:] / V[:, :1]
        hull = spatial.ConvexHull(k)
        extreme = set(hull.vertices.tolist())
        if len(extreme) != len(V):
            bad = sorted(set(range(len(V))) - extreme)
            raise ValueError(f"non-extreme vertices: indices {bad}")
        a, b = hull.equations[:, :-1], hull.equations[:, -1]
        N = np.concatenate([-b[:, None], a], axis=1) / np.sqrt(1.0 - b ** 2)[:, None]
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "facets", hull.simplices.copy())
        object.__setattr__(self, "facet_normals", N)   # spacelike unit, <N, x> <= 0 on K
        object.__setattr__(self, "_klein", k)
        simp = hull.simplices
        d = simp.shape[1]
        edges = np.stack([simp[:, [i, (i + 1) % d]] for i in range(d)], axis=1) if d == 3 else \
            np.stack([simp[:, [i, j]] for i in range(d) for j in range(i + 1, d)], axis=1)
        object.__setattr__(self, "_facet_edges", edges)

    @property
    def n(self) -> int:
        return self.vertices.shape[1] - 1

    def interior_point(self):
        return hc.normalize_point(self.vertices.mean(axis=0))

    def facet_values(self, x):
        NJ = self.facet_normals.copy()
        NJ[:, 0] *= -1
        return np.asarray(x, dtype=float) @ NJ.T

    def contains(self, x, tol: float = DEFAULT.membership):
        return np.max(self.facet_values(x), axis=-1) <= tol

    def signed_gap(self, x):
        return -np.max(self.facet_values(x), axis=-1)

    def project(self, x, max_dist: Optional[float] = None, chunk: int = 20_000) -> Projection:
        """Exact nearest points.

        If the foot lies inside a facet, that facet maximizes the plane
        distance asinh <x, N_f>, so the plane foot on the argmax facet is tried
        first.  Otherwise the foot lies on an edge or vertex of a visible
        facet, and the minimum over those edges is exact.  With ``max_dist``,
        points whose plane-distance lower bound exceeds it get dist = inf.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        feet = x.copy()
        s = self.facet_values(x)
        smax = np.max(s, axis=1)
        inside = smax <= 0.0
        far = np.zeros(len(x), bool)
        if max_dist is not None:
            far = np.arcsinh(np.maximum(smax, 0.0)) > max_dist
        out = np.flatnonzero(~inside & ~far)
        for start in range(0, len(out), chunk):
            idx = out[start:start + chunk]
            feet[idx] = self._project_outside(x[idx], s[idx])
        res = _finish(x, np.where(far[:, None], x, feet), inside | far)
        if np.any(far):
            d = res.dist.copy()
            d[far] = np.inf
            inside_flag = res.inside.copy()
            inside_flag[far] = False
            res = Projection(res.foot, res.normal, d, inside_flag)
        return res

    def dist_bounds(self, x):
        """(lower, upper) bounds on d(x, K): plane distance and nearest-vertex distance."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        smax = np.max(self.facet_values(x), axis=1)
        lo = np.arcsinh(np.maximum(smax, 0.0))
        VJ = self.vertices * np.r_[-1.0, np.ones(self.n)]
        hi = np.arccosh(np.maximum(np.min(-(x @ VJ.T), axis=1), 1.0))
        return lo, hi

    def _project_outside(self, X, S):
        N = self.facet_normals
        V = self.vertices
        f1 = np.argmax(S, axis=1)
        n1 = N[f1]
        foot = X - S[np.arange(len(X)), f1][:, None] * n1
        foot = foot / np.sqrt(-hc.mdot(foot, foot))[:, None]
        # barycentric test: the plane foot must lie on the K side of the facet's neighbours
        tri = V[self.facets[f1]]                                  # (P, n, n+1)
        lam = _barycentric(tri, foot)
        ok = np.all(lam >= -1e-13, axis=1)
        rest = np.flatnonzero(~ok)
        if len(rest):
            # a facet can hold the foot only if its plane distance is at most
            # the distance to the nearest vertex
            ub = np.min(-(X[rest] @ (V * np.r_[-1.0, np.ones(V.shape[1] - 1)]).T), axis=1)
            sub = np.sqrt(np.maximum(ub ** 2 - 1.0, 0.0))        # sinh of the vertex bound
            Sr = S[rest]
            pi, fi = np.nonzero((Sr > 0) & (Sr <= sub[:, None] * (1 + 1e-12) + 1e-15))
            E = self._facet_edges[fi]                               # (Q, n, 2)
            k = E.shape[1]
            pp = np.repeat(pi, k)
            ee = E.reshape(-1, 2)
            cosh, f = _edge_nearest(X[rest][pp], V[ee[:, 0]], V[ee[:, 1]])
            order = np.lexsort((cosh, pp))
            first = np.r_[True, pp[order][1:] != pp[order][:-1]]
            sel = order[first]
            foot[rest[pp[sel]]] = f[sel]
        return foot

    def project_fw(self, x, tol: Tolerances = DEFAULT) -> Projection:
        """Pairwise conditional gradient on the vertex simplex (reference solver).

        Minimizes f(lam) = -<x, w>/sqrt(-<w, w>), w = sum lam_i v_i, whose value
        at the optimum is cosh of the distance.  Each step moves mass from the
        worst active vertex to the best vertex with an exact line search.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        V = self.vertices
        J = hc.minkowski_metric(self.n)
        Q = -(V @ J @ V.T)
        feet = np.empty_like(x)
        inside = self.contains(x, 0.0)
        for t, xt in enumerate(x):
            if inside[t]:
                feet[t] = xt
                continue
            c = -(V @ J @ xt)
            lam = np.zeros(len(V))
            lam[np.argmin(c)] = 1.0
            for it in range(tol.projection_max_iter):
                a = lam @ c
                Ql = Q @ lam
                q = lam @ Ql
                g = c / np.sqrt(q) - a * Ql / q ** 1.5
                s = int(np.argmin(g))
                act = np.flatnonzero(lam > 0)
                aw = act[np.argmax(g[act])]
                if g @ lam - g[s] <= tol.projection:
                    break
                d = np.zeros(len(V))
                d[s] += 1.0
                d[aw] -= 1.0
                tmax = lam[aw]
                a1 = d @ c
                q1 = d @ Ql
                q2 = d @ Q @ d
                den = a1 * q1 - a * q2
                step = tmax if den == 0 else (a * q1 - a1 * q) / den
                if not np.isfinite(step) or step <= 0 or step > tmax:
                    ts = np.array([0.0, tmax])
                    fv = (a + a1 * ts) / np.sqrt(q + 2 * q1 * ts + q2 * ts ** 2)
                    step = ts[np.argmin(fv)]
                lam = lam + step * d
                lam[aw] = max(lam[aw], 0.0) if step < tmax else 0.0
            else:
                raise ProjectionFailure("conditional gradient did not reach the duality-gap tolerance")
            feet[t] = hc.normalize_point(lam @ V)
        return _finish(x, feet, inside)

    def to_dict(self):
        return {"type": "polytope", "vertices": self.vertices.tolist()}


def random_polytope(R: float, m: int, seed: int, n: int = 3, center=None, max_tries: int = 10) -> PolytopeHull:
    """Hull of m points drawn uniformly on the sphere of radius R."""
    c = hc.origin(n) if center is None else hc.make_point(center)
    L = hc.boost(c)
    for attempt in range(max_tries):
        rng = np.random.default_rng([seed, attempt])
        d = hc.random_directions(rng, m, n)
        pts = np.concatenate([np.full((m, 1), np.cosh(R)), np.sinh(R) * d], axis=1) @ L.T
        try:
            return PolytopeHull(pts)
        except (ValueError, spatial.QhullError):
            continue
    raise ValueError("could not draw a non-degenerate polytope")


# ---------------------------------------------------------------------------
# horograph bodies


@dataclass(frozen=True, eq=False)
class HoroGraphBody:
    """Compact convex body bounded by the graph of a horoconvex u.

    K = {chart(xi, zeta): |xi| <= domain radius, zeta <= u(xi), |xi|^2 + e^{-2 zeta} <= cap^2}.
    The cap is a totally geodesic hemisphere below the graph, the wall is
    the vertical cylinder over the domain circle.
    """

    frame: hc.HoroFrame
    u: hg.HoroconvexFn
    cap: Optional[float] = None

    def __post_init__(self):
        R = self.u.domain_radius
        t = np.linspace(0, 2 * np.pi, 64, endpoint=False)
        ring = np.concatenate([[[0.0, 0.0]]] + [r * np.stack([np.cos(t), np.sin(t)], 1)
                                                for r in np.linspace(0.1, 1.0, 10) * R])
        hmax = float(self.u.h(ring).max())
        cap = np.sqrt(hmax) * np.e if self.cap is None else float(self.cap)
        if cap ** 2 <= hmax:
            raise ValueError("cap must lie strictly below the graph")
        object.__setattr__(self, "cap", cap)

    @property
    def n(self) -> int:
        return self.frame.n

    def interior_point(self):
        z = -np.log(0.5 * (np.sqrt(float(self.u.h(np.zeros(2)))) + self.cap))
        return hc.horo_chart(self.frame, np.zeros(self.n - 1), z)

    def _parts(self, x):
        xi, z = hc.horo_unchart(self.frame, x)
        r = np.linalg.norm(xi, axis=-1)
        in_disc = r <= self.u.domain_radius
        uval = np.full(r.shape, np.inf)
        if np.any(in_disc):
            uval[in_disc] = self.u(xi[in_disc])
        return xi, z, r, in_disc, uval

    def contains(self, x, tol: float = DEFAULT.membership):
        xi, z, r, in_disc, uval = self._parts(x)
        cap_ok = r ** 2 + np.exp(-2 * z) <= self.cap ** 2 * (1 + tol)
        return (r <= self.u.domain_radius * (1 + tol)) & (z <= uval + tol) & cap_ok

    def signed_gap(self, x):
        """u(xi) - zeta (graph side only)."""
        _, z, _, _, uval = self._parts(x)
        return uval - z

    def outward_normal(self, q):
        xi, _ = hc.horo_unchart(self.frame, q)
        return hg.graph_normal(self.frame, self.u.jet(xi))

    def project(self, x, tol: Tolerances = DEFAULT) -> Projection:
        """Nearest points of K.

        Every boundary stratum proposes a candidate.  The graph uses damped
        Newton from the vertical foot; flat faces and the wall-cap edge have
        closed forms; the wall-graph edge uses bisection on the derivative
        along the edge.  A candidate is accepted when x - foot
        lies in the normal cone of K at the foot, which by convexity singles
        out the nearest point.  Points with no certified candidate go to a
        convex program in a Klein chart centred at x.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = self.contains(x, 0.0)
        feet = x.copy()
        out = np.flatnonzero(~inside)
        if len(out):
            f, ok = self._newton(x[out], tol)
            feet[out[ok]] = f[ok]
            rest = out[~ok]
            if len(rest):
                f2, ok2 = self._strata(x[rest])
                feet[rest[ok2]] = f2[ok2]
                for i in rest[~ok2]:
                    feet[i] = self._project_conic(x[i])
        return _finish(x, feet, inside)

    # -- boundary strata ----------------------------------------------------

    def _cap_normal_vec(self):
        c2 = self.cap ** 2
        fr = self.frame
        m = ((c2 - 1.0) * fr.base_point - (1.0 + c2) * fr.normal) / (2.0 * self.cap)
        # orient so that <x, m> <= 0 on K
        if hc.mdot(self.interior_point(), m) > 0:
            m = -m
        return m

    def _wall_normal(self, xi, z):
        J = hc.horo_chart_jacobian(self.frame, xi, z)
        v = np.einsum("...ai,...i->...a", J[..., :-1], xi)
        return v / hc.mnorm(v)[..., None]

    def _in_cone(self, foot, y, normals, tol=1e-7):
        """x - foot in the cone spanned by the given unit normals at foot."""
        v = hc.log_map(foot, y).vec
        Nm = np.stack(normals, axis=-2)                    # (P, k, n+1)
        NJ = Nm.copy()
        NJ[..., 0] *= -1
        G = np.einsum("pia,pja->pij", NJ, Nm)
        r = np.einsum("pia,pa->pi", NJ, v)
        c = np.linalg.solve(G, r[..., None])[..., 0]
        res = v - np.einsum("pi,pia->pa", c, Nm)
        return (hc.mnorm(res) < tol) & np.all(c >= -tol, axis=-1)

    def _strata(self, y):
        fr = self.frame
        R, cap2 = self.u.domain_radius, self.cap ** 2
        P = len(y)
        cands = []
        # wall-facing azimuth: minimizes -<y, X> over the circle |xi| = R at fixed zeta
        e = np.stack([hc.mdot(y, fr.tangent[0]), hc.mdot(y, fr.tangent[1])], -1)
        en = np.linalg.norm(e, axis=1)
        dirs = np.where(en[:, None] > 0, e / np.where(en > 0, en, 1)[:, None], np.array([1.0, 0.0]))
        xw = R * dirs
        uw = self.u(xw)
        zc = -0.5 * np.log(cap2 - R * R)                 # wall-cap edge height
        # wall face: f(zeta) = alpha e^zeta + beta e^-zeta
        a = -hc.mdot(y, fr.base_point)
        bb = -hc.mdot(y, fr.normal)
        c = -(R * R / 2) * hc.mdot(y, fr.ideal_direction) - R * en
        alpha = (a + bb) / 2 + c
        beta = (a - bb) / 2
        with np.errstate(invalid="ignore", divide="ignore"):
            zw = 0.5 * np.log(beta / alpha)
        okw = np.isfinite(zw) & (zw > zc) & (zw < uw)
        zw = np.where(okw, zw, 0.5 * (zc + uw))
        fw = hc.horo_chart(fr, xw, zw)
        okw &= self._in_cone(fw, y, [self._wall_normal(xw, zw)])
        cands.append((fw, okw))
        # cap face
        m = self._cap_normal_vec()
        fc = hc.normalize_point(y - hc.mdot(y, m)[:, None] * m)
        xic, zcap = hc.horo_unchart(fr, fc)
        okc = (hc.mdot(y, m) > 0) & (np.linalg.norm(xic, axis=1) < R)
        cands.append((fc, okc))
        # wall-cap edge
        fe = hc.horo_chart(fr, xw, np.full(P, zc))
        oke = self._in_cone(fe, y, [self._wall_normal(xw, np.full(P, zc)), np.broadcast_to(m, y.shape)])
        cands.append((fe, oke))
        # wall-graph edge
        fg = self._wall_graph_edge(y)
        xg, zg = hc.horo_unchart(fr, fg)
        xg = R * xg / np.linalg.norm(xg, axis=1, keepdims=True)
        jet = self.u.jet(xg)
        okg = self._in_cone(fg, y, [self._wall_normal(xg, jet.value), hg.graph_normal(fr, jet)])
        cands.append((fg, okg))

        feet = np.zeros_like(y)
        best = np.full(P, np.inf)
        for f, ok in cands:
            d = np.where(ok, hc.dist(f, y), np.inf)
            take = d < best
            feet[take] = f[take]
            best[take] = d[take]
        return feet, np.isfinite(best)

    def _wall_graph_edge(self, y, n_grid: int = 128, iters: int = 60):
        fr = self.frame
        R = self.u.domain_radius
        th = np.linspace(0, 2 * np.pi, n_grid, endpoint=False)
        circ = R * np.stack([np.cos(th), np.sin(th)], -1)
        pts = hc.horo_chart(fr, circ, self.u(circ))                    # (G, n+1)
        vals = -hc.mdot(y[:, None, :], pts[None, :, :])               # (P, G)
        i0 = np.argmin(vals, axis=1)
        h = 2 * np.pi / n_grid

        def dfdth(t):
            xi = R * np.stack([np.cos(t), np.sin(t)], -1)
            dxi = R * np.stack([-np.sin(t), np.cos(t)], -1)
            jet_u = self.u(xi)
            g = self.u.grad(xi)
            J = hc.horo_chart_jacobian(fr, xi, jet_u)
            dP = np.einsum("pai,pi->pa", J[..., :-1], dxi) + J[..., -1] * np.sum(g * dxi, -1)[:, None]
            return -hc.mdot(y, dP)

        lo = th[i0] - h
        hi = th[i0] + h
        flo, fhi = dfdth(lo), dfdth(hi)
        ok = (flo <= 0) & (fhi >= 0)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            fm = dfdth(mid)
            pos = fm > 0
            hi = np.where(pos, mid, hi)
            lo = np.where(pos, lo, mid)
        t = np.where(ok, 0.5 * (lo + hi), th[i0])
        xi = R * np.stack([np.cos(t), np.sin(t)], -1)
        return hc.horo_chart(fr, xi, self.u(xi))

    def _newton(self, y, tol: Tolerances):
        eta, s = hc.horo_unchart(self.frame, y)
        w = np.exp(-s)
        R = self.u.domain_radius
        xi = eta.copy()
        nr = np.linalg.norm(xi, axis=1)
        big = nr > 0.999 * R
        xi[big] *= (0.999 * R / nr[big])[:, None]
        d = xi.shape[1]

        def F_and_derivs(xi, eta, w, need_hess=True):
            jet = self.u.jet(xi) if need_hess else None
            uval = jet.value if need_hess else self.u(xi)
            z = np.exp(-uval)
            dv = xi - eta
            Qv = np.sum(dv * dv, axis=1) + w ** 2
            F = Qv / z + z - 2 * w
            if not need_hess:
                return F, None, None
            dz = -z[:, None] * jet.grad
            ddz = z[:, None, None] * (jet.grad[:, :, None] * jet.grad[:, None, :] - jet.hess)
            dQ = 2 * dv
            g = dQ / z[:, None] - (Qv / z ** 2)[:, None] * dz + dz
            H = (2 * np.eye(d) / z[:, None, None]
                 - (dQ[:, :, None] * dz[:, None, :] + dz[:, :, None] * dQ[:, None, :]) / z[:, None, None] ** 2
                 + 2 * (Qv / z ** 3)[:, None, None] * dz[:, :, None] * dz[:, None, :]
                 - (Qv / z ** 2)[:, None, None] * ddz + ddz)
            return F, g, H

        active = np.ones(len(y), bool)
        for _ in range(tol.newton_max_iter):
            idx = np.flatnonzero(active)
            if not len(idx):
                break
            F, g, H = F_and_derivs(xi[idx], eta[idx], w[idx])
            try:
                step = -np.linalg.solve(H, g[..., None])[..., 0]
            except np.linalg.LinAlgError:
                step = -g
            descent = np.sum(step * g, axis=1) < 0
            step[~descent] = -g[~descent]
            t = np.ones(len(idx))
            todo = np.ones(len(idx), bool)
            new = xi[idx].copy()
            for _ls in range(40):
                cand = xi[idx] + t[:, None] * step
                cn = np.linalg.norm(cand, axis=1)
                okd = cn < R
                Fc = np.full(len(idx), np.inf)
                if np.any(okd & todo):
                    m = okd & todo
                    Fc[m] = F_and_derivs(cand[m], eta[idx][m], w[idx][m], need_hess=False)[0]
                acc = todo & (Fc <= F + 1e-4 * t * np.sum(step * g, axis=1) + 1e-15 * np.abs(F))
                new[acc] = cand[acc]
                todo &= ~acc
                if not np.any(todo):
                    break
                t[todo] *= 0.5
            xi[idx] = new
            small = np.linalg.norm(t[:, None] * step, axis=1) < tol.newton
            active[idx[small | todo]] = False
        jet = self.u.jet(xi)
        foot = hc.horo_chart(self.frame, xi, jet.value)
        nu = hg.graph_normal(self.frame, jet)
        v = hc.log_map(foot, y).vec
        cert = (hc.mdot(v, nu) > 1 - 1e-8) & (np.linalg.norm(xi, axis=1) < R)
        return foot, cert

    def _project_conic(self, x):
        """Nearest point by SLSQP: minimize the Euclidean norm in a Klein chart centred at x.

        Hyperbolic distance from x is monotone in the Klein radius about x, and
        K is a Euclidean convex set in that chart, so the problem is convex.
        """
        fr = self.frame
        ell = fr.ideal_direction
        R, cap2 = self.u.domain_radius, self.cap ** 2
        L = hc.boost(x)

        def coords(k):
            wv = L @ np.r_[1.0, k]
            A = -hc.mdot(wv, ell)
            V = hc.mdot(wv[None, :], fr.tangent)
            B = -hc.mdot(wv, fr.base_point) - hc.mdot(wv, fr.normal)
            return A, V, B

        def h_ext(v):
            r = np.linalg.norm(v)
            if r > R:
                v = v * (R / r)
            return float(self.u.h(v))

        cons = [
            {"type": "ineq", "fun": lambda k: 1.0 - k @ k},
            {"type": "ineq", "fun": lambda k: (R * coords(k)[0]) ** 2 - coords(k)[1] @ coords(k)[1]},
            {"type": "ineq", "fun": lambda k: cap2 * coords(k)[0] - coords(k)[2]},
            {"type": "ineq", "fun": lambda k: (lambda A, V, B: B - A * h_ext(V / A))(*coords(k))},
        ]
        w0 = np.linalg.solve(L, self.interior_point())
        k0 = w0[1:] / w0[0]
        res = optimize.minimize(lambda k: k @ k, k0, jac=lambda k: 2 * k, constraints=cons,
                                method="SLSQP", options={"ftol": 1e-15, "maxiter": 1000})
        if not res.success and res.status != 8:
            raise ProjectionFailure(f"conic projection failed: {res.message}")
        return hc.normalize_point(L @ np.r_[1.0, res.x])

    def to_dict(self):
        return {"type": "horograph", "frame": self.frame.to_dict(), "u": self.u.to_dict(), "cap": self.cap}


Body = Union[Ball, PolytopeHull, HoroGraphBody]


def body_from_dict(d: dict) -> Body:
    t = d["type"]
    if t == "ball":
        return Ball(np.array(d["center"]), d["radius"])
    if t == "polytope":
        return PolytopeHull(np.array(d["vertices"]))
    if t == "horograph":
        return HoroGraphBody(hc.HoroFrame.from_dict(d["frame"]), hg.from_dict(d["u"]), d["cap"])
    raise ValueError(f"unknown body type {t!r}")


def dumps(obj) -> str:
    """JSON text; floats are written with round-trip precision."""
    return json.dumps(obj.to_dict() if hasattr(obj, "to_dict") else obj, sort_keys=True)


def body_loads(s: str) -> Body:
    return body_from_dict(json.loads(s))


def project(K: Body, x) -> Projection:
    return K.project(x)


def contains(K: Body, x, tol: float = DEFAULT.membership):
    return K.contains(x, tol)


def _log_cosh(t):
    t = np.abs(t)
    return t + np.log1p(np.exp(-2 * t)) - np.log(2.0)


def projection_stability_bound(d, delta):
    """Bound on d(f_K(x), f_L(x)) when d(x, K), d(x, L) >= d and d_H(K, L) = delta < d.

    arccosh(cosh delta * cosh(d + delta) / cosh(d - delta)), evaluated through
    log cosh so that large d does not overflow.
    """
    d = np.asarray(d, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if np.any(delta < 0) or np.any(delta >= d):
        raise ValueError("projection stability bound needs 0 <= delta < d")
    lr = _log_cosh(delta) + _log_cosh(d + delta) - _log_cosh(d - delta)
    # arccosh(e^lr) = lr + log(1 + sqrt(1 - e^{-2 lr}))
    out = lr + np.log1p(np.sqrt(-np.expm1(-2 * lr)))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# boundary patches


@dataclass(frozen=True, eq=False)
class WholeBoundary:
    def contains(self, foot, normal=None):
        return np.ones(np.shape(foot)[:-1], bool)

    def to_dict(self):
        return {"type": "whole"}


@dataclass(frozen=True, eq=False)
class ChartDisc:
    """Feet whose chart coordinate xi lies within ``radius`` of ``center``.

    Only the sheet facing the frame normal counts: the outward normal at the
    foot must have positive d/dzeta component.
    """

    frame: hc.HoroFrame
    center: np.ndarray
    radius: float

    def contains(self, foot, normal=None):
        xi, z = hc.horo_unchart(self.frame, foot)
        ok = np.linalg.norm(xi - np.asarray(self.center), axis=-1) <= self.radius
        if normal is not None:
            dz = hc.horo_chart_jacobian(self.frame, xi, z)[..., -1]
            ok &= hc.mdot(normal, dz) > 0
        return ok

    def to_dict(self):
        return {"type": "chart_disc", "frame": self.frame.to_dict(),
                "center": np.asarray(self.center).tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class ConePatch:
    """Feet seen from ``apex`` within ``angle`` of the unit tangent ``axis``."""

    apex: np.ndarray
    axis: np.ndarray
    angle: float

    def contains(self, foot, normal=None):
        v = hc.log_map(self.apex, foot).vec
        return hc.mdot(v, self.axis) >= np.cos(self.angle)

    def to_dict(self):
        return {"type": "cone", "apex": np.asarray(self.apex).tolist(),
                "axis": np.asarray(self.axis).tolist(), "angle": self.angle}


Patch = Union[WholeBoundary, ChartDisc, ConePatch]


def patch_from_dict(d: dict) -> Patch:
    t = d["type"]
    if t == "whole":
        return WholeBoundary()
    if t == "chart_disc":
        return ChartDisc(hc.HoroFrame.from_dict(d["frame"]), np.array(d["center"]), d["radius"])
    if t == "cone":
        return ConePatch(np.array(d["apex"]), np.array(d["axis"]), d["angle"])
    raise ValueError(f"unknown patch type {t!r}")


# ---------------------------------------------------------------------------
# Hausdorff distance


class HausdorffBracket(NamedTuple):
    lower: float
    upper: float

    @property
    def exact(self) -> bool:
        return self.lower == self.upper


def _sup_dist_to(K: Body, pts) -> float:
    pr = K.project(pts)
    return float(np.max(pr.dist))


def _one_sided(A: Body, B: Body, n_dirs: int, seed: int):
    """sup_{a in A} d(a, B) as a bracket."""
    if isinstance(A, PolytopeHull):
        v = _sup_dist_to(B, A.vertices)       # distance to a convex set is convex
        return v, v
    if isinstance(A, Ball):
        if isinstance(B, Ball):
            v = max(0.0, float(hc.dist(A.center, B.center)) + A.radius - B.radius)
            return v, v
        if not isinstance(B, PolytopeHull):
            raise NotImplementedError("Hausdorff bracket supports balls and polytopes")
        rng = np.random.default_rng(seed)
        dirs = hc.random_directions(rng, n_dirs, A.n)
        pts = np.concatenate([np.full((n_dirs, 1), np.cosh(A.radius)), np.sinh(A.radius) * dirs], 1)
        pts = pts @ hc.boost(A.center).T
        dB = B.project(pts).dist
        if A.n != 3:
            raise NotImplementedError("covering radius implemented for n = 3")
        # per-cell covering angle of the direction sample on the unit sphere;
        # an arc of angle theta on the sphere of radius R has length theta sinh R
        sv = spatial.SphericalVoronoi(dirs, 1.0, np.zeros(3))
        cover = np.array([np.arccos(np.clip(sv.vertices[reg] @ dirs[i], -1, 1)).max()
                          for i, reg in enumerate(sv.regions)])
        return float(dB.max()), float(np.max(dB + cover * np.sinh(A.radius)))
    raise NotImplementedError("Hausdorff bracket supports balls and polytopes")


def hausdorff_distance(A: Body, B: Body, n_dirs: int = 4000, seed: int = 0) -> HausdorffBracket:
    """Hausdorff distance; exact when both one-sided terms are exact."""
    l1, u1 = _one_sided(A, B, n_dirs, seed)
    l2, u2 = _one_sided(B, A, n_dirs, seed + 1)
    return HausdorffBracket(max(l1, l2), max(u1, u2))
