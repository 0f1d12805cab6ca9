"""Intrinsic geometry of convex boundaries in H^3.

Induced metric of a horograph: g = e^{2u} I + grad u (x) grad u on the
parameter disc.  Distances come either from a weighted mesh graph (works for
non-smooth u) or from geodesic shooting on the smooth metric.  Smooth curvature
comes from geodesic-circle defects or the Brioschi formula; polytope curvature
comes from vertex angle defects minus face areas.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import Delaunay

from . import bodies as bd
from . import horograph as hg
from . import hypcore as hc
from . import tubes as tb

_GL5_X, _GL5_W = np.polynomial.legendre.leggauss(5)


# ---------------------------------------------------------------------------
# meshes


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    points: np.ndarray          # parameter points (horograph) or H^3 points (polytope)
    edges: np.ndarray           # (E, 2)
    lengths: np.ndarray         # (E,) metric lengths
    triangles: np.ndarray       # (T, 3) indices into the base vertices
    n_base: int                 # vertices before Steiner refinement
    kind: str                   # "horograph" | "polytope"

    def __post_init__(self):
        if np.any(self.lengths <= 0):
            raise ValueError("mesh has non-positive edge lengths")
        g = self.graph()
        ncomp, _ = csgraph.connected_components(g, directed=False)
        if ncomp != 1:
            raise ValueError("mesh is disconnected")

    def graph(self):
        n = len(self.points)
        return sparse.coo_matrix((self.lengths, (self.edges[:, 0], self.edges[:, 1])), shape=(n, n)).tocsr()

    def distances_from(self, sources):
        return csgraph.dijkstra(self.graph(), directed=False, indices=np.atleast_1d(sources))

    def nearest_vertex(self, p):
        d = np.linalg.norm(self.points[: self.n_base] - np.asarray(p), axis=1)
        return int(np.argmin(d))

    def to_off(self) -> str:
        """OFF-style text with an extra block of metric edge lengths."""
        lines = ["OFF", "# edge lengths below are intrinsic metric lengths, not Euclidean",
                 f"{len(self.points)} {len(self.triangles)} {len(self.edges)}"]
        for p in self.points:
            lines.append(" ".join(repr(float(v)) for v in p))
        for t in self.triangles:
            lines.append("3 " + " ".join(str(int(i)) for i in t))
        lines.append("EDGES")
        for (a, b), L in zip(self.edges, self.lengths):
            lines.append(f"{int(a)} {int(b)} {float(L)!r}")
        return "\n".join(lines) + "\n"


def segment_length(u: hg.HoroconvexFn, a, b):
    """Induced length of the parameter segment a -> b by 5-point Gauss-Legendre."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    t = 0.5 * (_GL5_X + 1.0)
    pts = a[..., None, :] + t[:, None] * d[..., None, :]
    e2u = np.exp(2 * u(pts))
    du = np.sum(u.grad(pts) * d[..., None, :], axis=-1)
    speed = np.sqrt(e2u * np.sum(d * d, axis=-1)[..., None] + du ** 2)
    return 0.5 * np.sum(speed * _GL5_W, axis=-1)


def _steiner_edges(tri, npts):
    """Edge midpoints per triangle, and all segments between the 6 boundary points
    of each triangle that do not lie on a common side."""
    T = len(tri)
    sides = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    key = np.sort(sides, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    mids = npts + np.arange(len(uniq))
    m = mids[inv.ravel()].reshape(3, T).T        # midpoint of side (0,1), (1,2), (2,0)
    segs = [uniq]                                # original edges
    segs += [np.stack([uniq[:, 0], mids], 1), np.stack([mids, uniq[:, 1]], 1)]
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    m01, m12, m20 = m[:, 0], m[:, 1], m[:, 2]
    segs += [np.stack(p, 1) for p in [(v0, m12), (v1, m20), (v2, m01), (m01, m12), (m12, m20), (m20, m01)]]
    return uniq, np.concatenate(segs[1:]), segs[0]


def build_mesh(K, resolution: float, radius: Optional[float] = None, center=None,
               u: Optional[hg.HoroconvexFn] = None, steiner: bool = True) -> SurfaceMesh:
    """Triangulated boundary with induced-metric edge lengths.

    For horograph bodies (or a bare horoconvex ``u``) the parameter disc is
    covered by a triangular lattice of spacing ``resolution``; for polytopes the
    facets are used directly with exact hyperbolic edge lengths.
    """
    if isinstance(K, bd.PolytopeHull):
        V = K.vertices
        tri = K.facets
        key = np.unique(np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1), axis=0)
        L = hc.dist(V[key[:, 0]], V[key[:, 1]])
        return SurfaceMesh(V.copy(), key, L, tri.copy(), len(V), "polytope")
    u = K.u if u is None else u
    R = (u.domain_radius if radius is None else radius)
    c = np.zeros(2) if center is None else np.asarray(center, dtype=float)
    h = resolution
    rows = int(np.ceil(R / (h * np.sqrt(3) / 2)))
    pts = []
    for i in range(-rows, rows + 1):
        y = i * h * np.sqrt(3) / 2
        off = 0.5 * h * (i % 2)
        xs = np.arange(-R - h, R + h, h) + off
        pts.append(np.stack([xs, np.full_like(xs, y)], 1))
    pts = np.concatenate(pts)
    pts = pts[np.linalg.norm(pts, axis=1) <= R * (1 - 1e-12)]
    t = np.linspace(0, 2 * np.pi, max(12, int(np.ceil(2 * np.pi * R / h))), endpoint=False)
    pts = np.concatenate([np.zeros((1, 2)), pts[np.linalg.norm(pts, axis=1) > 1e-12],
                          R * np.stack([np.cos(t), np.sin(t)], 1)]) + c
    tri = Delaunay(pts).simplices
    n0 = len(pts)
    if steiner:
        uniq, segs, orig = _steiner_edges(tri, n0)
        mids = 0.5 * (pts[uniq[:, 0]] + pts[uniq[:, 1]])
        allp = np.concatenate([pts, mids])
        edges = np.concatenate([orig, segs])
    else:
        allp = pts
        edges = np.unique(np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1), axis=0)
    L = segment_length(u, allp[edges[:, 0]], allp[edges[:, 1]])
    return SurfaceMesh(allp, edges, L, tri, n0, "horograph")


def intrinsic_dist(mesh: SurfaceMesh, p: int, q: int) -> float:
    d = mesh.distances_from([p, q])
    # symmetric by construction: report the smaller of the two directed runs
    return float(min(d[0, q], d[1, p]))


# ---------------------------------------------------------------------------
# smooth induced metric: Christoffel symbols, geodesics


def metric(u: hg.HoroconvexFn, x):
    jet = u.jet(x)
    return hg.first_fundamental_form(jet), jet


def _first_kind(dg):
    # dg[k, i, j] = d_k g_ij  ->  G[i, j, k] = 1/2 (d_j g_ik + d_k g_ij - d_i g_jk)
    a = np.einsum("...jik->...ijk", dg)      # d_j g_ik
    b = np.einsum("...kij->...ijk", dg)      # d_k g_ij
    c = np.einsum("...ijk->...ijk", dg)      # d_i g_jk
    return 0.5 * (a + b - c)


def christoffel_symbols(u: hg.HoroconvexFn, x):
    jet = u.jet(x)
    g = hg.first_fundamental_form(jet)
    e2u = np.exp(2 * jet.value)
    gr, H = jet.grad, jet.hess
    d = gr.shape[-1]
    I = np.eye(d)
    dg = (2 * e2u[..., None, None, None] * gr[..., :, None, None] * I
          + H[..., :, :, None] * gr[..., None, None, :] + gr[..., None, :, None] * H[..., :, None, :])
    G1 = _first_kind(dg)
    return np.einsum("...il,...ljk->...ijk", np.linalg.inv(g), G1)


def geodesic_flow(u: hg.HoroconvexFn, x0, v0, T: float = 1.0, steps: int = 200):
    """RK4 integration of x'' = -Gamma(x', x') from (x0, v0) over [0, T]; returns x(T), v(T)."""
    x = np.array(x0, dtype=float)
    v = np.array(v0, dtype=float)
    h = T / steps

    def acc(x, v):
        G = christoffel_symbols(u, x)
        return -np.einsum("...ijk,...j,...k->...i", G, v, v)

    for _ in range(steps):
        k1x, k1v = v, acc(x, v)
        k2x, k2v = v + 0.5 * h * k1v, acc(x + 0.5 * h * k1x, v + 0.5 * h * k1v)
        k3x, k3v = v + 0.5 * h * k2v, acc(x + 0.5 * h * k2x, v + 0.5 * h * k2v)
        k4x, k4v = v + h * k3v, acc(x + h * k3x, v + h * k3v)
        x = x + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return x, v


def geodesic_distance(u: hg.HoroconvexFn, a, b, steps: int = 100, iters: int = 30, tol: float = 1e-13):
    """Intrinsic distance between graph points over a and b by shooting (vectorized over pairs).

    Newton on the initial velocity with a finite-difference Jacobian; the
    result is the g-length of the converged initial velocity (unit time).
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    v = b - a
    eps = 1e-7
    for _ in range(iters):
        xe, _ = geodesic_flow(u, a, v, 1.0, steps)
        F = xe - b
        if np.max(np.abs(F)) < tol:
            break
        J = np.empty(F.shape + (2,))
        for k in range(2):
            dv = np.zeros(2)
            dv[k] = eps
            xk, _ = geodesic_flow(u, a, v + dv, 1.0, steps)
            J[..., k] = (xk - xe) / eps
        v = v - np.linalg.solve(J, F[..., None])[..., 0]
    g, _ = metric(u, a)
    return np.sqrt(np.einsum("pi,pij,pj->p", v, g, v))


# ---------------------------------------------------------------------------
# curvature estimators


@dataclass(frozen=True, eq=False)
class CurvatureEstimate:
    region: str
    value: float
    method: str
    resolution: dict
    error: float

    def to_dict(self):
        return {"region": self.region, "value": self.value, "method": self.method,
                "resolution": self.resolution, "error": self.error}


def brioschi_curvature(u: hg.HoroconvexFn, x, h: float = 1e-3) -> float:
    """Gaussian curvature of the induced metric at x from E, F, G by finite differences."""
    x = np.asarray(x, dtype=float)

    def EFG(p):
        g = hg.first_fundamental_form(u.jet(p))
        return g[..., 0, 0], g[..., 0, 1], g[..., 1, 1]

    def d(f, i, p):
        e = np.zeros(2)
        e[i] = h
        return (np.asarray(f(p + e)) - np.asarray(f(p - e))) / (2 * h)

    def dd(f, i, j, p):
        ei = np.zeros(2)
        ei[i] = h
        ej = np.zeros(2)
        ej[j] = h
        if i == j:
            return (np.asarray(f(p + ei)) - 2 * np.asarray(f(p)) + np.asarray(f(p - ei))) / h ** 2
        return (np.asarray(f(p + ei + ej)) - np.asarray(f(p + ei - ej)) - np.asarray(f(p - ei + ej))
                + np.asarray(f(p - ei - ej))) / (4 * h * h)

    E = lambda p: EFG(p)[0]
    F = lambda p: EFG(p)[1]
    G = lambda p: EFG(p)[2]
    E0, F0, G0 = (float(v) for v in EFG(x))
    Eu, Ev = d(E, 0, x), d(E, 1, x)
    Fu, Fv = d(F, 0, x), d(F, 1, x)
    Gu, Gv = d(G, 0, x), d(G, 1, x)
    Evv, Guu, Fuv = dd(E, 1, 1, x), dd(G, 0, 0, x), dd(F, 0, 1, x)
    M1 = np.array([[-0.5 * Evv + Fuv - 0.5 * Guu, 0.5 * Eu, Fu - 0.5 * Ev],
                   [Fv - 0.5 * Gu, E0, F0],
                   [0.5 * Gv, F0, G0]])
    M2 = np.array([[0.0, 0.5 * Ev, 0.5 * Gu],
                   [0.5 * Ev, E0, F0],
                   [0.5 * Gu, F0, G0]])
    return float((np.linalg.det(M1) - np.linalg.det(M2)) / (E0 * G0 - F0 ** 2) ** 2)


def _circle_lengths_shooting(u, center, radii, n_dirs):
    g, _ = metric(u, np.asarray(center, dtype=float))
    L = np.linalg.cholesky(g)
    th = np.linspace(0, 2 * np.pi, n_dirs, endpoint=False)
    e = np.stack([np.cos(th), np.sin(th)], 1)
    v0 = np.linalg.solve(L.T, e.T).T           # g-unit initial velocities
    out = []
    for r in radii:
        x, _ = geodesic_flow(u, np.broadcast_to(center, v0.shape).copy(), v0 * r, 1.0, 64)
        nxt = np.roll(x, -1, axis=0)
        out.append(float(np.sum(segment_length(u, x, nxt))))
    return np.array(out)


def _circle_lengths_mesh(mesh: SurfaceMesh, u, center, radii):
    src = mesh.nearest_vertex(center)
    d = mesh.distances_from(src)[0]
    P = mesh.points
    tri = mesh.triangles
    out = []
    for r in radii:
        segs_a, segs_b = [], []
        dt = d[tri]
        for t, dv in zip(tri, dt):
            pts = []
            for i, j in ((0, 1), (1, 2), (2, 0)):
                a, b = dv[i], dv[j]
                if (a - r) * (b - r) < 0:
                    s = (r - a) / (b - a)
                    pts.append(P[t[i]] + s * (P[t[j]] - P[t[i]]))
            if len(pts) == 2:
                segs_a.append(pts[0])
                segs_b.append(pts[1])
        out.append(float(np.sum(segment_length(u, np.array(segs_a), np.array(segs_b)))) if segs_a else 0.0)
    return np.array(out)


def circle_defect_curvature(u: hg.HoroconvexFn, center, radii: Sequence[float], method: str = "shooting",
                            mesh: Optional[SurfaceMesh] = None, n_dirs: int = 720) -> CurvatureEstimate:
    """Gaussian curvature at ``center`` from geodesic-circle circumferences.

    Fits L(r) / (2 pi r) = 1 + a - K r^2 / 6 + c r^4 by least squares over ``radii``.
    ``shooting`` integrates geodesics of the smooth induced metric;
    ``mesh`` uses level sets of mesh graph distances.
    """
    radii = np.asarray(radii, dtype=float)
    if method == "shooting":
        L = _circle_lengths_shooting(u, center, radii, n_dirs)
    elif method == "mesh":
        if mesh is None:
            raise ValueError("mesh method needs a mesh")
        L = _circle_lengths_mesh(mesh, u, center, radii)
    else:
        raise ValueError(f"unknown circle-defect method {method!r}")
    if len(radii) < 3:
        raise ValueError("circle-defect fit needs at least 3 radii")
    y = L / (2 * np.pi * radii) - 1.0
    # intercept absorbs the scale-free chord bias of the polygonal circumference
    cols = [np.ones_like(radii), -radii ** 2 / 6] + ([radii ** 4] if len(radii) >= 4 else [])
    A = np.stack(cols, 1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return CurvatureEstimate("point", float(coef[1]), f"circle-defect-{method}",
                             {"radii": radii.tolist(), "n_dirs": n_dirs}, float(np.linalg.norm(resid)))


# --- polytopes ---------------------------------------------------------------


def triangle_area(a, b, c):
    """Area of the hyperbolic triangle with side lengths a, b, c (hyperbolic L'Huilier)."""
    s = 0.5 * (a + b + c)
    t = (np.tanh(s / 2) * np.tanh(np.maximum(s - a, 0) / 2) * np.tanh(np.maximum(s - b, 0) / 2)
         * np.tanh(np.maximum(s - c, 0) / 2))
    return 4 * np.arctan(np.sqrt(t))


def triangle_angle(a, b, c):
    """Angle opposite side a, by the half-angle form of the hyperbolic law of cosines."""
    s = 0.5 * (a + b + c)
    q = np.sinh(np.maximum(s - b, 0)) * np.sinh(np.maximum(s - c, 0)) / (np.sinh(b) * np.sinh(c))
    return 2 * np.arcsin(np.sqrt(np.clip(q, 0, 1)))


def vertex_defects(K: bd.PolytopeHull):
    V = K.vertices
    T = K.facets
    a = hc.dist(V[T[:, 1]], V[T[:, 2]])
    b = hc.dist(V[T[:, 2]], V[T[:, 0]])
    c = hc.dist(V[T[:, 0]], V[T[:, 1]])
    ang = np.stack([triangle_angle(a, b, c), triangle_angle(b, c, a), triangle_angle(c, a, b)], 1)
    total = np.zeros(len(V))
    np.add.at(total, T.ravel(), ang.ravel())
    return 2 * np.pi - total, triangle_area(a, b, c)


def _subdivide(tri_pts, level):
    """Klein-linear subdivision of a geodesic triangle into 4^level geodesic triangles."""
    k = tri_pts[..., 1:] / tri_pts[..., :1]                   # (..., 3, n) Klein coordinates
    m = 2 ** level
    sub = []
    for i in range(m):
        for j in range(m - i):
            for (a, b, c) in (((i, j), (i + 1, j), (i, j + 1)),) + ((((i + 1, j), (i + 1, j + 1), (i, j + 1)),)
                                                                   if i + j + 1 < m else ()):
                sub.append([a, b, c])
    sub = np.array(sub, dtype=float) / m                         # (S, 3, 2) barycentric (i, j)
    w = np.concatenate([1 - sub.sum(-1, keepdims=True), sub], -1)  # (S, 3, 3)
    kk = np.einsum("svw,...wd->...svd", w, k)
    x = np.concatenate([np.ones(kk.shape[:-1] + (1,)), kk], -1)
    return hc.normalize_point(x)


def polytope_curvature(K: bd.PolytopeHull, patch=None, level: int = 4, vertex_margin: float = 1e-6) -> CurvatureEstimate:
    """omega(beta) = sum of vertex defects in beta - face area in beta."""
    patch = bd.WholeBoundary() if patch is None else patch
    defects, areas = vertex_defects(K)
    if isinstance(patch, bd.WholeBoundary):
        val = float(defects.sum() - areas.sum())
        return CurvatureEstimate("whole", val, "polytope-defect", {"level": 0}, 1e-12 * len(defects))
    inV = patch.contains(K.vertices)
    if isinstance(patch, bd.ConePatch):
        v = hc.log_map(patch.apex, K.vertices).vec
        margin = np.abs(hc.mdot(v, patch.axis) - np.cos(patch.angle))
        if np.any(margin < vertex_margin):
            raise ValueError("patch boundary passes through a vertex")
    face = 0.0
    for t in K.facets:
        sub = _subdivide(K.vertices[t][None], level).reshape(-1, 3, K.n + 1)
        a = hc.dist(sub[:, 1], sub[:, 2])
        b = hc.dist(sub[:, 2], sub[:, 0])
        c = hc.dist(sub[:, 0], sub[:, 1])
        ar = triangle_area(a, b, c)
        cen = hc.normalize_point(sub.sum(1))
        face += float(np.sum(ar[patch.contains(cen)]))
    val = float(defects[inV].sum() - face)
    return CurvatureEstimate("patch", val, "polytope-defect", {"level": level}, float(areas.max() / 4 ** level))


def gauss_bonnet_residual(K: bd.PolytopeHull) -> float:
    return polytope_curvature(K).value - 4 * np.pi


def polytope_area(K: bd.PolytopeHull) -> float:
    return float(vertex_defects(K)[1].sum())


# ---------------------------------------------------------------------------
# smooth patch integrals


def disc_quadrature(center, radius, n_r: int = 24, n_t: int = 64):
    """Gauss-Legendre in r times trapezoid in angle on a disc: (points, weights)."""
    xr, wr = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * radius * (xr + 1)
    wr = 0.5 * radius * wr * r
    t = np.linspace(0, 2 * np.pi, n_t, endpoint=False)
    R, Tt = np.meshgrid(r, t, indexing="ij")
    W = np.broadcast_to(wr[:, None] * (2 * np.pi / n_t), R.shape)
    pts = np.asarray(center) + np.stack([R * np.cos(Tt), R * np.sin(Tt)], -1)
    return pts.reshape(-1, 2), W.ravel()


def patch_area(u: hg.HoroconvexFn, center, radius) -> float:
    p, w = disc_quadrature(center, radius)
    return float(np.sum(hg.area_density(u.jet(p)) * w))


def patch_omega(u: hg.HoroconvexFn, center, radius) -> float:
    """Integral of Sect times area density over a chart disc."""
    p, w = disc_quadrature(center, radius)
    jet = u.jet(p)
    sd = hg.shape_operator(jet)
    return float(np.sum(sd.sect * sd.area_density * w))


# ---------------------------------------------------------------------------
# Gauss check and density ratio


@dataclass(frozen=True, eq=False)
class GaussReport:
    tube_value: float
    tube_se: float
    intrinsic_value: float
    intrinsic_error: float
    passed: bool

    def to_dict(self):
        return {"C2_minus_C0": self.tube_value, "se": self.tube_se, "omega": self.intrinsic_value,
                "omega_error": self.intrinsic_error, "pass": self.passed}


def gauss_check(fit: tb.CurvatureMeasures, intrinsic: CurvatureEstimate, rel: float = 0.05) -> GaussReport:
    """C_2 - C_0 against omega(beta): pass within max(3 sigma, rel |omega|)."""
    v, se = fit.gauss_defect()
    sig = float(np.hypot(se, intrinsic.error))
    ok = abs(v - intrinsic.value) <= max(3 * sig, rel * abs(intrinsic.value))
    return GaussReport(v, se, intrinsic.value, intrinsic.error, bool(ok))


@dataclass(frozen=True, eq=False)
class DensityRatio:
    eps: np.ndarray
    ratio: np.ndarray
    se: np.ndarray
    loccurv: float

    def to_dict(self):
        return {"eps": self.eps.tolist(), "ratio": self.ratio.tolist(), "se": self.se.tolist(),
                "loccurv": self.loccurv}


def density_ratio(K: bd.HoroGraphBody, x0, eps_list: Sequence[float], n_samples: int, seed: int,
                  rhos=tb.DEFAULT_RHOS, workers: int = 1, tangent: bool = True,
                  eps_floor: float = 0.02) -> DensityRatio:
    """(C_2 - C_0)/C_0 on shrinking chart discs around q = (x0, u(x0)).

    With ``tangent`` the discs live in the tangent horosphere chart at q;
    otherwise in the body's own chart centred at x0.  LocCurv is attempted
    and reported as nan at non-normal points.
    """
    x0 = np.asarray(x0, dtype=float)
    if tangent:
        frame = hg.tangent_reparam(K, x0, eps=max(eps_list) * 1.2).frame
        center = np.zeros(2)
    else:
        frame, center = K.frame, x0
    ratios, ses = [], []
    for e in eps_list:
        if e < eps_floor:
            raise ValueError(f"eps {e} below the enforced floor {eps_floor}")
        patch = bd.ChartDisc(frame, center, float(e))
        ts = tb.tube_samples(K, patch, rhos, n_samples, seed, workers, body_id="K", patch_id=f"disc{e}")
        r, s = tb.steiner_fit(ts).density()
        ratios.append(r)
        ses.append(s)
    try:
        lc = hg.loccurv(K, x0)
    except hg.NonNormalPointError:
        lc = float("nan")
    return DensityRatio(np.asarray(eps_list, dtype=float), np.array(ratios), np.array(ses), lc)


# ---------------------------------------------------------------------------
# biLipschitz comparison with the osculating quadratic


@dataclass(frozen=True, eq=False)
class BiLipschitzRow:
    eps: float
    max_rel: float           # max |d_u / d_ubar - 1|
    scaled: float            # max_rel / eps^2


def bilipschitz_profile(K: bd.HoroGraphBody, x0, eps_list=(0.2, 0.1, 0.05), n_pairs: int = 12,
                        seed: int = 0) -> list:
    """Compare intrinsic distances of the boundary and of its osculating quadratic.

    Both are computed by geodesic shooting: d_u in the body's chart with the
    analytic u, d_ubar in the tangent chart at q with the quadratic ubar_q whose
    Hessian is the transported second fundamental form.  Point pairs sit on the
    circle of radius eps/2 in the tangent chart at opposite-ish angles.
    """
    rep = hg.tangent_reparam(K, x0, eps=max(eps_list) * 1.2)
    ubar = hg.osculating_quadratic(rep.jet, domain_radius=rep.radius)
    rng = np.random.default_rng(seed)
    rows = []
    for e in eps_list:
        t1 = rng.uniform(0, 2 * np.pi, n_pairs)
        t2 = t1 + rng.uniform(0.5 * np.pi, 1.5 * np.pi, n_pairs)
        r = 0.5 * e
        y1 = r * np.stack([np.cos(t1), np.sin(t1)], 1)
        y2 = r * np.stack([np.cos(t2), np.sin(t2)], 1)
        # boundary points over y in the tangent chart, expressed in the body chart
        z1 = rep.u(y1)
        z2 = rep.u(y2)
        x1, _ = hc.horo_unchart(K.frame, hc.horo_chart(rep.frame, y1, z1))
        x2, _ = hc.horo_unchart(K.frame, hc.horo_chart(rep.frame, y2, z2))
        du = geodesic_distance(K.u, x1, x2)
        dbar = geodesic_distance(ubar, y1, y2)
        m = float(np.max(np.abs(du / dbar - 1.0)))
        rows.append(BiLipschitzRow(float(e), m, m / e ** 2))
    return rows
