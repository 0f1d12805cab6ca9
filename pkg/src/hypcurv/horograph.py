"""Horoconvex functions and the differential geometry of their graphs.

A function u on a disc of R^(n-1) is horoconvex when h_u(x) = exp(-2u(x)) + |x|^2
is convex.  Its horospherical graph {(x, u(x))} bounds the convex set lying on
the side zeta <= u(x); the outward normal points toward increasing zeta.

All evaluators are vectorized: x has shape (..., n-1).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import interpolate, signal

from . import hypcore as hc
from .config import DEFAULT, Tolerances


class HorographError(RuntimeError):
    pass


class NonNormalPointError(HorographError):
    """Hessian estimates fail to stabilize under grid refinement."""


# ---------------------------------------------------------------------------
# finite differences (used when a family has no analytic derivatives)


def fd_gradient(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    out = np.empty(x.shape)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        out[..., i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def fd_hessian(f, x, h=1e-4):
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    out = np.empty(x.shape + (d,))
    f0 = f(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        out[..., i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / h ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h
            v = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h * h)
            out[..., i, j] = v
            out[..., j, i] = v
    return out


# ---------------------------------------------------------------------------
# jets


@dataclass(frozen=True, eq=False)
class SecondOrderJet:
    x: np.ndarray
    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.hess)
        if np.any(np.abs(H - np.swapaxes(H, -1, -2)) > 1e-12 * np.maximum(1.0, np.abs(H).max())):
            raise ValueError("jet Hessian is not symmetric")


def jet_from_h(x, u_x, h_grad, h_hess) -> SecondOrderJet:
    """Convert the gradient/Hessian of h_u at x into those of u.

    grad u = -1/2 e^{2u} (grad h - 2x)
    hess u = -1/2 e^{2u} hess h + e^{2u} I + 2 grad u (x) grad u
    """
    x = np.asarray(x, dtype=float)
    u_x = np.asarray(u_x, dtype=float)
    e2u = np.exp(2 * u_x)
    g = -0.5 * e2u[..., None] * (np.asarray(h_grad) - 2 * x)
    d = x.shape[-1]
    H = (-0.5 * e2u[..., None, None] * np.asarray(h_hess) + e2u[..., None, None] * np.eye(d)
         + 2 * g[..., :, None] * g[..., None, :])
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    return SecondOrderJet(x, u_x, g, H)


# ---------------------------------------------------------------------------
# horoconvex functions


@dataclass(frozen=True, eq=False)
class ConvexityCertificate:
    ok: bool
    min_midpoint_gap: float      # min of (h(x)+h(y))/2 - h((x+y)/2) over sampled pairs
    min_hessian_eig: float       # min eigenvalue of hess h over sampled points (nan if unknown)
    max_hessian_eig: float
    lipschitz_bound: float       # max |grad u| over sampled points


@dataclass(frozen=True, eq=False)
class HoroconvexFn:
    """Evaluator bundle for u on the disc |x| <= domain_radius.

    ``spec`` is a JSON-ready description (analytic family or grid); functions
    built from closures (e.g. implicit reparametrizations) leave it ``None``.
    """

    value_fn: Callable
    domain_radius: float
    grad_fn: Optional[Callable] = None
    hess_fn: Optional[Callable] = None
    spec: Optional[dict] = None
    dim: int = 2

    def __call__(self, x):
        return self.value_fn(np.asarray(x, dtype=float))

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return self.grad_fn(x) if self.grad_fn else fd_gradient(self.value_fn, x)

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        return self.hess_fn(x) if self.hess_fn else fd_hessian(self.value_fn, x)

    def jet(self, x) -> SecondOrderJet:
        x = np.asarray(x, dtype=float)
        H = self.hess(x)
        return SecondOrderJet(x, self(x), self.grad(x), 0.5 * (H + np.swapaxes(H, -1, -2)))

    def h(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-2 * self(x)) + np.sum(x * x, axis=-1)

    def h_grad(self, x):
        x = np.asarray(x, dtype=float)
        return -2 * np.exp(-2 * self(x))[..., None] * self.grad(x) + 2 * x

    def h_hess(self, x):
        x = np.asarray(x, dtype=float)
        e = np.exp(-2 * self(x))[..., None, None]
        g = self.grad(x)
        return e * (4 * g[..., :, None] * g[..., None, :] - 2 * self.hess(x)) + 2 * np.eye(x.shape[-1])

    def certify(self, n_pairs: int = 10_000, seed: int = 0, radius: Optional[float] = None,
                tol: float = 1e-12, rel_hess_tol: float = 0.0) -> ConvexityCertificate:
        """Sampled midpoint-convexity certificate for h_u on the domain.

        ``rel_hess_tol`` admits Hessian eigenvalues down to -rel_hess_tol times
        the largest one; interpolated functions need it where h is nearly flat.
        """
        rng = np.random.default_rng(seed)
        R = self.domain_radius if radius is None else radius
        a = _uniform_disc(rng, n_pairs, self.dim, R)
        b = _uniform_disc(rng, n_pairs, self.dim, R)
        gap = 0.5 * (self.h(a) + self.h(b)) - self.h(0.5 * (a + b))
        pts = np.concatenate([a, b])
        ev = np.linalg.eigvalsh(self.h_hess(pts))
        eig, eig_max = float(ev.min()), float(ev.max())
        lip = float(np.linalg.norm(self.grad(pts), axis=-1).max())
        gmin = float(gap.min())
        ok = gmin >= -tol * max(1.0, float(np.abs(self.h(pts)).max()))
        ok = ok and eig >= -1e-9 - rel_hess_tol * max(eig_max, 0.0)
        return ConvexityCertificate(bool(ok), gmin, eig, eig_max, lip)

    def to_dict(self) -> dict:
        if self.spec is None:
            raise ValueError("function has no serializable description")
        return dict(self.spec)


def _uniform_disc(rng, size, dim, R):
    d = rng.standard_normal((size, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = R * rng.random(size) ** (1.0 / dim)
    return d * r[:, None]


def h_transform(u: Callable) -> Callable:
    """x -> exp(-2 u(x)) + |x|^2."""
    return lambda x: np.exp(-2 * u(np.asarray(x, dtype=float))) + np.sum(np.asarray(x, dtype=float) ** 2, axis=-1)


def h_inverse(h: Callable) -> Callable:
    """x -> -1/2 log(h(x) - |x|^2); raises where h(x) <= |x|^2."""
    def u(x):
        x = np.asarray(x, dtype=float)
        g = h(x) - np.sum(x * x, axis=-1)
        if np.any(g <= 0):
            raise ValueError("h_inverse domain violation: h(x) - |x|^2 <= 0")
        return -0.5 * np.log(g)
    return u


# --- analytic families -----------------------------------------------------


def constant(c: float, domain_radius: float = 1.0, dim: int = 2) -> HoroconvexFn:
    return HoroconvexFn(
        value_fn=lambda x: np.full(x.shape[:-1], float(c)),
        grad_fn=lambda x: np.zeros(x.shape),
        hess_fn=lambda x: np.zeros(x.shape + (x.shape[-1],)),
        domain_radius=domain_radius, dim=dim,
        spec={"family": "constant", "c": float(c), "domain_radius": domain_radius, "dim": dim})


def quadratic_u(c: float, b, M, center=None, domain_radius: float = 1.0) -> HoroconvexFn:
    """u(y) = c + <b, y-x0> + 1/2 <M (y-x0), y-x0>; horoconvexity is not implied."""
    b = np.asarray(b, dtype=float)
    M = np.asarray(M, dtype=float)
    M = 0.5 * (M + M.T)
    x0 = np.zeros(len(b)) if center is None else np.asarray(center, dtype=float)

    def val(x):
        y = x - x0
        return c + y @ b + 0.5 * np.einsum("...i,ij,...j->...", y, M, y)

    return HoroconvexFn(
        value_fn=val,
        grad_fn=lambda x: b + (x - x0) @ M,
        hess_fn=lambda x: np.broadcast_to(M, x.shape + (len(b),)).copy(),
        domain_radius=domain_radius, dim=len(b),
        spec={"family": "quadratic_u", "c": float(c), "b": b.tolist(), "M": M.tolist(),
              "center": x0.tolist(), "domain_radius": domain_radius})


def quadratic_h(h0: float, b, A, quartic: float = 0.0, domain_radius: float = 1.0) -> HoroconvexFn:
    """u = -1/2 log(h - |x|^2) with h = h0 + <b,x> + 1/2 x^T A x + quartic |x|^4.

    Horoconvex whenever A is positive semidefinite and quartic >= 0.
    """
    b = np.asarray(b, dtype=float)
    A = np.asarray(A, dtype=float)
    A = 0.5 * (A + A.T)
    d = len(b)
    q = float(quartic)

    def g_parts(x):
        r2 = np.sum(x * x, axis=-1)
        g = h0 + x @ b + 0.5 * np.einsum("...i,ij,...j->...", x, A, x) + q * r2 ** 2 - r2
        gg = b + x @ A + (4 * q * r2)[..., None] * x - 2 * x
        gH = (A - 2 * np.eye(d)) + 4 * q * (r2[..., None, None] * np.eye(d)
                                           + 2 * x[..., :, None] * x[..., None, :])
        return g, gg, gH

    def val(x):
        g = g_parts(x)[0]
        if np.any(g <= 0):
            raise ValueError("quadratic_h: h - |x|^2 <= 0 inside evaluation set")
        return -0.5 * np.log(g)

    def grad(x):
        g, gg, _ = g_parts(x)
        return -gg / (2 * g[..., None])

    def hess(x):
        g, gg, gH = g_parts(x)
        return -gH / (2 * g[..., None, None]) + gg[..., :, None] * gg[..., None, :] / (2 * g[..., None, None] ** 2)

    return HoroconvexFn(val, domain_radius, grad, hess, dim=d,
                        spec={"family": "quadratic_h", "h0": float(h0), "b": b.tolist(), "A": A.tolist(),
                              "quartic": q, "domain_radius": domain_radius})


def ball_graph(radius: float, center_zeta: float = 0.0, center_xi=None, domain_radius: float = None) -> HoroconvexFn:
    """Outer (large-zeta) sheet of the boundary of a hyperbolic ball.

    The ball has hyperbolic radius ``radius`` and centre at chart point
    (center_xi, center_zeta).  In half-space terms it is a Euclidean ball with
    centre height zc cosh R and radius zc sinh R, zc = exp(-center_zeta).
    """
    zc = np.exp(-center_zeta)
    Z = zc * np.cosh(radius)
    rho = zc * np.sinh(radius)
    xc = np.zeros(2) if center_xi is None else np.asarray(center_xi, dtype=float)
    d = len(xc)
    if domain_radius is None:
        domain_radius = 0.8 * rho
    if domain_radius >= rho:
        raise ValueError("domain must lie strictly inside the ball's shadow")

    def parts(x):
        y = x - xc
        s = np.sqrt(rho ** 2 - np.sum(y * y, axis=-1))
        z = Z - s
        dz = y / s[..., None]
        ddz = np.eye(d) / s[..., None, None] + y[..., :, None] * y[..., None, :] / s[..., None, None] ** 3
        return z, dz, ddz

    def val(x):
        return -np.log(parts(x)[0])

    def grad(x):
        z, dz, _ = parts(x)
        return -dz / z[..., None]

    def hess(x):
        z, dz, ddz = parts(x)
        return -ddz / z[..., None, None] + dz[..., :, None] * dz[..., None, :] / z[..., None, None] ** 2

    return HoroconvexFn(val, domain_radius, grad, hess, dim=d,
                        spec={"family": "ball", "radius": float(radius), "center_zeta": float(center_zeta),
                              "center_xi": xc.tolist(), "domain_radius": domain_radius})


def corner(offsets, slopes, domain_radius: float = 1.0) -> HoroconvexFn:
    """u with h_u = max_i(a_i + <b_i, x>): an intersection of half-spaces.

    A totally geodesic plane is exactly a graph with affine h, so each piece
    is a geodesic face (Sect = -1) and creases are geodesic edges.
    Derivatives are those of the active piece (defined off the creases).
    """
    a = np.asarray(offsets, dtype=float)
    B = np.asarray(slopes, dtype=float)
    d = B.shape[1]

    def active(x):
        vals = a + x @ B.T
        i = np.argmax(vals, axis=-1)
        m = np.take_along_axis(vals, i[..., None], -1)[..., 0] - np.sum(x * x, axis=-1)
        return m, B[i] - 2 * x

    def val(x):
        m, _ = active(x)
        if np.any(m <= 0):
            raise ValueError("corner: h - |x|^2 must be positive")
        return -0.5 * np.log(m)

    def grad(x):
        m, dm = active(x)
        return -dm / (2 * m[..., None])

    def hess(x):
        m, dm = active(x)
        return (np.eye(d) / m[..., None, None]
                + dm[..., :, None] * dm[..., None, :] / (2 * m[..., None, None] ** 2))

    return HoroconvexFn(val, domain_radius, grad, hess, dim=d,
                        spec={"family": "corner", "offsets": a.tolist(), "slopes": B.tolist(),
                              "domain_radius": domain_radius})


def _bspline_bases(t, x, k=3):
    """Span index and the nonzero B-spline values of degrees 1..k at x (NURBS-book recursion)."""
    i = np.clip(np.searchsorted(t, x, side="right") - 1, k, len(t) - k - 2)
    left = [None] + [x - t[i + 1 - j] for j in range(1, k + 1)]
    right = [None] + [t[i + j] - x for j in range(1, k + 1)]
    N = [np.ones_like(x)]
    out = {}
    for j in range(1, k + 1):
        saved = np.zeros_like(x)
        nxt = []
        for r in range(j):
            tmp = N[r] / (right[r + 1] + left[j - r])
            nxt.append(saved + right[r + 1] * tmp)
            saved = left[j - r] * tmp
        N = nxt + [saved]
        out[j] = np.stack(N, -1)
    return i, out


def _diff_coeffs(C, t, k, axis):
    """Coefficients of the derivative spline along ``axis`` (degree k-1, knots t[1:-1])."""
    n = C.shape[axis]
    den = (t[k + 1:n + k] - t[1:n]) / k
    shape = [1, 1]
    shape[axis] = n - 1
    return np.diff(C, axis=axis) / den.reshape(shape)


class _Bicubic:
    """Vectorized derivatives up to second order of a fitted bicubic tensor spline."""

    def __init__(self, spl):
        self.tx, self.ty = spl.get_knots()
        nx, ny = len(self.tx) - 4, len(self.ty) - 4
        C = spl.get_coeffs().reshape(nx, ny)
        Cx = _diff_coeffs(C, self.tx, 3, 0)
        Cy = _diff_coeffs(C, self.ty, 3, 1)
        self.C = {(0, 0): C, (1, 0): Cx, (0, 1): Cy, (1, 1): _diff_coeffs(Cx, self.ty, 3, 1),
                  (2, 0): _diff_coeffs(Cx, self.tx[1:-1], 2, 0), (0, 2): _diff_coeffs(Cy, self.ty[1:-1], 2, 1)}

    def __call__(self, px, py, orders):
        ix, bx = _bspline_bases(self.tx, px)
        iy, by = _bspline_bases(self.ty, py)
        out = []
        for dx, dy in orders:
            Nx, Ny = bx[3 - dx], by[3 - dy]
            gx = ix[:, None] - 3 + np.arange(4 - dx)
            gy = iy[:, None] - 3 + np.arange(4 - dy)
            blk = self.C[(dx, dy)][gx[:, :, None], gy[:, None, :]]
            out.append(np.einsum("pa,pab,pb->p", Nx, blk, Ny))
        return out


def gridded_h(xs, ys, hvals, domain_radius: float, spacing: float = None) -> HoroconvexFn:
    """u from h sampled on a rectangular grid, bicubic spline on the h side."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    hvals = np.asarray(hvals, dtype=float)
    ev = _Bicubic(interpolate.RectBivariateSpline(xs, ys, hvals, kx=3, ky=3))

    def hvals_at(x, orders):
        shp = x.shape[:-1]
        return [v.reshape(shp) for v in ev(x[..., 0].ravel(), x[..., 1].ravel(), orders)]

    def u_of(x, h):
        gap = h - np.sum(x * x, axis=-1)
        if np.any(gap <= 0):
            raise ValueError("gridded h: h - |x|^2 <= 0")
        return -0.5 * np.log(gap)

    def val(x):
        return u_of(x, hvals_at(x, [(0, 0)])[0])

    def grad(x):
        h, hx, hy = hvals_at(x, [(0, 0), (1, 0), (0, 1)])
        return (x - 0.5 * np.stack([hx, hy], -1)) / (h - np.sum(x * x, axis=-1))[..., None]

    def hess(x):
        h, hx, hy, hxx, hxy, hyy = hvals_at(x, [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)])
        g = np.stack([hx, hy], -1)
        H = np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)
        return jet_from_h(x, u_of(x, h), g, H).hess

    if spacing is None:
        spacing = float(xs[1] - xs[0])
    return HoroconvexFn(val, domain_radius, grad, hess, dim=2,
                        spec={"family": "grid", "xs": xs.tolist(), "ys": ys.tolist(), "h": hvals.tolist(),
                              "domain_radius": domain_radius, "spacing": spacing,
                              "interpolation": "bicubic-h"})


def from_dict(d: dict) -> HoroconvexFn:
    fam = d["family"]
    if fam == "constant":
        return constant(d["c"], d["domain_radius"], d.get("dim", 2))
    if fam == "quadratic_u":
        return quadratic_u(d["c"], d["b"], d["M"], d["center"], d["domain_radius"])
    if fam == "quadratic_h":
        return quadratic_h(d["h0"], d["b"], d["A"], d["quartic"], d["domain_radius"])
    if fam == "ball":
        return ball_graph(d["radius"], d["center_zeta"], d["center_xi"], d["domain_radius"])
    if fam == "corner":
        return corner(d["offsets"], d["slopes"], d["domain_radius"])
    if fam == "grid":
        return gridded_h(d["xs"], d["ys"], d["h"], d["domain_radius"], d.get("spacing"))
    raise ValueError(f"unknown horoconvex family {fam!r}")


def random_smooth(seed: int, domain_radius: float = 0.6, min_sect: float = 0.6) -> HoroconvexFn:
    """Random smooth horoconvex function with curvature bounded away from flat.

    h = h0 + <b,x> + 1/2 x^T A x + q |x|^4 with A positive definite chosen so
    that the principal curvatures at the origin (eig(A)/2 when b = 0) have
    product at least 1 + min_sect.
    """
    rng = np.random.default_rng(seed)
    lo = 2.0 * np.sqrt(1.0 + min_sect)
    evals = rng.uniform(lo, lo + 2.0, size=2)
    th = rng.uniform(0, np.pi)
    Q = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    A = Q @ np.diag(evals) @ Q.T
    b = rng.uniform(-0.15, 0.15, size=2)
    h0 = rng.uniform(0.7, 1.3)
    q = rng.uniform(0.0, 0.5)
    return quadratic_h(h0, b, A, q, domain_radius)


# ---------------------------------------------------------------------------
# osculating quadratic, area density, shape operator


def osculating_quadratic(jet: SecondOrderJet, domain_radius: float = 1.0) -> HoroconvexFn:
    return quadratic_u(float(jet.value), jet.grad, jet.hess, center=jet.x, domain_radius=domain_radius)


def first_fundamental_form(jet: SecondOrderJet) -> np.ndarray:
    e2u = np.exp(2 * np.asarray(jet.value))
    d = jet.grad.shape[-1]
    return e2u[..., None, None] * np.eye(d) + jet.grad[..., :, None] * jet.grad[..., None, :]


def area_density(jet: SecondOrderJet):
    """sqrt(det g); for n = 3 this is sqrt(e^{4u} + e^{2u} |grad u|^2)."""
    u = np.asarray(jet.value)
    d = jet.grad.shape[-1]
    g2 = np.sum(jet.grad ** 2, axis=-1)
    return np.exp(d * u) * np.sqrt(1.0 + np.exp(-2 * u) * g2)


@dataclass(frozen=True, eq=False)
class ShapeData:
    principal: np.ndarray      # (..., n-1) ascending
    e1: np.ndarray
    e2: np.ndarray
    area_density: np.ndarray
    sect: np.ndarray           # e2 - 1 (n = 3 only; nan otherwise)


def shape_matrix(jet: SecondOrderJet) -> np.ndarray:
    """Second fundamental form w.r.t. the inward normal, in graph coordinates.

    From the ambient Christoffel symbols of e^{2 zeta}|dxi|^2 + dzeta^2:
    II_ij = (e^{2u} delta_ij + 2 u_i u_j - u_ij) / sqrt(1 + e^{-2u}|grad u|^2).
    """
    u = np.asarray(jet.value)
    d = jet.grad.shape[-1]
    e2u = np.exp(2 * u)
    N = np.sqrt(1.0 + np.sum(jet.grad ** 2, axis=-1) / e2u)
    M = e2u[..., None, None] * np.eye(d) + 2 * jet.grad[..., :, None] * jet.grad[..., None, :] - jet.hess
    return M / N[..., None, None]


def shape_operator(jet: SecondOrderJet) -> ShapeData:
    g = first_fundamental_form(jet)
    II = shape_matrix(jet)
    # symmetric generalized eigenproblem via Cholesky of g
    L = np.linalg.cholesky(g)
    Linv = np.linalg.inv(L)
    S = Linv @ II @ np.swapaxes(Linv, -1, -2)
    k = np.linalg.eigvalsh(0.5 * (S + np.swapaxes(S, -1, -2)))
    d = k.shape[-1]
    e1 = k.sum(axis=-1)
    if d == 2:
        e2 = k[..., 0] * k[..., 1]
        sect = e2 - 1.0
    else:
        e2 = 0.5 * (e1 ** 2 - np.sum(k ** 2, axis=-1))
        sect = np.full(e1.shape, np.nan)
    return ShapeData(k, e1, e2, area_density(jet), sect)


def graph_point(frame: hc.HoroFrame, u: HoroconvexFn, x):
    x = np.asarray(x, dtype=float)
    return hc.horo_chart(frame, x, u(x))


def graph_normal(frame: hc.HoroFrame, jet: SecondOrderJet):
    """Outward unit normal (toward increasing zeta) at graph points, in H^n."""
    J = hc.horo_chart_jacobian(frame, jet.x, jet.value)
    e2u = np.exp(2 * np.asarray(jet.value))
    Nxi = -jet.grad / e2u[..., None]
    v = np.einsum("...ai,...i->...a", J[..., :-1], Nxi) + J[..., -1]
    return v / hc.mnorm(v)[..., None]


def graph_tangents(frame: hc.HoroFrame, jet: SecondOrderJet):
    """Images of the coordinate directions, shape (..., n-1, n+1)."""
    J = hc.horo_chart_jacobian(frame, jet.x, jet.value)
    T = J[..., :-1] + J[..., -1:] * jet.grad[..., None, :]
    return np.swapaxes(T, -1, -2)


# ---------------------------------------------------------------------------
# reparametrization over the interior tangent horosphere


def vertical_crossing(frame_q: hc.HoroFrame, frame: hc.HoroFrame, u: HoroconvexFn, xi,
                      lo: float = -1.0, hi: float = 1.0, iters: int = 80):
    """zeta' where the frame_q-vertical geodesic over xi meets the graph of u.

    Bisection on phi(zeta') = u(xi_old) - zeta_old (positive on the body side).
    The lower end is raised toward 0 per point until it lies under the graph
    (deep probes can leave the chart disc).  Returns nan where no bracket is found.
    """
    xi = np.asarray(xi, dtype=float)

    def phi(z):
        x_old, z_old = hc.horo_unchart(frame, hc.horo_chart(frame_q, xi, z))
        inside = np.linalg.norm(x_old, axis=-1) <= u.domain_radius
        out = np.full(z.shape, -np.inf)
        if np.any(inside):
            out[inside] = u(x_old[inside]) - z_old[inside]
        return out

    a = np.full(xi.shape[:-1], lo)
    b = np.full(xi.shape[:-1], hi)
    fa, fb = phi(a), phi(b)
    for frac in (0.5, 0.25, 0.1, 0.05, 0.02, 0.01):
        bad = ~(fa > 0)
        if not np.any(bad):
            break
        a = np.where(bad, lo * frac, a)
        fa = np.where(bad, phi(a), fa)
    ok = (fa > 0) & (fb < 0)
    for _ in range(iters):
        m = 0.5 * (a + b)
        fm = phi(m)
        pos = fm > 0
        a = np.where(pos, m, a)
        b = np.where(pos, b, m)
    return np.where(ok, 0.5 * (a + b), np.nan)


@dataclass(frozen=True, eq=False)
class TangentReparam:
    frame: hc.HoroFrame           # interior tangent horosphere at q
    u: HoroconvexFn               # implicit u_q (root-finding evaluator)
    jet: SecondOrderJet           # transported jet of u_q at 0
    point: np.ndarray             # q in H^n
    radius: float


def tangent_reparam(K, x0, eps: float = 0.3, tries: int = 5) -> TangentReparam:
    """Reparametrize the boundary near q = (x0, u(x0)) over its tangent horosphere.

    K is a HoroGraphBody.  The new frame has base q, normal the outward unit
    normal at q (so u_q(0) = 0 and grad u_q(0) = 0); its tangent frame is the
    Gram-Schmidt completion of the images of the old coordinate directions.
    The returned jet is the analytic transport of the second fundamental form:
    hess u_q(0) = I - II(e_i, e_j).
    """
    frame, u = K.frame, K.u
    x0 = np.asarray(x0, dtype=float)
    jet = u.jet(x0)
    q = hc.horo_chart(frame, x0, jet.value)
    nu = graph_normal(frame, jet)
    T = graph_tangents(frame, jet)
    fq = hc.HoroFrame.from_point_normal(q, nu, hints=list(T))
    # coordinate preimages of the new orthonormal tangent frame
    A = np.linalg.lstsq(T.T, fq.tangent.T, rcond=None)[0]   # (n-1, n-1): columns a_i
    II = shape_matrix(jet)
    M = A.T @ II @ A
    d = len(x0)
    Hq = np.eye(d) - M
    jet_q = SecondOrderJet(np.zeros(d), np.array(0.0), np.zeros(d), 0.5 * (Hq + Hq.T))

    r = eps
    for _ in range(tries):
        probe = r * np.array([[np.cos(t), np.sin(t)] for t in np.linspace(0, 2 * np.pi, 17)]) if d == 2 \
            else r * np.eye(d)
        z = vertical_crossing(fq, frame, u, probe)
        if np.all(np.isfinite(z)):
            break
        r *= 0.5
    else:
        raise HorographError("tangent reparametrization left the chart; boundary not found")

    def uq(xi):
        xi = np.asarray(xi, dtype=float)
        z = vertical_crossing(fq, frame, u, xi)
        if np.any(~np.isfinite(z)):
            raise HorographError("u_q evaluation outside the reparametrized patch")
        return z

    return TangentReparam(fq, HoroconvexFn(uq, r, dim=d), jet_q, q, r)


def stable_hessian(f, x, h: float = 0.02, rel_tol: float = DEFAULT.normality_rel):
    """Central-difference Hessians at h, h/2, h/4; raises if they disagree.

    Returns the finest estimate and the relative spreads.
    """
    Hs = [fd_hessian(f, np.asarray(x, dtype=float), h / 2 ** k) for k in range(3)]
    scale = max(np.linalg.norm(Hs[-1]), 1e-3)
    spreads = [float(np.linalg.norm(Hs[k] - Hs[-1]) / scale) for k in range(2)]
    if max(spreads) > rel_tol:
        raise NonNormalPointError(f"Hessian estimates diverge under refinement (spreads {spreads})")
    return Hs[-1], spreads


def loccurv(K, x0, h: float = 0.02, eps: float = 0.3) -> float:
    """Local curvature at a numerically normal point of a horograph body (n = 3).

    Sect of the osculating quadratic of the tangent reparametrization u_q,
    with the Hessian of u_q taken from stabilized finite differences.
    """
    rep = tangent_reparam(K, x0, eps)
    H, _ = stable_hessian(rep.u, np.zeros(2), min(h, 0.25 * rep.radius))
    jet = SecondOrderJet(np.zeros(2), np.array(0.0), np.zeros(2), 0.5 * (H + H.T))
    return float(shape_operator(jet).sect)


# ---------------------------------------------------------------------------
# mollification


def _bump(r):
    out = np.zeros_like(r)
    m = r < 1.0
    out[m] = np.exp(-1.0 / (1.0 - r[m] ** 2))
    return out


def mollify(u: HoroconvexFn, j: float, spacing: float = None) -> HoroconvexFn:
    """Smooth horoconvex approximation: mollify h_u at width 1/j, invert.

    h_u is sampled on a square grid covering the domain disc, convolved with a
    normalized bump of radius 1/j (convexity is preserved by averaging), and
    interpolated bicubically.  The domain shrinks to R - 1/j.  The grid samples
    are exactly convex; the interpolant is convex up to its second-derivative
    error, which shows where h_u is flat (certify with ``rel_hess_tol``).
    """
    R = u.domain_radius
    w = 1.0 / j
    if R - w <= 0:
        raise ValueError("mollification width exceeds domain radius")
    if spacing is None:
        spacing = min(w / 16.0, R / 200.0)
    k = int(np.ceil(w / spacing))
    m = int(np.ceil(R / spacing))
    grid = spacing * np.arange(-m, m + 1)
    X, Y = np.meshgrid(grid, grid, indexing="ij")
    H = u.h(np.stack([X, Y], -1))
    kk = spacing * np.arange(-k, k + 1)
    KX, KY = np.meshgrid(kk, kk, indexing="ij")
    ker = _bump(np.sqrt(KX ** 2 + KY ** 2) / w)
    ker /= ker.sum()
    Hs = signal.fftconvolve(H, ker, mode="valid")
    g2 = grid[k:len(grid) - k]
    new_R = min(R - w, float(g2[-1]))
    out = gridded_h(g2, g2, Hs, new_R, spacing)
    if np.any(Hs - (g2[:, None] ** 2 + g2[None, :] ** 2) <= 0):
        raise ValueError("mollified h violates h > |x|^2; shrink the domain")
    return out
