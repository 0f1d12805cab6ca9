"""Hyperbolic-space kernel in the hyperboloid (Minkowski) model.

Points of H^n are arrays whose last axis has length n+1 and satisfy
<x, x> = -1, x_0 >= 1, with <x, y> = -x_0 y_0 + sum_i x_i y_i.  Every function
here broadcasts over leading axes, so a batch of points is an array of shape
(..., n+1).  Tangent vectors at p are arrays v with <p, v> = 0.

Horospherical charts (xi, zeta) are built from a :class:`HoroFrame`; the
pulled-back metric is exp(2 zeta) |dxi|^2 + dzeta^2 and zeta grows along the
frame normal, i.e. away from the ideal centre of the reference horosphere.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import gamma, pi
from typing import NamedTuple

import numpy as np
from scipy import integrate

from .config import DEFAULT, Tolerances


# ---------------------------------------------------------------------------
# Minkowski algebra


def mdot(x, y):
    """Minkowski bilinear form, broadcast over leading axes."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return -x[..., 0] * y[..., 0] + np.sum(x[..., 1:] * y[..., 1:], axis=-1)


def mnorm(v):
    """Norm of a spacelike (tangent) vector."""
    return np.sqrt(np.maximum(mdot(v, v), 0.0))


def minkowski_metric(n: int) -> np.ndarray:
    J = np.eye(n + 1)
    J[0, 0] = -1.0
    return J


def origin(n: int) -> np.ndarray:
    x = np.zeros(n + 1)
    x[0] = 1.0
    return x


def normalize_point(x):
    """Rescale a future timelike vector onto the upper hyperboloid sheet."""
    x = np.asarray(x, dtype=float)
    q = -mdot(x, x)
    if np.any(q <= 0):
        raise ValueError("vector is not timelike; cannot normalize onto H^n")
    x = x / np.sqrt(q)[..., None]
    return np.where(x[..., :1] < 0, -x, x)


def make_point(coords, tol: Tolerances = DEFAULT) -> np.ndarray:
    """Validate Minkowski coordinates as a point (or batch) of H^n."""
    x = np.asarray(coords, dtype=float)
    if x.shape[-1] < 3:
        raise ValueError("ambient dimension n must be at least 2")
    err = np.abs(mdot(x, x) + 1.0)
    if np.any(err > tol.hyperboloid * np.maximum(1.0, x[..., 0] ** 2)):
        raise ValueError(f"not on the hyperboloid (max |<x,x>+1| = {err.max():.3e})")
    if np.any(x[..., 0] < 1.0 - tol.hyperboloid):
        raise ValueError("point on the lower sheet")
    return x


def point_from_euclidean(y) -> np.ndarray:
    """Lift y in R^n to the hyperboloid point (sqrt(1+|y|^2), y)."""
    y = np.asarray(y, dtype=float)
    x0 = np.sqrt(1.0 + np.sum(y * y, axis=-1))
    return np.concatenate([x0[..., None], y], axis=-1)


def project_tangent(p, v):
    """Minkowski-orthogonal projection of v onto T_p H^n."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    return v + mdot(p, v)[..., None] * p


def _check_dims(p, q):
    if np.shape(p)[-1] != np.shape(q)[-1]:
        raise ValueError(f"dimension mismatch: {np.shape(p)[-1]} vs {np.shape(q)[-1]}")


# ---------------------------------------------------------------------------
# distance, exp, log


def dist(p, q):
    """Hyperbolic distance arccosh(-<p,q>).

    Evaluated as 2 asinh(|p - q|_M / 2), which equals arccosh of the clamped
    inner product but keeps full relative accuracy for nearby points.
    """
    _check_dims(p, q)
    d = np.asarray(p, dtype=float) - np.asarray(q, dtype=float)
    chord = np.maximum(mdot(d, d), 0.0)
    return 2.0 * np.arcsinh(0.5 * np.sqrt(chord))


def exp_map(base, vec, t=1.0, tol: Tolerances = DEFAULT):
    """cosh(t) base + sinh(t) vec for a unit tangent vec, renormalized."""
    base = np.asarray(base, dtype=float)
    vec = np.asarray(vec, dtype=float)
    _check_dims(base, vec)
    nrm = mdot(vec, vec)
    if np.any(np.abs(nrm - 1.0) > tol.unit_tangent):
        raise ValueError("exp_map requires a unit tangent vector")
    t = np.asarray(t, dtype=float)[..., None]
    x = np.cosh(t) * base + np.sinh(t) * vec
    return normalize_point(x)


class LogResult(NamedTuple):
    vec: np.ndarray
    length: np.ndarray
    degenerate: np.ndarray


def log_map(p, q) -> LogResult:
    """Unit tangent at p pointing to q, plus dist(p, q).

    Where p == q the direction is undefined: an arbitrary unit tangent is
    returned with length 0 and ``degenerate`` set.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    _check_dims(p, q)
    p, q = np.broadcast_arrays(p, q)
    u = q + mdot(p, q)[..., None] * p
    nu = mnorm(u)
    length = dist(p, q)
    degenerate = nu < 1e-300
    safe = np.where(degenerate, 1.0, nu)[..., None]
    vec = u / safe
    if np.any(degenerate):
        fallback = tangent_frame(p)[..., 0, :]
        vec = np.where(degenerate[..., None], fallback, vec)
        length = np.where(degenerate, 0.0, length)
    # one Gram-Schmidt pass against p and renormalization
    vec = project_tangent(p, vec)
    vec = vec / mnorm(vec)[..., None]
    return LogResult(vec, length, degenerate)


def geodesic_point(p, q, s):
    """Point at fraction s along the geodesic from p to q."""
    v, d, _ = log_map(p, q)
    s = np.asarray(s, dtype=float)
    t = s * d
    return normalize_point(np.cosh(t)[..., None] * p + np.sinh(t)[..., None] * v)


def midpoint(p, q):
    return normalize_point(np.asarray(p, dtype=float) + np.asarray(q, dtype=float))


def boost(c) -> np.ndarray:
    """Lorentz transformation mapping the origin to c (pure boost)."""
    c = np.asarray(c, dtype=float)
    n1 = c.shape[-1]
    cs = c[..., 1:]
    L = np.zeros(c.shape[:-1] + (n1, n1))
    L[..., 0, 0] = c[..., 0]
    L[..., 0, 1:] = cs
    L[..., 1:, 0] = cs
    L[..., 1:, 1:] = np.eye(n1 - 1) + cs[..., :, None] * cs[..., None, :] / (1.0 + c[..., 0])[..., None, None]
    return L


def tangent_frame(p) -> np.ndarray:
    """Orthonormal basis of T_p H^n, shape (..., n, n+1)."""
    L = boost(p)
    return np.swapaxes(L[..., :, 1:], -1, -2)


# ---------------------------------------------------------------------------
# horospherical charts


@dataclass(frozen=True, eq=False)
class HoroFrame:
    """Reference horosphere through ``base_point`` with unit normal ``normal``.

    ``tangent`` holds an orthonormal frame of the horosphere at the base point
    (shape (n-1, n+1)).  zeta increases along ``normal``; the ideal centre of
    the reference horosphere is the light-like direction base_point - normal.
    """

    base_point: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray

    @property
    def n(self) -> int:
        return self.base_point.shape[-1] - 1

    @property
    def ideal_direction(self) -> np.ndarray:
        return self.base_point - self.normal

    @classmethod
    def standard(cls, n: int) -> "HoroFrame":
        eye = np.eye(n + 1)
        return cls(origin(n), eye[n].copy(), eye[1:n].copy())

    @classmethod
    def from_point_normal(cls, p, normal, hints=None) -> "HoroFrame":
        """Complete (p, normal) to a frame by Gram-Schmidt in a fixed order.

        Candidates are ``hints`` (if given) followed by the Minkowski basis
        vectors e_1..e_n; the first n-1 that survive orthogonalization are kept.
        """
        p = make_point(p, Tolerances(hyperboloid=1e-9))
        nu = project_tangent(p, normal)
        nu = nu / mnorm(nu)
        n = p.shape[-1] - 1
        cands = [] if hints is None else [np.asarray(h, dtype=float) for h in hints]
        cands += list(np.eye(n + 1)[1:])
        basis: list[np.ndarray] = []
        for c in cands:
            v = project_tangent(p, c)
            v = v - mdot(v, nu) * nu
            for b in basis:
                v = v - mdot(v, b) * b
            nv = mnorm(v)
            if nv > 1e-8:
                v = v / nv
                # second pass for orthogonality to round-off
                v = project_tangent(p, v) - mdot(v, nu) * nu
                for b in basis:
                    v = v - mdot(v, b) * b
                basis.append(v / mnorm(v))
            if len(basis) == n - 1:
                break
        return cls(p.copy(), nu, np.array(basis))

    def to_dict(self) -> dict:
        return {
            "base_point": self.base_point.tolist(),
            "normal": self.normal.tolist(),
            "tangent": self.tangent.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HoroFrame":
        return cls(np.array(d["base_point"], dtype=float), np.array(d["normal"], dtype=float),
                   np.array(d["tangent"], dtype=float).reshape(-1, len(d["base_point"])))


def horo_chart(frame: HoroFrame, xi, zeta):
    """Point with horospherical coordinates (xi, zeta) relative to ``frame``."""
    xi = np.asarray(xi, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    s = np.sum(xi * xi, axis=-1)
    ez = np.exp(zeta)
    a0 = np.cosh(zeta) + 0.5 * s * ez
    an = np.sinh(zeta) - 0.5 * s * ez
    x = (a0[..., None] * frame.base_point + an[..., None] * frame.normal
         + ez[..., None] * (xi @ frame.tangent))
    return x


def horo_unchart(frame: HoroFrame, x):
    """Inverse of :func:`horo_chart`: returns (xi, zeta)."""
    x = np.asarray(x, dtype=float)
    a = -mdot(x, frame.ideal_direction)
    zeta = np.log(a)
    xi = np.einsum("...j,kj->...k", x * np.r_[-1.0, np.ones(x.shape[-1] - 1)], frame.tangent) / a[..., None]
    return xi, zeta


def chart_contraction(frame: HoroFrame, a, b):
    """(|xi_a - xi_b|, e^{max(|zeta_a|, |zeta_b|)} d(a, b)).

    The second bounds the first only to first order in d. The exact relation is
    |xi_a - xi_b|^2 = 4 z_a z_b sinh^2(d/2) - (z_a - z_b)^2 with z = e^{-zeta}, so
    2 e^{max(|zeta_a|, |zeta_b|)} sinh(d/2) is a bound that always holds.
    """
    xa, za = horo_unchart(frame, a)
    xb, zb = horo_unchart(frame, b)
    lhs = np.linalg.norm(xa - xb, axis=-1)
    rhs = np.exp(np.maximum(np.abs(za), np.abs(zb))) * dist(a, b)
    return lhs, rhs


def horo_chart_jacobian(frame: HoroFrame, xi, zeta) -> np.ndarray:
    """d chart / d(xi, zeta), shape (..., n+1, n); last column is d/dzeta."""
    xi = np.asarray(xi, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    ez = np.exp(zeta)
    s = np.sum(xi * xi, axis=-1)
    ell = frame.ideal_direction
    dxi = ez[..., None, None] * (frame.tangent + xi[..., :, None] * ell)
    dz = ((np.sinh(zeta) + 0.5 * s * ez)[..., None] * frame.base_point
          + (np.cosh(zeta) - 0.5 * s * ez)[..., None] * frame.normal
          + ez[..., None] * (xi @ frame.tangent))
    J = np.concatenate([np.swapaxes(dxi, -1, -2), dz[..., :, None]], axis=-1)
    return J


# ---------------------------------------------------------------------------
# tube basis and balls

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _b3(k: int, rho):
    sh, ch = np.sinh(rho), np.cosh(rho)
    if k == 0:
        return 0.5 * (rho + sh * ch)
    if k == 1:
        return 0.5 * sh * sh
    # (sinh 2r - 2r)/4, series near 0 avoids cancellation
    out = 0.5 * (sh * ch - rho)
    small = np.abs(rho) < 0.1
    if np.any(small):
        y = 2.0 * np.where(small, rho, 0.0)
        term = y ** 3 / 6.0
        acc = term.copy()
        for j in range(2, 10):
            term = term * y * y / ((2 * j) * (2 * j + 1))
            acc = acc + term
        out = np.where(small, 0.25 * acc, out)
    return out


def _b2(k: int, rho):
    if k == 0:
        return np.sinh(rho)
    return 2.0 * np.sinh(0.5 * rho) ** 2


def _tube_quadrature(n: int, k: int, rho):
    """Composite Gauss-Legendre for int_0^rho sinh^k cosh^(n-1-k)."""
    rho = np.asarray(rho, dtype=float)
    panels = max(1, int(np.ceil(np.max(rho, initial=0.0) / 0.5)))
    t = (_GL_NODES + 1.0) / 2.0
    nodes = ((np.arange(panels)[:, None] + t[None, :]) / panels).ravel()
    weights = np.tile(_GL_WEIGHTS / 2.0, panels) / panels
    x = rho[..., None] * nodes
    f = np.sinh(x) ** k * np.cosh(x) ** (n - 1 - k)
    return rho * np.sum(f * weights, axis=-1)


def tube_basis_eval(n: int, k: int, rho):
    """b_k(rho) = int_0^rho sinh^k(x) cosh^(n-1-k)(x) dx, k = 0..n-1.

    Closed forms for n = 2, 3; composite Gauss-Legendre otherwise.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if not 0 <= k <= n - 1:
        raise ValueError(f"basis index k={k} out of range 0..{n - 1}")
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("rho must be non-negative")
    if n == 3:
        return _b3(k, rho)
    if n == 2:
        return _b2(k, rho)
    return _tube_quadrature(n, k, rho)


def tube_basis_matrix(n: int, rhos) -> np.ndarray:
    """Design matrix B[i, k] = b_k(rho_i)."""
    rhos = np.asarray(rhos, dtype=float)
    return np.stack([tube_basis_eval(n, k, rhos) for k in range(n)], axis=-1)


def alt_tube_basis(n: int, r: int, rho):
    """The alternative indexing int_0^rho sinh^(n-r) cosh^r, r = 0..n.

    Kept for inspection only; curvature fits use :func:`tube_basis_eval`.
    """
    if not 0 <= r <= n:
        raise ValueError("r out of range")
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    out = np.array([integrate.quad(lambda x: np.sinh(x) ** (n - r) * np.cosh(x) ** r, 0.0, t,
                                   epsabs=0, epsrel=1e-13)[0] for t in rho.ravel()])
    return out.reshape(rho.shape)


def sphere_area(dim: int) -> float:
    """Area of the unit sphere S^dim in R^(dim+1)."""
    return 2.0 * pi ** ((dim + 1) / 2.0) / gamma((dim + 1) / 2.0)


def ball_volume(n: int, R):
    """Volume of a hyperbolic ball of radius R in H^n."""
    R = np.asarray(R, dtype=float)
    if np.any(R < 0):
        raise ValueError("radius must be non-negative")
    return sphere_area(n - 1) * tube_basis_eval(n, n - 1, R)


def sphere_area_h(n: int, R):
    """Area of the geodesic sphere of radius R in H^n."""
    return sphere_area(n - 1) * np.sinh(np.asarray(R, dtype=float)) ** (n - 1)


# ---------------------------------------------------------------------------
# sampling


def _radial_inverse(n: int, r_in: float, r_out: float, u: np.ndarray) -> np.ndarray:
    """Radii with density proportional to sinh^(n-1) on [r_in, r_out]."""
    F = lambda r: tube_basis_eval(n, n - 1, r)
    f_in, f_out = float(F(r_in)), float(F(r_out))
    target = f_in + u * (f_out - f_in)
    grid = np.linspace(r_in, r_out, 4097)
    r = np.interp(target, F(grid), grid)
    for _ in range(6):
        dens = np.sinh(r) ** (n - 1)
        step = (F(r) - target) / np.maximum(dens, 1e-300)
        r = np.clip(r - step, r_in, r_out)
    return r


def random_directions(rng: np.random.Generator, size: int, n: int) -> np.ndarray:
    g = rng.standard_normal((size, n))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sample_ball(center, r_out: float, size: int, rng: np.random.Generator, r_in: float = 0.0) -> np.ndarray:
    """Volume-uniform samples in the shell r_in <= d(center, x) <= r_out."""
    center = np.asarray(center, dtype=float)
    n = center.shape[-1] - 1
    r = _radial_inverse(n, r_in, r_out, rng.random(size))
    d = random_directions(rng, size, n)
    x = np.empty((size, n + 1))
    x[:, 0] = np.cosh(r)
    x[:, 1:] = np.sinh(r)[:, None] * d
    return x @ boost(center).T
