"""Compactly supported mollifier and the planar Biot-Savart kernel."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicSpline


def _bump(r2):
    """``exp(-1/(1-|y|^2))`` inside the unit ball, 0 outside."""
    r2 = np.asarray(r2, dtype=float)
    inside = r2 < 1.0
    out = np.zeros_like(r2)
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


def _sphere_area(d):
    return 2.0 * math.pi ** (d / 2.0) / special.gamma(d / 2.0)


def gauss_legendre(a, b, n):
    """Nodes and weights of the ``n``-point Gauss-Legendre rule on ``[a, b]``.

    ``a`` and ``b`` may be arrays; the node axis is appended last.
    """
    x, w = np.polynomial.legendre.leggauss(n)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


@dataclass(frozen=True, eq=False)
class MollifierKernel:
    """Normalised bump ``phi(y) = c exp(-1/(1-|y|^2))`` on the unit ball of R^d.

    ``nodes``/``weights`` form a tensor midpoint rule restricted to the
    support, rescaled so the weights sum to one exactly; convolutions that use
    them reproduce constants to round-off.
    """

    dim: int
    nodes_per_axis: int
    norm: float
    nodes: np.ndarray
    weights: np.ndarray
    cell_volume: float

    def profile(self, y):
        y = np.asarray(y, dtype=float)
        return self.norm * _bump(np.sum(y * y, axis=-1))

    def radial(self, rho):
        rho = np.asarray(rho, dtype=float)
        return self.norm * _bump(rho * rho)

    def radial_slope(self, rho):
        """d phi / d rho."""
        rho = np.asarray(rho, dtype=float)
        r2 = rho * rho
        out = np.zeros_like(rho)
        inside = r2 < 1.0
        out[inside] = -2.0 * rho[inside] / (1.0 - r2[inside]) ** 2
        return out * self.radial(rho)

    def grad(self, y):
        y = np.asarray(y, dtype=float)
        r2 = np.sum(y * y, axis=-1)
        fac = np.zeros_like(r2)
        inside = r2 < 1.0
        fac[inside] = -2.0 / (1.0 - r2[inside]) ** 2
        return (fac * self.norm * _bump(r2))[..., None] * y

    def scaled(self, y, eps):
        """``phi_eps(y) = eps^-d phi(y / eps)``."""
        return self.profile(np.asarray(y, dtype=float) / eps) / eps**self.dim

    def mass(self, s):
        """Mass of the kernel inside the ball of radius ``s`` (1 beyond the support)."""
        s = np.asarray(s, dtype=float)
        out = np.ones_like(s)
        inside = s < 1.0
        out[inside] = _mass_spline(self.dim)(np.abs(s[inside]))
        return out

    def mass_exact(self, s):
        """Same as :meth:`mass` by direct Gauss-Legendre quadrature."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
        rho, w = gauss_legendre(0.0, s, 64)
        vals = self.radial(rho) * rho ** (self.dim - 1)
        return _sphere_area(self.dim) * np.sum(vals * w, axis=-1)

    def mass_slope(self, s):
        s = np.asarray(s, dtype=float)
        return _sphere_area(self.dim) * self.radial(s) * s ** (self.dim - 1)

    def marginal(self, s):
        """Planar marginal ``psi(s) = int phi(s, y) dy`` (dimension 2 only)."""
        if self.dim != 2:
            raise ValueError("marginal is defined for the planar kernel")
        s = np.asarray(s, dtype=float)
        top = np.sqrt(np.clip(1.0 - s * s, 0.0, None))
        y, w = gauss_legendre(0.0, top, 64)
        vals = self.norm * _bump(s[..., None] ** 2 + y * y)
        return 2.0 * np.sum(vals * w, axis=-1)

    @property
    def grad_l1(self):
        """``||grad phi||_{L^1}``; the Lipschitz constant of ``f * phi_eps`` is
        at most ``||f||_inf * grad_l1 / eps``."""
        return _grad_l1(self.dim)

    @property
    def grad_sup(self):
        """``||grad phi||_inf``."""
        rho = np.linspace(0.0, 1.0, 20001)
        return float(np.max(np.abs(self.radial_slope(rho))))


@lru_cache(maxsize=None)
def _normalisation(d):
    val, _ = integrate.quad(
        lambda r: math.exp(-1.0 / (1.0 - r * r)) * r ** (d - 1) if r < 1 else 0.0,
        0.0,
        1.0,
        epsabs=0.0,
        epsrel=1e-12,
        limit=200,
    )
    return 1.0 / (_sphere_area(d) * val)


@lru_cache(maxsize=None)
def _grad_l1(d):
    c = _normalisation(d)

    def integrand(r):
        if r >= 1:
            return 0.0
        return 2.0 * r / (1.0 - r * r) ** 2 * math.exp(-1.0 / (1.0 - r * r)) * r ** (d - 1)

    val, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=0.0, epsrel=1e-12, limit=200)
    return c * _sphere_area(d) * val


@lru_cache(maxsize=None)
def _mass_spline(d):
    s = np.linspace(0.0, 1.0, 4001)
    c = _normalisation(d)
    rho, w = gauss_legendre(0.0, s, 64)
    vals = c * _bump(rho * rho) * rho ** (d - 1)
    m = _sphere_area(d) * np.sum(vals * w, axis=-1)
    return CubicSpline(s, m)


@lru_cache(maxsize=8)
def mollifier_kernel(dim=2, nodes_per_axis=32):
    """Build (and cache) the standard mollifier with its convolution rule."""
    n = int(nodes_per_axis)
    c = _normalisation(dim)
    ticks = -1.0 + (np.arange(n) + 0.5) * (2.0 / n)
    grids = np.meshgrid(*([ticks] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    vals = c * _bump(np.sum(pts * pts, axis=-1))
    keep = vals > 0
    pts, vals = pts[keep], vals[keep]
    vol = (2.0 / n) ** dim
    w = vals * vol
    w = w / w.sum()
    pts.setflags(write=False)
    w.setflags(write=False)
    return MollifierKernel(dim, n, c, pts, w, vol)


# ---------------------------------------------------------------------------
# Biot-Savart kernel K(x) = x^perp / |x|^2 (no 1/(2 pi) factor)


def biot_savart(x):
    """``K(x) = x^perp / |x|^2``, set to zero at the origin."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(r2 > 0, 1.0 / r2, 0.0)
    return np.stack([-x[..., 1] * inv, x[..., 0] * inv], axis=-1)


def biot_savart_split(x):
    """Near-field ``K1 = K 1_{|x|<=1}`` and far-field ``K2 = K 1_{|x|>1}``."""
    x = np.asarray(x, dtype=float)
    k = biot_savart(x)
    near = (np.sum(x * x, axis=-1) <= 1.0)[..., None]
    return np.where(near, k, 0.0), np.where(near, 0.0, k)


def mollified_biot_savart(x, eps, kernel=None):
    """``K_eps = K * phi_eps``.

    For a radial mollifier this equals ``K(x) M(|x|/eps)`` where ``M(s)`` is
    the kernel mass inside radius ``s``; outside the support ``K_eps = K``.
    """
    kernel = kernel or mollifier_kernel(2)
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1))
    q = _radial_factor(r, eps, kernel)
    return q[..., None] * np.stack([-x[..., 1], x[..., 0]], axis=-1)


def _radial_factor(r, eps, kernel):
    """``M(r/eps) / r^2`` with its finite limit at the origin."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = kernel.mass(r / eps) / (r * r)
    q = np.where(r >= eps, 1.0 / np.where(r > 0, r * r, 1.0), q)
    return np.where(r > 0, q, math.pi * kernel.radial(0.0) / eps**2)


def mollified_biot_savart_grad(x, eps, kernel=None):
    """Jacobian of :func:`mollified_biot_savart`, ``G[..., i, j] = d K_eps,i / d x_j``."""
    kernel = kernel or mollifier_kernel(2)
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1))
    q = _radial_factor(r, eps, kernel)
    safe = np.where(r > 0, r, 1.0)
    # q'(r) / r
    mass = np.where(r >= eps, 1.0, kernel.mass(r / eps))
    dq_over_r = (kernel.mass_slope(r / eps) / eps) / safe**3 - 2.0 * mass / safe**4
    dq_over_r = np.where(r > 0, dq_over_r, 0.0)
    xp = np.stack([-x[..., 1], x[..., 0]], axis=-1)
    g = dq_over_r[..., None, None] * xp[..., :, None] * x[..., None, :]
    g[..., 0, 1] -= q
    g[..., 1, 0] += q
    return g
