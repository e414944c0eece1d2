"""Regularised fields ``b_eps``: mollification and pass-through.

Every regularised field exposes the same surface as :class:`VelocityField`
(``__call__``, ``gradient``, ``grad_bound``, ``autonomous``, ``dim``) so the
integrators accept either.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import CubicSpline

from ..errors import DomainError, UsageError
from ..fields import VelocityField
from .kernels import MollifierKernel, gauss_legendre, mollifier_kernel

_CHUNK = 4_000_000


@dataclass(frozen=True)
class RegularizationParams:
    """Scale ``epsilon`` and the constants of the four approximation bounds.

    ``||b_eps - b||_1 <= c0 eps^alpha_rate``, ``||grad b_eps||_inf <= c1 eps^-beta_rate``,
    ``||div b_eps||_inf <= c2`` and ``||b_eps||_inf <= c3``.  A zero constant
    means "not measured".  ``epsilon == 0`` marks the unregularised field.
    """

    epsilon: float
    alpha_rate: float = 1.0
    beta_rate: float = 1.0
    c0: float = 0.0
    c1: float = 0.0
    c2: float = 0.0
    c3: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise UsageError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        for name in ("c0", "c1", "c2", "c3"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be non-negative")
        if self.alpha_rate <= 0 or self.beta_rate < 0:
            raise UsageError("rates must be positive")

    def gradient_bound(self):
        """``c1 eps^-beta`` when both are known, else ``inf``."""
        if self.c1 > 0 and self.epsilon > 0:
            return self.c1 * self.epsilon ** (-self.beta_rate)
        return math.inf


class ApproxField:
    """Base class of the regularised fields."""

    backend = "abstract"

    def __init__(self, base, params):
        self.base = base
        self.params = params

    @property
    def name(self):
        return getattr(self.base, "name", "field")

    @property
    def dim(self):
        return self.base.dim

    @property
    def autonomous(self):
        return self.base.autonomous

    @property
    def eps(self):
        return self.params.epsilon

    @property
    def grad_bound(self):
        return self.params.gradient_bound()

    def divergence(self, t, x):
        return np.trace(self.gradient(t, x), axis1=-2, axis2=-1)

    def with_params(self, **changes):
        out = object.__new__(type(self))
        out.__dict__.update(self.__dict__)
        out.params = replace(self.params, **changes)
        return out

    def __repr__(self):
        return f"<{type(self).__name__} {self.name} eps={self.eps:g}>"


class PassthroughField(ApproxField):
    """Identity regularisation for fields that are smooth along the trajectories."""

    backend = "passthrough"

    def __call__(self, t, x):
        return self.base(t, x)

    def gradient(self, t, x):
        return self.base.gradient(t, x)

    @property
    def grad_bound(self):
        bound = self.params.gradient_bound()
        return min(bound, self.base.grad_bound)


def passthrough(b, beta=None):
    """Wrap ``b`` without regularising it.

    ``beta`` defaults to the field's gradient growth hint; it is recorded so
    that downstream defaults (for example the error-functional scale) can be
    derived the same way for every backend.
    """
    if beta is None:
        beta = b.beta_hint if getattr(b, "beta_hint", None) is not None else 0.0
    return PassthroughField(b, RegularizationParams(epsilon=0.0, beta_rate=float(beta)))


class MollifiedField(ApproxField):
    """``b_eps = b * phi_eps`` by a fixed tensor midpoint rule on the kernel support.

    The gradient differentiates the kernel:
    ``d_j b_eps(x) = eps^-1 int b(x - eps y) d_j phi(y) dy``.
    """

    backend = "mollifier"

    def __init__(self, base, params, kernel: MollifierKernel):
        super().__init__(base, params)
        self.kernel = kernel
        gw = kernel.grad(kernel.nodes) * kernel.cell_volume
        # rescale so the rule reproduces gradients of linear fields exactly
        moment = -np.einsum("ki,kj->ij", kernel.nodes, gw)
        self._grad_weights = gw / (np.trace(moment) / kernel.dim)

    def _check(self, x):
        box = getattr(self.base, "box", None)
        if box is not None and x.size and np.max(np.abs(x)) + self.eps > box:
            raise DomainError(
                f"{self.name}: mollification support leaves the box |x_j| <= {box}"
            )

    def _shifted_sum(self, t, x, weights):
        """``sum_k weights[k, ...] b(t, x - eps y_k)`` over the kernel nodes."""
        x = np.asarray(x, dtype=float)
        self._check(x)
        flat = x.reshape(-1, x.shape[-1])
        nodes = self.kernel.nodes
        step = max(1, _CHUNK // (nodes.shape[0] * flat.shape[1]))
        out = []
        for i in range(0, flat.shape[0], step):
            pts = flat[i : i + step, None, :] - self.eps * nodes[None, :, :]
            vals = self.base.func(t, pts)
            out.append(np.tensordot(vals, weights, axes=([1], [0])))
        res = np.concatenate(out, axis=0) if out else np.zeros((0,) + weights.shape[1:])
        return res

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        res = self._shifted_sum(t, x, self.kernel.weights)
        return res.reshape(x.shape)

    def gradient(self, t, x):
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        # vals: (m, k, i); grad weights: (k, j) -> (m, i, j)
        flat = x.reshape(-1, d)
        self._check(flat)
        nodes = self.kernel.nodes
        step = max(1, _CHUNK // (nodes.shape[0] * d))
        out = []
        for i in range(0, flat.shape[0], step):
            pts = flat[i : i + step, None, :] - self.eps * nodes[None, :, :]
            vals = self.base.func(t, pts)
            out.append(np.einsum("mki,kj->mij", vals, self._grad_weights) / self.eps)
        res = np.concatenate(out, axis=0) if out else np.zeros((0, d, d))
        return res.reshape(x.shape + (d,))


class SwirlTableField(MollifiedField):
    """Mollification of ``b = g(|x|) x^perp`` through a tabulated radial profile.

    A radial kernel commutes with rotations, so ``b_eps = G(|x|) x^perp``.
    ``G`` is computed by quadrature in polar coordinates centred on the
    singularity and interpolated by a cubic spline that is even in ``r``.
    Points beyond the table fall back to the direct rule.
    """

    backend = "mollifier"

    def __init__(self, base, params, kernel, extent=2.0, n_rho=96, n_psi=64):
        super().__init__(base, params, kernel)
        self.extent = float(extent)
        eps = self.eps
        g = base.swirl_rate
        inner = np.arange(1, 129) * (eps / 32.0)
        outer = []
        r = inner[-1]
        while r < self.extent:
            r *= 1.01
            outer.append(r)
        rs = np.concatenate([inner, np.asarray(outer)])
        vals = _swirl_line_integral(g, rs, eps, kernel, n_rho, n_psi) / rs
        g0 = _swirl_centre_value(g, eps, kernel)
        self._spline = CubicSpline(
            np.concatenate([[0.0], rs]), np.concatenate([[g0], vals]), bc_type=((1, 0.0), "not-a-knot")
        )
        self._dspline = self._spline.derivative()
        self._rmax = rs[-1]
        knots = np.concatenate([[0.0], rs])
        G = self._spline(knots)
        dG = self._dspline(knots)
        self._gmax = float(np.max(np.maximum(np.abs(G), np.abs(G + knots * dG))))

    def _split(self, x):
        r = np.sqrt(np.sum(x * x, axis=-1))
        return r, r <= self._rmax

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        r, inside = self._split(x)
        G = self._spline(np.where(inside, r, 0.0))
        out = G[..., None] * np.stack([-x[..., 1], x[..., 0]], axis=-1)
        if not np.all(inside):
            out[~inside] = super().__call__(t, x[~inside])
        return out

    def gradient(self, t, x):
        x = np.asarray(x, dtype=float)
        r, inside = self._split(x)
        rr = np.where(inside, r, 0.0)
        G = self._spline(rr)
        with np.errstate(divide="ignore", invalid="ignore"):
            k = np.where(rr > 0, self._dspline(rr) / rr, 0.0)
        xp = np.stack([-x[..., 1], x[..., 0]], axis=-1)
        g = k[..., None, None] * xp[..., :, None] * x[..., None, :]
        g[..., 0, 1] -= G
        g[..., 1, 0] += G
        if not np.all(inside):
            g[~inside] = super().gradient(t, x[~inside])
        return g

    @property
    def grad_bound(self):
        return min(self._gmax, self.params.gradient_bound())


def _swirl_line_integral(g, rs, eps, kernel, n_rho, n_psi):
    """Second component of ``b_eps`` at the points ``(r, 0)``."""
    out = np.empty_like(rs)
    block = max(1, 2_000_000 // (n_rho * n_psi))
    for s in range(0, rs.size, block):
        r = rs[s : s + block][:, None]
        rho, wr = gauss_legendre(np.maximum(0.0, r[:, 0] - eps), r[:, 0] + eps, n_rho)
        with np.errstate(divide="ignore", invalid="ignore"):
            c0 = (r * r + rho * rho - eps * eps) / (2.0 * r * rho)
        psi0 = np.arccos(np.clip(np.nan_to_num(c0, nan=-1.0), -1.0, 1.0))
        psi, wp = gauss_legendre(np.zeros_like(psi0), psi0, n_psi)
        dist2 = r[:, :, None] ** 2 + rho[:, :, None] ** 2 - 2.0 * r[:, :, None] * rho[:, :, None] * np.cos(psi)
        phi = kernel.radial(np.sqrt(np.clip(dist2, 0.0, None)) / eps) / eps**2
        ang = 2.0 * np.sum(np.cos(psi) * phi * wp, axis=-1)
        out[s : s + block] = np.sum(g(rho) * rho * rho * ang * wr, axis=-1)
    return out


def _swirl_centre_value(g, eps, kernel, n=256):
    """``G(0) = -pi int_0^eps rho^2 g(rho) phi_eps'(rho) d rho``."""
    rho, w = gauss_legendre(0.0, eps, n)
    slope = kernel.radial_slope(rho / eps) / eps**3
    return float(-math.pi * np.sum(rho * rho * g(rho) * slope * w))


class ProfileTableField(MollifiedField):
    """Mollification of ``b = (f1(x2), f2(x1))``.

    Convolving a function of one coordinate with the planar kernel is a 1-D
    convolution with the kernel's marginal.  Each profile is convolved on a
    uniform grid (periodically when the field declares a period) and
    interpolated by a cubic spline.
    """

    backend = "mollifier"

    def __init__(self, base, params, kernel, extent=2.0, samples_per_eps=64):
        super().__init__(base, params, kernel)
        eps = self.eps
        self.period = base.period
        cache = {}
        self._tables = []
        for f in base.profiles:
            if id(f) not in cache:
                cache[id(f)] = _profile_table(f, eps, kernel, base.period, base.box, extent, samples_per_eps)
            self._tables.append(cache[id(f)])
        self._gmax = max(t[3] for t in self._tables)

    def _lookup(self, table, s, deriv):
        spline, lo, hi, _ = table
        if self.period is not None:
            s = np.mod(s, self.period)
        elif s.size and (np.min(s) < lo or np.max(s) > hi):
            raise DomainError(f"{self.name}: point outside the tabulated range [{lo:.6g}, {hi:.6g}]")
        return spline(s, deriv)

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.stack(
            [self._lookup(self._tables[0], x[..., 1], 0), self._lookup(self._tables[1], x[..., 0], 0)],
            axis=-1,
        )

    def gradient(self, t, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape + (2,))
        g[..., 0, 1] = self._lookup(self._tables[0], x[..., 1], 1)
        g[..., 1, 0] = self._lookup(self._tables[1], x[..., 0], 1)
        return g

    @property
    def grad_bound(self):
        return min(self._gmax, self.params.gradient_bound())


def _profile_table(f, eps, kernel, period, box, extent, samples_per_eps):
    taps = int(samples_per_eps)
    if period is not None:
        n = int(math.ceil(period * taps / eps))
        step = period / n
        x = np.arange(n) * step
    else:
        half = box if box is not None else extent + eps
        n = int(math.ceil(2.0 * half * taps / eps))
        step = 2.0 * half / n
        x = -half + np.arange(n + 1) * step
    J = int(math.floor(eps / step))
    u = np.arange(-J, J + 1) * step
    w = kernel.marginal(u / eps)
    w = w / w.sum()
    fx = f(x)
    if period is not None:
        padded = np.concatenate([fx[-J:], fx, fx[:J]]) if J else fx
        conv = np.convolve(padded, w, mode="valid")
        knots = np.append(x, period)
        vals = np.append(conv, conv[0])
        spline = CubicSpline(knots, vals, bc_type="periodic")
        lo, hi = 0.0, period
    else:
        conv = np.convolve(fx, w, mode="valid")
        knots = x[J : x.size - J]
        spline = CubicSpline(knots, conv)
        lo, hi = knots[0], knots[-1]
    gmax = float(np.max(np.abs(spline(knots, 1))))
    return spline, lo, hi, gmax


def mollify_field(b, eps, nodes_per_axis=32, tabulate=True, extent=2.0, params=None):
    """Regularise ``b`` by convolution with the standard mollifier at scale ``eps``.

    Autonomous fields with declared structure (``swirl_rate`` or
    ``profiles``) are tabulated; everything else uses the direct rule.
    ``params`` overrides the recorded :class:`RegularizationParams`.
    """
    eps = float(eps)
    if not 0.0 < eps <= 1.0:
        raise UsageError(f"mollification scale must lie in (0, 1], got {eps}")
    if params is None:
        beta = b.beta_hint if getattr(b, "beta_hint", None) is not None else 1.0
        params = RegularizationParams(epsilon=eps, alpha_rate=1.0, beta_rate=beta)
    elif params.epsilon != eps:
        params = replace(params, epsilon=eps)
    kernel = mollifier_kernel(b.dim, nodes_per_axis)
    if tabulate and b.autonomous and b.dim == 2:
        if getattr(b, "swirl_rate", None) is not None:
            return SwirlTableField(b, params, kernel, extent=extent)
        if getattr(b, "profiles", None) is not None:
            return ProfileTableField(b, params, kernel, extent=extent)
    return MollifiedField(b, params, kernel)


def regularize(b, backend, eps=None, **kwargs):
    """Dispatch on the backend name used in experiment configs."""
    if backend == "passthrough":
        return passthrough(b, beta=kwargs.get("beta"))
    if backend == "mollifier":
        if eps is None:
            raise UsageError("mollifier backend needs eps")
        params = None
        if kwargs.get("beta") is not None:
            params = RegularizationParams(epsilon=float(eps), beta_rate=float(kwargs["beta"]))
        return mollify_field(b, eps, params=params, **{k: v for k, v in kwargs.items() if k != "beta"})
    raise UsageError(f"unknown regularisation backend {backend!r}")


def as_field(b):
    """Accept a bare :class:`VelocityField` wherever a regularised field is expected."""
    if isinstance(b, VelocityField):
        return passthrough(b)
    return b
