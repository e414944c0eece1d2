"""Rough velocity fields, their exact flows and a generic field container.

Fields are vectorised: ``field(t, x)`` accepts an array of points with the
spatial dimension on the last axis and returns velocities of the same shape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, UsageError

FD_STEP = 1e-6


def perp(x):
    """Rotate planar vectors by +90 degrees: (x1, x2) -> (-x2, x1)."""
    return np.stack([-x[..., 1], x[..., 0]], axis=-1)


def fd_gradient(func, t, x, step=FD_STEP):
    """Central finite-difference Jacobian ``J[..., i, j] = d b_i / d x_j``."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        cols.append((func(t, x + e) - func(t, x - e)) / (2 * step))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True, eq=False)
class VelocityField:
    """A velocity field ``b(t, x)`` plus the metadata the solvers rely on.

    ``box`` is the half-width of the cube ``|x_j| <= box`` on which the
    formula is valid (``None`` for all of R^d).  ``swirl_rate`` and
    ``profiles`` describe exploitable structure: ``b = g(|x|) x^perp`` or
    ``b = (f1(x2), f2(x1))`` respectively; the mollifier uses them to
    tabulate the regularised field instead of convolving point by point.
    """

    name: str
    func: Callable
    dim: int = 2
    sobolev_p: float = math.inf
    sup_bound: Optional[float] = None
    autonomous: bool = True
    singular_set: Optional[str] = None
    grad_func: Optional[Callable] = None
    box: Optional[float] = None
    swirl_rate: Optional[Callable] = None
    profiles: Optional[tuple] = None
    period: Optional[float] = None
    beta_hint: Optional[float] = None
    params: dict = dc_field(default_factory=dict)

    def check_domain(self, x):
        if self.box is not None and x.size and np.max(np.abs(x)) > self.box:
            raise DomainError(
                f"{self.name}: point outside |x_j| <= {self.box} "
                f"(max |x_j| = {np.max(np.abs(x)):.6g})"
            )

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        self.check_domain(x)
        return self.func(t, x)

    def gradient(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.grad_func is not None:
            self.check_domain(x)
            return self.grad_func(t, x)
        return fd_gradient(self, t, x)

    @property
    def grad_bound(self):
        return math.inf

    @classmethod
    def from_callable(cls, func, name="user", dim=2, autonomous=True, **kwargs):
        """Wrap a user function ``func(t, x) -> velocity``."""
        return cls(name=name, func=func, dim=dim, autonomous=autonomous, **kwargs)


@dataclass(frozen=True, eq=False)
class ExactFlow:
    """Closed-form flow map ``X(t, x0)`` with an optional inverse."""

    name: str
    func: Callable
    inverse_func: Optional[Callable] = None

    def eval(self, t, x0):
        return self.func(t, np.asarray(x0, dtype=float))

    def inverse_eval(self, t, x):
        if self.inverse_func is None:
            raise UsageError(f"{self.name}: no inverse flow available")
        return self.inverse_func(t, np.asarray(x, dtype=float))

    __call__ = eval


def _rotate(x, angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.stack([c * x[..., 0] - s * x[..., 1], s * x[..., 0] + c * x[..., 1]], axis=-1)


# ---------------------------------------------------------------------------
# power rotation: b = 2(a+1) |x|^(a-1) x^perp


def power_rotation_field(alpha, p=None):
    """Rotation with angular speed ``2(alpha+1)|x|^(alpha-1)``, zero at the origin.

    ``p`` is recorded as the Sobolev exponent; the admissible pairing
    ``1 - 2/p < alpha`` is not enforced here.
    """
    alpha = float(alpha)
    if not alpha < 1:
        raise UsageError(f"power_rotation needs alpha < 1, got {alpha}")
    c = 2.0 * (alpha + 1.0)
    expo = (alpha - 1.0) / 2.0

    def scale(r2):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r2 > 0, c * r2**expo, 0.0)

    def func(t, x):
        s = scale(np.sum(x * x, axis=-1))
        return np.stack([-s * x[..., 1], s * x[..., 0]], axis=-1)

    def grad(t, x):
        r2 = np.sum(x * x, axis=-1)
        s = scale(r2)
        with np.errstate(divide="ignore", invalid="ignore"):
            k = np.where(r2 > 0, (alpha - 1.0) * s / r2, np.nan)
        xp = perp(x)
        g = k[..., None, None] * xp[..., :, None] * x[..., None, :]
        g[..., 0, 1] -= s
        g[..., 1, 0] += s
        # the gradient is unbounded at the origin
        g[r2 == 0] = np.nan
        return g

    def swirl(r):
        with np.errstate(divide="ignore"):
            return c * np.asarray(r, dtype=float) ** (alpha - 1.0)

    return VelocityField(
        name="power_rotation",
        func=func,
        grad_func=grad,
        sobolev_p=math.inf if p is None else float(p),
        singular_set="origin",
        swirl_rate=swirl,
        beta_hint=1.0 - alpha,
        params={"alpha": alpha, "p": p},
    )


def power_rotation_exact_flow(alpha):
    """Exact flow of :func:`power_rotation_field`.

    Each point turns on its circle with constant angular speed
    ``2(alpha+1) r0^(alpha-1)``; this is the closed form
    ``r0 (cos(b0 + w t), sin(b0 + w t))`` with ``b0 = atan2(x2, x1)``,
    written as a rotation of ``x0`` so that ``t = 0`` is reproduced bit for bit.
    """
    alpha = float(alpha)
    c = 2.0 * (alpha + 1.0)

    def speed(x):
        r = np.hypot(x[..., 0], x[..., 1])
        with np.errstate(divide="ignore"):
            return np.where(r > 0, c * r ** (alpha - 1.0), 0.0)

    def angle(x, t):
        # subnormal radii overflow the speed; their angle is immaterial
        with np.errstate(invalid="ignore", over="ignore"):
            a = speed(x) * t
        return np.where(np.isfinite(a), a, 0.0)

    def fwd(t, x0):
        return _rotate(x0, angle(x0, t))

    def inv(t, x):
        return _rotate(x, -angle(x, t))

    return ExactFlow("power_rotation", fwd, inv)


# ---------------------------------------------------------------------------
# sqrt |sin|


def _reduce_half_period(s):
    return s - 0.5 * np.round(2.0 * s)


def _sqrt_sine_profile(s):
    return np.sqrt(np.abs(np.sin(2.0 * np.pi * _reduce_half_period(s))))


def _sqrt_sine_slope(s):
    sr = _reduce_half_period(s)
    sn = np.sin(2.0 * np.pi * sr)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.pi * np.cos(2.0 * np.pi * sr) * np.sign(sn) / np.sqrt(np.abs(sn))
    return np.where(sn == 0, np.inf, out)


def _swap_profiles_func(f1, f2):
    def func(t, x):
        return np.stack([f1(x[..., 1]), f2(x[..., 0])], axis=-1)

    return func


def _swap_profiles_grad(df1, df2):
    def grad(t, x):
        g = np.zeros(x.shape + (2,))
        g[..., 0, 1] = df1(x[..., 1])
        g[..., 1, 0] = df2(x[..., 0])
        return g

    return grad


def sqrt_sine_field():
    """``b = (sqrt|sin 2 pi x2|, sqrt|sin 2 pi x1|)``; divergence free, in W^{1,q} for q < 2."""
    return VelocityField(
        name="sqrt_sine",
        func=_swap_profiles_func(_sqrt_sine_profile, _sqrt_sine_profile),
        grad_func=_swap_profiles_grad(_sqrt_sine_slope, _sqrt_sine_slope),
        sobolev_p=1.5,
        sup_bound=1.0,
        singular_set="lines x_j in Z/2",
        profiles=(_sqrt_sine_profile, _sqrt_sine_profile),
        period=0.5,
        beta_hint=0.5,
    )


# ---------------------------------------------------------------------------
# log(1/|s|)^(1/p) |s|^(1 - 1/(2p))


def log_power_field(p):
    """``b = (f(x2), f(x1))`` with ``f(s) = log(1/|s|)^(1/p) |s|^(1-1/(2p))``.

    ``f`` vanishes at ``s = 0`` and ``|s| = 1``; the formula is only used on
    ``|s| <= 1`` and evaluation outside that box raises :class:`DomainError`.
    """
    p = float(p)
    if not p > 1:
        raise UsageError(f"log_power needs p > 1, got {p}")
    a = 1.0 - 1.0 / (2.0 * p)

    def f(s):
        s = np.abs(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(1.0 / s) ** (1.0 / p) * s**a
        return np.where((s == 0) | (s == 1), 0.0, out)

    def df(s):
        sa = np.abs(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            L = -np.log(sa)
            out = sa ** (a - 1.0) * L ** (1.0 / p - 1.0) * (a * L - 1.0 / p)
        out = np.where((sa == 0) | (sa == 1), np.inf, out)
        return np.sign(s) * out

    # max of f on [0, 1] is attained at log(1/s) = 1/(p a)
    sup = (1.0 / (p * a)) ** (1.0 / p) * math.exp(-1.0 / p)
    return VelocityField(
        name="log_power",
        func=_swap_profiles_func(f, f),
        grad_func=_swap_profiles_grad(df, df),
        sobolev_p=p,
        sup_bound=sup,
        singular_set="axes and |x_j| = 1",
        box=1.0,
        profiles=(f, f),
        beta_hint=1.0 / (2.0 * p),
        params={"p": p},
    )


# ---------------------------------------------------------------------------
# smooth helpers used by tests and the transport experiments


def rotation_field(omega=1.0):
    """Rigid rotation ``b = omega (-x2, x1)``."""
    omega = float(omega)

    def grad(t, x):
        g = np.zeros(x.shape + (2,))
        g[..., 0, 1] = -omega
        g[..., 1, 0] = omega
        return g

    return VelocityField(
        name="rotation",
        func=lambda t, x: omega * perp(x),
        grad_func=grad,
        swirl_rate=lambda r: np.full_like(np.asarray(r, dtype=float), omega),
        beta_hint=0.0,
        params={"omega": omega},
    )


def rotation_exact_flow(omega=1.0):
    omega = float(omega)
    return ExactFlow(
        "rotation",
        lambda t, x: _rotate(x, omega * t),
        lambda t, x: _rotate(x, -omega * t),
    )


def constant_field(c):
    c = np.asarray(c, dtype=float)
    return VelocityField(
        name="constant",
        func=lambda t, x: np.broadcast_to(c, np.shape(x)).copy(),
        grad_func=lambda t, x: np.zeros(np.shape(x) + (c.size,)),
        dim=c.size,
        sup_bound=float(np.linalg.norm(c)),
        beta_hint=0.0,
    )


def zero_field(dim=2):
    return constant_field(np.zeros(dim))


def identity_flow():
    return ExactFlow("identity", lambda t, x: x.copy(), lambda t, x: x.copy())


FIELD_IDS = ("power_rotation", "sqrt_sine", "log_power", "rotation", "zero")


def make_field(field_id, **params):
    """Resolve a field identifier and its parameter block."""
    if field_id == "power_rotation":
        return power_rotation_field(params.get("alpha", 0.36), params.get("p"))
    if field_id == "sqrt_sine":
        return sqrt_sine_field()
    if field_id == "log_power":
        return log_power_field(params.get("p", 100.0))
    if field_id == "rotation":
        return rotation_field(params.get("omega", 1.0))
    if field_id == "zero":
        return zero_field()
    raise UsageError(f"unknown field id {field_id!r}; expected one of {FIELD_IDS}")


def make_exact_flow(field_id, **params):
    """Exact flow for a field id, or ``None`` when no closed form exists."""
    if field_id == "power_rotation":
        return power_rotation_exact_flow(params.get("alpha", 0.36))
    if field_id == "rotation":
        return rotation_exact_flow(params.get("omega", 1.0))
    if field_id == "zero":
        return identity_flow()
    return None
