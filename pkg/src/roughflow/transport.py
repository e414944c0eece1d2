"""Lagrangian transport solutions from backward theta flows."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .analysis import GridSampling, displacement
from .errors import UsageError
from .regularize.kernels import gauss_legendre, mollifier_kernel
from .regularize.mollify import as_field
from .theta import DiscreteFlow, TimeGrid, integrate_flow

_CHUNK = 4_000_000


class BackwardField:
    """``bbar_t(s, x) = -b(t - s, x)`` for ``s <= t`` and ``0`` afterwards.

    Time averages over a step that straddles ``t`` only integrate over the
    part inside ``[0, t]`` and divide by the full step length.
    """

    def __init__(self, base, final_time):
        if final_time < 0:
            raise UsageError("final time must be non-negative")
        self.base = base
        self.final_time = float(final_time)

    @property
    def name(self):
        return f"backward({getattr(self.base, 'name', 'field')})"

    @property
    def dim(self):
        return self.base.dim

    @property
    def autonomous(self):
        return False

    @property
    def eps(self):
        return float(getattr(self.base, "eps", 0.0))

    @property
    def grad_bound(self):
        return getattr(self.base, "grad_bound", math.inf)

    def __call__(self, s, x):
        x = np.asarray(x, dtype=float)
        if s > self.final_time:
            return np.zeros_like(x)
        return -self.base(self.final_time - s, x)

    def gradient(self, s, x):
        x = np.asarray(x, dtype=float)
        if s > self.final_time:
            return np.zeros(x.shape + (x.shape[-1],))
        return -self.base.gradient(self.final_time - s, x)

    def _average(self, fn, t0, t1, x, nodes):
        top = min(t1, self.final_time)
        if top <= t0:
            return None
        frac = (top - t0) / (t1 - t0)
        if self.base.autonomous:
            return -frac * fn(0.0, x)
        s, w = gauss_legendre(t0, top, nodes)
        w = w / (top - t0)
        return -frac * sum(wk * fn(self.final_time - sk, x) for sk, wk in zip(s, w))

    def time_average(self, t0, t1, x, nodes=4):
        x = np.asarray(x, dtype=float)
        out = self._average(self.base, t0, t1, x, nodes)
        return np.zeros_like(x) if out is None else out

    def gradient_average(self, t0, t1, x, nodes=4):
        x = np.asarray(x, dtype=float)
        out = self._average(self.base.gradient, t0, t1, x, nodes)
        return np.zeros(x.shape + (x.shape[-1],)) if out is None else out


def backward_field(b, t):
    return BackwardField(as_field(b), t)


@dataclass(frozen=True, eq=False)
class InitialDatum:
    """Scalar datum ``u0`` with ``supp u0`` inside ``B_R`` (centred at the origin)."""

    func: Callable
    support_radius: float
    lipschitz_bound: Optional[float] = None
    sup_bound: Optional[float] = None
    name: str = "datum"
    # tighter support disc (centre, radius) when known
    disc: Optional[tuple] = None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self.func(x), dtype=float)


def cone_datum(center=(0.5, 0.0), radius=0.4, height=1.0):
    """``height * max(0, 1 - |x - c| / radius)``; Lipschitz with constant ``height / radius``."""
    c = np.asarray(center, dtype=float)

    def func(x):
        r = np.sqrt(np.sum((x - c) ** 2, axis=-1))
        return height * np.maximum(0.0, 1.0 - r / radius)

    return InitialDatum(func, float(np.linalg.norm(c) + radius), height / radius, abs(height), "cone", (c, float(radius)))


def disk_datum(center=(0.5, 0.0), radius=0.4, height=1.0):
    """Indicator of a disc (not Lipschitz)."""
    c = np.asarray(center, dtype=float)

    def func(x):
        return height * (np.sum((x - c) ** 2, axis=-1) < radius * radius).astype(float)

    return InitialDatum(func, float(np.linalg.norm(c) + radius), None, abs(height), "disk", (c, float(radius)))


def bump_datum(center=(0.0, 0.0), radius=0.5, height=1.0):
    """Smooth bump with the mollifier profile, peak value ``height``."""
    c = np.asarray(center, dtype=float)
    k = mollifier_kernel(2)
    peak = float(k.radial(0.0))
    lip = abs(height) * k.grad_sup / (peak * radius)

    def func(x):
        return height * k.profile((x - c) / radius) / peak

    return InitialDatum(func, float(np.linalg.norm(c) + radius), lip, abs(height), "bump", (c, float(radius)))


def make_datum(datum_id, **params):
    makers = {"cone": cone_datum, "disk": disk_datum, "bump": bump_datum}
    if datum_id not in makers:
        raise UsageError(f"unknown datum id {datum_id!r}; expected one of {sorted(makers)}")
    return makers[datum_id](**params)


def mollify_datum(u0: InitialDatum, delta, nodes_per_axis=32):
    """``u0 * phi_delta`` by the kernel's midpoint rule.

    The support grows by ``delta`` and the recorded Lipschitz bound is
    ``sup|u0| ||grad phi||_1 / delta`` (or the datum's own bound if smaller).
    """
    if not delta > 0:
        raise UsageError(f"delta must be positive, got {delta}")
    kernel = mollifier_kernel(2, nodes_per_axis)
    nodes, weights = kernel.nodes, kernel.weights
    disc = None if u0.disc is None else (np.asarray(u0.disc[0], dtype=float), u0.disc[1] + delta)

    def func(x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 2)
        out = np.zeros(flat.shape[0])
        live = np.arange(flat.shape[0])
        if disc is not None:
            # exact zeros beyond the grown support
            live = live[np.sum((flat - disc[0]) ** 2, axis=-1) < disc[1] ** 2]
        step = max(1, _CHUNK // nodes.shape[0])
        for i in range(0, live.size, step):
            idx = live[i : i + step]
            pts = flat[idx, None, :] - delta * nodes[None, :, :]
            out[idx] = u0(pts) @ weights
        return out.reshape(x.shape[:-1])

    sup = u0.sup_bound
    lip = None
    if sup is not None:
        lip = sup * kernel.grad_l1 / delta
    if u0.lipschitz_bound is not None:
        lip = u0.lipschitz_bound if lip is None else min(lip, u0.lipschitz_bound)
    return InitialDatum(func, u0.support_radius + delta, lip, sup, f"{u0.name}*phi_{delta:g}", disc)


def _snap(t, h):
    k = round(t / h)
    return k * h if abs(t - k * h) <= 1e-12 * h else t


def integrate_backward(t, x, grid: TimeGrid, scheme, b, check=True):
    """``Y~(t, t, x)``: theta steps of ``bbar_t`` read off at ``s = t``.

    Returns ``(positions, flow)``; ``flow`` is ``None`` when ``t = 0``.
    """
    x = np.asarray(x, dtype=float)
    if t < 0 or t > grid.horizon * (1 + 1e-12):
        raise UsageError(f"final time {t} outside [0, {grid.horizon}]")
    t = _snap(float(t), grid.h)
    if t == 0.0:
        return x.copy(), None
    steps = min(grid.steps, int(math.ceil(t / grid.h - 1e-12)))
    sub = TimeGrid(grid.h, steps)
    bb = backward_field(b, t)
    flow = integrate_flow(x, sub, scheme, bb, check=check)
    return flow.interpolate(t), flow


@dataclass
class TransportSolution:
    """``u^h(t, x) = u0(Y~(t, t, x))`` at a set of evaluation points."""

    t: float
    points: np.ndarray
    values: np.ndarray
    positions: np.ndarray
    datum: InitialDatum
    backward: Optional[DiscreteFlow] = None

    def to_csv(self, path=None):
        lines = [f"# t={self.t:.17g}", "x,y,u"]
        for (px, py), u in zip(self.points.reshape(-1, 2), self.values.reshape(-1)):
            lines.append(f"{px:.17g},{py:.17g},{u:.17g}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w", newline="\n") as fh:
                fh.write(text)
        return text


def transport_solution(u0: InitialDatum, b, grid, scheme, t, points, check=True):
    """Evaluate the approximate Lagrangian solution at ``points``."""
    pts = np.asarray(points, dtype=float)
    pos, flow = integrate_backward(t, pts, grid, scheme, b, check=check)
    return TransportSolution(float(t), pts, u0(pos), pos, u0, flow)


def exact_transport(u0: InitialDatum, exact_flow, t, points):
    """``u^L(t, x) = u0(X^{-1}(t, x))``."""
    return u0(exact_flow.inverse_eval(t, np.asarray(points, dtype=float)))


def lagrangian_error(u_h: TransportSolution, exact_flow, sampling: GridSampling, datum=None):
    """Grid L1 distance between ``u^h(t)`` and ``u0(X^{-1}(t))``.

    ``datum`` defaults to the datum ``u_h`` was built from.
    """
    if u_h.points.shape != sampling.nodes.shape or not np.array_equal(u_h.points, sampling.nodes):
        raise UsageError("transport solution was not evaluated on the sampling nodes")
    datum = datum or u_h.datum
    exact = exact_transport(datum, exact_flow, u_h.t, sampling.nodes)
    return math.fsum((sampling.weights * np.abs(u_h.values - exact)).tolist())


def backward_flow_error(u_h: TransportSolution, exact_flow, sampling: GridSampling):
    """``int |Y~(t, t, x) - X^{-1}(t, x)| dx`` over the sampling."""
    ref = exact_flow.inverse_eval(u_h.t, sampling.nodes)
    e = displacement(ref, u_h.positions, u_h.t, sampling)
    return math.fsum((sampling.weights * e).tolist())


def datum_l1_distance(u, v, sampling: GridSampling):
    """``||u - v||_{L^1}`` on the sampling grid."""
    x = sampling.nodes
    return math.fsum((sampling.weights * np.abs(u(x) - v(x))).tolist())
