"""Error functionals on balls and convergence-rate fits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .fields import ExactFlow
from .theta import DiscreteFlow


@dataclass(frozen=True, eq=False)
class GridSampling:
    """Midpoint rule on the cells of ``[c - r, c + r]^2`` whose centre lies in ``B_r(c)``."""

    radius: float
    cells: int
    nodes: np.ndarray
    weights: np.ndarray
    center: tuple = (0.0, 0.0)

    @classmethod
    def ball(cls, radius, cells=64, center=(0.0, 0.0)):
        if not radius > 0 or cells < 1:
            raise UsageError("ball sampling needs radius > 0 and cells >= 1")
        c = np.asarray(center, dtype=float)
        step = 2.0 * radius / cells
        ticks = -radius + (np.arange(cells) + 0.5) * step
        grid = np.stack(np.meshgrid(ticks, ticks, indexing="ij"), axis=-1).reshape(-1, 2)
        keep = np.sum(grid * grid, axis=-1) <= radius * radius
        nodes = grid[keep] + c
        nodes.setflags(write=False)
        w = np.full(nodes.shape[0], step * step)
        w.setflags(write=False)
        return cls(float(radius), int(cells), nodes, w, tuple(c))

    @property
    def area(self):
        return math.fsum(self.weights)

    def __len__(self):
        return self.nodes.shape[0]


def _positions(flow, t, initial):
    if isinstance(flow, DiscreteFlow):
        return np.asarray(flow.interpolate(t))
    if isinstance(flow, ExactFlow):
        return flow.eval(t, initial)
    if callable(flow):
        return np.asarray(flow(t, initial))
    return np.asarray(flow, dtype=float)


def displacement(reference, approx, t, sampling=None):
    """``|X_approx(t, x) - X_ref(t, x)|`` at the sampling nodes."""
    if isinstance(approx, DiscreteFlow):
        initial = approx.initial[0] if approx.single else approx.initial
        if sampling is not None and (
            initial.shape != sampling.nodes.shape or not np.array_equal(initial, sampling.nodes)
        ):
            raise UsageError("approximate flows were not started from the sampling nodes")
    elif sampling is not None:
        initial = sampling.nodes
    else:
        raise UsageError("need a sampling or a DiscreteFlow to know the initial points")
    a = _positions(approx, t, initial)
    r = _positions(reference, t, initial)
    if a.shape != r.shape:
        raise UsageError(f"flow shapes differ: {a.shape} vs {r.shape}")
    d = a - r
    return np.sqrt(np.sum(d * d, axis=-1))


def _weighted_sum(w, v):
    return math.fsum((w * v).tolist())


def l1_flow_error(reference, approx, t, sampling):
    """``int_{B_r} |X~(t, x) - X(t, x)| dx`` by the sampling's midpoint rule."""
    return _weighted_sum(sampling.weights, displacement(reference, approx, t, sampling))


def log_functional_Q(reference, approx, t, delta, sampling, errors=None):
    """``int_{B_r} log(1 + |X~ - X| / delta) dx``."""
    if not delta > 0:
        raise UsageError(f"delta must be positive, got {delta}")
    e = displacement(reference, approx, t, sampling) if errors is None else errors
    return _weighted_sum(sampling.weights, np.log1p(e / delta))


def superlevel_measure(reference, approx, t, eta, sampling, errors=None):
    """Measure of ``{x in B_r : |X~ - X| >= eta}``."""
    if not eta > 0:
        raise UsageError(f"eta must be positive, got {eta}")
    e = displacement(reference, approx, t, sampling) if errors is None else errors
    return _weighted_sum(sampling.weights, (e >= eta).astype(float))


def chebyshev_bound(q_value, delta, eta):
    """Upper bound ``Q(delta) / log(1 + eta/delta)`` for the superlevel measure."""
    return q_value / math.log1p(eta / delta)


def default_delta(eps, alpha, h):
    """``max(eps^alpha, h)``; an unregularised field contributes only ``h``."""
    reg = eps**alpha if eps > 0 and math.isfinite(alpha) else 0.0
    return max(reg, h)


def default_eta(delta):
    return math.sqrt(delta)


def pointwise_trajectory_error(reference, approx, t):
    """``|X~(t, x0) - X(t, x0)|`` for a single trajectory."""
    if not isinstance(approx, DiscreteFlow):
        raise UsageError("approx must be a DiscreteFlow")
    e = displacement(reference, approx, t)
    if e.size != 1:
        raise UsageError("pointwise error needs a single initial point")
    return float(e.reshape(-1)[0])


# ---------------------------------------------------------------------------
# rate fitting


@dataclass
class RateFit:
    """Empirical orders and the two one-parameter decay models.

    ``log_residual`` and ``linear_residual`` are relative l2 residuals
    ``||e - model|| / ||e||``; ``preferred`` names the smaller one, or is
    ``None`` when the data are degenerate.
    """

    h: np.ndarray
    errors: np.ndarray
    orders: np.ndarray
    log_C: float
    log_residual: float
    linear_C: float
    linear_residual: float
    preferred: str | None
    degenerate: bool
    reason: str = ""

    def summary_lines(self):
        orders = " ".join(f"{p:.6g}" for p in self.orders)
        return [
            f"points={self.h.size}",
            f"orders={orders}",
            f"log_model C={self.log_C:.10g} residual={self.log_residual:.6g}",
            f"linear_model C={self.linear_C:.10g} residual={self.linear_residual:.6g}",
            f"preferred={self.preferred or 'none'}",
            f"degenerate={'yes' if self.degenerate else 'no'}" + (f" ({self.reason})" if self.reason else ""),
        ]


def empirical_orders(errors):
    e = np.asarray(errors, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log2(e[1:] / e[:-1])


def fit_convergence_rate(h, errors, min_points=3):
    """Fit ``C / |log h|`` and ``C h`` to an error ladder (sorted by ``h``)."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.shape != e.shape or h.ndim != 1:
        raise UsageError("h and errors must be 1-D arrays of equal length")
    order = np.argsort(h)
    h, e = h[order], e[order]
    if h.size and (np.any(h <= 0) or np.any(h >= 1)):
        raise UsageError("step sizes must lie in (0, 1)")
    orders = empirical_orders(e)
    nan = math.nan
    reason = ""
    if h.size < min_points:
        reason = f"only {h.size} ladder points"
    elif not np.all(np.isfinite(e)) or np.any(e <= 0):
        reason = "zero or non-finite errors"
    elif np.ptp(np.log(e)) <= 1e-12:
        reason = "errors do not vary along the ladder"
    if reason and (h.size == 0 or np.any(e <= 0) or not np.all(np.isfinite(e))):
        return RateFit(h, e, orders, nan, nan, nan, nan, None, True, reason)
    norm = math.sqrt(math.fsum((e * e).tolist()))
    u = 1.0 / np.abs(np.log(h))
    log_C = math.fsum((e * u).tolist()) / math.fsum((u * u).tolist())
    log_res = math.sqrt(math.fsum(((e - log_C * u) ** 2).tolist())) / norm
    lin_C = math.exp(math.fsum((np.log(e) - np.log(h)).tolist()) / h.size)
    lin_res = math.sqrt(math.fsum(((e - lin_C * h) ** 2).tolist())) / norm
    if reason:
        return RateFit(h, e, orders, log_C, log_res, lin_C, lin_res, None, True, reason)
    preferred = "log" if log_res < lin_res else "linear"
    return RateFit(h, e, orders, log_C, log_res, lin_C, lin_res, preferred, False)


# ---------------------------------------------------------------------------
# reports


@dataclass
class ErrorReport:
    """Error measurements for one ladder member."""

    h: float
    eps: float
    l1_error: float = math.nan
    pointwise_error: float = math.nan
    delta: float = math.nan
    eta: float = math.nan
    q_values: dict = field(default_factory=dict)
    superlevel: dict = field(default_factory=dict)
    max_log_det: float = math.nan
    chebyshev_ok: bool = True

    @property
    def compressibility(self):
        return math.exp(self.max_log_det)

    @property
    def q_default(self):
        return self.q_values.get(self.delta, math.nan)

    @property
    def superlevel_default(self):
        return self.superlevel.get(self.eta, math.nan)


def measure_errors(reference, approx, t, sampling, h, eps, alpha=1.0, overrides=(), errors=None):
    """Fill an :class:`ErrorReport` for a grid of trajectories.

    The default ``(delta, eta)`` pair is ``(max(eps^alpha, h), sqrt(delta))``;
    ``overrides`` adds further ``(delta, eta)`` pairs.  Every pair is checked
    against the discrete Chebyshev bound.  Precomputed displacements can be
    passed as ``errors``.
    """
    e = displacement(reference, approx, t, sampling) if errors is None else np.asarray(errors, dtype=float)
    delta = default_delta(eps, alpha, h)
    eta = default_eta(delta)
    rep = ErrorReport(h=h, eps=eps, delta=delta, eta=eta)
    rep.l1_error = _weighted_sum(sampling.weights, e)
    pairs = [(delta, eta)] + [tuple(p) for p in overrides]
    ok = True
    for d, n in pairs:
        if d not in rep.q_values:
            rep.q_values[d] = log_functional_Q(None, None, t, d, sampling, errors=e)
        if n not in rep.superlevel:
            rep.superlevel[n] = superlevel_measure(None, None, t, n, sampling, errors=e)
        ok &= rep.superlevel[n] <= chebyshev_bound(rep.q_values[d], d, n)
    rep.chebyshev_ok = bool(ok)
    if isinstance(approx, DiscreteFlow):
        rep.max_log_det = approx.max_log_det
    return rep


@dataclass
class ConvergenceStudy:
    """Ladder ``h_k = 2^k h0`` and its per-step reports.

    ``reference`` is ``"exact"`` or ``"finest"``; in the latter mode the
    ``h0`` run is the reference and reports start at ``k = 1``.
    """

    h0: float
    levels: int
    reference: str = "exact"
    reports: list = field(default_factory=list)

    def __post_init__(self):
        if self.reference not in ("exact", "finest"):
            raise UsageError(f"unknown reference mode {self.reference!r}")
        if not self.h0 > 0 or self.levels < 0:
            raise UsageError("need h0 > 0 and a non-negative ladder length")

    @property
    def ladder(self):
        return self.h0 * 2.0 ** np.arange(self.levels + 1)

    @property
    def compared(self):
        """Step sizes that carry an error row."""
        lad = self.ladder
        return lad[1:] if self.reference == "finest" else lad

    def fit(self, which="l1_error", min_points=3):
        h = np.array([r.h for r in self.reports])
        e = np.array([getattr(r, which) for r in self.reports])
        return fit_convergence_rate(h, e, min_points=min_points)
