"""Regularised theta-method: implicit steps, interpolant and Jacobian determinants.

All routines work on batches: initial points have shape ``(M, d)`` (a single
point ``(d,)`` is promoted and squeezed back).  Every point is integrated
independently; the batch only shares vectorised field evaluations.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractionError, StepError, UsageError
from .regularize.kernels import gauss_legendre
from .regularize.mollify import as_field


@dataclass(frozen=True)
class TimeGrid:
    """Uniform nodes ``t_i = i h``, ``i = 0..N``; the horizon is stored as ``h N``."""

    h: float
    steps: int

    def __post_init__(self):
        if self.steps < 0 or not self.h > 0:
            raise UsageError(f"invalid time grid h={self.h}, N={self.steps}")

    @classmethod
    def from_horizon(cls, T, N):
        """``N`` equal steps over ``[0, T]`` (``h = T / N``)."""
        N = int(N)
        if N <= 0:
            raise UsageError("need at least one step")
        return cls(float(T) / N, N)

    @classmethod
    def covering(cls, T, h):
        """Step ``h`` with the fewest nodes reaching ``T`` (``N = ceil(T / h)``)."""
        N = int(math.ceil(float(T) / float(h) * (1.0 - 1e-12)))
        return cls(float(h), max(N, 1))

    @property
    def horizon(self):
        return self.h * self.steps

    @property
    def nodes(self):
        return self.h * np.arange(self.steps + 1)

    def t(self, i):
        return self.h * i


@dataclass(frozen=True)
class ThetaScheme:
    """Parameters of the implicit solve.

    ``tol`` is relative: a step is accepted when successive iterates differ by
    at most ``tol * max(1, |z|)``.
    """

    theta: float
    tol: float = 1e-13
    max_iterations: int = 60
    time_nodes: int = 4

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise UsageError(f"theta must lie in [0, 1], got {self.theta}")
        if not self.tol > 0 or self.max_iterations < 1 or self.time_nodes < 1:
            raise UsageError("tol, max_iterations and time_nodes must be positive")


def couple_epsilon(h, beta):
    """``eps = h^(1/(2 beta))``; ``beta = 0`` needs no regularisation (``eps = 0``)."""
    if not 0.0 < h <= 1.0:
        raise UsageError(f"step size must lie in (0, 1], got {h}")
    if beta < 0:
        raise UsageError("beta must be non-negative")
    if beta == 0:
        return 0.0
    return h ** (1.0 / (2.0 * beta))


def check_contraction(h, theta, b):
    """Refuse implicit steps unless ``h ||grad b||_inf <= 1/2``.

    Fields without a finite gradient bound are not checked here; the
    fixed-point solve then reports non-convergence itself.
    """
    bound = getattr(b, "grad_bound", math.inf)
    if theta == 0 or not math.isfinite(bound) or bound == 0:
        return
    if h * bound > 0.5:
        need = 0.5 / bound
        raise ContractionError(
            f"h * ||grad b_eps|| = {h * bound:.4g} > 1/2; use h <= {need:.4g}",
            required_h=need,
        )


def _time_rule(t0, t1, n):
    s, w = gauss_legendre(t0, t1, n)
    return s, w / (t1 - t0)


def average_field(b, t0, t1, x, nodes=4):
    """Time average of ``b(., x)`` over ``[t0, t1]``.

    Autonomous fields are evaluated once; fields that know their own
    averages (``time_average``) are delegated to; otherwise Gauss-Legendre.
    """
    if t1 <= t0:
        raise UsageError("average over an empty interval")
    custom = getattr(b, "time_average", None)
    if custom is not None:
        return custom(t0, t1, x, nodes)
    if b.autonomous:
        return b(t0, x)
    s, w = _time_rule(t0, t1, nodes)
    return sum(wk * b(sk, x) for sk, wk in zip(s, w))


def average_gradient(b, t0, t1, x, nodes=4):
    custom = getattr(b, "gradient_average", None)
    if custom is not None:
        return custom(t0, t1, x, nodes)
    if b.autonomous:
        return b.gradient(t0, x)
    s, w = _time_rule(t0, t1, nodes)
    return sum(wk * b.gradient(sk, x) for sk, wk in zip(s, w))


@dataclass
class StepResult:
    point: np.ndarray
    iterations: int
    residuals: np.ndarray  # max residual over the batch, one per iteration


def _fixed_point(y, implicit, scale, scheme, step=None):
    """Solve ``z = y + scale * implicit(z)`` from ``z0 = y``."""
    z = y.copy()
    # the active set is compacted only when some points converge
    idx = None
    ya, za = y, z
    log = []
    res = np.zeros(0)
    for k in range(1, scheme.max_iterations + 1):
        zn = ya + scale * implicit(za)
        diff = zn - za
        res = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        log.append(float(res.max()))
        if not np.all(np.isfinite(zn)):
            raise StepError("non-finite iterate in the implicit solve", step=step, residual=math.inf)
        done = res <= scheme.tol * np.maximum(1.0, np.sqrt(np.einsum("ij,ij->i", zn, zn)))
        if done.all():
            if idx is None:
                return zn, k, np.asarray(log)
            z[idx] = zn
            return z, k, np.asarray(log)
        if done.any():
            if idx is None:
                idx = np.arange(y.shape[0])
            z[idx[done]] = zn[done]
            keep = ~done
            idx, ya, za = idx[keep], ya[keep], zn[keep]
        else:
            za = zn
    raise StepError(
        f"fixed-point iteration did not converge in {scheme.max_iterations} iterations "
        f"(residual {res.max():.3g}); the contraction condition is likely violated",
        step=step,
        residual=float(res.max()),
    )


def _promote(x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return (x[None, :] if single else x), single


def implicit_step(x, t0, t1, scheme, b, step=None):
    """One regularised theta step from ``x`` over ``[t0, t1]``.

    ``y = x + (1-theta) h avg b(x)`` and ``X = y + theta h avg b(X)``.
    """
    b = as_field(b)
    pts, single = _promote(x)
    h = t1 - t0
    th = scheme.theta
    y = pts.copy()
    if th < 1.0:
        y = pts + (1.0 - th) * h * average_field(b, t0, t1, pts, scheme.time_nodes)
    if th == 0.0:
        out = StepResult(y, 0, np.zeros(0))
    else:
        z, k, log = _fixed_point(
            y, lambda z: average_field(b, t0, t1, z, scheme.time_nodes), th * h, scheme, step
        )
        out = StepResult(z, k, log)
    if single:
        out.point = out.point[0]
    return out


def classical_theta_step(x, t0, t1, scheme, b, step=None):
    """Classical theta step with endpoint values ``b(t0, x)`` and ``b(t1, X)``."""
    b = as_field(b)
    pts, single = _promote(x)
    h = t1 - t0
    th = scheme.theta
    y = pts + (1.0 - th) * h * b(t0, pts) if th < 1.0 else pts.copy()
    if th == 0.0:
        out = StepResult(y, 0, np.zeros(0))
    else:
        z, k, log = _fixed_point(y, lambda z: b(t1, z), th * h, scheme, step)
        out = StepResult(z, k, log)
    if single:
        out.point = out.point[0]
    return out


def _det(m):
    d = m.shape[-1]
    if d == 1:
        return m[..., 0, 0]
    if d == 2:
        return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    if d == 3:
        return (
            m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1])
            - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
            + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0])
        )
    return np.linalg.det(m)


def determinant_factor(theta, h, grad_here, grad_next, step=None):
    """``det[I + (1-theta) h A_i] / det[I - theta h A_{i+1}]``."""
    d = grad_here.shape[-1]
    eye = np.eye(d)
    num = _det(eye + (1.0 - theta) * h * grad_here)
    den = _det(eye - theta * h * grad_next)
    if np.any(~(den > 0)):
        raise StepError(
            "non-positive implicit determinant; the contraction condition is violated", step=step
        )
    return num / den


@dataclass
class DiscreteFlow:
    """Nodes ``X_i`` and determinants ``det grad X_i`` for a batch of initial points.

    ``nodes`` has shape ``(N+1, M, d)`` and ``determinants`` ``(N+1, M)``.
    ``residual_log`` holds, per step, the largest fixed-point residual of
    each iteration.
    """

    initial: np.ndarray
    nodes: np.ndarray
    determinants: np.ndarray
    grid: TimeGrid
    scheme: ThetaScheme
    eps_used: float
    field_name: str = ""
    iterations: np.ndarray = None
    residual_log: list = field(default_factory=list)
    single: bool = False

    def _out(self, arr):
        return arr[0] if self.single else arr

    def interpolate(self, t):
        """Piecewise-linear interpolant; closed at the final node."""
        N, h = self.grid.steps, self.grid.h
        if t < 0 or t > self.grid.horizon * (1 + 1e-12):
            raise UsageError(f"time {t} outside [0, {self.grid.horizon}]")
        i = min(int(math.floor(t / h)), N)
        if t == self.grid.t(i):
            return self._out(self.nodes[i].copy())
        if i == N:
            return self._out(self.nodes[N].copy())
        lam = (t - self.grid.t(i)) / h
        return self._out(self.nodes[i] + lam * (self.nodes[i + 1] - self.nodes[i]))

    __call__ = interpolate

    def determinant_at(self, t):
        i = min(int(round(t / self.grid.h)), self.grid.steps)
        return self._out(self.determinants[i])

    @property
    def max_log_det(self):
        with np.errstate(divide="ignore"):
            return float(np.max(np.abs(np.log(self.determinants))))

    @property
    def compressibility(self):
        """``exp(max |log det grad X_i|)``."""
        return math.exp(self.max_log_det)

    def contraction_ratios(self):
        """Successive residual ratios of every step above the round-off floor."""
        out = []
        for log in self.residual_log:
            r = np.asarray(log)
            keep = r > 1e-14
            r = r[keep]
            if r.size >= 2:
                out.append(r[1:] / r[:-1])
            else:
                out.append(np.zeros(0))
        return out

    def to_csv(self, path=None):
        """One row per (point, node): ``point,t,x1..xd,det``; header carries the run metadata."""
        buf = io.StringIO()
        sc = self.scheme
        buf.write(
            f"# theta={sc.theta:.17g}\n# h={self.grid.h:.17g}\n"
            f"# eps={self.eps_used:.17g}\n# field={self.field_name}\n"
        )
        d = self.nodes.shape[-1]
        buf.write("point,t," + ",".join(f"x{j + 1}" for j in range(d)) + ",det\n")
        t = self.grid.nodes
        for m in range(self.nodes.shape[1]):
            for i in range(self.nodes.shape[0]):
                coords = ",".join(f"{v:.17g}" for v in self.nodes[i, m])
                buf.write(f"{m},{t[i]:.17g},{coords},{self.determinants[i, m]:.17g}\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="\n") as fh:
                fh.write(text)
        return text


def integrate_flow(x0, grid, scheme, b, check=True, classical=False):
    """Run ``N`` theta steps from ``x0`` and track Jacobian determinants.

    ``b`` is a regularised field (a bare field is wrapped as pass-through).
    With ``check`` the contraction condition is verified before any implicit
    step.  ``classical`` switches to endpoint evaluations.
    """
    b = as_field(b)
    pts, single = _promote(x0)
    if pts.shape[-1] != b.dim:
        raise UsageError(f"points have dimension {pts.shape[-1]}, field has {b.dim}")
    h, N, th = grid.h, grid.steps, scheme.theta
    if check:
        check_contraction(h, th, b)
    nodes = np.empty((N + 1,) + pts.shape)
    dets = np.empty((N + 1, pts.shape[0]))
    nodes[0] = pts
    dets[0] = 1.0
    iters = np.zeros(N, dtype=int)
    logs = []
    stepper = classical_theta_step if classical else implicit_step
    reuse = b.autonomous and not classical and getattr(b, "gradient_average", None) is None
    grad_here = None
    for i in range(N):
        t0, t1 = grid.t(i), grid.t(i + 1)
        try:
            res = stepper(nodes[i], t0, t1, scheme, b, step=i)
        except StepError as exc:
            exc.step = i
            raise
        nodes[i + 1] = res.point
        iters[i] = res.iterations
        logs.append(res.residuals)
        if classical:
            gh = b.gradient(t0, nodes[i])
            gn = b.gradient(t1, nodes[i + 1])
        else:
            gh = grad_here if grad_here is not None else average_gradient(b, t0, t1, nodes[i], scheme.time_nodes)
            gn = average_gradient(b, t0, t1, nodes[i + 1], scheme.time_nodes)
        dets[i + 1] = dets[i] * determinant_factor(th, h, gh, gn, step=i)
        grad_here = gn if reuse else None
    return DiscreteFlow(
        initial=pts.copy(),
        nodes=nodes,
        determinants=dets,
        grid=grid,
        scheme=scheme,
        eps_used=float(getattr(b, "eps", 0.0)),
        field_name=getattr(b, "name", ""),
        iterations=iters,
        residual_log=logs,
        single=single,
    )


def jacobian_determinants(flow: DiscreteFlow, b):
    """Recompute the determinant sequence of an integrated flow."""
    b = as_field(b)
    grid, th = flow.grid, flow.scheme.theta
    dets = np.empty_like(flow.determinants)
    dets[0] = 1.0
    for i in range(grid.steps):
        t0, t1 = grid.t(i), grid.t(i + 1)
        gh = average_gradient(b, t0, t1, flow.nodes[i], flow.scheme.time_nodes)
        gn = average_gradient(b, t0, t1, flow.nodes[i + 1], flow.scheme.time_nodes)
        dets[i + 1] = dets[i] * determinant_factor(th, grid.h, gh, gn, step=i)
    return dets[:, 0] if flow.single else dets
