"""Numerical estimates of the approximation constants of a regularised family."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError
from .blob import BlobDiscretization, _support
from .kernels import mollifier_kernel
from .mollify import RegularizationParams


def box_grid(half_width, cells):
    """Cell centres and cell area of a uniform ``cells x cells`` grid on ``[-w, w]^2``."""
    step = 2.0 * half_width / cells
    ticks = -half_width + (np.arange(cells) + 0.5) * step
    pts = np.stack(np.meshgrid(ticks, ticks, indexing="ij"), axis=-1)
    return pts, step * step


def _spectral_norm(g):
    return np.linalg.norm(g.reshape(-1, g.shape[-2], g.shape[-1]), ord=2, axis=(1, 2))


@dataclass
class BoundsTable:
    """Per-member measurements behind :func:`verify_bounds`."""

    eps: np.ndarray
    l1_distance: np.ndarray
    grad_sup: np.ndarray
    div_sup: np.ndarray
    sup: np.ndarray
    warnings: list = field(default_factory=list)


def _samples(member, t, half_width, cells):
    fast = getattr(member, "box_samples", None)
    if fast is not None:
        return fast(t, half_width, cells)
    pts, area = box_grid(half_width, cells)
    return pts, area, member(t, pts), member.gradient(t, pts)


def measure_bounds(family, b, half_width, cells=200, t=0.0):
    """Sample every member of ``family`` on the box ``[-w, w]^2``."""
    if len(family) < 1:
        raise UsageError("empty family")
    rows = []
    for member in family:
        pts, area, vel, grad = _samples(member, t, half_width, cells)
        if b is None:
            dist = math.nan
        else:
            diff = vel - b(t, pts)
            dist = float(np.sum(np.sqrt(np.sum(diff * diff, axis=-1))) * area)
        gs = _spectral_norm(grad)
        div = np.trace(grad, axis1=-2, axis2=-1)
        rows.append(
            (
                member.eps,
                dist,
                float(np.nanmax(gs)),
                float(np.nanmax(np.abs(div))),
                float(np.max(np.sqrt(np.sum(vel * vel, axis=-1)))),
            )
        )
    arr = np.asarray(rows, dtype=float)
    order = np.argsort(-arr[:, 0], kind="stable")
    arr = arr[order]
    table = BoundsTable(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4])
    d = table.l1_distance
    if np.all(np.isfinite(d)) and np.any(np.diff(d) > 0):
        table.warnings.append("L1 distances are not monotone along the eps ladder")
    return table


def _loglog_fit(x, y):
    """Least-squares ``log y = a + k log x``; returns ``(exp(a), k)``."""
    lx, ly = np.log(x), np.log(y)
    A = np.stack([np.ones_like(lx), lx], axis=-1)
    (a, k), *_ = np.linalg.lstsq(A, ly, rcond=None)
    return math.exp(a), k


def verify_bounds(family, b, half_width, cells=200, t=0.0, min_points=3):
    """Estimate ``alpha, beta`` and ``C0..C3`` from samples of a regularised family.

    ``C0 eps^alpha`` is fitted to the L1 distances to ``b`` over the box,
    ``C1 eps^-beta`` to the sup of the gradient (spectral norm), and ``C2``,
    ``C3`` are the largest observed ``|div b_eps|`` and ``|b_eps|``.  A
    non-monotone L1 ladder raises a :class:`RuntimeWarning` and the fit is
    still returned.  Returns ``(params, table)``.
    """
    if len(family) < min_points:
        raise UsageError(f"need at least {min_points} ladder points, got {len(family)}")
    table = measure_bounds(family, b, half_width, cells, t)
    for msg in table.warnings:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    eps = table.eps
    dist = table.l1_distance
    alpha, c0 = math.inf, 0.0
    # distances at round-off level count as zero
    floor = 1e-12 * max(1.0, float(np.max(table.sup))) * (2.0 * half_width) ** 2
    pos = np.isfinite(dist) & (dist > floor) & (eps > 0)
    if np.count_nonzero(pos) >= 2:
        c0, alpha = _loglog_fit(eps[pos], dist[pos])
        if alpha <= 0:
            table.warnings.append(f"fitted L1 rate {alpha:.3g} is not positive")
            warnings.warn(table.warnings[-1], RuntimeWarning, stacklevel=2)
            alpha = math.inf if alpha == 0 else abs(alpha)
    elif np.any(np.isnan(dist)):
        alpha = 1.0
    gs = table.grad_sup
    beta, c1 = 0.0, float(np.max(gs))
    ok = (eps > 0) & (gs > 0)
    if np.count_nonzero(ok) >= 2 and np.ptp(eps[ok]) > 0:
        c1, k = _loglog_fit(eps[ok], gs[ok])
        beta = max(0.0, -k)
        if beta == 0.0:
            c1 = float(np.max(gs))
        else:
            # lift the constant so the fitted curve dominates every sample
            c1 = float(np.max(gs * eps[ok] ** beta)) if np.all(ok) else c1
    params = RegularizationParams(
        epsilon=float(np.min(eps)),
        alpha_rate=float(alpha),
        beta_rate=float(beta),
        c0=float(c0),
        c1=float(c1),
        c2=float(np.max(table.div_sup)),
        c3=float(np.max(table.sup)),
    )
    return params, table


def blob_vorticity_error(blob: BlobDiscretization, omega, support, points_per_eps=64):
    """``||omega_eps - phi_eps * omega||_{L^1}`` by grid quadrature.

    ``omega_eps`` is the blob vorticity and ``phi_eps * omega`` is computed by
    the product rule on a grid of spacing ``ell / q`` fine enough to put
    ``points_per_eps`` nodes across one kernel radius; both are evaluated on
    that grid with FFT lattice sums and the L1 norm uses the same grid.
    """
    center, radius = _support(support)
    eps, ell = blob.epsilon, blob.ell
    refine = max(1, int(math.ceil(points_per_eps * ell / eps)))
    s = ell / refine
    half = float(np.max(np.abs(center)) + radius + 2.0 * eps)
    axis, w_blob = blob.vorticity_on_lattice(half, refine)
    m = np.rint(axis / s).astype(np.int64)
    grid = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1)
    vals = np.asarray(omega(grid), dtype=float)
    I, J = np.nonzero(vals)
    fine = BlobDiscretization(eps, s, np.stack([m[I], m[J]], axis=-1), vals[I, J] * s * s)
    _, w_conv = fine.vorticity_on_lattice(half, 1)
    return float(np.sum(np.abs(w_blob - w_conv)) * s * s)


def kernel_unit_mass(kernel=None):
    """``sum_k w_k`` of the stored convolution rule (should be 1)."""
    kernel = kernel or mollifier_kernel(2)
    return math.fsum(kernel.weights)
