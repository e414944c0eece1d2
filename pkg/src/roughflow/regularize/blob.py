"""Vortex-blob regularisation on the square lattice of spacing ``ell = eps^4``."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from ..errors import ResourceError, UsageError
from ..fields import VelocityField
from .kernels import (
    biot_savart,
    mollified_biot_savart,
    mollified_biot_savart_grad,
    mollifier_kernel,
)
from .mollify import ApproxField, RegularizationParams

DEFAULT_CELL_CAP = 1_000_000
_CHUNK = 2_000_000


@dataclass(frozen=True, eq=False)
class BlobDiscretization:
    """Lattice blobs: centres ``ell * indices`` carrying circulations ``Gamma_i``.

    Only cells meeting the declared support of the vorticity are stored, and
    cells whose circulation is exactly zero are dropped.
    """

    epsilon: float
    ell: float
    indices: np.ndarray
    circulations: np.ndarray

    @property
    def centers(self):
        return self.ell * self.indices.astype(float)

    @property
    def size(self):
        return self.circulations.size

    @property
    def vorticity_total(self):
        return math.fsum(self.circulations)

    def _pair_sum(self, x, fn, tail):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 2)
        out = np.zeros((flat.shape[0],) + tail)
        if self.size == 0:
            return out.reshape(x.shape[:-1] + tail)
        centers = self.centers
        step = max(1, _CHUNK // self.size)
        for i in range(0, flat.shape[0], step):
            diff = flat[i : i + step, None, :] - centers[None, :, :]
            out[i : i + step] = np.einsum("n,mn...->m...", self.circulations, fn(diff))
        return out.reshape(x.shape[:-1] + tail)

    def velocity(self, x):
        """``b_eps(x) = sum_i Gamma_i K_eps(x - alpha_i)``."""
        kernel = mollifier_kernel(2)
        return self._pair_sum(x, lambda d: mollified_biot_savart(d, self.epsilon, kernel), (2,))

    def velocity_gradient(self, x):
        kernel = mollifier_kernel(2)
        return self._pair_sum(x, lambda d: mollified_biot_savart_grad(d, self.epsilon, kernel), (2, 2))

    def vorticity(self, x):
        """``omega_eps(x) = sum_i Gamma_i phi_eps(x - alpha_i)``."""
        kernel = mollifier_kernel(2)
        return self._pair_sum(x, lambda d: kernel.scaled(d, self.epsilon), ())

    def lattice_convolution(self, kernel_fn, half_width, refine=1, support=None):
        """Evaluate ``sum_i Gamma_i k(x - alpha_i)`` on the grid ``(ell/refine) Z^2``.

        Returns ``(axis, values)`` with ``values[a, b]`` the sum at
        ``(axis[a], axis[b])`` for ``|x_j| <= half_width``.  ``kernel_fn`` maps
        offsets of shape ``(..., 2)`` to ``(...)`` or ``(..., c)``.  A finite
        ``support`` radius trims the kernel image.  Uses FFT convolution, so
        values agree with the direct sum to round-off.
        """
        refine = int(refine)
        s = self.ell / refine
        m_lo = int(math.ceil(-half_width / s - 1e-9))
        m_hi = int(math.floor(half_width / s + 1e-9))
        axis = s * np.arange(m_lo, m_hi + 1)
        n_out = axis.size
        if self.size == 0:
            probe = np.asarray(kernel_fn(np.zeros((1, 2))))
            return axis, np.zeros((n_out, n_out) + probe.shape[1:])
        i_min = self.indices.min(axis=0)
        i_max = self.indices.max(axis=0)
        shape = tuple((i_max - i_min) * refine + 1)
        img = np.zeros(shape)
        pos = (self.indices - i_min) * refine
        np.add.at(img, (pos[:, 0], pos[:, 1]), self.circulations)
        values = []
        k_lo = m_lo - refine * i_max
        k_hi = m_hi - refine * i_min
        if support is not None:
            reach = int(math.ceil(support / s)) + 1
            k_lo = np.maximum(k_lo, -reach)
            k_hi = np.minimum(k_hi, reach)
        if np.any(k_hi < k_lo):
            probe = np.asarray(kernel_fn(np.zeros((1, 2))))
            return axis, np.zeros((n_out, n_out) + probe.shape[1:])
        kx = s * np.arange(k_lo[0], k_hi[0] + 1)
        ky = s * np.arange(k_lo[1], k_hi[1] + 1)
        offsets = np.stack(np.meshgrid(kx, ky, indexing="ij"), axis=-1)
        kimg = np.asarray(kernel_fn(offsets))
        tail = kimg.shape[2:]
        flat_k = kimg.reshape(kimg.shape[:2] + (-1,))
        off = refine * i_min + k_lo
        for c in range(flat_k.shape[-1]):
            full = fftconvolve(img, flat_k[..., c], mode="full")
            res = np.zeros((n_out, n_out))
            sl_out, sl_in = [], []
            for ax in range(2):
                p_lo = m_lo - off[ax]
                a = max(0, -p_lo)
                b = min(n_out, full.shape[ax] - p_lo)
                sl_out.append(slice(a, max(a, b)))
                sl_in.append(slice(p_lo + a, p_lo + max(a, b)))
            res[tuple(sl_out)] = full[tuple(sl_in)]
            values.append(res)
        vals = np.stack(values, axis=-1).reshape((n_out, n_out) + tail)
        return axis, vals

    def velocity_on_lattice(self, half_width, refine=1):
        kernel = mollifier_kernel(2)
        return self.lattice_convolution(lambda d: mollified_biot_savart(d, self.epsilon, kernel), half_width, refine)

    def gradient_on_lattice(self, half_width, refine=1):
        kernel = mollifier_kernel(2)
        return self.lattice_convolution(
            lambda d: mollified_biot_savart_grad(d, self.epsilon, kernel), half_width, refine
        )

    def vorticity_on_lattice(self, half_width, refine=1):
        kernel = mollifier_kernel(2)
        return self.lattice_convolution(
            lambda d: kernel.scaled(d, self.epsilon), half_width, refine, support=self.epsilon
        )

    # -- serialisation ---------------------------------------------------

    def to_csv(self, path=None):
        """Plain-text table: header with eps and ell, then ``x,y,gamma`` rows."""
        buf = io.StringIO()
        buf.write(f"# epsilon={float(self.epsilon):.17g}\n# ell={float(self.ell):.17g}\n")
        buf.write("x,y,gamma\n")
        for (cx, cy), g in zip(self.centers, self.circulations):
            buf.write(f"{cx:.17g},{cy:.17g},{g:.17g}\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="\n") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source):
        """Inverse of :meth:`to_csv`; ``source`` is a path or the table text."""
        text = source
        if "\n" not in str(source):
            with open(source) as fh:
                text = fh.read()
        meta, rows = {}, []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = float(val)
            elif line.startswith("x,"):
                continue
            else:
                rows.append([float(v) for v in line.split(",")])
        if "epsilon" not in meta or "ell" not in meta:
            raise UsageError("blob table header must carry epsilon and ell")
        data = np.asarray(rows, dtype=float).reshape(-1, 3)
        ell = meta["ell"]
        idx = np.rint(data[:, :2] / ell).astype(np.int64)
        return cls(meta["epsilon"], ell, idx, data[:, 2].copy())


def _support(support):
    if isinstance(support, (int, float, np.floating, np.integer)):
        return np.zeros(2), float(support)
    center, radius = support
    return np.asarray(center, dtype=float), float(radius)


def estimated_cells(eps, radius):
    ell = eps**4
    return math.pi * (radius + ell) ** 2 / ell**2


def smallest_feasible_eps(radius, cap=DEFAULT_CELL_CAP):
    """Smallest ``eps`` whose lattice over a disc of ``radius`` stays under ``cap`` cells."""
    ell = radius * math.sqrt(math.pi / cap) * 1.01
    return ell**0.25


def build_blob_lattice(omega, eps, support, cell_cap=DEFAULT_CELL_CAP, nodes_per_cell=3):
    """Lattice circulations ``Gamma_i = int_{Q_i} omega`` for ``ell = eps^4``.

    ``omega`` maps points ``(..., 2)`` to vorticity values; ``support`` is a
    radius (disc at the origin) or ``(center, radius)`` containing
    ``supp omega``.  Cell integrals use a tensor Gauss-Legendre rule.
    """
    eps = float(eps)
    if not 0.0 < eps < 1.0:
        raise UsageError(f"blob scale must lie in (0, 1), got {eps}")
    center, radius = _support(support)
    ell = eps**4
    if estimated_cells(eps, radius) > 2 * cell_cap:
        raise ResourceError(
            f"lattice for eps={eps} needs ~{estimated_cells(eps, radius):.3g} cells "
            f"(cap {cell_cap}); smallest feasible eps ~ {smallest_feasible_eps(radius, cell_cap):.4g}"
        )
    # rows of cells meeting the closed disc
    i1 = np.arange(
        math.floor((center[0] - radius) / ell - 0.5), math.ceil((center[0] + radius) / ell + 0.5) + 1
    )
    dx = np.maximum(np.abs(ell * i1 - center[0]) - ell / 2, 0.0)
    keep = dx <= radius
    i1, dx = i1[keep], dx[keep]
    half = np.sqrt(np.maximum(radius * radius - dx * dx, 0.0))
    lo = np.ceil((center[1] - half) / ell - 0.5).astype(np.int64)
    hi = np.floor((center[1] + half) / ell + 0.5).astype(np.int64)
    counts = np.maximum(hi - lo + 1, 0)
    total = int(counts.sum())
    if total > cell_cap:
        raise ResourceError(
            f"lattice for eps={eps} has {total} cells (cap {cell_cap}); "
            f"smallest feasible eps ~ {smallest_feasible_eps(radius, cell_cap):.4g}"
        )
    rows = np.repeat(i1, counts)
    starts = np.repeat(lo - np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
    cols = starts + np.arange(total)
    idx = np.stack([rows, cols], axis=-1).astype(np.int64)

    xi, wi = np.polynomial.legendre.leggauss(nodes_per_cell)
    off = np.stack(np.meshgrid(xi, xi, indexing="ij"), axis=-1).reshape(-1, 2) * (ell / 2)
    w = np.outer(wi, wi).ravel() * (ell / 2) ** 2
    gammas = np.empty(total)
    step = max(1, _CHUNK // off.shape[0])
    for s in range(0, total, step):
        pts = ell * idx[s : s + step, None, :].astype(float) + off[None, :, :]
        gammas[s : s + step] = np.asarray(omega(pts)) @ w
    nz = gammas != 0.0
    return BlobDiscretization(eps, ell, idx[nz], gammas[nz])


class BlobField(ApproxField):
    """Regularised velocity ``sum_i Gamma_i K_eps(x - alpha_i)``.

    ``base`` is the exact velocity ``K * omega`` when it is known, which
    :func:`verify_bounds` needs for the L1 distance.
    """

    backend = "blob"

    def __init__(self, blob: BlobDiscretization, base=None, params=None):
        if params is None:
            params = RegularizationParams(epsilon=blob.epsilon, alpha_rate=1.0, beta_rate=3.0)
        super().__init__(base, params)
        self.blob = blob

    @property
    def name(self):
        return getattr(self.base, "name", "blob")

    @property
    def dim(self):
        return 2

    @property
    def autonomous(self):
        return True

    def __call__(self, t, x):
        return self.blob.velocity(x)

    def gradient(self, t, x):
        return self.blob.velocity_gradient(x)

    def box_samples(self, t, half_width, cells):
        """Velocity and gradient on a lattice-aligned grid covering the box.

        The grid spacing is the multiple of ``ell`` closest to
        ``2 half_width / cells`` (or ``ell / k`` when that is finer).
        """
        target = 2.0 * half_width / cells
        if target >= self.blob.ell:
            stride, refine = max(1, int(round(target / self.blob.ell))), 1
        else:
            stride, refine = 1, max(1, int(round(self.blob.ell / target)))
        axis, vel = self.blob.velocity_on_lattice(half_width, refine)
        _, grad = self.blob.gradient_on_lattice(half_width, refine)
        axis = axis[::stride]
        vel = vel[::stride, ::stride]
        grad = grad[::stride, ::stride]
        pts = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1)
        spacing = self.blob.ell * stride / refine
        return pts, spacing**2, vel, grad


def radial_bump_vorticity(center=(0.0, 0.0), radius=1.0, total=1.0):
    """Smooth bump vorticity with the mollifier profile, total circulation ``total``.

    Returns ``(omega, velocity)`` where ``velocity = K * omega`` is exact:
    ``K(x - c) W(|x - c|)`` with ``W`` the circulation inside the radius.
    """
    kernel = mollifier_kernel(2)
    c = np.asarray(center, dtype=float)
    R = float(radius)

    def omega(x):
        return total * kernel.profile((np.asarray(x, dtype=float) - c) / R) / R**2

    def vel(t, x):
        d = np.asarray(x, dtype=float) - c
        r = np.sqrt(np.sum(d * d, axis=-1))
        return (total * kernel.mass(r / R))[..., None] * biot_savart(d)

    field = VelocityField(
        name="bump_vortex",
        func=vel,
        sup_bound=None,
        params={"center": tuple(c), "radius": R, "total": total},
    )
    return omega, field
