"""Experiment orchestration: convergence ladders, blob verification, transport sweeps."""
from __future__ import annotations

import math
import os
import shutil
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..analysis import (
    ConvergenceStudy,
    GridSampling,
    displacement,
    fit_convergence_rate,
    measure_errors,
)
from ..errors import ConfigError, RoughFlowError, UsageError
from ..fields import make_exact_flow, make_field, zero_field
from ..regularize import (
    BlobField,
    blob_vorticity_error,
    build_blob_lattice,
    radial_bump_vorticity,
    regularize,
    verify_bounds,
)
from ..theta import DiscreteFlow, ThetaScheme, TimeGrid, couple_epsilon, integrate_flow
from ..transport import integrate_backward, make_datum, mollify_datum
from .config import ExperimentConfig
from .output import (
    RunManifest,
    decay_plot_svg,
    fmt,
    reference_curves,
    sha256_file,
    versions,
    write_table,
)

# relative factors of the 3x3 (delta, eta) override grid
OVERRIDE_DELTA = (0.1, 1.0, 10.0)
OVERRIDE_ETA = (0.5, 1.0, 2.0)
DIV_SAMPLES = 2000


class StageError(RoughFlowError):
    """A run failed; ``stage`` names the step and ``original`` is the cause."""

    def __init__(self, stage, original):
        super().__init__(f"stage '{stage}' failed: {original}")
        self.stage = stage
        self.original = original


# ---------------------------------------------------------------------------
# run directory


class _RunDir:
    """Writes into a temporary sibling directory that replaces ``target`` on success."""

    def __init__(self, target):
        self.target = os.path.abspath(target)
        parent = os.path.dirname(self.target)
        os.makedirs(parent, exist_ok=True)
        self.tmp = tempfile.mkdtemp(prefix=".partial-", dir=parent)
        self.files = []

    def path(self, name):
        full = os.path.join(self.tmp, name)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        if name not in self.files:
            self.files.append(name)
        return full

    def write_text(self, name, text):
        with open(self.path(name), "w", newline="\n") as fh:
            fh.write(text)

    def commit(self, cfg, timing, result):
        files = {name: sha256_file(os.path.join(self.tmp, name)) for name in self.files}
        manifest = RunManifest(self.target, cfg.echo(), versions(), timing, files, result)
        with open(os.path.join(self.tmp, "manifest.txt"), "w", newline="\n") as fh:
            fh.write(manifest.text())
        if os.path.isdir(self.target):
            shutil.rmtree(self.target)
        os.replace(self.tmp, self.target)
        return manifest

    def discard(self):
        shutil.rmtree(self.tmp, ignore_errors=True)


class _Stages:
    """Names the current stage and records its wall time."""

    def __init__(self):
        self.timing = {}
        self.current = "setup"
        self._start = None

    def enter(self, name):
        self._close()
        self.current = name
        self._start = time.perf_counter()

    def _close(self):
        if self._start is not None:
            self.timing[self.current] = self.timing.get(self.current, 0.0) + time.perf_counter() - self._start
            self._start = None

    def finish(self):
        self._close()
        self.timing["total"] = sum(self.timing.values())
        return self.timing


def _run(cfg, output, body):
    try:
        cfg = cfg.validate()
    except ConfigError:
        raise
    stages = _Stages()
    rd = _RunDir(output or cfg.output)
    try:
        result = body(cfg, rd, stages)
        stages.enter("manifest")
        timing = stages.finish()
        return rd.commit(cfg, timing, result)
    except BaseException as exc:
        rd.discard()
        if isinstance(exc, (RoughFlowError, ArithmeticError, ValueError)) and not isinstance(exc, StageError):
            raise StageError(stages.current, exc) from exc
        raise


def _header(cfg):
    lines = [f"preset={cfg.preset or 'none'}"]
    lines += [f"desk-scale: {m}" for m in cfg.desk_scale]
    return lines


# ---------------------------------------------------------------------------
# field resolution and integration


def resolve_backend(cfg, b):
    """``(backend, beta)``; ``auto`` mollifies only the sqrt-sine field."""
    backend = cfg.backend
    if backend == "auto":
        backend = "mollifier" if cfg.field_id == "sqrt_sine" else "passthrough"
    beta = cfg.beta
    if beta is None:
        beta = b.beta_hint if b.beta_hint is not None else 1.0
    return backend, float(beta)


def approximate_field(cfg, b, h):
    backend, beta = resolve_backend(cfg, b)
    if backend == "mollifier":
        eps = couple_epsilon(h, beta) if beta > 0 else h
        return regularize(b, "mollifier", min(eps, 1.0), beta=beta, nodes_per_axis=cfg.nodes_per_axis)
    return regularize(b, "passthrough", beta=beta)


def scheme_of(cfg):
    return ThetaScheme(cfg.theta, cfg.tol, cfg.max_iterations, cfg.time_nodes)


def _merge(flows, single):
    first = flows[0]
    if len(flows) == 1:
        return first
    logs = []
    for f in flows:
        logs.extend(f.residual_log)
    return replace(
        first,
        initial=np.concatenate([f.initial for f in flows]),
        nodes=np.concatenate([f.nodes for f in flows], axis=1),
        determinants=np.concatenate([f.determinants for f in flows], axis=1),
        iterations=np.max(np.stack([f.iterations for f in flows]), axis=0),
        residual_log=logs,
        single=single,
    )


def integrate_parallel(x0, grid, scheme, b, workers=1, classical=False):
    """Split the initial points over a thread pool; results keep the input order."""
    pts = np.asarray(x0, dtype=float)
    if workers <= 1 or pts.ndim == 1 or pts.shape[0] < 2 * workers:
        return integrate_flow(pts, grid, scheme, b, classical=classical)
    chunks = np.array_split(pts, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        flows = list(pool.map(lambda c: integrate_flow(c, grid, scheme, b, classical=classical), chunks))
    return _merge(flows, False)


def measured_divergence(b, points, seed, samples=DIV_SAMPLES, t=0.0):
    """Largest ``|div b|`` over seeded uniform samples in the bounding box of ``points``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    rng = np.random.default_rng(seed)
    x = lo + (hi - lo) * rng.random((samples, 2))
    g = b.gradient(t, x)
    return float(np.max(np.abs(np.trace(g, axis1=-2, axis2=-1))))


def contraction_stats(flow: DiscreteFlow, max_iterations):
    """``(fraction of steps with every residual ratio <= 1/2, worst ratio, max iterations)``."""
    ratios = flow.contraction_ratios()
    ok = sum(1 for r in ratios if r.size == 0 or np.max(r) <= 0.5)
    worst = max((float(np.max(r)) for r in ratios if r.size), default=0.0)
    iters = int(np.max(flow.iterations)) if flow.iterations is not None and flow.iterations.size else 0
    return ok / max(len(ratios), 1), worst, iters


# ---------------------------------------------------------------------------
# convergence ladder


@dataclass
class LadderRow:
    h: float
    eps: float
    report: object
    order: float = math.nan
    det_lower: float = math.nan
    det_upper: float = math.nan
    det_ok: bool = True
    div_bound: float = math.nan
    contraction_fraction: float = 1.0
    worst_ratio: float = 0.0
    iterations_max: int = 0


@dataclass
class ConvergenceResult:
    study: ConvergenceStudy
    rows: list
    fit: object
    metric: str
    mode: str
    flows: dict = field(default_factory=dict)

    @property
    def errors(self):
        return np.array([getattr(r.report, self.metric) for r in self.rows])

    @property
    def orders(self):
        return self.fit.orders


ERROR_COLUMNS = (
    "h",
    "eps",
    "L1_error",
    "pointwise_error",
    "Q_delta",
    "superlevel_eta",
    "p_empirical",
    "delta",
    "eta",
    "max_log_det",
    "det_lower",
    "det_upper",
    "det_bound_ok",
    "div_bound",
    "chebyshev_ok",
    "contraction_fraction",
    "worst_ratio",
    "iterations_max",
)


def _initial_points(cfg):
    if cfg.point is not None:
        return np.asarray(cfg.point, dtype=float), None
    s = GridSampling.ball(cfg.radius, cfg.cells)
    return s.nodes, s


def _dump_indices(m, count):
    if count <= 0 or m == 0:
        return np.zeros(0, dtype=int)
    return np.unique(np.linspace(0, m - 1, min(count, m)).round().astype(int))


def _dump_flow(rd, name, flow, count):
    if flow.single:
        rd.write_text(name, flow.to_csv())
        return
    idx = _dump_indices(flow.nodes.shape[1], count)
    if idx.size == 0:
        return
    sub = replace(flow, initial=flow.initial[idx], nodes=flow.nodes[:, idx], determinants=flow.determinants[:, idx])
    rd.write_text(name, sub.to_csv())


def _convergence_body(cfg, rd, stages, keep_flows=False):
    stages.enter("field")
    b = make_field(cfg.field_id, **cfg.field_params())
    exact = make_exact_flow(cfg.field_id, **cfg.field_params()) if cfg.reference == "exact" else None
    x0, sampling = _initial_points(cfg)
    scheme = scheme_of(cfg)
    study = ConvergenceStudy(cfg.h0, cfg.levels, cfg.reference)
    flows, approx_fields = {}, {}
    for k, h in enumerate(study.ladder):
        stages.enter(f"integrate h={h:g}")
        bh = approximate_field(cfg, b, h)
        grid = TimeGrid.covering(cfg.T, h)
        flows[k] = integrate_parallel(x0, grid, scheme, bh, cfg.workers, classical=cfg.classical)
        approx_fields[k] = bh
        _dump_flow(rd, f"flows/flow_k{k}.csv", flows[k], cfg.dump_points)

    stages.enter("errors")
    reference = exact if exact is not None else flows[0]
    first = 0 if cfg.reference == "exact" else 1
    rows = []
    for k in range(first, cfg.levels + 1):
        h = float(study.ladder[k])
        flow, bh = flows[k], approx_fields[k]
        e = displacement(reference, flow, cfg.T, None)
        alpha = getattr(getattr(bh, "params", None), "alpha_rate", 1.0)
        d0 = max(bh.eps**alpha if bh.eps > 0 and math.isfinite(alpha) else 0.0, h)
        overrides = [(d0 * fd, math.sqrt(d0) * fe) for fd in OVERRIDE_DELTA for fe in OVERRIDE_ETA]
        if sampling is not None:
            rep = measure_errors(None, None, cfg.T, sampling, h, bh.eps, alpha, overrides, errors=e)
            rep.max_log_det = flow.max_log_det
        else:
            one = GridSampling(0.0, 1, np.asarray(cfg.point, float)[None, :], np.ones(1))
            rep = measure_errors(None, None, cfg.T, one, h, bh.eps, alpha, overrides, errors=np.reshape(e, 1))
            rep.l1_error = math.nan
            rep.pointwise_error = float(np.reshape(e, -1)[0])
            rep.max_log_det = flow.max_log_det
        if sampling is not None and len(sampling) == 1:
            rep.pointwise_error = float(e[0])
        div = measured_divergence(bh, flow.nodes, cfg.seed)
        C = div + 1.0
        frac, worst, iters = contraction_stats(flow, cfg.max_iterations)
        dets = flow.determinants
        lo_ok = float(np.min(dets)) >= math.exp(-C * flow.grid.horizon)
        hi_ok = float(np.max(dets)) <= math.exp(C * flow.grid.horizon)
        rows.append(
            LadderRow(
                h=h,
                eps=bh.eps,
                report=rep,
                det_lower=float(np.min(dets)),
                det_upper=float(np.max(dets)),
                det_ok=bool(lo_ok and hi_ok),
                div_bound=div,
                contraction_fraction=frac,
                worst_ratio=worst,
                iterations_max=iters,
            )
        )
    study.reports = [r.report for r in rows]
    metric = "pointwise_error" if sampling is None else "l1_error"
    fit = fit_convergence_rate([r.h for r in rows], [getattr(r.report, metric) for r in rows])
    for r, p in zip(rows, fit.orders):
        r.order = float(p)

    stages.enter("write")
    table = []
    for r in rows:
        rep = r.report
        table.append(
            [
                r.h, r.eps, rep.l1_error, rep.pointwise_error, rep.q_default, rep.superlevel_default, r.order,
                rep.delta, rep.eta, rep.max_log_det, r.det_lower, r.det_upper, r.det_ok, r.div_bound,
                rep.chebyshev_ok, r.contraction_fraction, r.worst_ratio, r.iterations_max,
            ]
        )
    fit_lines = [f"metric={metric}", f"reference={cfg.reference}"] + fit.summary_lines()
    _write_errors(rd, cfg, ERROR_COLUMNS, table, fit_lines)
    rd.write_text("fit.txt", "\n".join(_header(cfg) + fit_lines) + "\n")
    hs = [r.h for r in rows]
    es = [getattr(r.report, metric) for r in rows]
    title = f"{cfg.field_id} theta={cfg.theta:g}"
    rd.write_text("plot.svg", decay_plot_svg(hs, es, reference_curves(hs, es), ylabel=metric, title=title))
    return ConvergenceResult(study, rows, fit, metric, "point" if sampling is None else "grid", flows if keep_flows else {})


def _write_errors(rd, cfg, columns, table, fit_lines):
    path = rd.path("errors.csv")
    with open(path, "w", newline="\n") as fh:
        for line in _header(cfg):
            fh.write(f"# {line}\n")
    with open(path, "a", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in table:
            fh.write(",".join(fmt(v) for v in row) + "\n")
        for line in fit_lines:
            fh.write(f"# {line}\n")


def run_experiment(cfg: ExperimentConfig, output=None, keep_flows=False) -> RunManifest:
    """Run the step-size ladder and write ``errors.csv``, ``fit.txt``, ``plot.svg`` and flow dumps."""
    return _run(cfg, output, lambda c, rd, st: _convergence_body(c, rd, st, keep_flows))


# ---------------------------------------------------------------------------
# single integration


@dataclass
class FlowResult:
    flow: DiscreteFlow
    eps: float
    contraction_fraction: float
    worst_ratio: float
    iterations_max: int


def run_flow(cfg: ExperimentConfig, output=None) -> RunManifest:
    """Integrate once at ``h0`` and dump the trajectories."""

    def body(cfg, rd, stages):
        stages.enter("field")
        b = make_field(cfg.field_id, **cfg.field_params())
        bh = approximate_field(cfg, b, cfg.h0)
        x0, _ = _initial_points(cfg)
        stages.enter("integrate")
        flow = integrate_parallel(x0, TimeGrid.covering(cfg.T, cfg.h0), scheme_of(cfg), bh, cfg.workers, cfg.classical)
        stages.enter("write")
        _dump_flow(rd, "flow.csv", flow, cfg.dump_points if not flow.single else 1)
        frac, worst, iters = contraction_stats(flow, cfg.max_iterations)
        lines = _header(cfg) + [
            f"field={cfg.field_id}",
            f"h={cfg.h0!r}",
            f"steps={flow.grid.steps}",
            f"eps={bh.eps!r}",
            f"points={flow.nodes.shape[1]}",
            f"max_log_det={flow.max_log_det:.10g}",
            f"contraction_fraction={frac:.6g}",
            f"worst_ratio={worst:.6g}",
            f"iterations_max={iters}",
        ]
        rd.write_text("summary.txt", "\n".join(lines) + "\n")
        return FlowResult(flow, bh.eps, frac, worst, iters)

    return _run(cfg, output, body)


# ---------------------------------------------------------------------------
# vortex blobs


def _cell_vorticity(ell):
    def omega(x):
        x = np.asarray(x, dtype=float)
        inside = (np.abs(x[..., 0]) < ell / 2) & (np.abs(x[..., 1]) < ell / 2)
        return inside.astype(float)

    return omega


def _zero_vorticity(x):
    return np.zeros(np.asarray(x).shape[:-1])


def integrate_vorticity(omega, center, radius, nodes=256):
    """Tensor Gauss-Legendre integral of ``omega`` over the square around the disc."""
    xi, wi = np.polynomial.legendre.leggauss(nodes)
    c = np.asarray(center, dtype=float)
    a = c[0] + radius * xi
    bb = c[1] + radius * xi
    pts = np.stack(np.meshgrid(a, bb, indexing="ij"), axis=-1)
    vals = np.asarray(omega(pts), dtype=float)
    return float(np.einsum("i,ij,j->", wi, vals, wi) * radius * radius)


@dataclass
class BlobRow:
    eps: float
    ell: float
    cells: int
    l1_distance: float
    ratio: float
    gamma_sum: float
    omega_integral: float
    gamma_rel_error: float


@dataclass
class BlobResult:
    rows: list
    params: object = None
    bounds: object = None

    @property
    def ratios(self):
        return np.array([r.ratio for r in self.rows])

    @property
    def ratio_drift(self):
        r = self.ratios
        if r.size == 0 or np.all(r == 0):
            return 1.0
        return float(np.max(r) / np.min(r)) if np.min(r) > 0 else math.inf


BLOB_COLUMNS = ("eps", "ell", "cells", "L1_distance", "ratio_eps3", "gamma_sum", "omega_integral", "gamma_rel_error")


def _vorticity(cfg, eps):
    """``(omega, support, exact velocity or None)`` for the configured vorticity id."""
    if cfg.omega_id == "bump":
        omega, vel = radial_bump_vorticity(cfg.omega_center, cfg.omega_radius, 1.0)
        return omega, (cfg.omega_center, cfg.omega_radius), vel
    if cfg.omega_id == "zero":
        return _zero_vorticity, (cfg.omega_center, cfg.omega_radius), zero_field()
    ell = eps**4
    return _cell_vorticity(ell), ((0.0, 0.0), ell), None


def run_blob_verification(cfg: ExperimentConfig, output=None, bounds_cells=None) -> RunManifest:
    """Blob lattice ladder: vorticity distance table, circulation CSVs and bound constants."""

    def body(cfg, rd, stages):
        rows, members, base = [], [], None
        for eps in sorted(cfg.eps_ladder, reverse=True):
            stages.enter(f"lattice eps={eps:g}")
            omega, support, base = _vorticity(cfg, eps)
            blob = build_blob_lattice(omega, eps, support, cell_cap=cfg.cell_cap)
            rd.write_text(f"gamma/gamma_eps{eps:g}.csv", blob.to_csv())
            stages.enter(f"distance eps={eps:g}")
            dist = blob_vorticity_error(blob, omega, support) if blob.size else 0.0
            total = blob.vorticity_total
            center, radius = support
            exact_total = integrate_vorticity(omega, center, radius) if cfg.omega_id == "bump" else total
            if cfg.omega_id == "cell":
                exact_total = blob.ell**2
            rel = abs(total - exact_total) / abs(exact_total) if exact_total != 0 else abs(total)
            rows.append(BlobRow(eps, blob.ell, blob.size, dist, dist / eps**3, total, exact_total, rel))
            members.append(BlobField(blob, base=base))
        result = BlobResult(rows)
        fit_lines = [f"ratio_drift={result.ratio_drift:.6g}"]
        if base is not None and len(members) >= 3:
            stages.enter("bounds")
            c = np.asarray(cfg.omega_center, dtype=float)
            half = float(np.max(np.abs(c)) + cfg.omega_radius)
            params, table = verify_bounds(members, base, half, bounds_cells or cfg.blob_cells)
            result.params, result.bounds = params, table
            fit_lines += [
                f"alpha={params.alpha_rate:.6g}",
                f"beta={params.beta_rate:.6g}",
                f"C0={params.c0:.6g}",
                f"C1={params.c1:.6g}",
                f"C2={params.c2:.6g}",
                f"C3={params.c3:.6g}",
            ] + [f"warning: {w}" for w in table.warnings]
        stages.enter("write")
        table = [[getattr(r, f) for f in BlobRow.__dataclass_fields__] for r in rows]
        _write_errors(rd, cfg, BLOB_COLUMNS, table, fit_lines)
        rd.write_text("fit.txt", "\n".join(_header(cfg) + fit_lines) + "\n")
        eps = [r.eps for r in rows]
        dist = [r.l1_distance for r in rows]
        refs = []
        if dist and dist[0] > 0:
            refs = [("C eps^3", eps, [dist[0] * (e / eps[0]) ** 3 for e in eps])]
        rd.write_text("plot.svg", decay_plot_svg(eps, dist, refs, xlabel="eps", ylabel="L1 distance", title="blob vorticity"))
        return result

    return _run(cfg, output, body)


# ---------------------------------------------------------------------------
# transport


TRANSPORT_COLUMNS = (
    "t",
    "h",
    "delta",
    "total_error",
    "datum_error",
    "datum_pullback_error",
    "flow_error",
    "lip_datum",
    "transfer_error",
    "transfer_bound",
    "transfer_ok",
    "decomposition_bound",
    "decomposition_ok",
)


@dataclass
class TransportRow:
    t: float
    h: float
    delta: float
    total_error: float
    datum_error: float
    datum_pullback_error: float
    flow_error: float
    lip_datum: float
    transfer_error: float
    transfer_bound: float
    transfer_ok: bool
    decomposition_bound: float
    decomposition_ok: bool


@dataclass
class TransportResult:
    rows: list
    fit: object = None

    def select(self, t=None, delta=None):
        out = self.rows
        if t is not None:
            out = [r for r in out if r.t == t]
        if delta is not None:
            out = [r for r in out if r.delta == delta]
        return out


def _weighted(w, v):
    return math.fsum((w * v).tolist())


def run_transport_sweep(cfg: ExperimentConfig, output=None) -> RunManifest:
    """L1 transport errors per ``(t, h, delta)`` with the transfer and decomposition checks.

    ``delta = 0`` rows use the datum itself.  The transfer check compares
    ``||u0d(Y) - u0d(X^-1)||`` with ``1.1 Lip(u0d) ||Y - X^-1||``; the
    decomposition check compares the total error with ``1.1`` times the sum
    of that transfer bound and ``||u0d - u0||`` pulled back by the exact flow.
    """

    def body(cfg, rd, stages):
        stages.enter("field")
        if cfg.reference != "exact":
            raise UsageError("transport sweeps need a field with an exact flow")
        b = make_field(cfg.field_id, **cfg.field_params())
        exact = make_exact_flow(cfg.field_id, **cfg.field_params())
        u0 = make_datum(cfg.datum, center=cfg.datum_center, radius=cfg.datum_radius)
        radius = cfg.transport_radius or u0.support_radius
        S = GridSampling.ball(radius, cfg.transport_cells)
        x = S.nodes
        w = S.weights
        deltas = (0.0,) + tuple(sorted(set(cfg.deltas), reverse=True))
        data = {0.0: u0}
        for d in deltas[1:]:
            data[d] = mollify_datum(u0, d)
        times = tuple(cfg.times) or (cfg.T,)
        scheme = scheme_of(cfg)
        rows = []
        for t in times:
            stages.enter(f"exact t={t:g}")
            xinv = exact.inverse_eval(t, x)
            exact_vals = u0(xinv)
            pulled = {d: data[d](xinv) for d in deltas}
            datum_err = {d: _weighted(w, np.abs(data[d](x) - u0(x))) for d in deltas}
            for h in cfg.ladder:
                stages.enter(f"backward t={t:g} h={h:g}")
                bh = approximate_field(cfg, b, h)
                pos, _ = integrate_backward(t, x, TimeGrid.covering(cfg.T, h), scheme, bh)
                flow_err = _weighted(w, np.sqrt(np.sum((pos - xinv) ** 2, axis=-1)))
                for d in deltas:
                    ud = data[d]
                    vals = ud(pos)
                    lip = ud.lipschitz_bound if ud.lipschitz_bound is not None else math.inf
                    total = _weighted(w, np.abs(vals - exact_vals))
                    transfer = _weighted(w, np.abs(vals - pulled[d]))
                    pullback = _weighted(w, np.abs(pulled[d] - exact_vals))
                    tb = 1.1 * lip * flow_err
                    db = 1.1 * (lip * flow_err + pullback)
                    rows.append(
                        TransportRow(
                            t, h, d, total, datum_err[d], pullback, flow_err, lip, transfer, tb,
                            bool(transfer <= tb), db, bool(total <= db),
                        )
                    )
        result = TransportResult(rows)
        stages.enter("snapshots")
        snap = GridSampling.ball(radius, min(cfg.transport_cells, 64))
        for t in times:
            pos, _ = integrate_backward(t, snap.nodes, TimeGrid.covering(cfg.T, cfg.h0), scheme, approximate_field(cfg, b, cfg.h0))
            lines = [f"# t={t:.17g}", f"# h={cfg.h0:.17g}", "x,y,u_h,u_exact"]
            ue = u0(exact.inverse_eval(t, snap.nodes))
            for (px, py), uh, ux in zip(snap.nodes, u0(pos), ue):
                lines.append(f"{px:.17g},{py:.17g},{uh:.17g},{ux:.17g}")
            rd.write_text(f"snapshots/u_t{t:g}.csv", "\n".join(lines) + "\n")
        stages.enter("write")
        t_last = times[-1]
        base_rows = result.select(t=t_last, delta=0.0)
        fit = fit_convergence_rate([r.h for r in base_rows], [r.total_error for r in base_rows])
        result.fit = fit
        fit_lines = [f"metric=total_error t={t_last:g} delta=0"] + fit.summary_lines()
        fit_lines.append(f"transfer_ok={'yes' if all(r.transfer_ok for r in rows) else 'no'}")
        fit_lines.append(f"decomposition_ok={'yes' if all(r.decomposition_ok for r in rows) else 'no'}")
        table = [[getattr(r, c) for c in TRANSPORT_COLUMNS] for r in rows]
        _write_errors(rd, cfg, TRANSPORT_COLUMNS, table, fit_lines)
        rd.write_text("fit.txt", "\n".join(_header(cfg) + fit_lines) + "\n")
        hs = [r.h for r in base_rows]
        es = [r.total_error for r in base_rows]
        rd.write_text("plot.svg", decay_plot_svg(hs, es, reference_curves(hs, es), ylabel="L1 transport error", title=f"transport t={t_last:g}"))
        return result

    return _run(cfg, output, body)
