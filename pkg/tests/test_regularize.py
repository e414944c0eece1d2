import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roughflow.errors import DomainError, ResourceError, UsageError
from roughflow.fields import (
    VelocityField,
    constant_field,
    fd_gradient,
    log_power_field,
    power_rotation_field,
    rotation_field,
    sqrt_sine_field,
)
from roughflow.regularize import (
    BlobDiscretization,
    BlobField,
    MollifiedField,
    RegularizationParams,
    biot_savart,
    biot_savart_split,
    blob_velocity,
    blob_vorticity_error,
    build_blob_lattice,
    measure_bounds,
    mollified_biot_savart,
    mollified_biot_savart_grad,
    mollifier_kernel,
    mollify_field,
    passthrough,
    radial_bump_vorticity,
    regularize,
    smallest_feasible_eps,
    verify_bounds,
)
from roughflow.regularize.bounds import kernel_unit_mass
from roughflow.theta import ThetaScheme, TimeGrid, integrate_flow

nonzero = st.floats(-50.0, 50.0, allow_nan=False).filter(lambda v: abs(v) > 1e-6)


# ---------------------------------------------------------------------------
# kernels


@pytest.mark.parametrize("n", [8, 16, 32, 64])
def test_kernel_unit_mass(n):
    k = mollifier_kernel(2, n)
    assert abs(kernel_unit_mass(k) - 1.0) <= 1e-8
    assert np.all(k.weights >= 0)
    assert np.all(np.sum(k.nodes**2, axis=-1) < 1.0)


def test_kernel_profile_support():
    k = mollifier_kernel(2)
    y = np.random.default_rng(0).uniform(-2, 2, (1000, 2))
    v = k.profile(y)
    assert np.all(v >= 0)
    assert np.all(v[np.sum(y * y, axis=-1) >= 1.0] == 0)
    assert abs(k.mass_exact(1.0) - 1.0) < 1e-8
    assert np.allclose(k.mass(np.array([0.3, 0.7])), k.mass_exact(np.array([0.3, 0.7])), atol=1e-8)


@settings(max_examples=100, deadline=None)
@given(nonzero, nonzero)
def test_biot_savart_orthogonal(x1, x2):
    x = np.array([x1, x2])
    k = biot_savart(x)
    r = np.linalg.norm(x)
    assert abs(k @ x) <= 1e-15 / r + 1e-15
    assert abs(np.linalg.norm(k) - 1.0 / r) <= 1e-13 / r


def test_biot_savart_split():
    x = np.array([[0.5, 0.0], [2.0, 0.0]])
    k1, k2 = biot_savart_split(x)
    assert np.allclose(k1 + k2, biot_savart(x))
    assert np.array_equal(k1[1], [0.0, 0.0]) and np.array_equal(k2[0], [0.0, 0.0])


def test_mollified_kernel_matches_far_field():
    rng = np.random.default_rng(3)
    eps = 0.2
    ang = rng.uniform(0, 2 * np.pi, 200)
    r = rng.uniform(1 + eps, 5, 200)
    x = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1)
    assert np.max(np.abs(mollified_biot_savart(x, eps) - biot_savart(x))) <= 1e-8


def test_mollified_kernel_gradient():
    x = np.random.default_rng(4).uniform(-0.3, 0.3, (50, 2))
    eps = 0.25
    f = VelocityField.from_callable(lambda t, y: mollified_biot_savart(y, eps))
    assert np.allclose(mollified_biot_savart_grad(x, eps), fd_gradient(f, 0.0, x), rtol=1e-5, atol=1e-4)


# ---------------------------------------------------------------------------
# mollifier


def test_mollify_constant():
    b = constant_field([1.5, -2.0])
    m = mollify_field(b, 0.3)
    x = np.random.default_rng(5).uniform(-1, 1, (20, 2))
    assert np.allclose(m(0.0, x), [1.5, -2.0], atol=1e-12)


def test_mollify_linear_exact():
    A = np.array([[0.3, -1.0], [2.0, 0.5]])
    b = VelocityField.from_callable(lambda t, x: x @ A.T)
    m = mollify_field(b, 0.4)
    x = np.random.default_rng(6).uniform(-1, 1, (20, 2))
    assert np.allclose(m(0.0, x), x @ A.T, atol=1e-12)
    assert np.allclose(m.gradient(0.0, x), np.broadcast_to(A, (20, 2, 2)), atol=1e-8)


def test_mollify_unit_mass_property():
    one = VelocityField.from_callable(lambda t, x: np.ones_like(x))
    m = mollify_field(one, 0.1)
    assert np.allclose(m(0.0, np.zeros((1, 2))), 1.0, atol=1e-8)


def test_mollify_domain_error():
    m = mollify_field(log_power_field(3.0), 0.1)
    with pytest.raises(DomainError):
        m(0.0, np.array([[0.95, 0.0]]))


def test_mollify_bad_eps():
    with pytest.raises(UsageError):
        mollify_field(power_rotation_field(0.36), 0.0)


def test_power_rotation_mollified_distance_decreases():
    b = power_rotation_field(0.36)
    fam = [mollify_field(b, e) for e in (0.2, 0.1, 0.05)]
    table = measure_bounds(fam, b, 1.0, cells=200)
    assert np.all(np.diff(table.l1_distance) < 0)
    assert not table.warnings


@pytest.mark.parametrize("field", [power_rotation_field(0.36), sqrt_sine_field()])
def test_tabulated_mollifier_matches_direct_rule(field):
    eps = 0.1
    fast = mollify_field(field, eps)
    slow = mollify_field(field, eps, tabulate=False, nodes_per_axis=128)
    assert not isinstance(fast, type(slow)) or fast is not slow
    x = np.random.default_rng(7).uniform(-0.4, 0.4, (30, 2))
    assert np.allclose(fast(0.0, x), slow(0.0, x), atol=2e-3)
    assert np.allclose(fast.gradient(0.0, x), slow.gradient(0.0, x), atol=5e-2)


@pytest.mark.parametrize("field", [power_rotation_field(0.36), sqrt_sine_field()])
def test_mollified_gradient_symmetric_differences(field):
    m = mollify_field(field, 0.1)
    x = np.random.default_rng(8).uniform(-0.3, 0.3, (20, 2))
    g = m.gradient(0.0, x)
    fd = fd_gradient(m, 0.0, x, step=1e-6)
    scale = max(1.0, float(np.max(np.abs(g))))
    assert np.max(np.abs(g - fd)) <= 1e-4 * scale


def test_passthrough_identity():
    b = power_rotation_field(0.36)
    p = passthrough(b)
    x = np.random.default_rng(9).uniform(-1, 1, (20, 2))
    assert np.array_equal(p(0.0, x), b(0.0, x))
    assert np.allclose(p.gradient(0.0, x), fd_gradient(b, 0.0, x), rtol=1e-5, atol=1e-6)
    assert p.eps == 0.0
    assert p.params.beta_rate == pytest.approx(0.64)


def test_passthrough_matches_small_eps_mollifier():
    b = power_rotation_field(0.36)
    grid = TimeGrid.from_horizon(1.0, 1000)
    scheme = ThetaScheme(0.2)
    x0 = np.array([0.5, 0.0])
    a = integrate_flow(x0, grid, scheme, passthrough(b))
    m = integrate_flow(x0, grid, scheme, mollify_field(b, 1e-4), check=False)
    assert np.max(np.abs(a.nodes - m.nodes)) <= 1e-6


def test_regularize_dispatch():
    b = rotation_field()
    assert regularize(b, "passthrough").backend == "passthrough"
    assert isinstance(regularize(b, "mollifier", 0.1), MollifiedField)
    with pytest.raises(UsageError):
        regularize(b, "mollifier")
    with pytest.raises(UsageError):
        regularize(b, "spline")


def test_params_validation():
    with pytest.raises(UsageError):
        RegularizationParams(epsilon=2.0)
    with pytest.raises(UsageError):
        RegularizationParams(epsilon=0.1, c1=-1.0)
    p = RegularizationParams(epsilon=0.01, beta_rate=0.5, c1=2.0)
    assert p.gradient_bound() == pytest.approx(20.0)


# ---------------------------------------------------------------------------
# bounds


def test_verify_bounds_passthrough_smooth():
    b = rotation_field()
    fam = [passthrough(b) for _ in range(3)]
    params, table = verify_bounds(fam, b, 1.0, cells=50)
    assert np.all(table.l1_distance == 0)
    assert params.beta_rate == 0.0
    assert params.c2 <= 1e-12


def test_verify_bounds_mollified_constant():
    b = constant_field([1.0, 2.0])
    fam = [mollify_field(b, e) for e in (0.4, 0.2, 0.1)]
    params, table = verify_bounds(fam, b, 0.5, cells=40)
    assert np.all(table.l1_distance <= 1e-12)
    assert params.c3 == pytest.approx(math.sqrt(5.0))


def test_verify_bounds_needs_three_points():
    b = rotation_field()
    with pytest.raises(UsageError):
        verify_bounds([passthrough(b)], b, 1.0)


def test_verify_bounds_warns_on_non_monotone():
    b = power_rotation_field(0.36)
    fam = [mollify_field(b, 0.05), mollify_field(b, 0.1), mollify_field(b, 0.2)]
    bad = [fam[0].with_params(epsilon=0.3), fam[1], fam[2].with_params(epsilon=0.01)]
    with pytest.warns(RuntimeWarning):
        verify_bounds(bad, b, 1.0, cells=60)


# ---------------------------------------------------------------------------
# blobs


def test_blob_single_cell_circulation():
    eps = 0.5
    ell = eps**4

    def omega(x):
        return ((np.abs(x[..., 0] - ell) < ell / 2) & (np.abs(x[..., 1]) < ell / 2)).astype(float)

    blob = build_blob_lattice(omega, eps, ((ell, 0.0), ell))
    assert blob.size == 1
    assert blob.circulations[0] == pytest.approx(ell**2, rel=1e-14)
    assert np.array_equal(blob.indices[0], [1, 0])


def test_blob_aligned_rectangle_two_cells():
    eps = 0.5
    ell = eps**4

    def omega(x):
        inside = (x[..., 0] > ell / 2) & (x[..., 0] < 2.5 * ell) & (np.abs(x[..., 1]) < ell / 2)
        return inside.astype(float)

    blob = build_blob_lattice(omega, eps, ((1.5 * ell, 0.0), 1.2 * ell))
    assert blob.size == 2
    assert np.allclose(blob.circulations, ell**2, rtol=1e-14)


@pytest.mark.parametrize("eps", [0.6, 0.5, 0.4])
def test_blob_circulation_conservation(eps):
    omega, _ = radial_bump_vorticity((0.1, 0.05), 0.8, 2.0)
    blob = build_blob_lattice(omega, eps, ((0.1, 0.05), 0.8))
    assert abs(blob.vorticity_total - 2.0) <= 2e-6
    assert np.allclose(blob.centers, blob.ell * blob.indices)


def test_blob_lattice_cap():
    omega, _ = radial_bump_vorticity()
    with pytest.raises(ResourceError, match="smallest feasible"):
        build_blob_lattice(omega, 0.1, 1.0)
    e = smallest_feasible_eps(1.0)
    assert 0.1 < e < 0.3


def test_blob_empty_velocity():
    blob = build_blob_lattice(lambda x: np.zeros(x.shape[:-1]), 0.5, 0.5)
    assert blob.size == 0
    assert np.array_equal(blob_velocity(blob, np.array([[0.3, 0.2]])), np.zeros((1, 2)))


def test_single_blob_far_field():
    blob = BlobDiscretization(0.2, 0.2**4, np.zeros((1, 2), dtype=np.int64), np.ones(1))
    assert np.allclose(blob_velocity(blob, np.array([2.0, 0.0])), [0.0, 0.5], atol=1e-12)


def test_two_blobs_at_origin():
    eps = 0.2
    ell = 0.5  # lattice spacing chosen so the blobs sit at (+-1, 0)
    blob = BlobDiscretization(eps, ell, np.array([[2, 0], [-2, 0]], dtype=np.int64), np.array([1.0, -1.0]))
    assert np.allclose(blob_velocity(blob, np.zeros(2)), [0.0, -2.0], atol=1e-12)


def test_blob_divergence_free():
    omega, _ = radial_bump_vorticity((0.1, 0.05), 0.8, 1.0)
    blob = build_blob_lattice(omega, 0.5, ((0.1, 0.05), 0.8))
    f = BlobField(blob)
    x = np.random.default_rng(10).uniform(-1.2, 1.2, (50, 2))
    g = fd_gradient(f, 0.0, x, step=1e-6)
    div = np.abs(np.trace(g, axis1=-2, axis2=-1))
    scale = np.maximum(1.0, np.linalg.norm(g, axis=(-2, -1)))
    assert np.all(div <= 1e-6 * scale)
    assert np.allclose(f.gradient(0.0, x), g, atol=1e-6)


def test_blob_csv_roundtrip(tmp_path):
    omega, _ = radial_bump_vorticity((0.1, 0.05), 0.8, 1.0)
    blob = build_blob_lattice(omega, 0.6, ((0.1, 0.05), 0.8))
    path = tmp_path / "g.csv"
    text = blob.to_csv(path)
    assert text.splitlines()[0].startswith("# epsilon=")
    back = BlobDiscretization.from_csv(str(path))
    assert np.array_equal(back.indices, blob.indices)
    assert np.array_equal(back.circulations, blob.circulations)
    assert back.epsilon == blob.epsilon and back.ell == blob.ell


def test_blob_lattice_matches_direct_sum():
    omega, _ = radial_bump_vorticity((0.0, 0.0), 0.8, 1.0)
    blob = build_blob_lattice(omega, 0.6, 0.8)
    axis, vel = blob.velocity_on_lattice(0.5)
    pts = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1)
    sel = pts[::7, ::7].reshape(-1, 2)
    assert np.allclose(vel[::7, ::7].reshape(-1, 2), blob.velocity(sel), atol=1e-10)


def test_blob_vorticity_ratio_never_grows():
    omega, _ = radial_bump_vorticity((0.1, 0.05), 0.8, 1.0)
    ratios = []
    for eps in (0.5, 0.35, 0.25):
        blob = build_blob_lattice(omega, eps, ((0.1, 0.05), 0.8))
        ratios.append(blob_vorticity_error(blob, omega, ((0.1, 0.05), 0.8)) / eps**3)
    assert all(b <= 2.0 * a for a, b in zip(ratios, ratios[1:]))
