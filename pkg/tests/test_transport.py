import math

import numpy as np
import pytest

from roughflow.analysis import GridSampling
from roughflow.errors import UsageError
from roughflow.fields import (
    VelocityField,
    identity_flow,
    rotation_exact_flow,
    rotation_field,
    zero_field,
)
from roughflow.regularize import mollifier_kernel
from roughflow.theta import ThetaScheme, TimeGrid
from roughflow.transport import (
    InitialDatum,
    TransportSolution,
    backward_field,
    backward_flow_error,
    bump_datum,
    cone_datum,
    datum_l1_distance,
    disk_datum,
    integrate_backward,
    lagrangian_error,
    make_datum,
    mollify_datum,
    transport_solution,
)

SCHEME = ThetaScheme(0.2)


def test_backward_field_values():
    rot = rotation_field()
    bb = backward_field(rot, 1.0)
    x = np.array([[0.3, -0.7]])
    assert np.array_equal(bb(1.5, x), np.zeros((1, 2)))
    assert np.allclose(bb(0.4, x), [[-0.7, -0.3]])
    c = np.array([1.0, 2.0])
    tdep = VelocityField.from_callable(lambda s, y: s * np.broadcast_to(c, y.shape), autonomous=False)
    assert np.allclose(backward_field(tdep, 1.0)(0.3, np.zeros(2)), -0.7 * c)
    with pytest.raises(UsageError):
        backward_field(rot, -1.0)


def test_backward_field_truncated_average():
    bb = backward_field(rotation_field(), 0.25)
    x = np.array([[1.0, 0.0]])
    # a step [0.2, 0.3] straddles t = 0.25: half of it is active
    assert np.allclose(bb.time_average(0.2, 0.3, x), 0.5 * bb(0.0, x))
    assert np.array_equal(bb.time_average(0.3, 0.4, x), np.zeros((1, 2)))
    assert np.allclose(bb.gradient_average(0.2, 0.3, x), 0.5 * bb.gradient(0.0, x))


def test_integrate_backward_trivial():
    x = np.array([[0.2, 0.1], [0.0, -0.5]])
    pos, flow = integrate_backward(0.0, x, TimeGrid(0.01, 100), SCHEME, rotation_field())
    assert flow is None and np.array_equal(pos, x)
    pos, _ = integrate_backward(0.7, x, TimeGrid(0.01, 100), SCHEME, zero_field())
    assert np.array_equal(pos, x)
    with pytest.raises(UsageError):
        integrate_backward(2.0, x, TimeGrid(0.01, 100), SCHEME, zero_field())


def test_backward_rotation_is_inverse_flow():
    x = np.array([[1.0, 0.0], [0.3, 0.4]])
    t = math.pi / 2
    errs = []
    for h in (2e-3, 1e-3):
        pos, _ = integrate_backward(t, x, TimeGrid.covering(t, h), SCHEME, rotation_field())
        errs.append(np.max(np.linalg.norm(pos - rotation_exact_flow().inverse_eval(t, x), axis=-1)))
    assert errs[1] <= 2 * 1e-3 and errs[0] <= 2 * 2e-3
    assert 0.9 <= math.log2(errs[0] / errs[1]) <= 1.2


def test_backward_off_node_time():
    x = np.array([[1.0, 0.0]])
    grid = TimeGrid(0.01, 100)
    pos, flow = integrate_backward(0.505, x, grid, SCHEME, rotation_field())
    assert flow.grid.steps == 51
    exact = rotation_exact_flow().inverse_eval(0.505, x)
    assert np.linalg.norm(pos - exact) < 1e-2


def test_datums():
    c = cone_datum()
    assert c(np.array([0.5, 0.0])) == pytest.approx(1.0)
    assert c.lipschitz_bound == pytest.approx(2.5)
    pts = np.random.default_rng(0).uniform(-2, 2, (2000, 2))
    for u in (c, disk_datum(), bump_datum()):
        outside = np.linalg.norm(pts, axis=-1) > u.support_radius
        assert np.all(u(pts[outside]) == 0)
    with pytest.raises(UsageError):
        make_datum("wave")


def test_zero_time_identity():
    u0 = cone_datum()
    S = GridSampling.ball(1.0, 32)
    sol = transport_solution(u0, rotation_field(), TimeGrid(0.01, 10), SCHEME, 0.0, S.nodes)
    assert np.array_equal(sol.values, u0(S.nodes))


def test_zero_field_transport():
    u0 = cone_datum()
    S = GridSampling.ball(1.0, 32)
    sol = transport_solution(u0, zero_field(), TimeGrid(0.01, 50), SCHEME, 0.5, S.nodes)
    assert np.array_equal(sol.values, u0(S.nodes))
    assert lagrangian_error(sol, identity_flow(), S) == 0.0


def test_constant_datum_stays_constant():
    u0 = InitialDatum(lambda x: np.where(np.linalg.norm(x, axis=-1) < 2.0, 3.0, 0.0), 2.0, None, 3.0, "flat")
    S = GridSampling.ball(0.5, 16)
    sol = transport_solution(u0, rotation_field(), TimeGrid(0.01, 100), SCHEME, 1.0, S.nodes)
    assert np.all(sol.values == 3.0)


def test_radial_datum_under_rotation():
    u0 = bump_datum(radius=0.8)
    S = GridSampling.ball(1.0, 64)
    errs = []
    for h in (4e-3, 2e-3):
        sol = transport_solution(u0, rotation_field(), TimeGrid.covering(1.0, h), SCHEME, 1.0, S.nodes)
        errs.append(float(np.sum(S.weights * np.abs(sol.values - u0(S.nodes)))))
    assert errs[1] < errs[0] < 0.05


def test_exact_flow_solution_has_zero_error():
    u0 = cone_datum()
    S = GridSampling.ball(1.0, 32)
    inv = rotation_exact_flow().inverse_eval(0.7, S.nodes)
    sol = TransportSolution(0.7, S.nodes, u0(inv), inv, u0)
    assert lagrangian_error(sol, rotation_exact_flow(), S) == 0.0


def test_lipschitz_transfer_row():
    u0 = cone_datum()
    S = GridSampling.ball(1.0, 64)
    sol = transport_solution(u0, rotation_field(), TimeGrid.covering(1.0, 4e-3), SCHEME, 1.0, S.nodes)
    e = lagrangian_error(sol, rotation_exact_flow(), S)
    f = backward_flow_error(sol, rotation_exact_flow(), S)
    assert 0 < e <= 1.1 * u0.lipschitz_bound * f


def test_mass_conservation_surrogate():
    u0 = cone_datum()
    S = GridSampling.ball(1.0, 64)
    sol = transport_solution(u0, rotation_field(), TimeGrid.covering(1.0, 4e-3), SCHEME, 1.0, S.nodes)
    mass_h = float(np.sum(S.weights * sol.values))
    mass_0 = float(np.sum(S.weights * u0(S.nodes)))
    det_dev = float(np.max(np.abs(sol.backward.determinants - 1.0)))
    quad = float(np.sum(S.weights * np.abs(sol.values - u0(rotation_exact_flow().inverse_eval(1.0, S.nodes)))))
    assert abs(mass_h - mass_0) <= det_dev * mass_0 + quad


def test_mollify_datum_ladder():
    u0 = cone_datum()
    S = GridSampling.ball(1.0, 128)
    d = [datum_l1_distance(mollify_datum(u0, delta), u0, S) for delta in (0.2, 0.1, 0.05)]
    assert d[0] > d[1] > d[2] > 0
    m = mollify_datum(u0, 0.1)
    assert m.support_radius == pytest.approx(u0.support_radius + 0.1)
    assert m.lipschitz_bound <= u0.lipschitz_bound
    with pytest.raises(UsageError):
        mollify_datum(u0, 0.0)


def test_mollify_flat_interior():
    flat = InitialDatum(lambda x: np.where(np.linalg.norm(x, axis=-1) < 1.0, 2.0, 0.0), 1.0, None, 2.0, "flat")
    m = mollify_datum(flat, 0.1)
    x = np.random.default_rng(1).uniform(-0.5, 0.5, (50, 2))
    assert np.allclose(m(x), 2.0, atol=1e-8)
    assert m.lipschitz_bound == pytest.approx(2.0 * mollifier_kernel(2).grad_l1 / 0.1)


def test_mollify_disk_perimeter_bound():
    u0 = disk_datum(radius=0.4)
    S = GridSampling.ball(1.0, 256)
    for delta in (0.05, 0.02):
        d = datum_l1_distance(mollify_datum(u0, delta), u0, S)
        assert d <= 2 * math.pi * 0.4 * delta


def test_solution_csv(tmp_path):
    u0 = cone_datum()
    pts = np.array([[0.5, 0.0], [0.0, 0.5]])
    sol = transport_solution(u0, rotation_field(), TimeGrid(0.01, 10), SCHEME, 0.1, pts)
    text = sol.to_csv(tmp_path / "u.csv")
    assert text.splitlines()[:2] == ["# t=0.10000000000000001", "x,y,u"]
    assert len(text.splitlines()) == 4


def test_mollify_support_shortcut_matches_full_sum():
    S = GridSampling.ball(1.0, 64)
    for u in (cone_datum(), disk_datum()):
        blind = InitialDatum(u.func, u.support_radius, u.lipschitz_bound, u.sup_bound)
        a, b = mollify_datum(u, 0.1)(S.nodes), mollify_datum(blind, 0.1)(S.nodes)
        assert np.allclose(a, b, rtol=0, atol=1e-14)
