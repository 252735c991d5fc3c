import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fermikin import Ball, Slab, SolverState, VelocityGrid, ball3d_grid, homogeneous_grid, line1d_grid
from fermikin.diagnostics import (
    BumpTestFunction,
    CutoffFunction,
    DispersionMonitor,
    MomentRecorder,
    WeakResidualAccumulator,
    boundary_tangency,
    cell_fluxes,
    cell_moments,
    cubed_velocity_moment,
    global_invariants,
    homogeneous_weak_from_series,
    q_moment_defect,
    refinement_table,
    wall_trace,
    weak_conservation_residual,
    write_refinement_csv,
)
from fermikin.errors import SupportViolationError

G = VelocityGrid(3.0, 7)
SLAB = Slab((0, 0, 1), 0.0, 1.0)


def test_moments_of_one():
    m = cell_moments(np.ones(G.size), G)
    assert m.mass == pytest.approx(6.0**3, rel=1e-14)
    np.testing.assert_allclose(m.momentum, 0, atol=1e-12)


def test_even_slice_has_vanishing_odd_moments():
    f = np.random.default_rng(0).uniform(0, 1, G.size)
    f = f + f[G.negation_index()]
    m = cell_moments(f, G)
    fl = cell_fluxes(f, G)
    scale = m.mass * 3.0
    np.testing.assert_allclose(m.momentum, 0, atol=1e-14 * scale)
    np.testing.assert_allclose(fl.mass_flux, 0, atol=1e-14 * scale)
    np.testing.assert_allclose(fl.energy_flux, 0, atol=1e-14 * scale * 9)


def test_single_node_moments_and_flux():
    i = 100
    f = np.zeros(G.size)
    f[i] = 1.0
    v0 = G.nodes[i]
    m = cell_moments(f, G)
    assert m.mass == G.weight
    np.testing.assert_allclose(m.momentum, G.weight * v0)
    assert m.energy == pytest.approx(G.weight * v0 @ v0)
    np.testing.assert_allclose(cell_fluxes(f, G).momentum_flux, G.weight * np.outer(v0, v0))


def test_flux_of_one_matches_cube_integral():
    fl = cell_fluxes(np.ones(G.size), G)
    # midpoint rule for int v1^2 over [-V, V]^3 on n cells per axis
    h = G.spacing
    exact_mid = (2 * 3.0) ** 2 * np.sum(G.axis**2) * h
    np.testing.assert_allclose(np.diag(fl.momentum_flux), exact_mid, rtol=1e-13)
    assert np.diag(fl.momentum_flux)[0] == pytest.approx((6.0**3) * 9 / 3, rel=0.03)
    np.testing.assert_allclose(fl.momentum_flux, fl.momentum_flux.T)


def test_global_invariants_two_identical_cells():
    f = np.random.default_rng(1).uniform(0, 1, G.size)
    one = global_invariants(SolverState(0, f[None, :]), homogeneous_grid(), G)
    two = global_invariants(SolverState(0, np.stack([f, f])), homogeneous_grid(2), G)
    assert two.mass == pytest.approx(2 * one.mass, rel=1e-14)
    assert two.energy == pytest.approx(2 * one.energy, rel=1e-14)


def test_global_invariants_equals_volume_weighted_cells():
    sp = line1d_grid(SLAB, 5)
    f = np.random.default_rng(2).uniform(0, 1, (5, G.size))
    inv = global_invariants(SolverState(0, f), sp, G)
    m = cell_moments(f, G)
    assert inv.mass == pytest.approx(sp.volumes @ m.mass, rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(
    arrays(np.float64, 343, elements=st.floats(0, 1)),
    arrays(np.float64, 343, elements=st.floats(0, 1)),
    st.floats(-2, 2),
)
def test_moments_are_linear(a, b, c):
    ma, mb, mc = cell_moments(a, G), cell_moments(b, G), cell_moments(a + c * b, G)
    assert mc.mass == pytest.approx(ma.mass + c * mb.mass, abs=1e-10)
    np.testing.assert_allclose(mc.momentum, ma.momentum + c * mb.momentum, atol=1e-10)
    assert mc.energy == pytest.approx(ma.energy + c * mb.energy, abs=1e-9)


def test_q_moment_defect_of_zero():
    m, p, e = q_moment_defect(np.zeros(G.size), G)
    assert m == 0 and e == 0 and np.all(p == 0)


def test_cutoff_profile():
    c = CutoffFunction(1.0)
    assert c.r_outer == 2.0
    np.testing.assert_allclose(c(np.array([0.0, 1.0, 2.0, 3.0])), [1, 1, 0, 0])
    s = np.linspace(1, 2, 101)
    assert np.all(np.diff(c(s)) <= 1e-15)


def test_bump_function_support_checks():
    phi = BumpTestFunction(0.1, 0.5, (0, 0, 1), 0.2, 0.8)
    phi.check_support(0.0, 0.6, SLAB)
    with pytest.raises(SupportViolationError):
        BumpTestFunction(0.0, 0.5).check_support(0.0, 0.6, SLAB)
    with pytest.raises(SupportViolationError):
        BumpTestFunction(0.1, 0.5, (0, 0, 1), 0.0, 0.8).check_support(0.0, 0.6, SLAB)
    with pytest.raises(SupportViolationError):
        BumpTestFunction(0.1, 0.5, (1, 0, 0), 0.2, 0.8).check_support(0.0, 0.6, SLAB)


def test_bump_derivatives_match_finite_differences():
    phi = BumpTestFunction(0.1, 0.5, (0, 0, 1), 0.2, 0.8)
    x = np.array([[0.0, 0.0, 0.45]])
    t, h = 0.27, 1e-6
    assert phi.dt(t, x)[0] == pytest.approx((phi.value(t + h, x)[0] - phi.value(t - h, x)[0]) / (2 * h), rel=1e-6)
    dz = (phi.value(t, x + [0, 0, h])[0] - phi.value(t, x - [0, 0, h])[0]) / (2 * h)
    assert phi.grad(t, x)[0, 2] == pytest.approx(dz, rel=1e-6)


def test_weak_residual_constant_state():
    sp = line1d_grid(SLAB, 10)
    f = np.full((10, G.size), 0.3)
    hist = [SolverState(0.05 * k, f, k) for k in range(21)]
    phi = BumpTestFunction(0.1, 0.9, (0, 0, 1), 0.2, 0.8)
    res = weak_conservation_residual(hist, phi, CutoffFunction(1.5), "mass", sp, G)
    scale = 0.3 * G.size * G.weight
    assert res <= 1e-12 * scale


def test_weak_residual_streaming_equals_batch():
    sp = line1d_grid(SLAB, 6)
    rng = np.random.default_rng(3)
    hist = [SolverState(0.1 * k, rng.uniform(0, 1, (6, G.size)), k) for k in range(11)]
    phi = BumpTestFunction(0.05, 0.95, (0, 0, 1), 0.2, 0.8)
    for which in ("mass", "momentum", "energy"):
        acc = WeakResidualAccumulator(phi, CutoffFunction(1.5), which, sp, G)
        for s in hist:
            acc(s)
        assert acc.residual() == weak_conservation_residual(hist, phi, CutoffFunction(1.5), which, sp, G)


def test_homogeneous_series_helper_matches():
    rng = np.random.default_rng(4)
    hist = [SolverState(0.1 * k, rng.uniform(0, 1, (1, G.size)), k) for k in range(11)]
    phi = BumpTestFunction(0.05, 0.95)
    a = weak_conservation_residual(hist, phi, None, "mass", homogeneous_grid(), G)
    m = [global_invariants(s, homogeneous_grid(), G).mass for s in hist]
    b = homogeneous_weak_from_series([s.time for s in hist], m, np.zeros(len(hist)), phi)
    assert a == pytest.approx(b, rel=1e-12)


def test_refinement_table(tmp_path):
    rows = write_refinement_csv(tmp_path / "r.csv", [(0.1, 0.2, 4.0), (0.05, 0.1, 1.0)])
    assert np.isnan(rows[0][4]) and rows[1][4] == pytest.approx(2.0)
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "level,dt,dx,residual,observed_order"
    assert refinement_table([(1, 1, 1)])[0][0] == 0


def test_tangency_of_even_data_is_zero():
    sp = line1d_grid(SLAB, 4)
    f = np.random.default_rng(5).uniform(0, 1, (4, G.size))
    f = 0.5 * (f + f[:, G.negation_index()])
    st0 = SolverState(0, f)
    assert boundary_tangency(st0, sp, G, "cell") <= 1e-15
    assert boundary_tangency(st0, sp, G, "trace") <= 1e-15


def test_wall_trace_satisfies_reflection():
    sp = line1d_grid(SLAB, 4)
    f = np.random.default_rng(6).uniform(0, 1, (4, G.size))
    fw, n = wall_trace(f, sp, G, "high")
    mirror = G.reflection_index(np.array([0.0, 0.0, 1.0]))
    incoming = G.nodes @ n < 0
    np.testing.assert_array_equal(fw[incoming], fw[mirror][incoming])


def test_tangency_on_ball_cells():
    sp = ball3d_grid(Ball((0, 0, 0), 1.0), 6)
    f = np.full((sp.n_cells, G.size), 0.4)
    assert boundary_tangency(SolverState(0, f), sp, G, "cell") <= 1e-15
    with pytest.raises(ValueError):
        boundary_tangency(SolverState(0, f), sp, G, "trace")


def test_cubed_moment_examples():
    sp = homogeneous_grid()
    assert cubed_velocity_moment(SolverState(0, np.zeros((1, G.size))), sp, G) == 0.0
    f = np.zeros((1, G.size))
    f[0, 10] = 1.0
    v0 = np.linalg.norm(G.nodes[10])
    assert cubed_velocity_moment(SolverState(0, f), sp, G) == pytest.approx(G.weight * v0**3)


def test_dispersion_monitor_linear_for_steady_state():
    sp = homogeneous_grid()
    f = np.full((1, G.size), 0.2)
    dm = DispersionMonitor(sp, G, initial=SolverState(0.0, f))
    for k in range(1, 11):
        dm(SolverState(0.1 * k, f, k))
    expected = cubed_velocity_moment(SolverState(0, f), sp, G)
    assert dm.slope() == pytest.approx(expected, rel=1e-12)
    assert dm.slope(0.5) == pytest.approx(expected, rel=1e-12)


def test_moment_recorder_rows():
    sp = homogeneous_grid()
    rec = MomentRecorder(sp, G, initial=SolverState(0.0, np.full((1, G.size), 0.5)))
    assert len(rec.rows) == 1 and len(rec.rows[0]) == len(MomentRecorder.columns)
