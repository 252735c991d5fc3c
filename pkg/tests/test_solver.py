import numpy as np
import pytest

from fermikin import (
    Ball,
    CollisionOperator,
    PhaseState,
    Slab,
    Solver,
    SolverState,
    StepConfig,
    VelocityGrid,
    ball3d_grid,
    constant_kernel,
    homogeneous_grid,
    lebedev26,
    line1d_grid,
    normalized_kernel,
    verify_duhamel,
)
from fermikin.collision import zero_kernel
from fermikin.errors import ContractionBoundError, MaxIterationError, NonContractionError
from fermikin.solver import duhamel_solution, transport_matrix
from fermikin.transport import backtrace_many

SLAB = Slab((0, 0, 1), 0.0, 1.0)


def _free(vgrid):
    return CollisionOperator(vgrid, zero_kernel(), lebedev26())


def test_step_config_contraction_bound():
    StepConfig(0.1).check_contraction(1.0)
    with pytest.raises(ContractionBoundError):
        StepConfig(1.0).check_contraction(1.0)
    assert issubclass(ContractionBoundError, NonContractionError)
    StepConfig(1.0, enforce_contraction_bound=False).check_contraction(1.0)


def test_zero_steps_returns_initial(small_grid, small_op):
    s = Solver(homogeneous_grid(), small_grid, small_op, StepConfig(0.1))
    st0 = SolverState(0.0, np.full((1, small_grid.size), 0.3))
    assert s.run(st0, 0) is st0


def test_constant_state_is_a_fixed_point(small_grid, small_op):
    s = Solver(homogeneous_grid(), small_grid, small_op, StepConfig(0.1))
    st, rep = s.picard_step(SolverState(0.0, np.full((1, small_grid.size), 0.3)))
    assert rep.iterations == 1 and rep.clamp_defect == 0.0
    np.testing.assert_array_equal(st.field, 0.3)
    assert st.time == pytest.approx(0.1) and st.step_count == 1


def test_free_transport_is_one_iteration(small_grid):
    sp = line1d_grid(SLAB, 8)
    s = Solver(sp, small_grid, _free(small_grid), StepConfig(0.05))
    f = np.random.default_rng(0).uniform(0, 1, (8, small_grid.size))
    st, rep = s.picard_step(SolverState(0.0, f))
    assert rep.iterations == 1
    np.testing.assert_allclose(st.field, (s.transport @ f.ravel()).reshape(f.shape), atol=0)


def test_picard_example_ratios(ref_grid, ref_op):
    # theta * 4B = 0.1
    s = Solver(homogeneous_grid(), ref_grid, ref_op, StepConfig(0.025))
    f = np.random.default_rng(1).uniform(0, 1, (1, ref_grid.size))
    _, rep = s.picard_step(SolverState(0.0, f))
    assert max(rep.ratios) <= 0.15
    assert rep.iterations <= 8


def test_uniqueness_proxy(small_grid, small_op):
    s = Solver(homogeneous_grid(), small_grid, small_op, StepConfig(0.1))
    f = np.random.default_rng(2).uniform(0, 1, (1, small_grid.size))
    st = SolverState(0.0, f)
    a, _ = s.picard_step(st)
    b, _ = s.picard_step(st, initial_guess=np.clip(2 * f, 0, 1))
    assert np.max(np.abs(a.field - b.field)) <= 10 * s.cfg.picard_tol


def test_max_iteration_error(small_grid, small_op):
    s = Solver(homogeneous_grid(), small_grid, small_op, StepConfig(0.1, picard_max_iter=2))
    f = np.random.default_rng(3).uniform(0, 1, (1, small_grid.size))
    with pytest.raises(MaxIterationError):
        s.picard_step(SolverState(0.0, f))


def test_bound_enforced_at_construction(small_grid, small_op):
    with pytest.raises(ContractionBoundError):
        Solver(homogeneous_grid(), small_grid, small_op, StepConfig(1.0))


def test_run_rejects_inadmissible_data(small_grid, small_op):
    s = Solver(homogeneous_grid(), small_grid, small_op, StepConfig(0.1))
    with pytest.raises(ValueError):
        s.run(SolverState(0.0, np.full((1, small_grid.size), 1.2)), 1)


def test_run_calls_sinks(small_grid, small_op):
    s = Solver(homogeneous_grid(), small_grid, small_op, StepConfig(0.1))
    seen = []
    s.run(SolverState(0.0, np.full((1, small_grid.size), 0.4)), 3, sinks=[lambda st, rep: seen.append(rep.step)])
    assert seen == [1, 2, 3]


def test_homogeneous_ensemble_matches_single_runs(small_grid, small_op):
    rng = np.random.default_rng(4)
    f = rng.uniform(0, 1, (2, small_grid.size))
    both = Solver(homogeneous_grid(2), small_grid, small_op, StepConfig(0.1)).run(SolverState(0.0, f), 2)
    for m in range(2):
        one = Solver(homogeneous_grid(), small_grid, small_op, StepConfig(0.1)).run(SolverState(0.0, f[m : m + 1]), 2)
        np.testing.assert_allclose(both.field[m], one.field[0], atol=1e-13)


def test_homogeneous_transport_is_identity(small_grid):
    P = transport_matrix(homogeneous_grid(), small_grid, 0.3)
    np.testing.assert_array_equal(P.toarray(), np.eye(small_grid.size))


def test_line1d_transport_keeps_uniform_fields():
    vg = VelocityGrid(3.0, 5)
    P = transport_matrix(line1d_grid(SLAB, 10), vg, 0.037)
    np.testing.assert_allclose(P @ np.ones(P.shape[1]), 1.0, atol=1e-14)


def test_line1d_exact_shift():
    # theta * v_z / dz integer for every node: transport is a permutation
    vg = VelocityGrid(3.0, 5)  # v_z in {0, +-1.2, +-2.4}
    nz = 10
    theta = 0.1 / 1.2
    sp = line1d_grid(SLAB, nz)
    P = transport_matrix(sp, vg, theta)
    f = np.random.default_rng(5).uniform(0, 1, (nz, vg.size))
    X = np.repeat(sp.centers, vg.size, 0)
    V = np.tile(vg.nodes, (nz, 1))
    Xb, Vb, _ = backtrace_many(SLAB, X, V, theta)
    cell = np.floor(Xb[:, 2] / 0.1).astype(int)
    # find the velocity index of the backtraced velocity
    vidx = np.array([np.argmin(np.linalg.norm(vg.nodes - v, axis=1)) for v in Vb])
    expected = f[cell, vidx]
    np.testing.assert_allclose(P @ f.ravel(), expected, atol=1e-13)


def test_ball_free_transport_composes_like_the_flow():
    # characteristic level: ten theta-backtraces equal one 10 theta backtrace
    dom = Ball((0, 0, 0), 1.0)
    rng = np.random.default_rng(6)
    x = rng.uniform(-0.5, 0.5, (2000, 3))
    v = rng.uniform(-2, 2, (2000, 3))
    xs, vs = x, v
    for _ in range(10):
        xs, vs, _ = backtrace_many(dom, xs, vs, 0.05)
    xd, vd, _ = backtrace_many(dom, x, v, 0.5)
    assert max(np.max(np.abs(xs - xd)), np.max(np.abs(vs - vd))) <= 1e-9


def test_ball3d_grid_masks_to_ball():
    sp = ball3d_grid(Ball((0, 0, 0), 1.0), 6)
    assert np.all(np.linalg.norm(sp.centers, axis=1) <= 1.0)
    assert sp.n_cells == len(sp.box_index)


def test_duhamel_examples():
    dom = SLAB
    assert verify_duhamel(lambda t, s: 0.0, dom, 0.6, rng=0, dt=1e-3) <= 1e-12
    assert verify_duhamel(lambda t, s: 1.0, dom, 0.6, rng=0, dt=1e-3) <= 1e-10


def test_duhamel_solution_of_constant_source():
    f0 = lambda s: 0.2  # noqa: E731
    y = PhaseState(np.array([0.0, 0.0, 0.3]), np.array([0.0, 0.0, 2.0]))
    assert duhamel_solution(SLAB, f0, lambda t, s: 1.5, 0.8, y) == pytest.approx(0.2 + 1.5 * 0.8, abs=1e-14)
