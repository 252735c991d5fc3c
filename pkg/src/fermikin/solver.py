"""Mild-solution time stepping: Picard iteration of the Duhamel map per step.

Within one step of length ``theta`` the scheme solves

    f(x, v) = A(Psi^{-theta}(x, v)) + theta/2 * Q(clamp(f))(x, v),
    A       = f_start + theta/2 * Q(clamp(f_start)),

which is the two-node trapezoid rule applied to the time integral along the
characteristic through ``(x, v)``.  ``A`` is transported once per step by a
sparse semi-Lagrangian matrix; the collision part is local in space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .collision import CollisionOperator, clamp_bar
from .errors import ContractionBoundError, MaxIterationError, NonContractionError
from .geometry import Ball, FullSpace, Slab, contains
from .transport import PhaseState, advance, backtrace_many

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# spatial grids


@dataclass(eq=False)
class SpatialGrid:
    """Cell centres and volumes; ``kind`` is homogeneous, line1d or ball3d."""

    kind: str
    centers: np.ndarray
    volumes: np.ndarray
    domain: object = field(default_factory=FullSpace)
    spacing: float = 1.0
    n_cells_axis: int = 1
    box_index: np.ndarray | None = None  # ball3d: flat box index of each kept cell

    @property
    def n_cells(self):
        return len(self.volumes)


def homogeneous_grid(copies=1):
    """Space-independent problem; ``copies > 1`` advances an ensemble side by side."""
    return SpatialGrid("homogeneous", np.zeros((copies, 3)), np.ones(copies))


def line1d_grid(domain, n_cells):
    """Cell-centred grid across a slab; fields are uniform tangentially.

    Volumes are per unit tangential area.
    """
    if not isinstance(domain, Slab):
        raise ValueError("line1d grids need a Slab domain")
    dz = (domain.high - domain.low) / n_cells
    z = domain.low + (np.arange(n_cells) + 0.5) * dz
    centers = z[:, None] * np.asarray(domain.axis)[None, :]
    return SpatialGrid("line1d", centers, np.full(n_cells, dz), domain, dz, n_cells)


def ball3d_grid(domain, n_cells_axis):
    """Cartesian cells on the bounding box of a ball, masked to the ball."""
    if not isinstance(domain, Ball):
        raise ValueError("ball3d grids need a Ball domain")
    r, c = domain.radius, np.asarray(domain.center)
    dx = 2 * r / n_cells_axis
    ax = -r + (np.arange(n_cells_axis) + 0.5) * dx
    box = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3) + c
    keep = np.flatnonzero(contains(domain, box))
    return SpatialGrid("ball3d", box[keep], np.full(len(keep), dx**3), domain, dx, n_cells_axis, keep)


# --------------------------------------------------------------------------
# semi-Lagrangian transport matrices


def _linear_weights(coord, n):
    """Indices/weights of linear interpolation at fractional index ``coord``."""
    lo = np.floor(coord).astype(np.int64)
    t = coord - lo
    return lo, t


def _velocity_taps(vgrid, V):
    """Trilinear taps in velocity space; zero outside the cube.

    Returns (cols (m, 8), weights (m, 8)).  Between the outer node centres and
    the cube face the nearest node value is used.
    """
    n, h = vgrid.n, vgrid.spacing
    p = (V + vgrid.v_max) / h - 0.5
    inside = np.all((p >= -0.5 - 1e-12) & (p <= n - 0.5 + 1e-12), axis=1)
    lo = np.floor(p).astype(np.int64)
    t = p - lo
    cols, wts = [], []
    for corner in range(8):
        bits = [(corner >> a) & 1 for a in range(3)]
        idx = np.stack([np.clip(lo[:, a] + bits[a], 0, n - 1) for a in range(3)], axis=1)
        w = np.prod([t[:, a] if bits[a] else 1 - t[:, a] for a in range(3)], axis=0)
        cols.append(np.ravel_multi_index(idx.T, vgrid.shape))
        wts.append(np.where(inside, w, 0.0))
    return np.stack(cols, axis=1), np.stack(wts, axis=1)


def transport_matrix(spatial, vgrid, theta):
    """Sparse P with ``(P f)[c, i] = f(Psi^{-theta}(x_c, v_i))`` by interpolation."""
    nc, nv = spatial.n_cells, vgrid.size
    if spatial.kind == "homogeneous" or theta == 0:
        return sp.identity(nc * nv, format="csr")
    if spatial.kind == "line1d":
        return _line1d_matrix(spatial, vgrid, theta)
    if spatial.kind == "ball3d":
        return _ball3d_matrix(spatial, vgrid, theta)
    raise ValueError(f"unknown spatial grid kind {spatial.kind!r}")


def _line1d_matrix(spatial, vgrid, theta):
    dom = spatial.domain
    ax = np.asarray(dom.axis)
    if not np.isclose(np.abs(ax).max(), 1.0):
        raise ValueError("line1d transport needs an axis-aligned slab")
    a = int(np.argmax(np.abs(ax)))
    nc, nv, dz = spatial.n_cells, vgrid.size, spatial.spacing
    X = np.repeat(spatial.centers, nv, axis=0)
    Vn = np.tile(vgrid.nodes, (nc, 1))
    Xb, Vb, _ = backtrace_many(dom, X, Vn, theta)
    z = (Xb @ ax - dom.low) / dz - 0.5
    # reflection maps grid velocities onto grid velocities
    flipped = np.sign(Vb[:, a]) != np.sign(Vn[:, a])
    vidx = np.tile(np.arange(nv), nc)
    mirror = vgrid.reflection_index(np.eye(3)[a])
    vidx = np.where(flipped, mirror[vidx], vidx)
    lo, t = _linear_weights(z, nc)
    rows, cols, vals = [], [], []
    row = np.arange(nc * nv)
    for cell, w in ((lo, 1 - t), (lo + 1, t)):
        # ghost cells mirror the first/last cell with the reflected velocity
        ghost = (cell < 0) | (cell >= nc)
        c = np.clip(cell, 0, nc - 1)
        vi = np.where(ghost, mirror[vidx], vidx)
        rows.append(row)
        cols.append(c * nv + vi)
        vals.append(w)
    P = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nc * nv, nc * nv)
    )
    return P.tocsr()


def _ball3d_matrix(spatial, vgrid, theta):
    dom = spatial.domain
    nc, nv, dx, m = spatial.n_cells, vgrid.size, spatial.spacing, spatial.n_cells_axis
    X = np.repeat(spatial.centers, nv, axis=0)
    Vn = np.tile(vgrid.nodes, (nc, 1))
    Xb, Vb, _ = backtrace_many(dom, X, Vn, theta)
    vcols, vw = _velocity_taps(vgrid, Vb)
    # box cells outside the ball take the value of the nearest kept cell
    box_to_kept = _nearest_kept(spatial)
    p = (Xb - np.asarray(dom.center) + dom.radius) / dx - 0.5
    lo = np.floor(p).astype(np.int64)
    t = p - lo
    rows, cols, vals = [], [], []
    row = np.arange(nc * nv)
    for corner in range(8):
        bits = [(corner >> a) & 1 for a in range(3)]
        idx = np.stack([np.clip(lo[:, a] + bits[a], 0, m - 1) for a in range(3)], axis=1)
        wx = np.prod([t[:, a] if bits[a] else 1 - t[:, a] for a in range(3)], axis=0)
        cell = box_to_kept[np.ravel_multi_index(idx.T, (m, m, m))]
        for j in range(8):
            rows.append(row)
            cols.append(cell * nv + vcols[:, j])
            vals.append(wx * vw[:, j])
    P = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nc * nv, nc * nv)
    )
    P.sum_duplicates()
    return P.tocsr()


def _nearest_kept(spatial):
    from scipy.ndimage import distance_transform_edt

    m = spatial.n_cells_axis
    kept = np.zeros(m**3, dtype=bool)
    kept[spatial.box_index] = True
    _, ind = distance_transform_edt(~kept.reshape(m, m, m), return_indices=True)
    nearest_box = np.ravel_multi_index(ind.reshape(3, -1), (m, m, m))
    lookup = -np.ones(m**3, dtype=np.int64)
    lookup[spatial.box_index] = np.arange(spatial.n_cells)
    return lookup[nearest_box]


# --------------------------------------------------------------------------
# solver state and stepping


@dataclass(frozen=True)
class StepConfig:
    theta: float
    picard_tol: float = 1e-12
    picard_max_iter: int = 50
    contraction_safety: float = 0.5
    enforce_contraction_bound: bool = True

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")
        if not 0 < self.contraction_safety < 1:
            raise ValueError("contraction_safety must lie in (0, 1)")

    def check_contraction(self, B):
        if self.enforce_contraction_bound and self.theta * 4 * B > self.contraction_safety:
            raise ContractionBoundError(
                f"theta * 4B = {self.theta * 4 * B:.4g} exceeds contraction_safety "
                f"= {self.contraction_safety} (theta={self.theta}, B={B:.6g})"
            )


@dataclass(frozen=True)
class SolverState:
    time: float
    field: np.ndarray  # (n_cells, n_velocity)
    step_count: int = 0


@dataclass
class StepReport:
    step: int
    iterations: int
    ratios: list
    clamp_defect: float
    min_before_clamp: float
    max_before_clamp: float

    @property
    def last_ratio(self):
        return self.ratios[-1] if self.ratios else 0.0


class Solver:
    """Bundles grids, kernel quadrature and the cached transport matrix."""

    def __init__(self, spatial, vgrid, collision, cfg):
        self.spatial = spatial
        self.vgrid = vgrid
        self.collision = collision
        self.cfg = cfg
        self.B = collision.B
        cfg.check_contraction(self.B)
        self._P = None

    @property
    def transport(self):
        if self._P is None:
            self._P = transport_matrix(self.spatial, self.vgrid, self.cfg.theta)
        return self._P

    def _Q(self, f):
        if self.B == 0:
            return np.zeros_like(f)
        return self.collision(clamp_bar(f))

    def picard_step(self, state, initial_guess=None):
        cfg = self.cfg
        theta = cfg.theta
        f_start = state.field
        A = f_start + 0.5 * theta * self._Q(f_start)
        shape = f_start.shape
        A_t = (self.transport @ A.ravel()).reshape(shape)
        if initial_guess is None:
            f = (self.transport @ f_start.ravel()).reshape(shape)
        else:
            f = np.asarray(initial_guess, dtype=float).reshape(shape)
        ratios = []
        prev = None
        bad = 0
        iterations = 0
        for iterations in range(1, cfg.picard_max_iter + 1):
            f_new = A_t + 0.5 * theta * self._Q(f)
            diff = float(np.max(np.abs(f_new - f)))
            if prev is not None and prev > 0:
                ratio = diff / prev
                ratios.append(ratio)
                bad = bad + 1 if ratio >= 1 else 0
                if bad >= 2:
                    raise NonContractionError(
                        f"Picard differences grew twice in a row (ratios {ratios[-2:]}) "
                        f"at step {state.step_count + 1}"
                    )
            prev = diff
            f = f_new
            if diff <= cfg.picard_tol:
                break
        else:
            raise MaxIterationError(
                f"Picard iteration did not reach {cfg.picard_tol} in {cfg.picard_max_iter} iterations"
            )
        lo, hi = float(f.min()), float(f.max())
        clamped = clamp_bar(f)
        defect = float(np.max(np.abs(clamped - f)))
        report = StepReport(state.step_count + 1, iterations, ratios, defect, lo, hi)
        new = SolverState(state.time + theta, clamped, state.step_count + 1)
        return new, report

    def run(self, initial, n_steps, sinks=()):
        """Apply ``picard_step`` ``n_steps`` times; each sink gets (state, report)."""
        f0 = np.asarray(initial.field if isinstance(initial, SolverState) else initial, dtype=float)
        if f0.min() < 0 or f0.max() > 1:
            raise ValueError("initial data must satisfy 0 <= f0 <= 1")
        state = initial if isinstance(initial, SolverState) else SolverState(0.0, f0.reshape(self.spatial.n_cells, -1))
        for _ in range(n_steps):
            state, report = self.picard_step(state)
            log.debug("step %d: %d iterations, clamp defect %.3g", report.step, report.iterations, report.clamp_defect)
            for sink in sinks:
                sink(state, report)
        return state


def picard_step(state, cfg, spatial, vgrid, collision):
    return Solver(spatial, vgrid, collision, cfg).picard_step(state)


def run(initial, cfg, n_steps, spatial, vgrid, collision, sinks=()):
    return Solver(spatial, vgrid, collision, cfg).run(initial, n_steps, sinks)


# --------------------------------------------------------------------------
# Duhamel check for the linear transport problem


_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


def _segment_integral(fn, a, b):
    if b <= a:
        return 0.0
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return half * sum(w * fn(mid + half * x) for x, w in zip(_GL_X, _GL_W))


def duhamel_solution(domain, f0, source, t, y):
    """Solution of ``df/dt + v.grad f = h`` with specular walls, at (t, y).

    ``f(t, y) = f0(Psi^{-t} y) + int_0^t h(s, Psi^{s-t} y) ds``; the integral
    is split at the reflection instants of the backward trajectory and each
    smooth piece gets Gauss-Legendre quadrature.
    """
    rev = PhaseState(y.x, -y.v)
    back, hits = advance(domain, rev, t)
    start = PhaseState(back.x, -back.v)

    def integrand(u):
        # u = elapsed backward time, so s = t - u
        st, _ = advance(domain, rev, u)
        return source(t - u, PhaseState(st.x, -st.v))

    edges = [0.0] + [h for h in hits.hit_times if 0 < h < t] + [t]
    total = sum(_segment_integral(integrand, a, b) for a, b in zip(edges[:-1], edges[1:]))
    return f0(start) + total


def verify_duhamel(manufactured_source, domain, t_final, f0=None, samples=None, dt=1e-3, rng=None, n_samples=20):
    """Max finite-difference residual of ``d/dt f^sharp = h^sharp``.

    ``f^sharp(t, s) = f(t, Psi^t s)`` is built from :func:`duhamel_solution`
    and differentiated with centred differences of step ``dt`` at ``t_final``.
    Samples whose trajectory reflects within ``2 dt`` of ``t_final`` are
    skipped (the derivative of ``f^sharp`` jumps there).
    """
    if f0 is None:
        f0 = lambda s: 0.5 + 0.25 * np.cos(s.x.sum()) * np.exp(-s.v @ s.v)  # noqa: E731
    if samples is None:
        samples = sample_states(domain, n_samples, rng)
    worst = 0.0
    for s in samples:
        _, hits = advance(domain, s, t_final + 2 * dt)
        if any(abs(h - t_final) <= 2 * dt for h in hits.hit_times):
            continue

        def sharp(t):
            y, _ = advance(domain, s, t)
            return duhamel_solution(domain, f0, manufactured_source, t, y)

        deriv = (sharp(t_final + dt) - sharp(t_final - dt)) / (2 * dt)
        y, _ = advance(domain, s, t_final)
        worst = max(worst, abs(deriv - manufactured_source(t_final, y)))
    return worst


def sample_states(domain, n, rng=None, speed=1.0):
    """Random phase points: positions in the domain, velocities in a cube."""
    rng = np.random.default_rng(rng)
    out = []
    while len(out) < n:
        if isinstance(domain, Ball):
            x = np.asarray(domain.center) + rng.uniform(-1, 1, 3) * domain.radius
            if not contains(domain, x) or np.linalg.norm(x - domain.center) > 0.999 * domain.radius:
                continue
        elif isinstance(domain, Slab):
            x = rng.uniform(-1, 1, 3)
            ax = np.asarray(domain.axis)
            z = rng.uniform(domain.low, domain.high)
            x = x - (x @ ax) * ax + z * ax
        else:
            x = rng.uniform(-1, 1, 3)
        out.append(PhaseState(x, rng.uniform(-speed, speed, 3)))
    return out


def with_theta(solver, theta):
    return Solver(solver.spatial, solver.vgrid, solver.collision, replace(solver.cfg, theta=theta))


__all__ = [
    "SpatialGrid",
    "StepConfig",
    "SolverState",
    "StepReport",
    "Solver",
    "CollisionOperator",
    "homogeneous_grid",
    "line1d_grid",
    "ball3d_grid",
    "transport_matrix",
    "picard_step",
    "run",
    "verify_duhamel",
    "duhamel_solution",
]
