"""Moments, fluxes and the conservation/dispersion checks run on solver output."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import SupportViolationError
from .geometry import Ball, Slab, contains, outward_normal


@dataclass
class MomentSet:
    mass: np.ndarray | float
    momentum: np.ndarray
    energy: np.ndarray | float


@dataclass
class FluxSet:
    mass_flux: np.ndarray
    momentum_flux: np.ndarray
    energy_flux: np.ndarray


@dataclass(frozen=True)
class CutoffFunction:
    """Smooth radial cutoff: 1 for |v| <= R, 0 for |v| >= 2R, C^2 in between."""

    r_inner: float

    @property
    def r_outer(self):
        return 2.0 * self.r_inner

    def __call__(self, speed):
        s = np.clip((np.asarray(speed, dtype=float) - self.r_inner) / self.r_inner, 0.0, 1.0)
        return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


def _weights(grid, cutoff):
    w = np.full(grid.size, grid.weight)
    if cutoff is not None:
        w = w * cutoff(np.sqrt(grid.speed2))
    return w


def cell_moments(f, grid, cutoff=None):
    """``int (1, v, |v|^2) Psi_R(v) f dv`` per slice (last axis = velocity)."""
    f = np.asarray(f, dtype=float)
    wf = f * _weights(grid, cutoff)
    return MomentSet(wf.sum(-1), wf @ grid.nodes, wf @ grid.speed2)


def cell_fluxes(f, grid, cutoff=None):
    f = np.asarray(f, dtype=float)
    wf = f * _weights(grid, cutoff)
    v = grid.nodes
    vv = np.einsum("ia,ib->iab", v, v)
    return FluxSet(wf @ v, np.tensordot(wf, vv, axes=(-1, 0)), wf @ (v * grid.speed2[:, None]))


def global_invariants(state, spatial, grid, cutoff=None):
    """Volume-weighted totals of the cell moments."""
    m = cell_moments(state.field, grid, cutoff)
    vol = spatial.volumes
    return MomentSet(float(vol @ m.mass), vol @ m.momentum, float(vol @ m.energy))


def q_moment_defect(Q_values, grid):
    """Discrete ``int (1, v, |v|^2) Q dv``; summed over cells if Q is 2-D."""
    m = cell_moments(Q_values, grid)
    if np.ndim(m.mass):
        return float(np.sum(m.mass)), np.sum(m.momentum, axis=0), float(np.sum(m.energy))
    return float(m.mass), m.momentum, float(m.energy)


def relative_q_defect(Q_values, grid):
    """Each defect component divided by the matching moment of |Q|."""
    mass, mom, en = q_moment_defect(Q_values, grid)
    A = np.abs(np.asarray(Q_values))
    scale = q_moment_defect(A, grid)
    speed = np.sqrt(grid.speed2)
    mom_scale = float(np.sum(A * speed) * grid.weight)
    tiny = np.finfo(float).tiny
    return (
        abs(mass) / max(scale[0], tiny),
        float(np.max(np.abs(mom))) / max(mom_scale, tiny),
        abs(en) / max(scale[2], tiny),
    )


# --------------------------------------------------------------------------
# weak (distributional) conservation


def _bump(s):
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


def _dbump(s):
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    si = s[inside]
    out[inside] = np.exp(-1.0 / (1.0 - si**2)) * (-2.0 * si / (1.0 - si**2) ** 2)
    return out


@dataclass(frozen=True)
class BumpTestFunction:
    """``phi(t, x) = bump(t) * bump(x . axis)`` with compact support.

    With ``axis=None`` the function is constant in space.
    """

    t_lo: float
    t_hi: float
    axis: tuple | None = None
    z_lo: float = 0.0
    z_hi: float = 1.0

    def _st(self, t):
        c, r = 0.5 * (self.t_lo + self.t_hi), 0.5 * (self.t_hi - self.t_lo)
        return (np.asarray(t, dtype=float) - c) / r, r

    def _sz(self, x):
        c, r = 0.5 * (self.z_lo + self.z_hi), 0.5 * (self.z_hi - self.z_lo)
        return (np.asarray(x, dtype=float) @ np.asarray(self.axis) - c) / r, r

    def value(self, t, x):
        st, _ = self._st(t)
        out = _bump(np.atleast_1d(st))
        if self.axis is None:
            return out * np.ones(len(np.atleast_2d(x)))
        sz, _ = self._sz(np.atleast_2d(x))
        return out * _bump(sz)

    def dt(self, t, x):
        st, r = self._st(t)
        out = _dbump(np.atleast_1d(st)) / r
        if self.axis is None:
            return out * np.ones(len(np.atleast_2d(x)))
        sz, _ = self._sz(np.atleast_2d(x))
        return out * _bump(sz)

    def grad(self, t, x):
        x = np.atleast_2d(x)
        if self.axis is None:
            return np.zeros_like(x, dtype=float)
        st, _ = self._st(t)
        sz, r = self._sz(x)
        g = _bump(np.atleast_1d(st)) * _dbump(sz) / r
        return g[:, None] * np.asarray(self.axis)[None, :]

    def check_support(self, t_first, t_last, domain):
        if self.t_lo <= t_first or self.t_hi > t_last + 1e-12:
            raise SupportViolationError(
                f"time support ({self.t_lo}, {self.t_hi}) must lie inside ({t_first}, {t_last}]"
            )
        if self.axis is None:
            return
        if isinstance(domain, Slab):
            a = np.asarray(domain.axis)
            if not np.allclose(np.abs(a), np.abs(np.asarray(self.axis))):
                raise SupportViolationError("test function axis must match the slab axis")
            if self.z_lo <= domain.low or self.z_hi >= domain.high:
                raise SupportViolationError(
                    f"spatial support ({self.z_lo}, {self.z_hi}) touches the boundary"
                )


def _trapezoid_weights(times):
    t = np.asarray(times, dtype=float)
    w = np.zeros_like(t)
    if len(t) > 1:
        dt = np.diff(t)
        w[:-1] += 0.5 * dt
        w[1:] += 0.5 * dt
    return w


def _density_and_flux(f, grid, cutoff, which):
    m = cell_moments(f, grid, cutoff)
    fl = cell_fluxes(f, grid, cutoff)
    if which == "mass":
        return m.mass, fl.mass_flux
    if which == "momentum":
        return m.momentum, fl.momentum_flux
    if which == "energy":
        return m.energy, fl.energy_flux
    raise ValueError(f"which must be mass, momentum or energy, not {which!r}")


class WeakResidualAccumulator:
    """Streaming form of :func:`weak_conservation_residual`.

    Pass it to ``Solver.run`` as a sink (after feeding the initial state);
    only the previous integrand is kept, so long fine runs stay small.
    """

    def __init__(self, phi, cutoff, which, spatial, grid, collision=None):
        self.phi, self.cutoff, self.which = phi, cutoff, which
        self.spatial, self.grid, self.collision = spatial, grid, collision
        self.t_first = self.t_last = None
        self._prev = None
        self.total = 0.0

    def _integrand(self, st):
        x, vol, phi = self.spatial.centers, self.spatial.volumes, self.phi
        rho, J = _density_and_flux(st.field, self.grid, self.cutoff, self.which)
        gphi = phi.grad(st.time, x)
        if self.which == "momentum":
            term = (vol * phi.dt(st.time, x)) @ rho + np.einsum("c,cj,cij->i", vol, gphi, J)
        else:
            term = (vol * phi.dt(st.time, x)) @ rho + np.einsum("c,cj,cj->", vol, gphi, J)
        if self.collision is not None and self.collision.B > 0:
            qm, _ = _density_and_flux(self.collision(st.field), self.grid, self.cutoff, self.which)
            term = term + (vol * phi.value(st.time, x)) @ qm
        return term

    def __call__(self, state, report=None):
        term = self._integrand(state)
        if self._prev is None:
            self.t_first = state.time
        else:
            self.total = self.total + 0.5 * (state.time - self.t_last) * (term + self._prev)
        self._prev, self.t_last = term, state.time

    def residual(self):
        self.phi.check_support(self.t_first, self.t_last, self.spatial.domain)
        return float(np.linalg.norm(np.atleast_1d(self.total)))


def weak_conservation_residual(history, phi, cutoff, which, spatial, grid, collision=None):
    """``|LHS - RHS|`` of the weak conservation identity on stored snapshots.

    LHS = int dt sum_cells vol [d_t phi * rho_R + grad phi . J_R]
    RHS = -int dt sum_cells vol phi * int Psi_R (1, v, |v|^2) Q(f) dv

    ``rho_R``/``J_R`` are the cut-off density and flux of ``which``; time
    integration is the trapezoid rule over the snapshot times.
    """
    history = list(history)
    phi.check_support(history[0].time, history[-1].time, spatial.domain)
    acc = WeakResidualAccumulator(phi, cutoff, which, spatial, grid, collision)
    for st in history:
        acc(st)
    return acc.residual()


def refinement_table(levels):
    """Rows (level, dt, dx, residual, observed_order) for a refinement study.

    ``levels`` is a sequence of (dt, dx, residual), coarse to fine.  The
    observed order at a level compares it with the previous one through the
    ratio of spatial steps; the first level has no order (NaN).
    """
    rows = []
    for i, (dt, dx, res) in enumerate(levels):
        order = float("nan")
        if i:
            pdt, pdx, pres = levels[i - 1]
            order = float(np.log(pres / res) / np.log(pdx / dx))
        rows.append((i, float(dt), float(dx), float(res), order))
    return rows


def write_refinement_csv(path, levels):
    rows = refinement_table(levels)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("level", "dt", "dx", "residual", "observed_order"))
        for r in rows:
            w.writerow([r[0]] + [repr(x) for x in r[1:]])
    return rows


def homogeneous_weak_from_series(times, moments, q_moments, phi):
    """Weak residual rebuilt from a global moment time series (single cell).

    Used as an independent cross-check of :func:`weak_conservation_residual`
    in homogeneous mode, where the flux term is absent.
    """
    w = _trapezoid_weights(times)
    x0 = np.zeros((1, 3))
    dphi = np.array([phi.dt(t, x0)[0] for t in times])
    p = np.array([phi.value(t, x0)[0] for t in times])
    m = np.asarray(moments, dtype=float)
    q = np.asarray(q_moments, dtype=float)
    shape = (-1,) + (1,) * (m.ndim - 1)
    total = np.sum((w * dphi).reshape(shape) * m, axis=0) + np.sum((w * p).reshape(shape) * q, axis=0)
    return float(np.linalg.norm(np.atleast_1d(total)))


# --------------------------------------------------------------------------
# boundary tangency and dispersion


def wall_trace(field, spatial, grid, side):
    """Velocity slice at a slab wall built from the reflection condition.

    Outgoing velocities take the value extrapolated linearly from the two
    nearest cells; incoming ones copy the outgoing value at the mirrored
    velocity, which is exactly the specular boundary condition.
    """
    dom = spatial.domain
    a = np.asarray(dom.axis)
    n = a if side == "high" else -a
    cells = (spatial.n_cells - 1, spatial.n_cells - 2) if side == "high" else (0, 1)
    if spatial.n_cells >= 2:
        out = 1.5 * field[cells[0]] - 0.5 * field[cells[1]]
    else:
        out = field[cells[0]].copy()
    out = np.clip(out, 0.0, 1.0)
    mirror = grid.reflection_index(a)
    vn = grid.nodes @ n
    return np.where(vn < 0, out[mirror], out), n


def boundary_tangency(state, spatial, grid, method="trace"):
    """Max ``|n . int v f dv|`` over boundary samples, over ``int |v| f dv``.

    ``method="trace"`` evaluates the wall trace of a slab run;
    ``method="cell"`` uses the cells adjacent to the boundary (slab or ball),
    which tends to the wall value as the wall layer is refined.
    """
    speed = np.sqrt(grid.speed2)
    worst = 0.0
    if method == "trace":
        if spatial.kind != "line1d":
            raise ValueError("trace method needs a line1d slab grid")
        for side in ("low", "high"):
            f_w, n = wall_trace(state.field, spatial, grid, side)
            mom = grid.weight * (f_w @ grid.nodes) @ n
            scale = grid.weight * f_w @ speed
            worst = max(worst, abs(mom) / scale if scale > 0 else 0.0)
        return worst
    for c, n in _boundary_cells(spatial):
        f = state.field[c]
        mom = grid.weight * (f @ grid.nodes) @ n
        scale = grid.weight * f @ speed
        worst = max(worst, abs(mom) / scale if scale > 0 else 0.0)
    return worst


def _boundary_cells(spatial):
    dom = spatial.domain
    if spatial.kind == "line1d":
        a = np.asarray(dom.axis)
        return [(0, -a), (spatial.n_cells - 1, a)]
    if spatial.kind == "ball3d":
        m = spatial.n_cells_axis
        kept = np.zeros((m, m, m), dtype=bool)
        kept.flat[spatial.box_index] = True
        padded = np.pad(kept, 1)
        inner = np.ones_like(kept)
        for ax in range(3):
            for sh in (-1, 1):
                inner &= np.roll(padded, sh, axis=ax)[1:-1, 1:-1, 1:-1]
        edge = kept & ~inner
        lookup = -np.ones(m**3, dtype=np.int64)
        lookup[spatial.box_index] = np.arange(spatial.n_cells)
        cells = lookup[np.flatnonzero(edge.ravel())]
        x = spatial.centers[cells] - np.asarray(dom.center)
        proj = np.asarray(dom.center) + dom.radius * x / np.linalg.norm(x, axis=1, keepdims=True)
        return list(zip(cells, outward_normal(dom, proj)))
    raise ValueError("boundary samples need a bounded spatial grid")


def cells_in(spatial, K):
    """Boolean cell mask for K given as mask, domain or predicate on centres."""
    if K is None:
        return np.ones(spatial.n_cells, dtype=bool)
    if isinstance(K, np.ndarray) and K.dtype == bool:
        return K
    if isinstance(K, (Ball, Slab)):
        return np.atleast_1d(contains(K, spatial.centers))
    return np.asarray([bool(K(x)) for x in spatial.centers])


def cubed_velocity_moment(state, spatial, grid, K=None):
    """Instantaneous ``int_K int |v|^3 f dv dx``."""
    mask = cells_in(spatial, K)
    v3 = grid.speed2 * np.sqrt(grid.speed2)
    per_cell = grid.weight * state.field @ v3
    return float(spatial.volumes[mask] @ per_cell[mask])


class DispersionMonitor:
    """Solver sink accumulating the running time integral of the |v|^3 moment."""

    def __init__(self, spatial, grid, K=None, initial=None):
        self.spatial, self.grid, self.K = spatial, grid, K
        self.times, self.values, self.integral = [], [], [0.0]
        if initial is not None:
            self._record(initial)

    def _record(self, state):
        val = cubed_velocity_moment(state, self.spatial, self.grid, self.K)
        if self.times:
            dt = state.time - self.times[-1]
            self.integral.append(self.integral[-1] + 0.5 * dt * (val + self.values[-1]))
        self.times.append(state.time)
        self.values.append(val)

    def __call__(self, state, report=None):
        self._record(state)

    def slope(self, t_max=None):
        t = np.asarray(self.times)
        I = np.asarray(self.integral)
        sel = t <= (t_max if t_max is not None else t[-1]) + 1e-12
        return float(np.polyfit(t[sel], I[sel], 1)[0])


class MomentRecorder:
    """Solver sink collecting the rows of ``moments.csv``."""

    columns = (
        "t", "mass", "px", "py", "pz", "energy", "v3_moment",
        "clamp_defect", "q_defect_mass", "q_defect_energy",
    )

    def __init__(self, spatial, grid, collision=None, initial=None):
        self.spatial, self.grid, self.collision = spatial, grid, collision
        self.rows = []
        if initial is not None:
            self(initial)

    def __call__(self, state, report=None):
        inv = global_invariants(state, self.spatial, self.grid)
        v3 = cubed_velocity_moment(state, self.spatial, self.grid)
        qm = qe = 0.0
        if self.collision is not None and self.collision.B > 0:
            Q = self.collision(state.field)
            qm_cells = cell_moments(Q, self.grid)
            qm = float(self.spatial.volumes @ qm_cells.mass)
            qe = float(self.spatial.volumes @ qm_cells.energy)
        defect = report.clamp_defect if report is not None else 0.0
        self.rows.append((state.time, inv.mass, *inv.momentum, inv.energy, v3, defect, qm, qe))
