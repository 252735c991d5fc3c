"""Invariant checks behind ``fermikin verify``.

Each check returns a ``CheckResult``; thresholds match the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .collision import conservative_projection, post_collision_velocities
from .config import build_initial, build_setup
from .diagnostics import global_invariants, q_moment_defect
from .geometry import FullSpace, reflect
from .solver import Solver, SolverState, sample_states
from .transport import advance_many


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _result(name, value, limit):
    return CheckResult(name, bool(value <= limit), f"{value:.3e} <= {limit:.1e}")


def check_reflection(rng, n=10000):
    v = rng.normal(size=(n, 3))
    nrm = rng.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    r = reflect(v, nrm)
    inv = np.max(np.abs(reflect(r, nrm) - v))
    iso = np.max(np.abs(np.linalg.norm(r, axis=1) - np.linalg.norm(v, axis=1)) / np.linalg.norm(v, axis=1))
    return [
        _result("reflection involution", inv, 1e-14),
        _result("reflection isometry", iso, 1e-14),
    ]


def check_collision_identities(rng, n=10000):
    v, vs = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
    om = rng.normal(size=(n, 3))
    om /= np.linalg.norm(om, axis=1, keepdims=True)
    vp, vsp = post_collision_velocities(v, vs, om)
    scale = np.sum(v * v, 1) + np.sum(vs * vs, 1)
    mom = np.max(np.abs(vp + vsp - v - vs) / np.sqrt(scale)[:, None])
    en = np.max(np.abs(np.sum(vp * vp, 1) + np.sum(vsp * vsp, 1) - scale) / scale)
    return [
        _result("collision momentum identity", mom, 1e-13),
        _result("collision energy identity", en, 1e-13),
    ]


def check_operator(setup, rng, n_fields=5):
    grid, op = setup.vgrid, setup.collision
    out = []
    B = op.B
    if B == 0:
        return [CheckResult("collision operator", True, "kernel is zero, nothing to check")]
    const = np.abs(op(np.full(grid.size, 0.37))).max()
    out.append(_result("Q annihilates constants (/B)", const / B, 1e-12))
    fd = np.abs(op(expit(-grid.speed2))).max()
    out.append(_result("Q annihilates Fermi-Dirac (/B)", fd / B, 1e-10))
    worst_bound, worst_proj = 0.0, 0.0
    for _ in range(n_fields):
        f = rng.uniform(0, 1, grid.size)
        Q = op.raw(f)
        worst_bound = max(worst_bound, np.max(-B * f - Q), np.max(Q - B * (1 - f)))
        P = op(f) if op.conservative else conservative_projection(Q, grid)
        m, p, e = q_moment_defect(P, grid)
        A = np.abs(Q)
        sm, _, se = q_moment_defect(A, grid)
        sp = grid.weight * np.sum(A * np.sqrt(grid.speed2))
        worst_proj = max(worst_proj, abs(m) / sm, np.max(np.abs(p)) / sp, abs(e) / se)
    out.append(_result("bound chain violation (/B)", max(worst_bound, 0.0) / B, 1e-10))
    out.append(_result("projected moment defect (rel)", worst_proj, 1e-13))
    return out


def check_run(setup, rng, n_steps):
    cfg = setup.config
    f0 = build_initial(cfg.initial, setup.spatial, setup.vgrid, cfg, rng)
    solver = Solver(setup.spatial, setup.vgrid, setup.collision, setup.step)
    state = SolverState(0.0, f0)
    inv0 = global_invariants(state, setup.spatial, setup.vgrid)
    worst_defect, worst_ratio, lo, hi = 0.0, 0.0, 1.0, 0.0
    for _ in range(n_steps):
        state, rep = solver.picard_step(state)
        worst_defect = max(worst_defect, rep.clamp_defect)
        worst_ratio = max([worst_ratio] + rep.ratios)
        lo, hi = min(lo, rep.min_before_clamp), max(hi, rep.max_before_clamp)
    out = [
        _result("clamp defect per step", worst_defect, 1e-10),
        CheckResult("range before clamp", lo >= -1e-10 and hi <= 1 + 1e-10, f"[{lo:.3e}, {hi:.6f}]"),
        _result("Picard ratio", worst_ratio, cfg.contraction_safety + 0.1),
    ]
    if setup.spatial.kind == "homogeneous" and cfg.conservative:
        inv = global_invariants(state, setup.spatial, setup.vgrid)
        out.append(_result("mass drift (rel)", abs(inv.mass / inv0.mass - 1), 1e-11))
        out.append(_result("energy drift (rel)", abs(inv.energy / inv0.energy - 1), 1e-11))
    return out


def check_trajectories(domain, rng, n=1000):
    if isinstance(domain, FullSpace):
        return []
    states = sample_states(domain, n, rng)
    x = np.array([s.x for s in states])
    v = np.array([s.v for s in states])
    x1, v1, _ = advance_many(domain, x, v, 0.7)
    x2, v2, _ = advance_many(domain, x1, v1, 0.7)
    xd, vd, _ = advance_many(domain, x, v, 1.4)
    group = max(np.max(np.abs(x2 - xd)), np.max(np.abs(v2 - vd)))
    speed = np.max(np.abs(np.linalg.norm(vd, axis=1) - np.linalg.norm(v, axis=1)) / np.linalg.norm(v, axis=1))
    return [
        _result("trajectory group property", group, 1e-9),
        _result("speed preservation (rel)", speed, 1e-12),
    ]


def run_checks(cfg, n_steps=None):
    rng = np.random.default_rng(cfg.seed)
    setup = build_setup(cfg)
    steps = cfg.n_steps if n_steps is None else n_steps
    results = []
    results += check_reflection(rng)
    results += check_collision_identities(rng)
    results += check_operator(setup, rng)
    results += check_trajectories(setup.domain, rng)
    results += check_run(setup, rng, steps)
    return results
