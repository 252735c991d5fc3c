"""Fermi-Dirac collision integral on a truncated velocity grid.

The integral over ``(v_*, omega)`` is a product quadrature: ``v_*`` runs over
grid nodes, ``omega`` over a sphere rule.  For a fixed grid offset
``k = (v - v_*) / h`` and direction ``omega`` the post-collision velocities are

    v'  = v   - d,      d = ((v - v_*) . omega) omega
    v*' = v_* + d

so ``f(v')`` is the field sampled at a *uniform* shift of the grid.  Every
distinct displacement ``d`` is interpolated once per evaluation and reused for
all nodes.  Collisions whose post-collision velocities leave the cube
``[-v_max, v_max]^3`` are dropped; that set is invariant under the exchange
``(v, v_*) <-> (v', v_*')`` so the truncated operator keeps its collision
invariants.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.linalg
from scipy.interpolate import RegularGridInterpolator
from scipy.special import expit

from . import _kernels
from .errors import NaNFieldError, SingularGramError, UnresolvedSupportError
from .velocity import SphereQuadrature, VelocityGrid

LOGIT_CAP = 700.0
_LIMIT_RANGE = 20.0
_EXACT_TOL = 1e-12


@dataclass(eq=False)
class CollisionKernel:
    """``b(w, omega) = q(|w|, |w . omega|)`` with bounded compact support."""

    q_eval: Callable
    support_radius: float
    name: str = "custom"
    params: dict = field(default_factory=dict)
    l1_norm_B: float | None = None

    def __call__(self, speed, abs_dot):
        return self.q_eval(np.asarray(speed, dtype=float), np.asarray(abs_dot, dtype=float))

    def scaled(self, factor):
        q = self.q_eval
        params = dict(self.params)
        if "amplitude" in params:
            params["amplitude"] = params["amplitude"] * factor
        return CollisionKernel(
            lambda s, u: factor * q(s, u), self.support_radius, self.name, params
        )


def constant_kernel(radius, amplitude=1.0):
    """``q = amplitude * 1(|w| <= radius)``."""
    lim = radius * (1 + 1e-12)

    def q(s, u):
        return np.where(s <= lim, amplitude, 0.0) * np.ones_like(u)

    return CollisionKernel(q, float(radius), "constant", {"radius": radius, "amplitude": amplitude})


def zero_kernel():
    return CollisionKernel(lambda s, u: np.zeros(np.broadcast(s, u).shape), 0.0, "zero")


def tabulated_kernel(path):
    """Kernel from CSV rows ``(|w|, |w.omega|, q)`` on a rectangular table.

    Values are interpolated bilinearly; outside the table ``q = 0``.
    """
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                rows.append([float(x) for x in row[:3]])
            except ValueError:
                continue  # header line
    data = np.asarray(rows)
    speeds = np.unique(data[:, 0])
    dots = np.unique(data[:, 1])
    if len(data) != len(speeds) * len(dots):
        raise ValueError(f"{path}: kernel table is not a full rectangular grid")
    table = np.zeros((len(speeds), len(dots)))
    table[np.searchsorted(speeds, data[:, 0]), np.searchsorted(dots, data[:, 1])] = data[:, 2]
    if np.any(table < 0):
        raise ValueError(f"{path}: kernel values must be nonnegative")
    interp = RegularGridInterpolator((speeds, dots), table, bounds_error=False, fill_value=0.0)

    def q(s, u):
        s, u = np.broadcast_arrays(s, u)
        return interp(np.stack([s.ravel(), u.ravel()], axis=1)).reshape(s.shape)

    support = float(speeds[np.any(table > 0, axis=1)].max()) if np.any(table > 0) else 0.0
    return CollisionKernel(q, support, "tabulated", {"path": str(path)})


def _check_support(kernel, grid):
    if kernel.support_radius > 2 * grid.v_max * (1 + 1e-12):
        raise UnresolvedSupportError(
            f"kernel support {kernel.support_radius} exceeds grid extent 2*v_max = {2 * grid.v_max}"
        )


def grid_offsets(grid, radius):
    """Integer offsets k (k != 0) with ``|k| h <= radius`` and ``|k_j| < n``."""
    n = grid.n
    m = min(n - 1, int(np.floor(radius / grid.spacing + 1e-9)))
    r = np.arange(-m, m + 1)
    k = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    lim = radius / grid.spacing * (1 + 1e-12)
    norm = np.linalg.norm(k, axis=1)
    return k[(norm <= lim) & (norm > 0)]


def kernel_l1_norm(kernel, grid, sphere):
    """Quadrature of ``b`` over ``R^3 x S^2``; cached on the kernel."""
    _check_support(kernel, grid)
    h = grid.spacing
    if kernel.support_radius <= 0:
        kernel.l1_norm_B = 0.0
        return 0.0
    k = grid_offsets(grid, kernel.support_radius)
    w = k * h
    speed = np.linalg.norm(w, axis=1)
    dots = np.abs(w @ sphere.directions.T)
    q = kernel(speed[:, None], dots)
    B = float(h**3 * np.sum(q * sphere.weights[None, :]))
    # w = 0 carries zero volume in the continuum; the lattice sum includes it
    B += float(h**3 * np.sum(kernel(np.zeros(len(sphere)), np.zeros(len(sphere))) * sphere.weights))
    kernel.l1_norm_B = B
    return B


def normalized_kernel(kernel, grid, sphere, target=1.0):
    B = kernel_l1_norm(kernel, grid, sphere)
    if B == 0:
        raise ValueError("cannot normalize a kernel with zero norm")
    out = kernel.scaled(target / B)
    kernel_l1_norm(out, grid, sphere)
    return out


def post_collision_velocities(v, v_star, omega):
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    omega = np.asarray(omega, dtype=float)
    d = np.sum((v - v_star) * omega, axis=-1, keepdims=True) * omega
    return v - d, v_star + d


def clamp_bar(f_values):
    """Clamp to [0, 1]; NaN is an error, never clamped."""
    f = np.asarray(f_values, dtype=float)
    if np.isnan(f).any():
        raise NaNFieldError("field contains NaN")
    return np.clip(f, 0.0, 1.0)


@lru_cache(maxsize=32)
def _gram_factor(grid):
    if grid.size < 5:
        raise SingularGramError(f"grid has {grid.size} nodes; need at least 5")
    phi = _moment_basis(grid)
    gram = grid.weight * phi.T @ phi
    try:
        return phi, scipy.linalg.cho_factor(gram)
    except np.linalg.LinAlgError as exc:
        raise SingularGramError("Gram matrix of collision invariants is singular") from exc


def _moment_basis(grid):
    v = grid.nodes
    return np.column_stack([np.ones(grid.size), v, grid.speed2])


def conservative_projection(Q_values, grid, weight=None):
    """Remove the span{1, v, |v|^2} component so all five moments vanish.

    Without ``weight`` this is the orthogonal projection in the grid inner
    product.  With a nonnegative ``weight`` (same shape as ``Q_values``) the
    correction is ``weight * (c . phi)``, the projection orthogonal in the
    inner product with node weights ``1 / weight``; nodes of zero weight are
    left untouched.
    """
    Q = np.asarray(Q_values, dtype=float)
    phi, cho = _gram_factor(grid)
    flat = Q.reshape(-1, grid.size)
    out = flat.copy()
    if weight is None:
        for _ in range(2):  # second pass mops up rounding in the first
            rhs = grid.weight * out @ phi
            coef = scipy.linalg.cho_solve(cho, rhs.T).T
            out = out - coef @ phi.T
        return out.reshape(Q.shape)
    W = np.asarray(weight, dtype=float).reshape(flat.shape)
    gram = grid.weight * np.einsum("mi,ia,ib->mab", W, phi, phi)
    # scale rows/cols so the solve is insensitive to the |v|^2 magnitudes
    d = np.sqrt(np.maximum(np.einsum("maa->ma", gram), np.finfo(float).tiny))
    gs = gram / d[:, :, None] / d[:, None, :]
    bad = np.linalg.cond(gs) > 1e12
    if bad.any():
        # too few nodes carry weight (f is 0 or 1 almost everywhere)
        gs[bad] = np.eye(5)
    for _ in range(2):
        rhs = grid.weight * out @ phi
        coef = np.linalg.solve(gs, (rhs / d)[..., None])[..., 0] / d
        out = out - W * (coef @ phi.T)
    if bad.any():
        out[bad] = conservative_projection(flat[bad], grid)
    return out.reshape(Q.shape)


@dataclass
class _Axis:
    idx: np.ndarray  # (n, taps) indices into the (possibly padded) axis
    w: np.ndarray  # (n, taps) weights per node
    valid: np.ndarray  # (n,)
    exact: bool


def _axis_taps(delta, n, mode):
    i = np.arange(n)
    p = i - delta
    valid = (p >= -0.5 - 1e-12) & (p <= n - 0.5 + 1e-12)
    r = np.round(delta)
    if abs(delta - r) < _EXACT_TOL:
        m = np.clip(i - int(r), 0, n - 1)
        return _Axis(m[:, None], np.ones((n, 1)), valid, True)
    if mode == "logit":
        # centre node nearest to p, kept on the grid; near a half-integer
        # shift the clipped centre changes the local coordinate, so the
        # weights are per node
        c = np.clip(i - int(r), 0, n - 1)
        t = p - c
        idx = np.stack([c, c + 1, c + 2], axis=1)  # padded indices of c-1, c, c+1
        w = np.stack([0.5 * t * (t - 1), 1 - t * t, 0.5 * t * (t + 1)], axis=1)
        return _Axis(idx, w, valid, False)
    q = -delta
    fl = np.floor(q)
    t = q - fl
    m = i + int(fl)
    idx = np.stack([np.clip(m, 0, n - 1), np.clip(m + 1, 0, n - 1)], axis=1)
    w = np.repeat(np.array([[1 - t, t]]), n, axis=0)
    return _Axis(idx, w, valid, False)


def _limit(acc, lo, hi):
    """Bound the logit interpolant by its stencil range plus a margin.

    A parabola through three stencil values overshoots their range by at most
    range/8 on the central cell, so resolved data passes untouched.  The
    margin shrinks to zero as the range grows from ``_LIMIT_RANGE`` to twice
    that; such jumps (e.g. next to nodes where f underflowed to 0) are not
    resolved and a free parabola through them lands anywhere in [0, 1].
    The margin is continuous in the data so Picard iterates see a Lipschitz map.
    """
    rng = hi - lo
    margin = rng * (0.125 + 1e-9) * np.clip(2.0 - rng / _LIMIT_RANGE, 0.0, 1.0)
    return np.clip(acc, lo - margin, hi + margin, out=acc)


def _apply_taps(X, axes, padded):
    """Separable interpolation of X (M, A, A, A) with per-axis taps.

    On padded (logit) data each axis pass goes through ``_limit``.
    """
    Y = X
    for k, ax in enumerate(axes):
        idx = ax.idx + 1 if (padded and ax.exact) else ax.idx
        acc = lo = hi = None
        for t in range(idx.shape[1]):
            val = np.take(Y, idx[:, t], axis=k + 1)
            shape = [1] * Y.ndim
            shape[k + 1] = -1
            term = ax.w[:, t].reshape(shape) * val
            if acc is None:
                acc = term
                if padded and not ax.exact:
                    lo, hi = val.copy(), val.copy()
            else:
                acc = acc + term
                if lo is not None:
                    np.minimum(lo, val, out=lo)
                    np.maximum(hi, val, out=hi)
        Y = _limit(acc, lo, hi) if lo is not None else acc
    return Y


def _pad_quadratic(g):
    """One ghost layer per side on axes 1..3, extrapolated quadratically."""
    for ax in (1, 2, 3):
        n = g.shape[ax]
        take = lambda j: np.take(g, [j], axis=ax)  # noqa: E731
        if n >= 3:
            lo = 3 * take(0) - 3 * take(1) + take(2)
            hi = 3 * take(n - 1) - 3 * take(n - 2) + take(n - 3)
        else:
            lo, hi = take(0), take(n - 1)
        g = np.concatenate([lo, g, hi], axis=ax)
    return np.clip(g, -LOGIT_CAP, LOGIT_CAP)


class CollisionOperator:
    """Precomputed quadrature plan for ``Q(f)`` on one grid/kernel/sphere.

    ``interpolation`` selects how ``f(v')`` is sampled off the grid:

    ``"logit"``
        quadratic Lagrange interpolation of ``log(f / (1 - f))`` followed by
        the logistic map.  Values stay in [0, 1] and every Fermi-Dirac profile
        (quadratic logit) is reproduced exactly, so gain and loss cancel
        tuple by tuple at equilibrium.
    ``"trilinear"``
        convex trilinear interpolation of ``f`` itself.

    With ``conservative=True`` the quadrature is corrected so its mass,
    momentum and energy moments vanish.  ``projection="pauli"`` weights the
    correction by ``f(1 - f)`` so it vanishes where f is 0 or 1 and cannot
    push the solution out of [0, 1]; ``"l2"`` is the plain orthogonal
    projection in the grid inner product.
    """

    def __init__(self, grid, kernel, sphere, conservative=True, interpolation="logit", projection="pauli", chunk_bytes=64e6):
        if projection not in ("pauli", "l2"):
            raise ValueError(f"unknown projection {projection!r}")
        self.projection = projection
        if interpolation not in ("logit", "trilinear"):
            raise ValueError(f"unknown interpolation {interpolation!r}")
        self.grid = grid
        self.kernel = kernel
        self.sphere = sphere
        self.conservative = conservative
        self.interpolation = interpolation
        self.chunk_bytes = chunk_bytes
        self.B = kernel_l1_norm(kernel, grid, sphere)
        self._plan = self._build_plan() if self.B > 0 else []

    def _build_plan(self):
        grid, n, h = self.grid, self.grid.n, self.grid.spacing
        k = grid_offsets(grid, self.kernel.support_radius)
        speed = np.linalg.norm(k, axis=1) * h
        dirs, wts = self.sphere.half()
        plan = []
        for omega, w in zip(dirs, wts):
            s = k @ omega
            beta = self.kernel(speed, np.abs(s) * h) * grid.weight * w
            keep = beta > 0
            if not keep.any():
                continue
            kk, ss, bb = k[keep], s[keep], beta[keep]
            # group equal k.omega values (equal up to rounding); the rounded
            # key only groups, the displacement itself is an actual value
            keys = np.round(ss, 9)
            ukeys, first, sid = np.unique(keys, return_index=True, return_inverse=True)
            partner = np.searchsorted(ukeys, -ukeys)
            if not np.array_equal(ukeys[np.minimum(partner, len(ukeys) - 1)], -ukeys):
                raise RuntimeError("offset set is not symmetric under k -> -k")
            uniq = 0.5 * (ss[first] - ss[first][partner])
            nid = partner[sid]
            axes = [[_axis_taps(u * omega[a], n, self.interpolation) for a in range(3)] for u in uniq]
            lo = np.full((len(uniq), 3), n, dtype=np.int64)
            hi = np.full((len(uniq), 3), -1, dtype=np.int64)
            for u, ax in enumerate(axes):
                for a in range(3):
                    ok = np.flatnonzero(ax[a].valid)
                    if ok.size:
                        lo[u, a], hi[u, a] = ok[0], ok[-1]
            # the kernel handles k and -k together
            half = (kk[:, 0] > 0) | ((kk[:, 0] == 0) & ((kk[:, 1] > 0) | ((kk[:, 1] == 0) & (kk[:, 2] > 0))))
            plan.append(
                dict(
                    offsets=np.ascontiguousarray(kk[half], dtype=np.int64),
                    sid=sid[half].astype(np.int64),
                    nid=nid[half].astype(np.int64),
                    beta=np.ascontiguousarray(bb[half]),
                    axes=axes,
                    lo=lo,
                    hi=hi,
                )
            )
        return plan

    @property
    def n_tuples(self):
        return 2 * sum(len(p["beta"]) for p in self._plan) * self.grid.size

    def _shifted_fields(self, f4, g4, axes_list):
        out = np.empty((f4.shape[0], len(axes_list), self.grid.size))
        for s, axes in enumerate(axes_list):
            if all(ax.exact for ax in axes):
                out[:, s] = _apply_taps(f4, axes, padded=False).reshape(f4.shape[0], -1)
            elif self.interpolation == "logit":
                out[:, s] = expit(_apply_taps(g4, axes, padded=True)).reshape(f4.shape[0], -1)
            else:
                out[:, s] = _apply_taps(f4, axes, padded=False).reshape(f4.shape[0], -1)
        return out

    def raw(self, f):
        """Quadrature of the collision integral without projection."""
        fb = clamp_bar(f)
        single = fb.ndim == 1
        fb = np.atleast_2d(fb).reshape(-1, self.grid.size)
        M = fb.shape[0]
        out = np.zeros_like(fb)
        if not self._plan:
            return out[0] if single else out
        f4 = fb.reshape((M,) + self.grid.shape)
        g4 = None
        if self.interpolation == "logit":
            with np.errstate(divide="ignore"):
                g = np.log(f4) - np.log1p(-f4)
            g4 = _pad_quadratic(np.clip(g, -LOGIT_CAP, LOGIT_CAP))
        for part in self._plan:
            S = len(part["axes"])
            per = max(1, int(self.chunk_bytes // (8 * S * self.grid.size)))
            for lo in range(0, M, per):
                cells = slice(lo, min(M, lo + per))
                F = self._shifted_fields(f4[cells], None if g4 is None else g4[cells], part["axes"])
                _kernels.accumulate_collisions(
                    np.ascontiguousarray(fb[cells]),
                    F,
                    part["lo"],
                    part["hi"],
                    part["offsets"],
                    part["sid"],
                    part["nid"],
                    part["beta"],
                    self.grid.n,
                    out[cells],
                )
        return out[0] if single else out

    def __call__(self, f):
        Q = self.raw(f)
        if self.conservative:
            if self.projection == "pauli":
                fb = clamp_bar(f).reshape(Q.shape)
                Q = conservative_projection(Q, self.grid, weight=fb * (1.0 - fb))
            else:
                Q = conservative_projection(Q, self.grid)
        return Q


@lru_cache(maxsize=16)
def _cached_operator(grid, kernel, sphere, conservative, interpolation, projection):
    return CollisionOperator(grid, kernel, sphere, conservative, interpolation, projection)


def evaluate_Q(f, grid: VelocityGrid, kernel: CollisionKernel, sphere: SphereQuadrature, conservative=True, interpolation="logit", projection="pauli"):
    """``Q(f)`` at every grid node (``f`` is clamped to [0, 1] first)."""
    return _cached_operator(grid, kernel, sphere, conservative, interpolation, projection)(f)
