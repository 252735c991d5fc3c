"""Spatial domains with a smooth boundary and the specular reflection law."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UndefinedNormalError

DEFAULT_TANGENT_TOL = 1e-10


@dataclass(frozen=True)
class FullSpace:
    tangent_tolerance: float = DEFAULT_TANGENT_TOL

    has_boundary = False


@dataclass(frozen=True)
class Ball:
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0
    tangent_tolerance: float = DEFAULT_TANGENT_TOL

    has_boundary = True

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"Ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


@dataclass(frozen=True)
class Slab:
    """Region ``low <= x . axis <= high``, unbounded in the tangential directions.

    ``period`` is the tangential wrapping length used by spatial grids; it has
    no effect on the characteristic flow itself.
    """

    axis: tuple = (0.0, 0.0, 1.0)
    low: float = 0.0
    high: float = 1.0
    tangent_tolerance: float = DEFAULT_TANGENT_TOL
    period: float = 1.0

    has_boundary = True

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"Slab needs low < high, got {self.low}, {self.high}")
        a = np.asarray(self.axis, dtype=float)
        norm = np.linalg.norm(a)
        if norm == 0:
            raise ValueError("Slab axis must be nonzero")
        object.__setattr__(self, "axis", tuple(a / norm))


Domain = FullSpace | Ball | Slab


def contains(domain, x, tol=1e-12):
    """True iff ``x`` lies in the closed region (vectorized over leading axes)."""
    x = np.asarray(x, dtype=float)
    if isinstance(domain, FullSpace):
        out = np.ones(x.shape[:-1], dtype=bool)
    elif isinstance(domain, Ball):
        r = np.linalg.norm(x - np.asarray(domain.center), axis=-1)
        out = r <= domain.radius * (1 + tol)
    else:
        z = x @ np.asarray(domain.axis)
        span = domain.high - domain.low
        out = (z >= domain.low - tol * span) & (z <= domain.high + tol * span)
    return bool(out) if out.ndim == 0 else out


def outward_normal(domain, x):
    """Outer unit normal at a boundary point.

    The field is the smooth extension of n to a neighbourhood of the boundary:
    radial for a ball, and for a slab the normal of the nearer face.
    """
    x = np.asarray(x, dtype=float)
    if isinstance(domain, FullSpace):
        raise UndefinedNormalError("full space has no boundary normal")
    if isinstance(domain, Ball):
        d = x - np.asarray(domain.center)
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        if np.any(r == 0):
            raise UndefinedNormalError("normal undefined at the ball center")
        return d / r
    a = np.asarray(domain.axis)
    z = x @ a
    mid = 0.5 * (domain.low + domain.high)
    sign = np.where(z >= mid, 1.0, -1.0)
    return sign[..., None] * a if np.ndim(sign) else sign * a


def reflect(v, n):
    """Specular reflection ``v - 2 (v.n) n``."""
    v = np.asarray(v, dtype=float)
    n = np.asarray(n, dtype=float)
    vn = np.sum(v * n, axis=-1, keepdims=True)
    return v - 2.0 * vn * n


def project_to_boundary(domain, x):
    """Snap a point that is meant to lie on the boundary back onto it."""
    x = np.asarray(x, dtype=float)
    if isinstance(domain, Ball):
        c = np.asarray(domain.center)
        d = x - c
        return c + domain.radius * d / np.linalg.norm(d, axis=-1, keepdims=True)
    if isinstance(domain, Slab):
        a = np.asarray(domain.axis)
        z = x @ a
        mid = 0.5 * (domain.low + domain.high)
        target = np.where(z >= mid, domain.high, domain.low)
        return x + (target - z)[..., None] * a if np.ndim(z) else x + (target - z) * a
    return x


def diameter(domain):
    if isinstance(domain, Ball):
        return 2.0 * domain.radius
    if isinstance(domain, Slab):
        return domain.high - domain.low
    return np.inf
