"""Velocity grids and quadratures on the unit sphere."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class VelocityGrid:
    """Cell-centred uniform grid on ``[-v_max, v_max]^3``.

    Nodes are stored flat in C order over the three axis indices.
    """

    v_max: float
    nodes_per_axis: int

    def __post_init__(self):
        if not self.v_max > 0:
            raise ValueError("v_max must be positive")
        n = self.nodes_per_axis
        if n < 1 or n % 2 == 0:
            raise ValueError(f"nodes_per_axis must be odd and positive, got {n}")

    @property
    def n(self):
        return self.nodes_per_axis

    @property
    def shape(self):
        return (self.n,) * 3

    @property
    def size(self):
        return self.n**3

    @property
    def spacing(self):
        return 2.0 * self.v_max / self.n

    @property
    def weight(self):
        return self.spacing**3

    @cached_property
    def axis(self):
        # integer offsets from the centre keep v -> -v exact in floating point
        return (np.arange(self.n) - (self.n - 1) // 2) * self.spacing

    @cached_property
    def nodes(self):
        a = self.axis
        g = np.stack(np.meshgrid(a, a, a, indexing="ij"), axis=-1)
        return g.reshape(-1, 3)

    @cached_property
    def speed2(self):
        return np.einsum("ij,ij->i", self.nodes, self.nodes)

    def node(self, i):
        return self.nodes[np.ravel_multi_index(tuple(i), self.shape)]

    def reflection_index(self, normal):
        """Permutation mapping node index to the index of its mirror image.

        Only defined when the reflection maps the grid onto itself, i.e. for
        coordinate-axis normals.
        """
        n = np.asarray(normal, dtype=float)
        ax = np.flatnonzero(np.abs(n) > 0.5)
        if len(ax) != 1 or not np.isclose(abs(n[ax[0]]), 1.0):
            raise ValueError("grid reflection needs an axis-aligned normal")
        idx = np.arange(self.size).reshape(self.shape)
        return np.flip(idx, axis=int(ax[0])).ravel()

    def negation_index(self):
        idx = np.arange(self.size).reshape(self.shape)
        return idx[::-1, ::-1, ::-1].ravel()


@dataclass(eq=False)
class SphereQuadrature:
    directions: np.ndarray
    weights: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        norms = np.linalg.norm(self.directions, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-12:
            raise ValueError("sphere directions must be unit vectors")
        if np.any(self.weights <= 0):
            raise ValueError("sphere weights must be positive")
        if abs(self.weights.sum() / (4 * np.pi) - 1.0) > 1e-12:
            raise ValueError("sphere weights must sum to 4 pi")

    def __len__(self):
        return len(self.weights)

    def is_antipodal(self, tol=1e-12):
        d = self.directions
        gap = np.linalg.norm(d[:, None, :] + d[None, :, :], axis=-1)
        j = np.argmin(gap, axis=1)
        return bool(np.all(gap[np.arange(len(d)), j] < tol) and np.allclose(self.weights[j], self.weights))

    def half(self):
        """One representative per antipodal pair, with the pair's summed weight."""
        d = self.directions
        keep, used = [], np.zeros(len(d), dtype=bool)
        w = []
        for i in range(len(d)):
            if used[i]:
                continue
            gap = np.linalg.norm(d + d[i], axis=1)
            j = int(np.argmin(gap))
            used[i] = True
            if gap[j] < 1e-12 and not used[j]:
                used[j] = True
                w.append(self.weights[i] + self.weights[j])
            else:
                w.append(self.weights[i])
            keep.append(i)
        return d[keep], np.asarray(w)


def lebedev26():
    """Degree-7 Lebedev rule: 6 axis, 12 edge and 8 corner directions."""
    dirs, w = [], []
    for m in _cube_surface_points(1):
        m = np.asarray(m, dtype=float)
        k = int(np.count_nonzero(m))
        dirs.append(m / np.linalg.norm(m))
        w.append({1: 1 / 21, 2: 4 / 105, 3: 9 / 280}[k])
    return SphereQuadrature(np.array(dirs), 4 * np.pi * np.array(w), name="lebedev26")


def _cube_surface_points(L):
    r = range(-L, L + 1)
    return [(a, b, c) for a in r for b in r for c in r if max(abs(a), abs(b), abs(c)) == L]


def _rect_solid_angle(dist, y1, y2, z1, z2):
    def F(y, z):
        return np.arctan(y * z / (dist * np.sqrt(dist**2 + y**2 + z**2)))

    return F(y2, z2) - F(y1, z2) - F(y2, z1) + F(y1, z1)


def cubed(L):
    """Central projection of the integer points on the surface of ``[-L, L]^3``.

    Each direction carries the exact solid angle of its face cell, so the
    weights tile the sphere.  All directions are lattice directions, which
    keeps many post-collision velocities on the velocity grid.
    """
    if L < 1:
        raise ValueError("cubed sphere level must be >= 1")
    pts = _cube_surface_points(L)
    w = np.zeros(len(pts))
    for idx, p in enumerate(pts):
        for ax in range(3):
            if abs(p[ax]) != L:
                continue
            o = [a for a in range(3) if a != ax]
            lo = [max(p[a] - 0.5, -L) for a in o]
            hi = [min(p[a] + 0.5, L) for a in o]
            w[idx] += _rect_solid_angle(L, lo[0], hi[0], lo[1], hi[1])
    d = np.asarray(pts, dtype=float)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    w *= 4 * np.pi / w.sum()
    return SphereQuadrature(d, w, name=f"cubed{L}")


def product(n_polar, n_azimuth):
    """Gauss-Legendre in cos(theta) times uniform azimuth (even count)."""
    if n_azimuth % 2:
        raise ValueError("n_azimuth must be even for an antipodal node set")
    x, wx = np.polynomial.legendre.leggauss(n_polar)
    phi = (np.arange(n_azimuth) + 0.5) * 2 * np.pi / n_azimuth
    st = np.sqrt(1 - x**2)
    d = np.stack(
        [
            (st[:, None] * np.cos(phi)[None, :]).ravel(),
            (st[:, None] * np.sin(phi)[None, :]).ravel(),
            np.repeat(x, n_azimuth),
        ],
        axis=1,
    )
    w = np.repeat(wx, n_azimuth) * (2 * np.pi / n_azimuth)
    return SphereQuadrature(d, w, name=f"product{n_polar}x{n_azimuth}")


def sphere_from_spec(spec):
    """``lebedev26``, ``cubed:L`` or ``product:NPxNA``."""
    spec = spec.strip().lower()
    if spec == "lebedev26":
        return lebedev26()
    kind, _, arg = spec.partition(":")
    if kind == "cubed":
        return cubed(int(arg))
    if kind == "product":
        a, b = arg.split("x")
        return product(int(a), int(b))
    raise ValueError(f"unknown sphere quadrature {spec!r}")
