"""Deterministic solver for the Boltzmann equation for fermions.

Truncated velocity grids, specular-reflection characteristics and a clamped
Picard iteration of the mild (Duhamel) form, with diagnostics for every
conserved or bounded quantity.
"""

from .collision import (
    CollisionKernel,
    CollisionOperator,
    clamp_bar,
    conservative_projection,
    constant_kernel,
    evaluate_Q,
    kernel_l1_norm,
    normalized_kernel,
    post_collision_velocities,
    tabulated_kernel,
)
from .geometry import Ball, FullSpace, Slab, contains, outward_normal, reflect
from .solver import Solver, SolverState, StepConfig, homogeneous_grid, line1d_grid, ball3d_grid, verify_duhamel
from .transport import PhaseState, advance, backtrace, conjugate_sharp, first_hit_time
from .velocity import SphereQuadrature, VelocityGrid, cubed, lebedev26, product

__version__ = "0.1.0"
