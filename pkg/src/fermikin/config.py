"""Run configuration: flat ``key = value`` files with section headers.

Every known key and its default lives in ``DEFAULTS``.  ``parse_config``
fills defaults, converts types and validates; ``serialize`` writes a
config back out in a form that parses to an equal ``RunConfig``.
"""

from __future__ import annotations

import configparser
import difflib
import re
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .collision import CollisionOperator, constant_kernel, kernel_l1_norm, tabulated_kernel
from .errors import ConfigParseError, ConfigValidationError, FermikinError, FileShapeError
from .geometry import Ball, FullSpace, Slab
from .solver import StepConfig, ball3d_grid, homogeneous_grid, line1d_grid
from .velocity import VelocityGrid, sphere_from_spec

# section -> {key: default text}
DEFAULTS = {
    "domain": {
        "kind": "homogeneous",
        "center": "0, 0, 0",
        "radius": "1.0",
        "axis": "z",
        "low": "0.0",
        "high": "1.0",
        "period": "1.0",
        "tangent_tolerance": "1e-10",
        "cells": "20",
    },
    "velocity": {
        "v_max": "6.0",
        "nodes_per_axis": "21",
    },
    "collision": {
        "kernel": "constant(2.0, 1.0)",
        "normalize_B": "1.0",
        "sphere": "lebedev26",
        "conservative": "true",
        "interpolation": "logit",
        "projection": "pauli",
    },
    "time": {
        "theta": "0.1",
        "n_steps": "100",
        "picard_tol": "1e-12",
        "picard_max_iter": "50",
        "contraction_safety": "0.5",
    },
    "initial": {
        "data": "fermi_dirac(0.0, 1.0)",
        "modulation": "0.0",
    },
    "output": {
        "directory": "out",
        "snapshot_stride": "10",
        "seed": "0",
        "cutoff_radius": "",
    },
}

_AXES = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}
_CALL = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$", re.IGNORECASE)


@dataclass(frozen=True)
class RunConfig:
    domain_kind: str
    center: tuple
    radius: float
    axis: str
    low: float
    high: float
    period: float
    tangent_tolerance: float
    cells: int
    v_max: float
    nodes_per_axis: int
    kernel: str
    normalize_B: float | None
    sphere: str
    conservative: bool
    interpolation: str
    projection: str
    theta: float
    n_steps: int
    picard_tol: float
    picard_max_iter: int
    contraction_safety: float
    initial: str
    modulation: float
    output_dir: str
    snapshot_stride: int
    seed: int
    cutoff_radius: float | None
    B: float = float("nan")

    def with_overrides(self, **kw):
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(kw)
        return RunConfig(**vals)


# field name -> (section, key)
_FIELD_KEYS = {
    "domain_kind": ("domain", "kind"),
    "center": ("domain", "center"),
    "radius": ("domain", "radius"),
    "axis": ("domain", "axis"),
    "low": ("domain", "low"),
    "high": ("domain", "high"),
    "period": ("domain", "period"),
    "tangent_tolerance": ("domain", "tangent_tolerance"),
    "cells": ("domain", "cells"),
    "v_max": ("velocity", "v_max"),
    "nodes_per_axis": ("velocity", "nodes_per_axis"),
    "kernel": ("collision", "kernel"),
    "normalize_B": ("collision", "normalize_B"),
    "sphere": ("collision", "sphere"),
    "conservative": ("collision", "conservative"),
    "interpolation": ("collision", "interpolation"),
    "projection": ("collision", "projection"),
    "theta": ("time", "theta"),
    "n_steps": ("time", "n_steps"),
    "picard_tol": ("time", "picard_tol"),
    "picard_max_iter": ("time", "picard_max_iter"),
    "contraction_safety": ("time", "contraction_safety"),
    "initial": ("initial", "data"),
    "modulation": ("initial", "modulation"),
    "output_dir": ("output", "directory"),
    "snapshot_stride": ("output", "snapshot_stride"),
    "seed": ("output", "seed"),
    "cutoff_radius": ("output", "cutoff_radius"),
}


def parse_call(text):
    """``name(a, b)`` -> ``("name", ["a", "b"])``; bare ``name`` gives no args."""
    m = _CALL.match(text)
    if not m:
        raise ValueError(f"cannot read {text!r} as name(args)")
    args = [a.strip() for a in m.group(2).split(",")] if m.group(2) and m.group(2).strip() else []
    return m.group(1).lower(), args


def _nearest(key, known):
    hit = difflib.get_close_matches(key, known, n=1, cutoff=0.0)
    return hit[0] if hit else None


def _read_text(text, source="<string>"):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        where = f" (line {line})" if line else ""
        raise ConfigParseError(f"{source}{where}: {exc.message if hasattr(exc, 'message') else exc}") from exc
    raw = {}
    for section in cp.sections():
        if section not in DEFAULTS:
            near = _nearest(section, list(DEFAULTS))
            raise ConfigParseError(f"unknown section [{section}]; nearest known section is [{near}]", section)
        for key, value in cp.items(section):
            if key not in DEFAULTS[section]:
                known = list(DEFAULTS[section])
                near = _nearest(key, known)
                raise ConfigParseError(
                    f"unknown key '{key}' in [{section}]; nearest known key is '{near}'",
                    f"{section}.{key}",
                )
            raw[(section, key)] = value.strip()
    return raw


def _convert(raw):
    def get(section, key):
        return raw.get((section, key), DEFAULTS[section][key])

    def num(section, key, typ=float, optional=False):
        text = get(section, key)
        if optional and text == "":
            return None
        try:
            return typ(text)
        except ValueError:
            raise ConfigParseError(f"{section}.{key}: expected {typ.__name__}, got {text!r}", f"{section}.{key}")

    def boolean(section, key):
        text = get(section, key).lower()
        if text in ("true", "yes", "on", "1"):
            return True
        if text in ("false", "no", "off", "0"):
            return False
        raise ConfigParseError(f"{section}.{key}: expected true/false, got {text!r}", f"{section}.{key}")

    center_text = get("domain", "center")
    try:
        center = tuple(float(c) for c in center_text.split(","))
    except ValueError:
        raise ConfigParseError(f"domain.center: expected three numbers, got {center_text!r}", "domain.center")
    return RunConfig(
        domain_kind=get("domain", "kind").lower(),
        center=center,
        radius=num("domain", "radius"),
        axis=get("domain", "axis").lower(),
        low=num("domain", "low"),
        high=num("domain", "high"),
        period=num("domain", "period"),
        tangent_tolerance=num("domain", "tangent_tolerance"),
        cells=num("domain", "cells", int),
        v_max=num("velocity", "v_max"),
        nodes_per_axis=num("velocity", "nodes_per_axis", int),
        kernel=get("collision", "kernel"),
        normalize_B=num("collision", "normalize_B", optional=True),
        sphere=get("collision", "sphere"),
        conservative=boolean("collision", "conservative"),
        interpolation=get("collision", "interpolation").lower(),
        projection=get("collision", "projection").lower(),
        theta=num("time", "theta"),
        n_steps=num("time", "n_steps", int),
        picard_tol=num("time", "picard_tol"),
        picard_max_iter=num("time", "picard_max_iter", int),
        contraction_safety=num("time", "contraction_safety"),
        initial=get("initial", "data"),
        modulation=num("initial", "modulation"),
        output_dir=get("output", "directory"),
        snapshot_stride=num("output", "snapshot_stride", int),
        seed=num("output", "seed", int),
        cutoff_radius=num("output", "cutoff_radius", optional=True),
    )


def _invalid(msg, field_name):
    section, key = _FIELD_KEYS[field_name]
    return ConfigValidationError(f"{section}.{key}: {msg}", f"{section}.{key}")


def _validate_static(cfg):
    if cfg.domain_kind not in ("homogeneous", "slab", "ball"):
        raise _invalid("kind must be homogeneous, slab or ball", "domain_kind")
    if len(cfg.center) != 3:
        raise _invalid("center needs three coordinates", "center")
    if cfg.axis not in _AXES:
        raise _invalid("axis must be x, y or z", "axis")
    if cfg.domain_kind == "ball" and not cfg.radius > 0:
        raise _invalid("radius must be positive", "radius")
    if cfg.domain_kind == "slab" and not cfg.low < cfg.high:
        raise _invalid("low must be below high", "high")
    if not cfg.tangent_tolerance > 0:
        raise _invalid("must be positive", "tangent_tolerance")
    if cfg.domain_kind != "homogeneous" and cfg.cells < 1:
        raise _invalid("need at least one cell", "cells")
    if not cfg.v_max > 0:
        raise _invalid("must be positive", "v_max")
    if cfg.nodes_per_axis < 3 or cfg.nodes_per_axis % 2 == 0:
        raise _invalid("must be odd and at least 3", "nodes_per_axis")
    if cfg.interpolation not in ("logit", "trilinear"):
        raise _invalid("must be logit or trilinear", "interpolation")
    if cfg.projection not in ("pauli", "l2"):
        raise _invalid("must be pauli or l2", "projection")
    if cfg.normalize_B is not None and not cfg.normalize_B > 0:
        raise _invalid("must be positive or empty", "normalize_B")
    if not cfg.theta > 0:
        raise _invalid("must be positive", "theta")
    if cfg.n_steps < 0:
        raise _invalid("must be nonnegative", "n_steps")
    if not cfg.picard_tol > 0:
        raise _invalid("must be positive", "picard_tol")
    if cfg.picard_max_iter < 1:
        raise _invalid("must be at least 1", "picard_max_iter")
    if not 0 < cfg.contraction_safety < 1:
        raise _invalid("must lie in (0, 1)", "contraction_safety")
    if not 0 <= cfg.modulation < 1:
        raise _invalid("must lie in [0, 1)", "modulation")
    if cfg.snapshot_stride < 0:
        raise _invalid("must be nonnegative (0 disables snapshots)", "snapshot_stride")
    if cfg.cutoff_radius is not None:
        if not cfg.cutoff_radius > 0:
            raise _invalid("must be positive", "cutoff_radius")
        if cfg.v_max < 2 * cfg.cutoff_radius:
            raise _invalid(
                f"weak-residual cutoff needs v_max >= 2 * cutoff_radius = {2 * cfg.cutoff_radius}",
                "cutoff_radius",
            )
    try:
        sphere_from_spec(cfg.sphere)
    except ValueError as exc:
        raise _invalid(str(exc), "sphere")
    try:
        name, args = parse_call(cfg.kernel)
    except ValueError as exc:
        raise _invalid(str(exc), "kernel")
    if name not in ("constant", "tabulated", "zero"):
        raise _invalid("kernel must be constant(radius, amplitude), tabulated(path) or zero", "kernel")
    try:
        name, args = parse_call(cfg.initial)
    except ValueError as exc:
        raise _invalid(str(exc), "initial")
    if name not in ("constant", "fermi_dirac", "double_bump", "random", "file"):
        raise _invalid("data must be constant, fermi_dirac, double_bump, random or file", "initial")


# --------------------------------------------------------------------------
# objects built from a config


def build_domain(cfg):
    if cfg.domain_kind == "ball":
        return Ball(np.asarray(cfg.center, dtype=float), cfg.radius, cfg.tangent_tolerance)
    if cfg.domain_kind == "slab":
        return Slab(np.asarray(_AXES[cfg.axis]), cfg.low, cfg.high, cfg.tangent_tolerance, cfg.period)
    return FullSpace(cfg.tangent_tolerance)


def build_spatial(cfg, domain=None):
    domain = domain if domain is not None else build_domain(cfg)
    if cfg.domain_kind == "slab":
        return line1d_grid(domain, cfg.cells)
    if cfg.domain_kind == "ball":
        return ball3d_grid(domain, cfg.cells)
    return homogeneous_grid()


def build_kernel(cfg, vgrid=None, sphere=None):
    """Kernel as configured, rescaled so its norm equals ``normalize_B`` if set."""
    name, args = parse_call(cfg.kernel)
    if name == "constant":
        radius = float(args[0]) if args else 2.0
        amplitude = float(args[1]) if len(args) > 1 else 1.0
        kernel = constant_kernel(radius, amplitude)
    elif name == "tabulated":
        if len(args) != 1:
            raise _invalid("tabulated(path) takes one argument", "kernel")
        kernel = tabulated_kernel(args[0])
    else:
        from .collision import zero_kernel

        return zero_kernel()
    if cfg.normalize_B is not None and vgrid is not None:
        B = kernel_l1_norm(kernel, vgrid, sphere)
        if B > 0:
            kernel = kernel.scaled(cfg.normalize_B / B)
    return kernel


@dataclass(eq=False)
class Setup:
    config: RunConfig
    domain: object
    spatial: object
    vgrid: VelocityGrid
    sphere: object
    kernel: object
    collision: CollisionOperator
    step: StepConfig


def build_setup(cfg):
    domain = build_domain(cfg)
    vgrid = VelocityGrid(cfg.v_max, cfg.nodes_per_axis)
    sphere = sphere_from_spec(cfg.sphere)
    kernel = build_kernel(cfg, vgrid, sphere)
    op = CollisionOperator(vgrid, kernel, sphere, cfg.conservative, cfg.interpolation, cfg.projection)
    step = StepConfig(cfg.theta, cfg.picard_tol, cfg.picard_max_iter, cfg.contraction_safety)
    return Setup(cfg, domain, build_spatial(cfg, domain), vgrid, sphere, kernel, op, step)


def _validate_contraction(cfg):
    vgrid = VelocityGrid(cfg.v_max, cfg.nodes_per_axis)
    sphere = sphere_from_spec(cfg.sphere)
    try:
        kernel = build_kernel(cfg, vgrid, sphere)
        B = kernel_l1_norm(kernel, vgrid, sphere)
    except (OSError, ValueError) as exc:
        raise _invalid(str(exc), "kernel")
    except FermikinError as exc:
        raise _invalid(str(exc), "kernel")
    if cfg.theta * 4 * B > cfg.contraction_safety:
        raise _invalid(
            f"contraction bound violated: theta * 4B = {cfg.theta * 4 * B:.4g} > "
            f"contraction_safety = {cfg.contraction_safety} (B = {B:.6g}); reduce theta",
            "theta",
        )
    return B


def parse_text(text, source="<string>", check_contraction=True):
    cfg = _convert(_read_text(text, source))
    _validate_static(cfg)
    if check_contraction:
        cfg = cfg.with_overrides(B=_validate_contraction(cfg))
    return cfg


def parse_config(path, check_contraction=True):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigParseError(f"cannot read config {path}: {exc}")
    return parse_text(text, str(path), check_contraction)


def serialize(cfg):
    """Config text that parses back to ``cfg``."""
    def fmt(value):
        if value is None:
            return ""
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, float):
            return repr(value)
        if isinstance(value, tuple):
            return ", ".join(repr(float(c)) for c in value)
        return str(value)

    out = {}
    for name, (section, key) in _FIELD_KEYS.items():
        out.setdefault(section, []).append(f"{key} = {fmt(getattr(cfg, name))}")
    return "\n".join(f"[{s}]\n" + "\n".join(lines) + "\n" for s, lines in out.items())


# --------------------------------------------------------------------------
# initial data


def _modulation_profile(spatial, cfg):
    if cfg.modulation == 0 or spatial.kind == "homogeneous":
        return np.ones(spatial.n_cells)
    if spatial.kind == "line1d":
        ax = "xyz".index(cfg.axis)
        s = (spatial.centers[:, ax] - cfg.low) / (cfg.high - cfg.low)
    else:
        r = np.linalg.norm(spatial.centers - np.asarray(cfg.center), axis=1)
        s = r / cfg.radius
    return 1.0 + cfg.modulation * np.cos(np.pi * s)


def build_initial(spec, spatial, vgrid, cfg=None, rng=None):
    """Initial field ``(n_cells, n_velocity)`` with values in ``[0, 1]``.

    ``spec`` is the text of ``initial.data``: ``constant(c)``,
    ``fermi_dirac(a, b)`` for ``1 / (1 + exp(a + b |v|^2))``,
    ``double_bump(amplitude, shift, width)`` for two Gaussian bumps at
    ``+-shift e_1``, ``random(low, high)`` for uniform noise, or ``file(path)``.
    """
    name, args = parse_call(spec)
    vals = [float(a) for a in args] if name != "file" else []
    v = vgrid.nodes
    if name == "file":
        from .snapshot import read_snapshot

        snap = read_snapshot(args[0])
        if snap.field.shape != (spatial.n_cells, vgrid.size):
            raise FileShapeError(
                f"snapshot field has shape {snap.field.shape}, grids need {(spatial.n_cells, vgrid.size)}"
            )
        f = snap.field
        if f.min() < 0 or f.max() > 1:
            raise ConfigValidationError("initial file has values outside [0, 1]", "initial.data")
        return f.copy()
    if name == "random":
        lo, hi = (vals + [0.0, 1.0][len(vals):])[:2]
        if not 0 <= lo <= hi <= 1:
            raise ConfigValidationError("random(low, high) needs 0 <= low <= high <= 1", "initial.data")
        rng = rng if rng is not None else np.random.default_rng(cfg.seed if cfg else 0)
        return rng.uniform(lo, hi, size=(spatial.n_cells, vgrid.size))
    if name == "constant":
        c = vals[0] if vals else 0.5
        if not 0 <= c <= 1:
            raise ConfigValidationError(f"constant({c}) is outside [0, 1]", "initial.data")
        slice_ = np.full(vgrid.size, c)
    elif name == "fermi_dirac":
        a, b = (vals + [0.0, 1.0][len(vals):])[:2]
        if not b > 0:
            raise ConfigValidationError("fermi_dirac needs b > 0", "initial.data")
        from scipy.special import expit

        slice_ = expit(-(a + b * vgrid.speed2))
    elif name == "double_bump":
        amp, shift, width = (vals + [0.9, 1.5, 0.8][len(vals):])[:3]
        if not (0 <= amp <= 1 and width > 0):
            raise ConfigValidationError("double_bump needs 0 <= amplitude <= 1 and width > 0", "initial.data")
        e = np.array([shift, 0.0, 0.0])
        bump = np.exp(-((v - e) ** 2).sum(1) / (2 * width**2)) + np.exp(-((v + e) ** 2).sum(1) / (2 * width**2))
        slice_ = np.clip(amp * bump, 0.0, 1.0)
    else:
        raise ConfigValidationError(f"unknown initial data {name!r}", "initial.data")
    prof = _modulation_profile(spatial, cfg) if cfg is not None else np.ones(spatial.n_cells)
    f = prof[:, None] * slice_[None, :]
    if f.min() < 0 or f.max() > 1:
        raise ConfigValidationError(
            f"initial data leaves [0, 1] (max {f.max():.6g}); lower the amplitude or the modulation",
            "initial.data",
        )
    return f
