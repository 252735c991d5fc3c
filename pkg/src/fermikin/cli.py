"""Command line entry point: ``fermikin run|trace|verify|norm``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checks
from .collision import kernel_l1_norm
from .config import build_domain, build_initial, build_kernel, build_setup, parse_config, serialize
from .diagnostics import CutoffFunction, MomentRecorder, cell_moments
from .errors import FermikinError
from .snapshot import write_snapshot
from .solver import Solver, SolverState
from .transport import PhaseState, trace_rows
from .velocity import VelocityGrid, sphere_from_spec

log = logging.getLogger("fermikin")

EXIT_CODES = {"config": 3, "io": 4}


def _apply_thread_cap():
    cap = os.environ.get("FERMIKIN_THREADS")
    if not cap:
        return
    import numba

    try:
        numba.set_num_threads(max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS)))
    except ValueError:
        log.warning("ignoring FERMIKIN_THREADS=%r", cap)


def _load(args):
    cfg = parse_config(args.config)
    over = {}
    if getattr(args, "steps", None) is not None:
        over["n_steps"] = args.steps
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "output", None):
        over["output_dir"] = args.output
    return cfg.with_overrides(**over) if over else cfg


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def cmd_run(args):
    cfg = _load(args)
    setup = build_setup(cfg)
    out = Path(cfg.output_dir)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    f0 = build_initial(cfg.initial, setup.spatial, setup.vgrid, cfg, rng)
    state = SolverState(0.0, f0)
    solver = Solver(setup.spatial, setup.vgrid, setup.collision, setup.step)

    recorder = MomentRecorder(setup.spatial, setup.vgrid, setup.collision, initial=state)
    steps = []
    cutoff = CutoffFunction(cfg.cutoff_radius) if cfg.cutoff_radius else None
    weak_rows = []

    def snap(st):
        if cfg.snapshot_stride and st.step_count % cfg.snapshot_stride == 0:
            write_snapshot(
                out / "snapshots" / f"step_{st.step_count:06d}.bin",
                st.field, cfg.v_max, cfg.nodes_per_axis, st.time, st.step_count,
            )

    def weak(st):
        if cutoff is not None:
            m = cell_moments(st.field, setup.vgrid, cutoff)
            vol = setup.spatial.volumes
            weak_rows.append((st.time, float(vol @ m.mass), *(vol @ m.momentum), float(vol @ m.energy)))

    def sink(st, report):
        steps.append((report.step, report.iterations, report.last_ratio, report.clamp_defect))
        snap(st)
        weak(st)

    snap(state)
    weak(state)
    solver.run(state, cfg.n_steps, sinks=[recorder, sink])

    _write_csv(out / "moments.csv", MomentRecorder.columns, recorder.rows)
    _write_csv(out / "steps.csv", ("step", "iterations", "last_ratio", "clamp_defect"), steps)
    if cutoff is not None:
        _write_csv(out / "cutoff_moments.csv", ("t", "mass", "px", "py", "pz", "energy"), weak_rows)
    (out / "run.cfg").write_text(serialize(cfg))
    mass0 = recorder.rows[0][1]
    edge = _edge_mass_fraction(f0, setup.vgrid)
    (out / "metadata.txt").write_text(
        f"B {solver.B!r}\n"
        f"theta_4B {cfg.theta * 4 * solver.B!r}\n"
        f"v_max {cfg.v_max!r}\n"
        f"initial_mass {mass0!r}\n"
        f"initial_mass_fraction_on_outer_layer {edge!r}\n"
    )
    print(f"wrote {out}/moments.csv, steps.csv and snapshots/ ({len(steps)} steps)")
    return 0


def _edge_mass_fraction(f, vgrid):
    """Share of the mass on the outermost node layer, a truncation indicator."""
    n = vgrid.n
    idx = np.indices(vgrid.shape).reshape(3, -1)
    edge = np.any((idx == 0) | (idx == n - 1), axis=0)
    total = float(np.sum(f))
    return float(np.sum(f[..., edge]) / total) if total > 0 else 0.0


def cmd_trace(args):
    cfg = parse_config(args.config, check_contraction=False)
    s = PhaseState(np.array(args.x, dtype=float), np.array(args.v, dtype=float))
    rows = trace_rows(build_domain(cfg), s, args.t, args.samples)
    header = ("t", "x1", "x2", "x3", "v1", "v2", "v3", "reflection_count")
    if args.output:
        _write_csv(args.output, header, rows)
    else:
        w = csv.writer(sys.stdout)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    return 0


def cmd_verify(args):
    cfg = _load(args)
    results = checks.run_checks(cfg)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<{width}}  {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


def cmd_norm(args):
    cfg = parse_config(args.config, check_contraction=False)
    vgrid = VelocityGrid(cfg.v_max, cfg.nodes_per_axis)
    sphere = sphere_from_spec(cfg.sphere)
    kernel = build_kernel(cfg, vgrid, sphere)
    print(repr(kernel_l1_norm(kernel, vgrid, sphere)))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="fermikin", description="Boltzmann-Fermi-Dirac kinetic solver")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a simulation and write diagnostics")
    r.add_argument("--config", required=True)
    r.add_argument("--output")
    r.add_argument("--steps", type=int)
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("trace", help="dump one trajectory as CSV")
    t.add_argument("--config", required=True)
    t.add_argument("--x", type=float, nargs=3, required=True)
    t.add_argument("--v", type=float, nargs=3, required=True)
    t.add_argument("--t", type=float, default=1.0)
    t.add_argument("--samples", type=int, default=101)
    t.add_argument("--output")
    t.set_defaults(func=cmd_trace)

    v = sub.add_parser("verify", help="run the invariant checks on a config")
    v.add_argument("--config", required=True)
    v.add_argument("--steps", type=int)
    v.add_argument("--seed", type=int)
    v.set_defaults(func=cmd_verify)

    n = sub.add_parser("norm", help="print the kernel norm B")
    n.add_argument("--config", required=True)
    n.set_defaults(func=cmd_norm)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors: argparse has printed the message
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    _apply_thread_cap()
    try:
        return args.func(args)
    except FermikinError as exc:
        print(f"fermikin: {exc.category} error: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)


if __name__ == "__main__":
    sys.exit(main())
