"""Command-line front end.

Four groups: ``mesh gen`` writes portable mesh files, ``ops build``
assembles and optionally verifies the operator archive for a mesh,
``run`` time-steps one of the canonical flows with CSV (and optional
VTK) output, and ``test`` prints operator convergence tables over a
refinement range.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import cases
from .config import RunConfig, load_config
from .errors import ConfigError, PolymimError
from .mesh.fileio import read_pmesh, write_pmesh
from .mesh.generators import mesh_for
from .operators import (assemble, load_operators, save_operators,
                        verify_identities)
from .swe import Planet

EARTH_RADIUS = Planet.radius

# canonical case ids and their common aliases
CASE_IDS = {
    "tc2": "steady-zonal", "steady-zonal": "steady-zonal",
    "tc5": "mountain", "mountain": "mountain",
    "galewsky": "perturbed-jet", "perturbed-jet": "perturbed-jet",
    "linear": "linear",
}

# identity residuals checked by ``ops build --verify`` and the bound each
# class must meet; everything unlisted uses the default
VERIFY_TOL_DEFAULT = 1e-12
VERIFY_TOL = {"rot_antisym": 1e-14}


def _positive(kind):
    def parse(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"{text} is not positive")
        return value
    return parse


def cmd_mesh_gen(args):
    mesh = mesh_for(args.family, args.level, radius=args.radius)
    write_pmesh(mesh, args.out)
    print(f"wrote {args.out}: {mesh.family} level {mesh.level}, "
          f"{mesh.ncells} cells, {mesh.nedges} edges, {mesh.nverts} vertices")
    return 0


def cmd_ops_build(args):
    mesh = read_pmesh(args.mesh)
    t0 = time.perf_counter()
    ops = assemble(mesh, degree=args.degree)
    took = time.perf_counter() - t0
    save_operators(ops, args.out)
    print(f"wrote {args.out}: {mesh.ncells} cells assembled in {took:.1f} s")
    if not args.verify:
        return 0
    failures = 0
    for name, value in sorted(verify_identities(ops).items()):
        tol = VERIFY_TOL.get(name, VERIFY_TOL_DEFAULT)
        ok = value <= tol
        failures += not ok
        print(f"  {name:<18} {value:10.3e}  (tol {tol:.0e})  "
              f"{'ok' if ok else 'FAIL'}")
    print(f"verify: {'all identities hold' if not failures else f'{failures} failure(s)'}")
    return 1 if failures else 0


def cmd_test(args):
    lo, _, hi = args.levels.partition("..")
    levels = list(range(int(lo), int(hi or lo) + 1))
    study = {"laplacian": cases.laplacian_convergence,
             "coriolis": cases.coriolis_convergence}[args.which]
    rows = study(family=args.family, levels=levels)
    print(f"{args.which} convergence, {args.family} levels {levels[0]}..{levels[-1]}")
    print(f"{'cells':>8} {'max':>12} {'L2':>12} {'order(max)':>11} {'order(L2)':>10}")
    for i, (n, linf, l2) in enumerate(rows):
        orders = ""
        if i:
            om = np.log2(rows[i - 1][1] / linf)
            o2 = np.log2(rows[i - 1][2] / l2)
            orders = f" {om:11.2f} {o2:10.2f}"
        print(f"{n:>8} {linf:12.4e} {l2:12.4e}{orders}")
    return 0


def _load_run_mesh(args, cfg):
    if args.mesh:
        mesh = read_pmesh(args.mesh)
    else:
        mesh = mesh_for(cfg.mesh_family, cfg.mesh_level, radius=EARTH_RADIUS)
    return mesh


def _run_linear(args, cfg, mesh, outdir):
    """Geostrophically balanced linear run: drift should sit at roundoff."""
    coriolis, phi0 = 1.0e-4, 1.0e5
    ops = load_operators(args.ops, mesh) if args.ops else assemble(mesh)
    case = cases.CaseSetup(name="linear", planet=Planet(), dt=3600.0,
                           state=None)
    model = cases.make_model(mesh, case, ops=ops, tight=cfg.tight,
                             helmholtz_tol=cfg.helmholtz_tol,
                             alpha=cfg.alpha, inverse_terms=cfg.inverse_terms)
    psi = 0.01 * (phi0 / coriolis) * mesh.verts[:, 2] / mesh.radius
    state = cases.balanced_stream_state(mesh, ops, coriolis, psi)
    U0, e0 = state.U.copy(), model.linear_energy(state, phi0)
    unorm = np.linalg.norm(U0)

    dt = args.dt or cfg.dt or case.dt
    nsteps = max(1, round(args.days * 86400.0 / dt))
    path = outdir / "diagnostics.csv"
    with open(path, "w") as fh:
        fh.write("step,time,balance_drift,energy_drift\n")
        for step in range(1, nsteps + 1):
            state, _ = model.linear_step(state, dt, phi0, coriolis=coriolis)
            if step % cfg.output_every == 0 or step == nsteps:
                du = np.linalg.norm(state.U - U0) / unorm
                de = abs(model.linear_energy(state, phi0) / e0 - 1.0)
                fh.write(f"{step},{state.time:.17g},{du:.3e},{de:.3e}\n")
    du = np.linalg.norm(state.U - U0) / unorm
    de = abs(model.linear_energy(state, phi0) / e0 - 1.0)
    print(f"linear: {nsteps} steps of {dt:g} s, balance drift {du:.2e}, "
          f"energy drift {de:.2e}")
    print(f"wrote {path}")
    return 0


def cmd_run(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    case_id = CASE_IDS[args.case]
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    mesh = _load_run_mesh(args, cfg)

    if case_id == "linear":
        return _run_linear(args, cfg, mesh, outdir)

    if abs(mesh.radius / EARTH_RADIUS - 1.0) > 1e-12:
        raise ConfigError(
            f"case '{args.case}' needs a planetary-radius mesh; regenerate "
            f"with --radius {EARTH_RADIUS:.5e}")
    ops = load_operators(args.ops, mesh) if args.ops else assemble(mesh)
    case = cases.build_case(case_id, mesh)
    model = cases.make_model(mesh, case, ops=ops, tight=cfg.tight,
                             helmholtz_tol=cfg.helmholtz_tol,
                             newton_iters=cfg.newton_iters,
                             jacobi_outer=cfg.jacobi_outer,
                             jacobi_inner=cfg.jacobi_inner,
                             limit=cfg.limiter, alpha=cfg.alpha,
                             inverse_terms=cfg.inverse_terms, order=cfg.order)
    dt = args.dt or cfg.dt or case.dt
    nsteps = max(1, round(args.days * 86400.0 / dt))

    state = case.state
    writer = cases.DiagnosticsWriter(outdir / "diagnostics.csv", model, state)

    def dump_vtk(step):
        if not cfg.output_vtk:
            return
        mean = model.ops.mass2_inv @ state.phi
        pv, _ = model.potential_vorticity(state)
        cases.write_field_vtk(outdir / f"state_{step:06d}.vtk", mesh,
                              cell_data={"geopotential": mean},
                              vert_data={"potential_vorticity": pv})

    dump_vtk(0)
    t0 = time.perf_counter()
    for step in range(1, nsteps + 1):
        state, diag = model.nonlinear_step(state, dt)
        writer.advance(diag)
        if step % cfg.output_every == 0 or step == nsteps:
            writer.record(step, state)
            dump_vtk(step)
    took = time.perf_counter() - t0
    writer.close()

    print(f"{case.name}: {nsteps} steps of {dt:g} s "
          f"({nsteps * dt / 86400.0:g} days) in {took:.1f} s "
          f"({nsteps / max(took, 1e-9):.2f} steps/s)")
    if case.phi_ref is not None:
        print(f"errors vs steady reference: "
              f"L2(phi) {cases.l2_cell(mesh, state.phi, case.phi_ref):.4g}  "
              f"max(phi) {cases.linf_cell(mesh, state.phi, case.phi_ref):.4g}  "
              f"L2(u) {cases.l2_edge(mesh, state.U, case.U_ref):.4g}")
    print(f"wrote {writer.path}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="polymim",
        description="Mimetic finite elements for the rotating shallow-water "
                    "equations on polygonal spherical meshes.")
    sub = p.add_subparsers(dest="group", required=True)

    mesh = sub.add_parser("mesh", help="mesh generation").add_subparsers(
        dest="action", required=True)
    gen = mesh.add_parser("gen", help="generate a mesh file")
    gen.add_argument("--family", required=True, choices=("hex", "cube"))
    gen.add_argument("--level", required=True, type=_positive(int),
                     help="refinement level, counts from 1")
    gen.add_argument("--radius", type=_positive(float), default=EARTH_RADIUS,
                     help="sphere radius in metres (default: Earth)")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_mesh_gen)

    ops = sub.add_parser("ops", help="operator assembly").add_subparsers(
        dest="action", required=True)
    build = ops.add_parser("build", help="assemble operators for a mesh")
    build.add_argument("--mesh", required=True)
    build.add_argument("--out", required=True)
    build.add_argument("--degree", type=_positive(int), default=4,
                       help="facet quadrature degree")
    build.add_argument("--verify", action="store_true",
                       help="check the discrete identities; nonzero exit "
                            "on any failure")
    build.set_defaults(func=cmd_ops_build)

    run = sub.add_parser("run", help="time-step a canonical flow")
    run.add_argument("--case", required=True, choices=sorted(CASE_IDS))
    run.add_argument("--mesh", help="pmesh file (default: generate from config)")
    run.add_argument("--ops", help="operator archive matching the mesh")
    run.add_argument("--dt", type=_positive(float),
                     help="time step in seconds (default: case-specific)")
    run.add_argument("--days", type=_positive(float), default=5.0)
    run.add_argument("--config", help="key=value run configuration file")
    run.add_argument("--out", required=True, help="output directory")
    run.set_defaults(func=cmd_run)

    test = sub.add_parser("test", help="operator convergence tables")
    test.add_argument("which", choices=("laplacian", "coriolis"))
    test.add_argument("--family", required=True, choices=("hex", "cube"))
    test.add_argument("--levels", default="1..4", metavar="A..B",
                      help="inclusive refinement range (default 1..4)")
    test.set_defaults(func=cmd_test)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PolymimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
