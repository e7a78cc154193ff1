"""Command-line entry point: ``ddmres run|mesh|basis``.

Exit codes: 0 success, 2 invalid input, 3 solver failure.
"""
import argparse
import sys

import numpy as np

from ..errors import DDMResError, SolverError, ValidationError
from ..mesh import flow_aligned_strip_mesh, read_mesh, red_refine_2d, uniform_mesh_1d, write_mesh
from ..optimal_test import build_p1conf_basis, dump_basis_csv, optimal_basis_1d
from .harness import EXPERIMENTS, ExperimentSpec, run_experiment
from .output import render, write_results

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

BETA_PRESETS = {
    "constant": (lambda x: np.ones_like(x), lambda x: np.zeros_like(x)),
    "inflow-outflow": (lambda x: 1.001 - x, lambda x: -np.ones_like(x)),
    "two-sided": (lambda x: 0.4 - x, lambda x: -np.ones_like(x)),
}


def _parser():
    ap = argparse.ArgumentParser(prog="ddmres", description="DDMRes experiments and utilities")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one of the convergence or Gibbs studies")
    run.add_argument("experiment", choices=EXPERIMENTS)
    run.add_argument("--p", type=float, nargs="+")
    run.add_argument("--n", type=int, nargs="+", help="number of elements (1-D meshes)")
    run.add_argument("--k", type=int, nargs="+", help="test degrees (gibbs_ddmres)")
    run.add_argument("--level", "--ell", dest="ell", type=int, nargs="+",
                     help="test refinement levels l")
    run.add_argument("--levels", type=int, help="number of 2-D meshes (initial plus refinements)")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="directory for CSV, rates and gnuplot files")
    run.add_argument("--config", help="TOML file with an [experiment] table")

    mesh = sub.add_parser("mesh", help="write or validate flow-aligned mesh files")
    msub = mesh.add_subparsers(dest="mesh_command", required=True)
    dump = msub.add_parser("dump", help="write the strip mesh")
    dump.add_argument("path")
    dump.add_argument("--ncols", type=int, default=4)
    dump.add_argument("--nrows", type=int, default=4)
    dump.add_argument("--seed", type=int, default=0)
    dump.add_argument("--refine", type=int, default=0)
    check = msub.add_parser("check", help="validate a mesh file")
    check.add_argument("path")

    basis = sub.add_parser("basis", help="dump optimal test functions")
    bsub = basis.add_subparsers(dest="basis_command", required=True)
    bd = bsub.add_parser("dump", help="write basis pieces as CSV")
    bd.add_argument("path")
    bd.add_argument("--mesh", help="2-D mesh file; without it a 1-D basis is written")
    bd.add_argument("--n", type=int, default=5)
    bd.add_argument("--beta", choices=sorted(BETA_PRESETS), default="inflow-outflow")
    bd.add_argument("--primal", action="store_true", help="1-D: v_j instead of the nodal basis")
    return ap


def _load_config(path):
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return data.get("experiment", data)


def _cmd_run(args):
    settings = _load_config(args.config) if args.config else {}
    settings = dict(settings)
    settings.setdefault("name", args.experiment)
    if settings["name"] != args.experiment:
        raise ValidationError(f"config is for {settings['name']!r}, not {args.experiment!r}")
    for key in ("p", "n", "k", "ell", "levels", "seed"):
        value = getattr(args, key)
        if value is not None:
            settings[key] = value
    spec = ExperimentSpec.from_mapping(settings)
    tables = run_experiment(spec)
    for t in tables:
        print(render(t))
    if args.out:
        for path in write_results(spec.name, tables, args.out):
            print(f"wrote {path}")
    return 0


def _cmd_mesh(args):
    if args.mesh_command == "dump":
        m = flow_aligned_strip_mesh(args.ncols, args.nrows, seed=args.seed)
        for _ in range(args.refine):
            m = red_refine_2d(m)
        write_mesh(m, args.path)
        print(f"wrote {args.path}: {m.vertices.shape[0]} vertices, {m.n_elements} triangles")
        return 0
    m = read_mesh(args.path)
    problems = m.check(flow_aligned=True)
    if problems:
        for p in problems:
            print(f"{args.path}: {p}", file=sys.stderr)
        return 2
    print(f"{args.path}: flow-aligned, {m.n_elements} triangles")
    return 0


def _cmd_basis(args):
    if args.mesh:
        space = build_p1conf_basis(read_mesh(args.mesh))
    else:
        beta, dbeta = BETA_PRESETS[args.beta]
        space = optimal_basis_1d(uniform_mesh_1d(0.0, 1.0, args.n), beta, dbeta,
                                 "primal" if args.primal else "nodal")
    dump_basis_csv(space, args.path)
    print(f"wrote {args.path}: {space.ndof} basis functions")
    return 0


def main(argv=None):
    args = _parser().parse_args(argv)
    handlers = {"run": _cmd_run, "mesh": _cmd_mesh, "basis": _cmd_basis}
    try:
        return handlers[args.command](args)
    except SolverError as exc:
        print(f"ddmres: solver failure: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, OSError, tomllib.TOMLDecodeError) as exc:
        print(f"ddmres: {exc}", file=sys.stderr)
        return 2
    except DDMResError as exc:
        print(f"ddmres: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
