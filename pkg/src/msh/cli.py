"""Command-line interface: ``msh <verb> [options]``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np


def _floats(text: str) -> list:
    return [float(t) for t in text.replace(" ", "").split(",") if t]


def _matrix(text: str) -> np.ndarray:
    return np.array([_floats(row) for row in text.split(";")], dtype=float)


def _angles(text: str) -> list:
    """``"0:15:180"`` (start:step:stop, stop excluded) or a comma list."""
    if ":" in text:
        a, s, b = (float(t) for t in text.split(":"))
        return list(np.arange(a, b - 1e-9, s))
    return _floats(text)


def _emit(obj, path=None):
    text = json.dumps(obj, indent=2, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o))
    if path:
        Path(path).write_text(text + "\n")
    print(text)


def _potential(args):
    from .potential import PotentialSpec

    return PotentialSpec(args.variant, args.alpha, args.cap)


def _add_potential(p, variant="capped_sum"):
    p.add_argument("--variant", default=variant, choices=["pairwise_sum", "capped_sum"])
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--cap", type=float, default=1.0)


def _out(args, name):
    if name is None:
        return None
    p = Path(name)
    return p if p.is_absolute() else Path(args.out_dir) / p


# --- verbs --------------------------------------------------------------------------------------

def cmd_gen(args):
    from .lattice import check_admissibility, packing_fraction, write_points
    from .pipeline import build_lattice

    lat = build_lattice(args.generator, args.d, args.side, args.topology, args.seed, args.diameter,
                        args.spacing, args.jitter, args.walls)
    write_points(_out(args, args.out), lat)
    rep = check_admissibility(lat).to_dict()
    rep.update({"n": lat.n, "r": lat.r, "R": lat.R})
    if args.generator == "rsa":
        rep["packing_fraction"] = packing_fraction(lat)
    _emit(rep)


def cmd_graph(args):
    from .geometry import write_edges
    from .lattice import read_points
    from .pipeline import build_edges

    lat = read_points(args.points)
    edges = build_edges(lat, args.kind, args.k)
    edges.validate(lat)
    write_edges(_out(args, args.out), edges)
    _emit({"n_points": lat.n, "n_edges": len(edges), "M": edges.M, "contains_voronoi": edges.contains_voronoi})


def cmd_segment(args):
    from .energy import EnergyParams, energy_report, write_field
    from .fidelity import ImageData, discretize_fidelity, rasterize
    from .geometry import read_edges
    from .imageio import read_image, write_pgm
    from .lattice import read_points
    from .pipeline import write_csv
    from .solver import SolveConfig, minimize_weak_membrane

    lat = read_points(args.points)
    edges = read_edges(args.edges)
    img = ImageData(read_image(args.image))
    g = discretize_fidelity(img, lat, args.eps)
    params = EnergyParams(args.eps, 2.0, 2.0, _potential(args), args.weight)
    cfg = SolveConfig(max_sweeps=args.max_sweeps, tol=args.tol, restarts=args.restarts,
                      gnc_schedule=_floats(args.gnc), seed=args.seed)
    res = minimize_weak_membrane(edges, params, g, cfg)
    write_field(_out(args, args.out), res.u)
    if args.trace:
        write_csv(_out(args, args.trace), ["sweep", "energy"], [(int(s), float(e)) for s, e in res.energy_trace])
    if args.pgm:
        write_pgm(_out(args, args.pgm), rasterize(res.u, None, img.width, img.height).samples)
    rep = energy_report(res.u, edges, params, g)
    rep.update({"converged": res.converged, "sweeps": len(res.energy_trace) - 1})
    _emit(rep, _out(args, args.energy))


def _cell_inputs(args, nus=None):
    from .homogenize import cell_lattice

    return cell_lattice(args.generator, args.d, args.T, nus, seed=args.seed)


def cmd_cell_bulk(args):
    from .homogenize import CellProblemSpec, bulk_cell_problem

    xi = _matrix(args.xi)
    lat, edges, _ = _cell_inputs(args)
    r = bulk_cell_problem(CellProblemSpec("bulk", args.T, xi=xi, potential=_potential(args)), lat, edges)
    out = {k: v for k, v in r.to_dict().items() if k != "field"}
    _emit(out, _out(args, args.out))


def cmd_cell_surface(args):
    from .homogenize import CellProblemSpec, surface_cell_problem

    nu = np.array(_floats(args.nu))
    nu = nu / np.linalg.norm(nu)
    lat, edges, _ = _cell_inputs(args, [nu])
    r = surface_cell_problem(CellProblemSpec("surface", args.T, nu=nu, potential=_potential(args)), lat, edges)
    out = {k: v for k, v in r.to_dict().items() if k != "field"}
    out["nu"] = nu.tolist()
    _emit(out, _out(args, args.out))


def cmd_aniso(args):
    from .homogenize import CellProblemSpec, anisotropy_scan, phi0, unit_from_angle
    from .pipeline import write_csv

    angles = _angles(args.angles)
    nus = [unit_from_angle(a) for a in angles]
    lat, edges, _ = _cell_inputs(args, nus)
    pot = _potential(args)
    scan = anisotropy_scan(nus, lat, edges, CellProblemSpec("surface", args.T, nu=nus[0], potential=pot))
    rows = [(float(a), float(n[0]), float(n[1]), float(s), float(phi0(n) * pot.cap))
            for a, n, s in zip(angles, nus, scan.sigma)]
    write_csv(_out(args, args.out), ["angle_deg", "nu1", "nu2", "sigma", "phi0_reference"], rows)
    _emit({"spread": scan.spread, "exact": scan.exact, "n_directions": len(nus)})


def cmd_coeffs(args):
    from .homogenize import estimate_coefficients

    out = estimate_coefficients(args.generator, args.d, _potential(args), _floats(args.T), args.realizations,
                                args.dirs, args.weight, args.seed, args.gamma_side)
    _emit(out, _out(args, args.out))


def cmd_gamma(args):
    from .energy import gamma_field
    from .lattice import read_points
    from .pipeline import build_lattice
    from .tessellation import compute_tessellation

    if args.points:
        lat = read_points(args.points)
    else:
        lat = build_lattice(args.generator, args.d, args.side, "torus", args.seed)
    est = gamma_field(lat, compute_tessellation(lat, seed=args.seed), n_windows=args.windows, seed=args.seed)
    _emit(est.to_dict(), _out(args, args.out))


def cmd_oracle_check(args):
    from .checks import oracle_check

    out = oracle_check(args.instances, args.seed)
    _emit(out, _out(args, args.out))
    return 0 if out["passed"] else 1


def cmd_run(args):
    from .pipeline import run_experiment

    cfg_path = Path(args.config)
    config = json.loads(cfg_path.read_text())
    if args.seed_given:
        config["seed"] = args.seed
    manifest = run_experiment(config, args.out_dir, base_dir=cfg_path.parent)
    _emit({"completed": manifest["completed"], "results": manifest["results"]})


# --- parser -----------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def global_flags(parser, top):
        # flags may come before or after the verb; only the top level sets defaults
        dflt = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
        parser.add_argument("--seed", type=int, default=dflt(None), help="random seed (default 0)")
        parser.add_argument("--threads", type=int, default=dflt(1), help="worker threads for numeric libraries")
        parser.add_argument("--out-dir", default=dflt("."), help="directory for relative output paths")

    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, top=False)
    ap = argparse.ArgumentParser(prog="msh", description="Discrete free-discontinuity energies on stochastic lattices.")
    global_flags(ap, top=True)
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a lattice")
    p.add_argument("--generator", default="rsa", choices=["rsa", "cubic", "jitter"])
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--side", type=float, default=10.0)
    p.add_argument("--topology", default="box", choices=["box", "torus"])
    p.add_argument("--diameter", type=float, default=1.0)
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--walls", default="centers", choices=["centers", "inside"])
    p.add_argument("--out", default="points.csv")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("graph", parents=[common], help="build an edge set")
    p.add_argument("--points", required=True)
    p.add_argument("--kind", default="voronoi", choices=["voronoi", "knn", "forward"])
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", default="edges.csv")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("segment", parents=[common], help="minimize the fidelity energy for an image")
    p.add_argument("--points", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--eps", type=float, required=True)
    _add_potential(p)
    p.add_argument("--weight", type=float, default=1.0)
    p.add_argument("--gnc", default="8,4,2,1")
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--max-sweeps", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out", default="u.csv")
    p.add_argument("--trace", default="trace.csv")
    p.add_argument("--pgm", default=None, help="also write the rasterized field")
    p.add_argument("--energy", default=None, help="write the energy report JSON")
    p.set_defaults(func=cmd_segment)

    for name, func, helptext in (("cell-bulk", cmd_cell_bulk, "bulk cell problem"),
                                 ("cell-surface", cmd_cell_surface, "surface cell problem"),
                                 ("aniso", cmd_aniso, "surface density over directions"),
                                 ("coeffs", cmd_coeffs, "effective coefficients")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--generator", default="cubic", choices=["cubic", "rsa"])
        p.add_argument("--d", type=int, default=2)
        _add_potential(p)
        if name == "coeffs":
            p.add_argument("--T", default="16,24,32", help="comma-separated cell sizes")
            p.add_argument("--realizations", type=int, default=1)
            p.add_argument("--dirs", type=int, default=4)
            p.add_argument("--weight", type=float, default=1.0)
            p.add_argument("--gamma-side", type=float, default=40.0)
            p.add_argument("--out", default="coeffs.json")
        else:
            p.add_argument("--T", type=float, default=32)
        if name == "cell-bulk":
            p.add_argument("--xi", required=True, help='rows separated by ";", e.g. "1,0;0,0"')
            p.add_argument("--out", default=None)
        if name == "cell-surface":
            p.add_argument("--nu", required=True, help="comma-separated normal")
            p.add_argument("--out", default=None)
        if name == "aniso":
            p.add_argument("--angles", default="0:15:180", help="start:step:stop in degrees or a list")
            p.add_argument("--out", default="scan.csv")
        p.set_defaults(func=func)

    p = sub.add_parser("gamma", parents=[common], help="cell-volume density estimate")
    p.add_argument("--points", default=None)
    p.add_argument("--generator", default="rsa", choices=["rsa", "cubic"])
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--side", type=float, default=40.0)
    p.add_argument("--windows", type=int, default=3)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gamma)

    p = sub.add_parser("oracle-check", parents=[common], help="compare solvers with exhaustive oracles")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("run", parents=[common], help="run a JSON experiment config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(args.threads))
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    try:
        rc = args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"msh {args.verb}: error: {exc}", file=sys.stderr)
        return 2
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
