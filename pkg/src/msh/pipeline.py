"""Config-driven experiments: build, solve, write artifacts and a manifest."""
from __future__ import annotations

import hashlib
import json
import platform
import time
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .energy import EnergyParams, LatticeField, energy_F_g, energy_report, gamma_field, read_field, write_field
from .fidelity import ImageData, discretize_fidelity, rasterize
from .geometry import EdgeSet, forward_difference_edges, knn_edges, knn_k_bound, voronoi_neighbors_2d, write_edges
from .homogenize import (CellProblemSpec, anisotropy_scan, bulk_cell_problem, cell_lattice,
                         estimate_coefficients, phi0, surface_cell_problem, unit_from_angle)
from .imageio import read_image, write_pgm
from .lattice import (StochasticLattice, Window, check_admissibility, generate_cubic,
                      generate_random_parking, write_points)
from .potential import PotentialSpec
from .solver import SolveConfig, minimize_weak_membrane
from .tessellation import compute_tessellation


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage
        self.message = message


def load_schema() -> dict:
    return json.loads(resources.files("msh").joinpath("data/config.schema.json").read_text())


def load_pilot_bands() -> dict:
    return json.loads(resources.files("msh").joinpath("data/pilot_bands.json").read_text())


def validate_config(config: dict) -> dict:
    import jsonschema

    jsonschema.validate(config, load_schema())
    return config


def fmt(x: float) -> str:
    return f"{x:.17g}"


def write_csv(path, header: list, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row) + "\n")


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- builders shared with the CLI --------------------------------------------------------------

def build_lattice(generator: str, d: int, side, topology: str = "box", seed: int = 0,
                  diameter: float = 1.0, spacing: float = 1.0, jitter: float = 0.0,
                  walls: str = "centers") -> StochasticLattice:
    side = np.broadcast_to(np.asarray(side, dtype=float), (d,))
    win = Window(np.zeros(d), side.copy(), topology)
    if generator == "rsa":
        return generate_random_parking(win, diameter, seed, walls=walls)
    if generator in ("cubic", "jitter"):
        return generate_cubic(win, spacing, jitter if generator == "jitter" else 0.0, seed)
    raise ValueError(f"unknown generator {generator!r}")


def build_edges(lattice: StochasticLattice, kind: str, k: Optional[int] = None) -> EdgeSet:
    if kind == "voronoi":
        return voronoi_neighbors_2d(lattice)
    if kind == "forward":
        return forward_difference_edges(lattice)
    if kind == "knn":
        if k is None:
            k = knn_k_bound(lattice.r, lattice.R_pair, lattice.d)
        return knn_edges(lattice, k)
    raise ValueError(f"unknown edge kind {kind!r}")


def synthetic_image(spec: dict, seed: int) -> ImageData:
    w, h = spec.get("width", 128), spec.get("height", 128)
    kind = spec.get("kind", "constant")
    if kind == "constant":
        img = ImageData.from_function(lambda x, y: np.full_like(x, spec.get("value", 0.5)), w, h)
    elif kind == "disk":
        rad = spec.get("radius", 0.3)
        cx = 0.5 * w / h
        img = ImageData.from_function(
            lambda x, y: np.where((x - cx) ** 2 + (y - 0.5) ** 2 < rad ** 2,
                                  spec.get("inside", 0.7), spec.get("outside", 0.3)), w, h)
    elif kind == "ramp":
        img = ImageData.from_function(lambda x, y: x / (w / h), w, h)
    elif kind == "sine":
        img = ImageData.from_function(lambda x, y: np.sin(np.pi * x * h / w) * np.sin(np.pi * y), w, h)
    else:
        raise ValueError(f"unknown synthetic image {kind!r}")
    noise = spec.get("noise", 0.0)
    if noise:
        rng = np.random.default_rng(seed)
        img = ImageData(np.clip(img.samples + rng.normal(0.0, noise, img.samples.shape), 0.0, 1.0))
    return img


def load_image(spec: dict, seed: int, base: Path) -> ImageData:
    if "path" in spec:
        p = Path(spec["path"])
        return ImageData(read_image(p if p.is_absolute() else base / p))
    return synthetic_image(spec, seed)


def quantize(u: LatticeField, levels: int = 2) -> LatticeField:
    """Snap every value to the nearest of ``levels`` equispaced values in [0, 1]."""
    grid = np.linspace(0.0, 1.0, levels)
    idx = np.abs(u.values[..., None] - grid).argmin(axis=-1)
    return u.with_values(grid[idx])


# --- experiment ------------------------------------------------------------------------------------

def _versions() -> dict:
    return {"msh": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


class _Run:
    def __init__(self, config: dict, out_dir: Path, base: Path):
        self.cfg = config
        self.out = out_dir
        self.base = base
        self.seed = int(config.get("seed", 0))
        self.artifacts = {}
        self.results = {}
        self.timings = {}

    def path(self, name: str) -> Path:
        p = self.out / name
        self.artifacts[name] = p
        return p

    def potential(self) -> PotentialSpec:
        return PotentialSpec.from_dict(self.cfg.get("potential", {}))

    # stages -------------------------------------------------------------------------------------
    def segment(self):
        lc = self.cfg.get("lattice", {})
        ec = self.cfg.get("energy", {})
        eps = float(ec.get("epsilon", 1.0 / 32))
        img = load_image(self.cfg.get("image", {}), self.seed, self.base)
        side = img.extent / eps
        lat = build_lattice(lc.get("generator", "rsa"), 2, side, "box", self.seed,
                            lc.get("diameter", 1.0), lc.get("spacing", 1.0), lc.get("jitter", 0.0),
                            lc.get("walls", "centers"))
        rep = check_admissibility(lat)
        edges = build_edges(lat, self.cfg.get("edges", {}).get("kind", "voronoi"),
                            self.cfg.get("edges", {}).get("k"))
        write_points(self.path("points.csv"), lat)
        write_edges(self.path("edges.csv"), edges)
        g = discretize_fidelity(img, lat, eps)
        write_field(self.path("g.csv"), g)
        params = EnergyParams(eps, ec.get("p", 2.0), ec.get("q", 2.0), self.potential(),
                              ec.get("fidelity_weight", 1.0))
        sc = dict(self.cfg.get("solver", {}))
        sc.setdefault("seed", self.seed)
        res = minimize_weak_membrane(edges, params, g, SolveConfig(**sc))
        write_field(self.path("u.csv"), res.u)
        write_csv(self.path("trace.csv"), ["sweep", "energy"], [(int(s), float(e)) for s, e in res.energy_trace])
        write_pgm(self.path("u.pgm"), rasterize(res.u, None, img.width, img.height).samples)
        write_pgm(self.path("u_2level.pgm"), rasterize(quantize(res.u), None, img.width, img.height).samples)
        report = energy_report(res.u, edges, params, g)
        self.path("energy.json").write_text(json.dumps(report, indent=2) + "\n")
        # checksum: reread the stored field and recompute the energy
        u_back = read_field(self.out / "u.csv", lat, eps)
        recomputed = energy_F_g(u_back, edges, params, g)
        self.results["segment"] = {"n_points": lat.n, "n_edges": len(edges), "admissibility": rep.to_dict(),
                                   "final_energy": res.energy, "recomputed_energy": recomputed,
                                   "energy_check": abs(recomputed - res.energy) <= 1e-9 * max(1.0, abs(res.energy)),
                                   "converged": res.converged, "sweeps": len(res.energy_trace) - 1}

    def _cell(self):
        cc = self.cfg.get("cell", {})
        return cc, cc.get("generator", "cubic"), cc.get("d", 2), float(cc.get("T", 32))

    def bulk(self):
        cc, gen, d, T = self._cell()
        xi = np.array(cc.get("xi", [[1.0] + [0.0] * (d - 1)]), dtype=float)
        lat, edges, c = cell_lattice(gen, d, T, seed=self.seed)
        r = bulk_cell_problem(CellProblemSpec("bulk", T, xi=xi, potential=self.potential()), lat, edges)
        out = {k: v for k, v in r.to_dict().items() if k != "field"}
        out["xi"] = xi.tolist()
        out["alpha_xi_sq"] = self.potential().alpha * float(np.sum(xi ** 2))
        self.results["bulk"] = out
        self.path("bulk.json").write_text(json.dumps(out, indent=2) + "\n")

    def surface(self):
        cc, gen, d, T = self._cell()
        nu = np.array(cc.get("nu", [1.0] + [0.0] * (d - 1)), dtype=float)
        nu = nu / np.linalg.norm(nu)
        lat, edges, c = cell_lattice(gen, d, T, [nu], seed=self.seed)
        r = surface_cell_problem(CellProblemSpec("surface", T, nu=nu, potential=self.potential()), lat, edges)
        out = {k: v for k, v in r.to_dict().items() if k != "field"}
        out["nu"] = nu.tolist()
        self.results["surface"] = out
        self.path("surface.json").write_text(json.dumps(out, indent=2) + "\n")

    def aniso(self):
        cc, gen, d, T = self._cell()
        angles = cc.get("angles", list(range(0, 180, 15)))
        nus = [unit_from_angle(a) for a in angles]
        lat, edges, c = cell_lattice(gen, 2, T, nus, seed=self.seed)
        scan = anisotropy_scan(nus, lat, edges, CellProblemSpec("surface", T, nu=nus[0], potential=self.potential()))
        rows = []
        for a, nu, s in zip(angles, nus, scan.sigma):
            ref = phi0(nu) * self.potential().cap if gen == "cubic" else float("nan")
            rows.append((float(a), float(nu[0]), float(nu[1]), float(s), float(ref)))
        write_csv(self.path("scan.csv"), ["angle_deg", "nu1", "nu2", "sigma", "phi0_reference"], rows)
        self.results["aniso"] = {"spread": scan.spread, "exact": scan.exact, "T": T, "generator": gen}

    def gamma(self):
        lc = self.cfg.get("lattice", {})
        d = lc.get("d", 2)
        lat = build_lattice(lc.get("generator", "rsa"), d, lc.get("side", 40.0), lc.get("topology", "torus"),
                            self.seed, lc.get("diameter", 1.0), lc.get("spacing", 1.0), lc.get("jitter", 0.0))
        n_win = self.cfg.get("gamma", {}).get("windows", 3)
        est = gamma_field(lat, compute_tessellation(lat, seed=self.seed), n_windows=n_win, seed=self.seed)
        self.results["gamma"] = est.to_dict()
        self.path("gamma.json").write_text(json.dumps(est.to_dict(), indent=2) + "\n")

    def coeffs(self):
        cc, gen, d, T = self._cell()
        ec = self.cfg.get("energy", {})
        out = estimate_coefficients(gen, d, self.potential(), cc.get("T_list", [T]), cc.get("realizations", 1),
                                    cc.get("directions", 4), ec.get("fidelity_weight", 1.0), self.seed)
        self.results["coeffs"] = {k: out[k] for k in ("c1", "c2", "c3", "warnings")}
        self.path("coeffs.json").write_text(json.dumps(out, indent=2) + "\n")


def run_experiment(config: dict, out_dir, base_dir=None) -> dict:
    """Validate ``config``, run its stages in order and write ``manifest.json``.

    A failing stage stops the run; the manifest is still written with the
    completed stages and an ``error`` entry, then :class:`StageError` is raised.
    """
    validate_config(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = _Run(config, out, Path(base_dir) if base_dir else Path.cwd())
    (out / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    run.artifacts["config.json"] = out / "config.json"
    manifest = {"name": config.get("name", ""), "seed": run.seed, "versions": _versions(),
                "stages": list(config["stages"]), "completed": []}
    error = None
    for stage in config["stages"]:
        t0 = time.perf_counter()
        try:
            getattr(run, stage)()
        except Exception as exc:  # recorded with the stage name, then re-raised
            error = StageError(stage, f"{type(exc).__name__}: {exc}")
            manifest["error"] = {"stage": stage, "message": error.message}
            break
        run.timings[stage] = round(time.perf_counter() - t0, 3)
        manifest["completed"].append(stage)
    manifest["results"] = run.results
    manifest["timings_s"] = run.timings
    manifest["artifacts"] = {k: sha256(p) for k, p in sorted(run.artifacts.items()) if p.exists()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n")
    if error is not None:
        raise error
    return manifest


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")
