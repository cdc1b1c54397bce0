"""Seeded solver-versus-oracle comparisons on desk-scale instances."""
from __future__ import annotations

import numpy as np

from .energy import BoundaryClass, Cube, EnergyParams, LatticeField, energy_F_g, pure_jump
from .geometry import voronoi_neighbors_2d
from .lattice import Window, generate_random_parking
from .oracles import exact_membrane_min, ising_enumeration_min
from .potential import PotentialSpec
from .solver import SolveConfig, brute_force_min, min_cut_binary, minimize_weak_membrane

VARIANTS = ("capped_sum", "pairwise_sum")


def membrane_instance(seed: int):
    """Random parking in a 2.2 x 2.2 box (at most 8 points), Voronoi edges, random data in [0, 1]."""
    rng = np.random.default_rng(seed)
    lat = generate_random_parking(Window.cube(2, 2.2), 1.0, seed)
    edges = voronoi_neighbors_2d(lat)
    pot = PotentialSpec(VARIANTS[seed % 2], 1.0, float(rng.uniform(0.05, 0.5)))
    params = EnergyParams(1.0, potential=pot, fidelity_weight=1.0)
    g = LatticeField(lat, 1.0, rng.random(lat.n))
    return lat, edges, params, g


def check_membrane(seed: int, restarts: int = 10, grid_levels: int = 5) -> dict:
    lat, edges, params, g = membrane_instance(seed)
    if lat.n > 8:
        raise RuntimeError("instance has more than 8 sites")
    cfg = SolveConfig(restarts=restarts, gnc_schedule=(8, 4, 2, 1), seed=seed)
    res = minimize_weak_membrane(edges, params, g, cfg)
    pot = params.potential
    _, exact = exact_membrane_min(edges.src.tolist(), edges.dst.tolist(), g.values[:, 0], 1.0, 2,
                                  pot.alpha, pot.cap, pot.variant, params.fidelity_weight)
    levels = np.linspace(0.0, 1.0, grid_levels)
    _, grid_min = brute_force_min(edges, params, g, levels)
    snapped = levels[np.abs(res.u.values[..., None] - levels).argmin(axis=-1)]
    projected = energy_F_g(res.u.with_values(snapped), edges, params, g)
    trace = [e for _, e in res.energy_trace]
    return {"seed": seed, "n": lat.n, "variant": pot.variant, "solver": res.energy, "exact": exact,
            "grid": grid_min, "projected": projected, "equal": abs(res.energy - exact) <= 1e-9,
            "below_exact": res.energy < exact - 1e-9, "below_grid": res.energy < grid_min,
            "projected_below_grid": projected < grid_min - 1e-12,
            "monotone": all(a >= b for a, b in zip(trace, trace[1:]))}


def ising_instance(seed: int):
    """Random parking in a 4.3 x 4.3 box, a rotated cube of side 4.1 and a thin collar."""
    rng = np.random.default_rng(10_000 + seed)
    lat = generate_random_parking(Window.cube(2, 4.3), 1.0, 10_000 + seed)
    edges = voronoi_neighbors_2d(lat)
    ang = rng.uniform(0, 2 * np.pi)
    nu = np.array([np.cos(ang), np.sin(ang)])
    center = np.array([2.15, 2.15])
    region = Cube(center, 4.1, nu)
    bc = BoundaryClass(pure_jump([-1.0], [1.0], center + rng.normal(0, 0.3, 2), nu), 0.35)
    pot = PotentialSpec(VARIANTS[seed % 2], 1.0, float(rng.uniform(0.5, 2.0)))
    return lat, edges, EnergyParams(1.0, potential=pot, region=region), bc, region


def check_mincut(seed: int, max_sites: int = 20) -> dict:
    lat, edges, params, bc, region = ising_instance(seed)
    if lat.n > max_sites:
        raise RuntimeError("instance has too many sites")
    u0 = LatticeField(lat, 1.0, np.zeros(lat.n))
    res = min_cut_binary(edges, params, bc, region, u0)
    # oracle side: region, collar and data recomputed from the raw geometry
    rel = (lat.points - region.center) @ region.frame
    inside = np.all(np.abs(rel) < region.half, axis=1)
    s = np.abs(rel) - region.half
    dist = np.where(np.all(s <= 0, axis=1), -s.max(axis=1), np.linalg.norm(np.maximum(s, 0), axis=1))
    labels = (bc.ubar(lat.points)[:, 0] > 0).astype(int)
    fixed = {i: int(labels[i]) for i in range(lat.n) if not inside[i] or dist[i] <= bc.delta}
    keep = inside[edges.src] & inside[edges.dst]
    _, value = ising_enumeration_min(lat.n, edges.src[keep], edges.dst[keep], fixed,
                                     params.potential.variant, params.potential.cap)
    return {"seed": seed, "n": lat.n, "n_free": lat.n - len(fixed), "variant": params.potential.variant,
            "mincut": res.value, "enumeration": value, "equal": res.value == value, "exact": res.exact}


def oracle_check(instances: int = 50, seed: int = 0) -> dict:
    mem = [check_membrane(seed + k) for k in range(instances)]
    cut = [check_mincut(seed + k) for k in range(instances)]
    n_eq = int(sum(m["equal"] for m in mem))
    summary = {
        "instances": instances,
        "membrane_equal_exact": n_eq,
        "membrane_below_exact": int(sum(m["below_exact"] for m in mem)),
        "membrane_below_grid": int(sum(m["below_grid"] for m in mem)),
        "membrane_projected_below_grid": int(sum(m["projected_below_grid"] for m in mem)),
        "membrane_monotone": all(m["monotone"] for m in mem),
        "mincut_equal": int(sum(c["equal"] for c in cut)),
        "mincut_free_sites": [min(c["n_free"] for c in cut), max(c["n_free"] for c in cut)],
    }
    summary["passed"] = (summary["membrane_below_exact"] == 0 and summary["membrane_projected_below_grid"] == 0
                         and n_eq >= int(np.ceil(0.9 * instances))
                         and summary["mincut_equal"] == instances and summary["membrane_monotone"])
    summary["membrane"] = mem
    summary["mincut"] = cut
    return summary
