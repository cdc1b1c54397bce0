"""Pilot Monte-Carlo runs that fix the empirical bands used by the acceptance suite.

Seeds are disjoint from the ones used in the tests.  Writes
``src/msh/data/pilot_bands.json``.

    python3 scripts/pilot.py [--quick]
"""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from msh.energy import gamma_field
from msh.homogenize import CellProblemSpec, anisotropy_scan, cell_lattice, unit_from_angle
from msh.lattice import Window, generate_random_parking, packing_fraction
from msh.potential import PotentialSpec
from msh.tessellation import compute_tessellation

OUT = Path(__file__).resolve().parents[1] / "src" / "msh" / "data" / "pilot_bands.json"


def packing_band(n_seeds, seed0=1000):
    fr = {}
    for walls in ("centers", "inside"):
        vals = [packing_fraction(generate_random_parking(Window.cube(2, 10.0), 1.0, seed0 + s, walls=walls))
                for s in range(n_seeds)]
        vals = np.array(vals)
        fr[walls] = {"n": n_seeds, "mean": float(vals.mean()), "std": float(vals.std(ddof=1)),
                     "min": float(vals.min()), "max": float(vals.max()),
                     "band": [float(np.quantile(vals, 0.005)), float(np.quantile(vals, 0.995))]}
    return fr


def gamma_band(n_real, side=40.0, group=10, seed0=2000, resamples=5000):
    rng = np.random.default_rng(0)
    full, nested = [], []
    for s in range(n_real):
        lat = generate_random_parking(Window.cube(2, side, "torus"), 1.0, seed0 + s)
        tess = compute_tessellation(lat)
        full.append(gamma_field(lat, tess, n_windows=1).gamma_hat)
        nested.append(gamma_field(lat, tess, sizes=[side / 4, side / 2, side]).values)
    full = np.array(full)
    spreads = np.array([np.ptp(rng.choice(full, group, replace=False)) for _ in range(resamples)])
    nested = np.array(nested)
    return {"side": side, "group": group, "n": n_real, "gamma_mean": float(full.mean()),
            "gamma_std": float(full.std(ddof=1)),
            "spread_quantiles": {q: float(np.quantile(spreads, float(q))) for q in ("0.5", "0.9", "0.99")},
            "spread_band": float(np.quantile(spreads, 0.99)),
            "nested_sides": [side / 4, side / 2, side],
            "nested_std": nested.std(axis=0, ddof=1).tolist()}


def anisotropy_band(n_real, T=40, n_dirs=8, seed0=3000):
    nus = [unit_from_angle(180.0 * k / n_dirs) for k in range(n_dirs)]
    pot = PotentialSpec("capped_sum", 1.0, 1.0)
    sig = []
    for s in range(n_real):
        lat, edges, _ = cell_lattice("rsa", 2, T, nus, seed=seed0 + s)
        sig.append(anisotropy_scan(nus, lat, edges, CellProblemSpec("surface", T, nu=nus[0], potential=pot)).sigma)
    sig = np.array(sig)
    per = np.ptp(sig, axis=1) / sig.mean(axis=1)
    mean = sig.mean(axis=0)
    return {"T": T, "n_dirs": n_dirs, "n": n_real, "sigma_mean": float(sig.mean()),
            "per_realization_spread": {"mean": float(per.mean()), "max": float(per.max())},
            "spread_of_means": float(np.ptp(mean) / mean.mean())}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true", help="small run for smoke testing")
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args(argv)
    t0 = time.time()
    n_pack, n_gamma, n_aniso = (10, 12, 3) if args.quick else (200, 60, 20)
    bands = {"packing_box10": packing_band(n_pack)}
    print(f"packing done {time.time() - t0:.1f}s", flush=True)
    bands["gamma_L40"] = gamma_band(n_gamma)
    print(f"gamma done {time.time() - t0:.1f}s", flush=True)
    bands["anisotropy_rsa_T40"] = anisotropy_band(n_aniso)
    bands["runtime_s"] = round(time.time() - t0, 1)
    args.out.write_text(json.dumps(bands, indent=2) + "\n")
    print(json.dumps(bands, indent=2))


if __name__ == "__main__":
    main()
