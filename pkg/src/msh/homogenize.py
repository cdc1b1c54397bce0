"""Bulk and surface cell problems, anisotropy scans and effective coefficients.

A cell of size ``T`` lives in lattice units: the cube ``Q_nu(c, T)`` around a
center ``c`` with ``eps = 1/T``, so that after scaling it is the unit cube
``Q_nu(c/T, 1)``.  Bulk cells fix the affine map ``xi (x - x0)`` on a collar
of width ``M eps`` and minimize ``E_eps`` exactly (one SPD solve); surface
cells fix the pure jump ``u^{-e1,e1}_{x0,nu}`` on a collar of width
``2 M eps`` and minimize ``I_eps`` over binary fields.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .energy import (BoundaryClass, Cube, EnergyParams, LatticeField, affine, collar_mask,
                     energy_E, gamma_field, orthonormal_frame, pure_jump)
from .geometry import EdgeSet, forward_difference_edges, knn_edges, voronoi_neighbors_2d
from .lattice import StochasticLattice, Window, generate_cubic, generate_random_parking
from .potential import PotentialSpec
from .solver import min_cut_binary, pcg, weighted_laplacian
from .tessellation import compute_tessellation

# generic offset keeping cell faces and jump planes away from lattice sites
CENTER_SHIFT = np.array([0.1234567, 0.2718281, 0.3141592])


@dataclass
class CellProblemSpec:
    kind: str
    T: float = 16
    xi: Optional[np.ndarray] = None
    nu: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None  # lattice units; default: the lattice's cell center
    delta: Optional[float] = None  # scaled units; default M eps (bulk) or 2 M eps (surface)
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    p: float = 2.0

    def __post_init__(self):
        if self.kind not in ("bulk", "surface"):
            raise ValueError("kind must be 'bulk' or 'surface'")
        if self.T < 8:
            raise ValueError("cell size T must be at least 8")
        if self.kind == "bulk":
            if self.xi is None:
                raise ValueError("bulk cells need xi")
            self.xi = np.atleast_2d(np.asarray(self.xi, dtype=float))
        else:
            if self.nu is None:
                raise ValueError("surface cells need nu")
            self.nu = np.asarray(self.nu, dtype=float).ravel()
            if abs(np.linalg.norm(self.nu) - 1) > 1e-12:
                raise ValueError("nu must be a unit vector")
        if self.delta is not None and self.delta < 0:
            raise ValueError("delta must be non-negative")


@dataclass
class CellProblemResult:
    value: float
    raw: float
    T: float
    delta: float
    epsilon: float
    exact: bool
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"value": self.value, "raw": self.raw, "T": self.T, "delta": self.delta,
                "epsilon": self.epsilon, "exact": self.exact, **self.meta}


def unit_from_angle(deg: float) -> np.ndarray:
    a = math.radians(deg)
    return np.array([math.cos(a), math.sin(a)])


def phi0(nu: np.ndarray) -> float:
    """Surface density of forward differences on the square lattice."""
    n1, n2 = nu
    return abs(n1) + abs(n2) if n1 * n2 < 0 else max(abs(n1), abs(n2))


# --- cell lattices ------------------------------------------------------------------------

def cell_window(d: int, T: float, nus: Optional[Sequence] = None, margin: float = 3.0,
                spacing: float = 1.0) -> Window:
    """Box around the origin holding every cube ``Q_nu(c, T)`` for ``nu`` in ``nus`` plus ``margin``."""
    half = np.full(d, 0.5 * T)
    for nu in nus or []:
        frame = orthonormal_frame(np.asarray(nu, dtype=float))
        half = np.maximum(half, 0.5 * T * np.abs(frame).sum(axis=1))
    half = spacing * np.ceil((half + margin) / spacing)
    return Window(-half, half, "box")


def cell_lattice(generator: str, d: int, T: float, nus: Optional[Sequence] = None,
                 seed: int = 0, margin: float = 3.0, **kw) -> tuple[StochasticLattice, EdgeSet, np.ndarray]:
    """Lattice, edges and cell center (lattice units) for cell problems of size ``T``.

    ``generator='cubic'`` gives the integer lattice with forward differences;
    ``'rsa'`` gives random parking (hard-core diameter 1) with Voronoi edges
    in the plane and ``k``-nearest neighbors otherwise.
    """
    win = cell_window(d, T, nus, margin)
    if generator == "cubic":
        lat = generate_cubic(win, 1.0)
        edges = forward_difference_edges(lat)
        center = CENTER_SHIFT[:d].copy()
    elif generator == "rsa":
        lat = generate_random_parking(win, 1.0, seed)
        if d == 2:
            edges = voronoi_neighbors_2d(lat)
        else:
            edges = knn_edges(lat, kw.get("k", 12))
        center = np.zeros(d)
    else:
        raise ValueError(f"unknown cell generator {generator!r}")
    return lat, edges, center


def _center(spec: CellProblemSpec, lattice: StochasticLattice) -> np.ndarray:
    if spec.center is not None:
        return np.asarray(spec.center, dtype=float)
    if lattice.is_cubic():
        return 0.5 * (lattice.window.lower + lattice.window.upper) + CENTER_SHIFT[:lattice.d]
    return 0.5 * (lattice.window.lower + lattice.window.upper)


def _check_fits(lattice: StochasticLattice, region: Cube, eps: float) -> None:
    corners = np.array(np.meshgrid(*[[-1, 1]] * lattice.d, indexing="ij")).reshape(lattice.d, -1).T
    pts = (region.center + (corners * region.half) @ region.frame.T) / eps
    y = lattice.window.to_local(pts)
    if not np.all(lattice.window.contains_local(y)):
        raise ValueError("cell does not fit inside the lattice window")


# --- cell problems -----------------------------------------------------------------------------

def bulk_cell_problem(spec: CellProblemSpec, lattice: StochasticLattice, edges: EdgeSet,
                      cg_tol: float = 1e-13) -> CellProblemResult:
    """``min E_eps(v, Q)`` over ``v = xi (x - x0)`` on the collar, divided by ``|Q| = 1``."""
    if spec.kind != "bulk":
        raise ValueError("bulk cell problem needs kind='bulk'")
    if spec.p != 2:
        raise ValueError("bulk cell problems need p = 2")
    T = float(spec.T)
    eps = 1.0 / T
    c = _center(spec, lattice)
    x0 = eps * c
    region = Cube(x0, 1.0)
    _check_fits(lattice, region, eps)
    delta = spec.delta if spec.delta is not None else edges.M * eps
    xi = spec.xi
    params = EnergyParams(eps, 2.0, 2.0, spec.potential, 1.0, region)
    u0 = LatticeField(lattice, eps, np.zeros((lattice.n, xi.shape[0])))
    bc = BoundaryClass(affine(xi, x0), delta)
    inside = region.contains(u0.sites)
    fixed = collar_mask(u0, region, delta) | ~inside
    vals = np.asarray(bc.ubar(u0.sites), dtype=float)
    act = inside[edges.src] & inside[edges.dst]
    L = weighted_laplacian(lattice.n, edges.src[act], edges.dst[act], np.ones(act.sum()))
    free = np.flatnonzero(~fixed & (L.diagonal() > 0))
    iters = 0
    if len(free):
        fx = np.flatnonzero(fixed)
        A = L[free][:, free].tocsr()
        b = -(L[free][:, fx] @ vals[fx])
        x, iters, _ = pcg(A, b, vals[free], tol=cg_tol, max_iter=20 * len(free) + 100)
        vals[free] = x
    v = u0.with_values(vals)
    raw = energy_E(v, edges, params)
    return CellProblemResult(raw, raw, T, delta, eps, True,
                             {"n_free": int(len(free)), "cg_iterations": int(iters), "field": v})


def surface_cell_problem(spec: CellProblemSpec, lattice: StochasticLattice, edges: EdgeSet,
                         icm_restarts: int = 20, seed: int = 0) -> CellProblemResult:
    """``min I_eps(v, Q_nu)`` over binary ``v = u^{-e1,e1}_{x0,nu}`` on the collar, divided by 1."""
    if spec.kind != "surface":
        raise ValueError("surface cell problem needs kind='surface'")
    T = float(spec.T)
    eps = 1.0 / T
    c = _center(spec, lattice)
    x0 = eps * c
    region = Cube(x0, 1.0, spec.nu)
    _check_fits(lattice, region, eps)
    delta = spec.delta if spec.delta is not None else 2 * edges.M * eps
    params = EnergyParams(eps, spec.p, 2.0, spec.potential, 1.0, region)
    bc = BoundaryClass(pure_jump([-1.0], [1.0], x0, spec.nu), delta)
    u0 = LatticeField(lattice, eps, np.zeros(lattice.n))
    res = min_cut_binary(edges, params, bc, region, u0, icm_restarts, seed)
    return CellProblemResult(res.value, res.value, T, delta, eps, res.exact,
                             {**res.meta, "field": res.v})


# --- scans and coefficients -----------------------------------------------------------------

@dataclass
class AnisotropyScan:
    nus: np.ndarray
    sigma: np.ndarray
    exact: bool

    @property
    def spread(self) -> float:
        return float((self.sigma.max() - self.sigma.min()) / self.sigma.mean())

    def rows(self) -> list:
        out = []
        for nu, s in zip(self.nus, self.sigma):
            row = {f"nu{k + 1}": float(v) for k, v in enumerate(nu)}
            if len(nu) == 2:
                row["angle_deg"] = float(np.degrees(np.arctan2(nu[1], nu[0])))
            row["sigma"] = float(s)
            out.append(row)
        return out


def anisotropy_scan(nus: Sequence, lattice: StochasticLattice, edges: EdgeSet,
                    template: CellProblemSpec) -> AnisotropyScan:
    """Surface cell problem for each direction; ``spread = (max - min) / mean``."""
    nus = np.asarray(nus, dtype=float)
    if len(nus) < 2:
        raise ValueError("an anisotropy scan needs at least two directions")
    sig, exact = [], True
    for nu in nus:
        spec = CellProblemSpec("surface", template.T, nu=nu, center=template.center,
                               delta=template.delta, potential=template.potential, p=template.p)
        r = surface_cell_problem(spec, lattice, edges)
        sig.append(r.value)
        exact &= r.exact
    return AnisotropyScan(nus, np.array(sig), exact)


def fit_inverse_T(T: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Least-squares ``y = a + b / T``; a single size returns ``(mean, 0)``."""
    T = np.asarray(T, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(np.unique(T)) < 2:
        return float(np.mean(y)), 0.0
    A = np.stack([np.ones_like(T), 1.0 / T], axis=1)
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(a), float(b)


def _band(x: np.ndarray) -> list:
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return [float(x.mean()), float(x.mean())]
    h = 1.96 * x.std(ddof=1) / math.sqrt(len(x))
    return [float(x.mean() - h), float(x.mean() + h)]


def estimate_coefficients(generator: str, d: int, potential: PotentialSpec, T_list: Sequence[float],
                          realizations: int = 1, n_dirs: int = 4, fidelity_weight: float = 1.0,
                          seed: int = 0, gamma_side: float = 40.0, xi_tol: float = 0.1,
                          lattice_factory: Optional[Callable] = None) -> dict:
    """Effective ``c1`` (bulk), ``c2`` (surface) and ``c3 = weight * gamma``.

    ``c1`` averages ``q(xi) / |xi|^2`` over ``xi = e_i`` (scalar fields);
    ``c2`` averages the surface density over ``n_dirs`` directions spread over
    a half circle (``d = 2``) or the coordinate axes otherwise.  Both are
    extrapolated in ``T`` by ``a + b / T`` after averaging realizations.
    ``lattice_factory(T, nus, seed)`` may replace :func:`cell_lattice`.
    """
    if d == 2:
        nus = [unit_from_angle(180.0 * k / n_dirs) for k in range(n_dirs)]
    else:
        nus = list(np.eye(d))
    xis = [np.eye(d)[i][None, :] for i in range(d)]
    per_T = []
    warnings = []
    for T in T_list:
        q_rows, s_rows = [], []
        for k in range(realizations):
            s = seed + 1000 * k
            if lattice_factory is not None:
                lat, edges, center = lattice_factory(T, nus, s)
            else:
                lat, edges, center = cell_lattice(generator, d, T, nus, seed=s)
            c = _center(CellProblemSpec("surface", T, nu=nus[0]), lat)
            q = [bulk_cell_problem(CellProblemSpec("bulk", T, xi=xi, center=c, potential=potential),
                                   lat, edges).value / float(np.sum(xi ** 2)) for xi in xis]
            sig = anisotropy_scan(nus, lat, edges, CellProblemSpec("surface", T, nu=nus[0], center=c,
                                                                   potential=potential))
            q_rows.append(q)
            s_rows.append(sig.sigma)
        q_rows = np.array(q_rows)
        s_rows = np.array(s_rows)
        qm = q_rows.mean(axis=0)
        if (qm.max() - qm.min()) > xi_tol * qm.mean():
            warnings.append(f"bulk density depends on direction at T={T}: {qm.tolist()}")
        sm = s_rows.mean(axis=0)
        per_T.append({"T": float(T), "c1": float(qm.mean()), "c2": float(sm.mean()),
                      "c1_band": _band(q_rows.mean(axis=1)), "c2_band": _band(s_rows.mean(axis=1)),
                      "q_by_xi": qm.tolist(), "sigma_by_nu": sm.tolist(),
                      "sigma_spread": float((sm.max() - sm.min()) / sm.mean())})
    Ts = [row["T"] for row in per_T]
    c1, b1 = fit_inverse_T(Ts, [row["c1"] for row in per_T])
    c2, b2 = fit_inverse_T(Ts, [row["c2"] for row in per_T])
    spread = per_T[-1]["sigma_spread"]
    if spread > 0.1:
        warnings.append(f"surface density is anisotropic: spread {spread:.3f}")
    gammas = []
    for k in range(realizations):
        if generator == "cubic":
            glat = generate_cubic(Window.cube(d, gamma_side, "torus"), 1.0)
        else:
            glat = generate_random_parking(Window.cube(d, gamma_side, "torus"), 1.0, seed + 1000 * k)
        gammas.append(gamma_field(glat, compute_tessellation(glat), window=_inner_box(glat)).gamma_hat)
    gam = float(np.mean(gammas))
    return {"c1": c1, "c2": c2, "c3": fidelity_weight * gam, "gamma": gam,
            "c1_slope": b1, "c2_slope": b2, "gamma_band": _band(np.array(gammas)),
            "per_T": per_T, "warnings": warnings, "generator": generator, "d": d,
            "realizations": realizations, "directions": [np.asarray(n).tolist() for n in nus]}


def _inner_box(lattice: StochasticLattice) -> Window:
    """Middle half of the window; on a torus this avoids the trivial full-window value."""
    w = lattice.window
    c = 0.5 * (w.lower + w.upper)
    h = 0.25 * w.lengths
    return Window(c - h, c + h, "box")
