"""Localized lattice energies and the cell-volume density field.

Sites are the scaled points ``eps * x``.  A site takes part in a sum when it
lies in the region ``A``; an edge ``(x, y)`` contributes at its source ``x``
and only when both ``eps * x`` and ``eps * y`` lie in ``A``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import EdgeSet
from .lattice import StochasticLattice, Window
from .potential import PotentialSpec, beta_table, eval_sites
from .tessellation import Tessellation, clip_polygon_box, polygon_area, sample_cell


@dataclass(eq=False)
class LatticeField:
    """Values ``u(eps x)`` in ``R^m``, one row per lattice point."""

    lattice: StochasticLattice
    epsilon: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or len(v) != self.lattice.n:
            raise ValueError("one value per lattice point is required")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.values = v

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def sites(self) -> np.ndarray:
        return self.epsilon * self.lattice.points

    def with_values(self, values: np.ndarray) -> "LatticeField":
        return LatticeField(self.lattice, self.epsilon, values)

    def is_binary(self) -> bool:
        e1 = np.zeros(self.m)
        e1[0] = 1.0
        return bool(np.all(np.all(self.values == e1, axis=1) | np.all(self.values == -e1, axis=1)))


# --- regions ----------------------------------------------------------------------

class Region:
    """Open set ``A``; ``boundary_distance`` is the distance to its boundary."""

    def contains(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def boundary_distance(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no boundary distance")


class Whole(Region):
    def contains(self, x):
        return np.ones(len(x), dtype=bool)

    def boundary_distance(self, x):
        return np.full(len(x), np.inf)


class Box(Region):
    """``{z : |<z - center, f_i>| < half[i]}`` for the columns ``f_i`` of ``frame``."""

    def __init__(self, center, half, frame: Optional[np.ndarray] = None):
        self.center = np.asarray(center, dtype=float)
        d = self.center.size
        self.half = np.broadcast_to(np.asarray(half, dtype=float), (d,)).copy()
        self.frame = np.eye(d) if frame is None else np.asarray(frame, dtype=float)

    def _coords(self, x):
        return (np.atleast_2d(x) - self.center) @ self.frame

    def contains(self, x):
        return np.all(np.abs(self._coords(x)) < self.half, axis=1)

    def boundary_distance(self, x):
        s = np.abs(self._coords(x)) - self.half
        outside = np.linalg.norm(np.maximum(s, 0.0), axis=1)
        return np.where(np.all(s <= 0, axis=1), -s.max(axis=1), outside)


class Cube(Box):
    """Open cube ``Q_nu(x0, side)`` whose first axis is ``nu``."""

    def __init__(self, center, side: float, nu: Optional[np.ndarray] = None):
        center = np.asarray(center, dtype=float)
        frame = np.eye(center.size) if nu is None else orthonormal_frame(nu)
        super().__init__(center, 0.5 * side, frame)
        self.side = float(side)


class Predicate(Region):
    def __init__(self, func: Callable[[np.ndarray], np.ndarray]):
        self.func = func

    def contains(self, x):
        return np.asarray(self.func(np.atleast_2d(x)), dtype=bool)


def orthonormal_frame(nu: np.ndarray) -> np.ndarray:
    """Orthonormal matrix whose first column is the unit vector ``nu``."""
    nu = np.asarray(nu, dtype=float).ravel()
    if abs(np.linalg.norm(nu) - 1) > 1e-12:
        raise ValueError("nu must be a unit vector")
    d = nu.size
    if d == 1:
        return nu.reshape(1, 1)
    if d == 2:
        return np.array([[nu[0], -nu[1]], [nu[1], nu[0]]])
    cols = [nu]
    for k in np.argsort(np.abs(nu)):
        e = np.zeros(d)
        e[k] = 1.0
        for c in cols:
            e = e - (e @ c) * c
        if np.linalg.norm(e) > 1e-8:
            cols.append(e / np.linalg.norm(e))
        if len(cols) == d:
            break
    return np.stack(cols, axis=1)


# --- parameters and boundary data --------------------------------------------------

@dataclass
class EnergyParams:
    epsilon: float
    p: float = 2.0
    q: float = 2.0
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    fidelity_weight: float = 1.0
    region: Optional[Region] = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not (self.p > 1 and self.q > 1):
            raise ValueError("exponents p and q must exceed 1")
        if self.fidelity_weight < 0:
            raise ValueError("fidelity weight must be non-negative")

    @property
    def area(self) -> Region:
        return self.region if self.region is not None else Whole()


@dataclass
class BoundaryClass:
    """Reference map ``ubar`` (rows of scaled points to rows of values) and collar width."""

    ubar: Callable[[np.ndarray], np.ndarray]
    delta: float

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be non-negative")


def pure_jump(a, b, x0, nu) -> Callable[[np.ndarray], np.ndarray]:
    """``x -> a`` where ``<x - x0, nu> > 0`` and ``b`` elsewhere."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    x0 = np.asarray(x0, dtype=float)
    nu = np.asarray(nu, dtype=float)

    def ubar(x):
        side = (np.atleast_2d(x) - x0) @ nu > 0
        return np.where(side[:, None], a, b)

    return ubar


def affine(xi, x0) -> Callable[[np.ndarray], np.ndarray]:
    """``x -> xi (x - x0)`` for an ``m x d`` matrix ``xi``."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    x0 = np.asarray(x0, dtype=float)

    def ubar(x):
        return (np.atleast_2d(x) - x0) @ xi.T

    return ubar


def collar_mask(u: LatticeField, region: Region, delta: float) -> np.ndarray:
    return region.boundary_distance(u.sites) <= delta


def apply_boundary(u: LatticeField, bc: BoundaryClass, region: Region) -> LatticeField:
    """Overwrite ``u`` by ``ubar`` on the sites within ``delta`` of the boundary of ``region``."""
    mask = collar_mask(u, region, bc.delta)
    vals = u.values.copy()
    if mask.any():
        vals[mask] = np.asarray(bc.ubar(u.sites[mask]), dtype=float).reshape(mask.sum(), -1)
    return u.with_values(vals)


# --- energies ------------------------------------------------------------------------

def _check(u: LatticeField, edges: EdgeSet, params: EnergyParams) -> None:
    if edges.n_points != u.lattice.n:
        raise ValueError("edge set and field live on different lattices")
    if abs(u.epsilon - params.epsilon) > 1e-15 * params.epsilon:
        raise ValueError("field and parameters use different epsilon")
    if not params.potential.usable:
        raise ValueError("custom potential has not passed the axiom checks")


def _total(x: np.ndarray) -> float:
    return float(math.fsum(np.asarray(x, dtype=float).ravel()))


def site_mask(u: LatticeField, params: EnergyParams) -> np.ndarray:
    return params.area.contains(u.sites)


def active_edges(u: LatticeField, edges: EdgeSet, params: EnergyParams,
                 inside: Optional[np.ndarray] = None) -> np.ndarray:
    """Mask of edges with both endpoints in ``A``."""
    if inside is None:
        inside = site_mask(u, params)
    return inside[edges.src] & inside[edges.dst]


def edge_jumps(u: LatticeField, edges: EdgeSet) -> np.ndarray:
    return np.linalg.norm(u.values[edges.src] - u.values[edges.dst], axis=1)


def gradient_multiset(u: LatticeField, edges: EdgeSet, site: int, params: EnergyParams) -> np.ndarray:
    """Entries ``eps |(u(x) - u(y)) / eps|^p`` over out-edges of ``site`` inside ``A``."""
    _check(u, edges, params)
    area = params.area
    if not area.contains(u.sites[site:site + 1])[0]:
        raise ValueError("site lies outside the region")
    nb = edges.out_neighbors(site)
    nb = nb[area.contains(u.sites[nb])] if len(nb) else nb
    eps = params.epsilon
    jump = np.linalg.norm(u.values[site] - u.values[nb], axis=1) if len(nb) else np.empty(0)
    return eps * (jump / eps) ** params.p


def energy_F(u: LatticeField, edges: EdgeSet, params: EnergyParams) -> float:
    _check(u, edges, params)
    eps, d = params.epsilon, u.lattice.d
    inside = site_mask(u, params)
    act = active_edges(u, edges, params, inside)
    entries = eps * (edge_jumps(u, edges)[act] / eps) ** params.p
    f = eval_sites(params.potential, entries, edges.src[act], u.lattice.n)
    return eps ** (d - 1) * _total(f[inside])


def energy_E(u: LatticeField, edges: EdgeSet, params: EnergyParams) -> float:
    _check(u, edges, params)
    eps, d = params.epsilon, u.lattice.d
    act = active_edges(u, edges, params)
    terms = (edge_jumps(u, edges)[act] / eps) ** params.p
    return params.potential.alpha * eps ** d * _total(terms)


def disagreement_counts(v: LatticeField, edges: EdgeSet, params: EnergyParams):
    """Per-site ``(l, k)``: disagreeing and total out-neighbors inside ``A``."""
    inside = site_mask(v, params)
    act = active_edges(v, edges, params, inside)
    differ = np.any(v.values[edges.src] != v.values[edges.dst], axis=1) & act
    n = v.lattice.n
    k = np.bincount(edges.src[act], minlength=n)
    l = np.bincount(edges.src[differ], minlength=n)
    return l, k, inside


def energy_I(v: LatticeField, edges: EdgeSet, params: EnergyParams) -> float:
    _check(v, edges, params)
    if not v.is_binary():
        raise ValueError("energy_I needs values in {e1, -e1}")
    l, k, inside = disagreement_counts(v, edges, params)
    beta = beta_table(params.potential, l[inside], k[inside])
    return params.epsilon ** (v.lattice.d - 1) * _total(beta)


def fidelity_term(u: LatticeField, g: LatticeField, params: EnergyParams) -> float:
    if g.lattice is not u.lattice and not np.array_equal(g.lattice.points, u.lattice.points):
        raise ValueError("fidelity data lives on a different lattice")
    if g.values.shape != u.values.shape:
        raise ValueError("fidelity data has the wrong shape")
    if abs(g.epsilon - u.epsilon) > 1e-15 * u.epsilon:
        raise ValueError("fidelity data uses a different epsilon")
    inside = site_mask(u, params)
    diff = np.linalg.norm(u.values - g.values, axis=1)[inside]
    return params.fidelity_weight * params.epsilon ** u.lattice.d * _total(diff ** params.q)


def energy_F_g(u: LatticeField, edges: EdgeSet, params: EnergyParams, g: LatticeField) -> float:
    return energy_F(u, edges, params) + fidelity_term(u, g, params)


def energy_report(u: LatticeField, edges: EdgeSet, params: EnergyParams,
                  g: Optional[LatticeField] = None) -> dict:
    F = energy_F(u, edges, params)
    fid = fidelity_term(u, g, params) if g is not None else 0.0
    return {
        "F": F,
        "E": energy_E(u, edges, params),
        "I": energy_I(u, edges, params) if u.is_binary() else None,
        "fidelity": fid,
        "total": F + fid,
    }


# --- cell-volume density ----------------------------------------------------------------

@dataclass
class GammaEstimate:
    gamma_hat: float
    sizes: list
    values: list
    mean: float
    spread: float

    def to_dict(self) -> dict:
        return {"gamma_hat": self.gamma_hat, "sizes": self.sizes, "values": self.values,
                "mean": self.mean, "spread": self.spread}


def _window_fractions(lattice: StochasticLattice, tess: Tessellation, lo: np.ndarray,
                      hi: np.ndarray, rng: np.random.Generator, mc_samples: int) -> np.ndarray:
    """``|C(x) ∩ W| / |C(x)|`` for every cell and the box ``W = [lo, hi]`` (local coordinates)."""
    win = lattice.window
    d = lattice.d
    n = lattice.n
    if win.periodic:
        reps = [np.array(s) for s in np.ndindex(*(3,) * d)]
        shifts = [(s - 1) * win.lengths for s in reps]
    else:
        shifts = [np.zeros(d)]
    frac = np.zeros(n)
    if tess.cells is None:
        for i in range(n):
            z, hit, _ = sample_cell(lattice, i, mc_samples, rng)
            z = z[hit]
            if len(z) == 0:
                continue
            z = win.wrap(z)
            frac[i] = np.mean(np.all((z >= lo) & (z <= hi), axis=1))
        return frac
    for i, cell in enumerate(tess.cells):
        if d == 1:
            a, b = cell
            tot = sum(max(0.0, min(b + s[0], hi[0]) - max(a + s[0], lo[0])) for s in shifts)
            frac[i] = tot / tess.volumes[i]
            continue
        cmin, cmax = cell.min(axis=0), cell.max(axis=0)
        tot = 0.0
        for s in shifts:
            bl, bh = cmin + s, cmax + s
            if np.any(bh <= lo) or np.any(bl >= hi):
                continue
            if np.all(bl >= lo) and np.all(bh <= hi):
                tot += tess.volumes[i]
            else:
                tot += polygon_area(clip_polygon_box(cell + s, lo, hi))
        frac[i] = tot / tess.volumes[i]
    return frac


def gamma_field(lattice: StochasticLattice, tess: Tessellation, window: Optional[Window] = None,
                n_windows: int = 3, sizes: Optional[list] = None, seed: int = 0,
                mc_samples: int = 10_000) -> GammaEstimate:
    """``(1/|W|) sum_x |C(x) ∩ W| / |C(x)|`` over nested boxes ``W`` sharing one center.

    ``window`` is a box in the lattice window's local coordinates (default:
    the whole window).  Without explicit ``sizes`` the boxes halve in side
    length ``n_windows - 1`` times starting from ``window``.  ``gamma_hat`` is
    the value on the largest box; ``spread`` is max minus min over boxes.
    """
    if np.any(tess.volumes <= 0):
        raise ValueError("zero-volume cell")
    window = window or lattice.window
    center = 0.5 * (window.lower + window.upper)
    full = window.lengths
    if sizes is None:
        scales = [0.5 ** k for k in range(n_windows - 1, -1, -1)]
        boxes = [(center - 0.5 * s * full, center + 0.5 * s * full) for s in scales]
        sizes = [float(s * full.max()) for s in scales]
    else:
        boxes = [(center - 0.5 * np.asarray(s, float) * np.ones_like(full),
                  center + 0.5 * np.asarray(s, float) * np.ones_like(full)) for s in sizes]
        sizes = [float(np.max(s)) for s in sizes]
    rng = np.random.default_rng(seed)
    values = []
    for lo, hi in boxes:
        frac = _window_fractions(lattice, tess, lo, hi, rng, mc_samples)
        values.append(_total(frac) / float(np.prod(hi - lo)))
    return GammaEstimate(values[-1], sizes, values, float(np.mean(values)),
                         float(np.max(values) - np.min(values)))


# --- field files ------------------------------------------------------------------------------

def write_field(path, u: LatticeField) -> None:
    with open(path, "w") as fh:
        fh.write("index," + ",".join(f"v{k + 1}" for k in range(u.m)) + "\n")
        for i, row in enumerate(u.values):
            fh.write(f"{i}," + ",".join(f"{v:.17g}" for v in row) + "\n")


def read_field(path, lattice: StochasticLattice, epsilon: float) -> LatticeField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    order = np.argsort(data[:, 0], kind="stable")
    return LatticeField(lattice, epsilon, data[order, 1:])
