"""Directed edge sets over lattices: Voronoi neighbors, k-NN, forward differences."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from math import ceil, gamma, pi
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay

from .lattice import StochasticLattice

FACET_TOL = 1e-9  # relative to r: shorter dual edges count as shared vertices


def ball_volume(d: int, radius: float = 1.0) -> float:
    return pi ** (d / 2) / gamma(d / 2 + 1) * radius ** d


@dataclass(eq=False)
class EdgeSet:
    """Directed edges ``src[e] -> dst[e]`` sorted by source, with range bound ``M``."""

    src: np.ndarray
    dst: np.ndarray
    M: float
    contains_voronoi: bool
    n_points: int
    kind: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64).ravel()
        dst = np.asarray(self.dst, dtype=np.int64).ravel()
        if src.shape != dst.shape:
            raise ValueError("src and dst must have equal length")
        if len(src) and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= self.n_points):
            raise ValueError("edge index out of range")
        if np.any(src == dst):
            raise ValueError("self loops are not edges")
        order = np.lexsort((dst, src))
        self.src, self.dst = src[order], dst[order]
        self.indptr = np.searchsorted(self.src, np.arange(self.n_points + 1))

    def __len__(self) -> int:
        return len(self.src)

    def out_neighbors(self, i: int) -> np.ndarray:
        return self.dst[self.indptr[i]:self.indptr[i + 1]]

    def out_degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def undirected_pairs(self) -> np.ndarray:
        """Unique unordered pairs ``(i, j)``, ``i < j``, of the symmetrized graph."""
        a = np.minimum(self.src, self.dst)
        b = np.maximum(self.src, self.dst)
        if not len(a):
            return np.empty((0, 2), dtype=np.int64)
        return np.unique(np.stack([a, b], axis=1), axis=0)

    def undirected_degree(self) -> np.ndarray:
        pairs = self.undirected_pairs()
        return np.bincount(pairs.ravel(), minlength=self.n_points)

    def adjacency(self) -> csr_matrix:
        pairs = self.undirected_pairs()
        data = np.ones(2 * len(pairs), dtype=np.int8)
        rows = np.r_[pairs[:, 0], pairs[:, 1]]
        cols = np.r_[pairs[:, 1], pairs[:, 0]]
        return csr_matrix((data, (rows, cols)), shape=(self.n_points, self.n_points))

    def lengths(self, lattice: StochasticLattice) -> np.ndarray:
        y = lattice.local_points()
        return np.linalg.norm(lattice.window.displacement(y[self.src], y[self.dst]), axis=1)

    def degree_cap(self, lattice: StochasticLattice) -> float:
        """Packing bound ``|B_{M+r/2}| / |B_{r/2}|`` on the undirected degree."""
        return (2 * self.M / lattice.r + 1) ** lattice.d

    def validate(self, lattice: StochasticLattice) -> None:
        if lattice.n != self.n_points:
            raise ValueError("edge set and lattice sizes differ")
        if len(self) and not self.lengths(lattice).max() < self.M:
            raise ValueError("edge longer than the range bound M")
        if len(self) and self.undirected_degree().max() > self.degree_cap(lattice):
            raise ValueError("undirected degree exceeds the packing bound")

    def is_connected(self) -> bool:
        n, _ = connected_components(self.adjacency(), directed=False)
        return n == 1

    def with_pairs(self, pairs: np.ndarray) -> "EdgeSet":
        """Same metadata, different edges (used for sub-selections)."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        return EdgeSet(pairs[:, 0], pairs[:, 1], self.M, self.contains_voronoi,
                       self.n_points, self.kind, dict(self.meta))


def _finish(lattice: StochasticLattice, pairs: np.ndarray, contains_voronoi: bool, kind: str,
            meta: Optional[dict] = None) -> EdgeSet:
    pairs = np.unique(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=0)
    probe = EdgeSet(pairs[:, 0], pairs[:, 1], np.inf, contains_voronoi, lattice.n, kind)
    lmax = float(probe.lengths(lattice).max()) if len(probe) else 0.0
    edges = EdgeSet(probe.src, probe.dst, lmax + lattice.r / 100, contains_voronoi,
                    lattice.n, kind, meta or {})
    edges.validate(lattice)
    return edges


# --- Voronoi neighbors in the plane ---------------------------------------------

def _ghosted(lattice: StochasticLattice, margin: float):
    """Local points plus periodic images within ``margin`` of the torus window."""
    y = lattice.local_points()
    win = lattice.window
    if not win.periodic:
        return y, np.arange(lattice.n)
    L = win.lengths
    reps = np.ceil(margin / L).astype(int)
    shifts = np.stack(np.meshgrid(*[np.arange(-k, k + 1) for k in reps], indexing="ij"), -1)
    shifts = shifts.reshape(-1, win.d)
    shifts = shifts[np.argsort(np.abs(shifts).sum(axis=1), kind="stable")]
    blocks, ids = [y], [np.arange(lattice.n)]
    lo, hi = win.lower - margin, win.upper + margin
    for s in shifts[1:]:
        z = y + s * L
        keep = np.all((z >= lo) & (z <= hi), axis=1)
        blocks.append(z[keep])
        ids.append(np.flatnonzero(keep))
    return np.vstack(blocks), np.concatenate(ids)


def _circumcenters(p: np.ndarray, tri: np.ndarray) -> np.ndarray:
    a, b, c = p[tri[:, 0]], p[tri[:, 1]], p[tri[:, 2]]
    b = b - a
    c = c - a
    den = 2 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    bb = (b ** 2).sum(1)
    cc = (c ** 2).sum(1)
    ux = (c[:, 1] * bb - b[:, 1] * cc) / den
    uy = (b[:, 0] * cc - c[:, 0] * bb) / den
    return a + np.stack([ux, uy], axis=1)


def _clipped_length(p0: np.ndarray, vec: np.ndarray, t_end: np.ndarray, lo, hi) -> np.ndarray:
    """Length of ``{p0 + t vec : 0 <= t <= t_end}`` inside the box ``[lo, hi]``."""
    tmin = np.zeros(len(p0))
    tmax = np.asarray(t_end, dtype=float).copy()
    for k in range(p0.shape[1]):
        v = vec[:, k]
        flat = v == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo[k] - p0[:, k]) / v
            t2 = (hi[k] - p0[:, k]) / v
        tmin = np.where(flat, tmin, np.maximum(tmin, np.minimum(t1, t2)))
        tmax = np.where(flat, tmax, np.minimum(tmax, np.maximum(t1, t2)))
        outside = flat & ((p0[:, k] < lo[k]) | (p0[:, k] > hi[k]))
        tmax = np.where(outside, -np.inf, tmax)
    return np.maximum(tmax - tmin, 0.0) * np.linalg.norm(vec, axis=1)


def delaunay_dual_pairs(p: np.ndarray, tol: float, box: Optional[tuple] = None) -> np.ndarray:
    """Delaunay edges of ``p`` whose dual Voronoi edge is longer than ``tol``.

    Degenerate cocircular configurations are triangulated arbitrarily by
    Qhull; the diagonal introduced there has coinciding circumcenters on both
    sides, so the length filter removes it whichever diagonal was chosen.
    With ``box = (lo, hi)`` only the part of each dual edge (segment, or ray
    for hull edges) inside the box counts.
    """
    tri = Delaunay(p)
    simp = tri.simplices
    cc = _circumcenters(p, simp)
    rows = []
    for k in range(3):
        a = simp[:, (k + 1) % 3]
        b = simp[:, (k + 2) % 3]
        nb = tri.neighbors[:, k]
        inner = nb >= 0
        if box is None:
            length = np.full(len(simp), np.inf)
            length[inner] = np.linalg.norm(cc[inner] - cc[nb[inner]], axis=1)
        else:
            vec = np.empty_like(cc)
            vec[inner] = cc[nb[inner]] - cc[inner]
            # hull edge: ray along the outward normal, away from the opposite vertex
            e = p[b] - p[a]
            normal = np.stack([e[:, 1], -e[:, 0]], axis=1)
            opp = p[simp[:, k]] - p[a]
            flip = np.einsum("ij,ij->i", normal, opp) > 0
            normal[flip] *= -1
            vec[~inner] = normal[~inner]
            t_end = np.where(inner, 1.0, np.inf)
            length = _clipped_length(cc, vec, t_end, box[0], box[1])
        keep = length > tol
        rows.append(np.stack([a[keep], b[keep]], axis=1))
    pairs = np.vstack(rows)
    pairs = np.sort(pairs, axis=1)
    return np.unique(pairs, axis=0)


def _check_planar(lattice: StochasticLattice) -> None:
    if lattice.d != 2:
        raise ValueError("Voronoi neighbors are computed exactly only in d=2")
    if lattice.n < 3:
        raise ValueError("need at least three points")
    y = lattice.local_points()
    s = np.linalg.svd(y - y.mean(axis=0), compute_uv=False)
    if s[-1] <= 1e-12 * max(s[0], 1e-300):
        raise ValueError("points are collinear")


def voronoi_neighbors_2d(lattice: StochasticLattice) -> EdgeSet:
    """Pairs whose Voronoi cells share an edge of positive length, both orientations.

    In a box window the cells are those of the window-clipped tessellation:
    a shared edge must have positive length inside the window.
    """
    _check_planar(lattice)
    margin = 3 * lattice.R
    p, ids = _ghosted(lattice, margin)
    win = lattice.window
    box = None if win.periodic else (win.lower, win.upper)
    pairs = delaunay_dual_pairs(p, FACET_TOL * lattice.r, box)
    touch = (pairs[:, 0] < lattice.n) | (pairs[:, 1] < lattice.n)
    pairs = ids[pairs[touch]]
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    both = np.vstack([pairs, pairs[:, ::-1]])
    return _finish(lattice, both, True, "voronoi")


# --- k nearest neighbors ------------------------------------------------------

def knn_k_bound(r: float, R: float, d: int) -> int:
    """Number of neighbors that guarantees containment of all Voronoi neighbors."""
    if not R > r > 0:
        raise ValueError("need R > r > 0")
    rho = R / r
    val = (4 * rho + 1) ** d - (2 * rho - 1) ** d
    return int(ceil(val - 1e-9)) - 2


def knn_edges(lattice: StochasticLattice, k: int, tie_rtol: float = 1e-12) -> EdgeSet:
    """Edges to the ``k`` nearest other points, keeping every tie at the k-th distance."""
    n = lattice.n
    if k < 1:
        raise ValueError("k must be positive")
    if k >= n:
        raise ValueError("k must be smaller than the number of points")
    tree = lattice.tree()
    q = lattice.local_points() - lattice.window.lower
    rows, cols = [], []
    pending = np.arange(n)
    extra = 4
    while len(pending):
        kk = min(n, k + 1 + extra)
        dist, idx = tree.query(q[pending], k=kk)
        dk = dist[:, k]
        limit = dk * (1 + tie_rtol)
        done = (dist[:, -1] > limit) | (kk == n)
        for row, (pi_, dd, ii) in enumerate(zip(pending, dist, idx)):
            if not done[row]:
                continue
            sel = (dd <= limit[row]) & (ii != pi_)
            cols.append(ii[sel])
            rows.append(np.full(sel.sum(), pi_))
        pending = pending[~done]
        extra *= 4
    pairs = np.stack([np.concatenate(rows), np.concatenate(cols)], axis=1)
    bound = knn_k_bound(lattice.r, lattice.R_pair, lattice.d)
    return _finish(lattice, pairs, bool(k >= bound), "knn", {"k": int(k)})


# --- forward differences ---------------------------------------------------------

def grid_index(lattice: StochasticLattice) -> tuple[np.ndarray, np.ndarray]:
    """Integer grid coordinates of a cubic lattice and the grid shape."""
    if not lattice.is_cubic():
        raise ValueError("forward differences need an unjittered cubic lattice")
    offset = lattice.meta.get("offset", 0.0)
    y = lattice.local_points() - lattice.window.lower
    idx = np.rint(y / lattice.spacing - offset).astype(np.int64)
    if np.abs((idx + offset) * lattice.spacing - y).max() > 1e-6 * lattice.spacing:
        raise ValueError("points are not on the cubic grid")
    shape = idx.max(axis=0) + 1
    if lattice.window.periodic:
        shape = np.rint(lattice.window.lengths / lattice.spacing).astype(np.int64)
    return idx, shape


def forward_difference_edges(lattice: StochasticLattice) -> EdgeSet:
    """Edges ``(x, x + spacing e_i)`` for every axis, wrapped on a torus."""
    idx, shape = grid_index(lattice)
    d = lattice.d
    table = -np.ones(tuple(shape), dtype=np.int64)
    table[tuple(idx.T)] = np.arange(lattice.n)
    rows = []
    for i in range(d):
        tgt = idx.copy()
        tgt[:, i] += 1
        if lattice.window.periodic:
            tgt[:, i] %= shape[i]
            ok = np.ones(len(tgt), dtype=bool)
        else:
            ok = tgt[:, i] < shape[i]
        j = -np.ones(len(tgt), dtype=np.int64)
        j[ok] = table[tuple(tgt[ok].T)]
        ok &= j >= 0
        rows.append(np.stack([np.flatnonzero(ok), j[ok]], axis=1))
    pairs = np.vstack(rows)
    edges = EdgeSet(pairs[:, 0], pairs[:, 1], lattice.spacing + lattice.r / 100, True,
                    lattice.n, "fd")
    edges.validate(lattice)
    return edges


# --- paths ------------------------------------------------------------------------

def path_constant(r: float, R: float, d: int) -> float:
    """``C_{r,R} = 2 (2R)^d / (r |B_{r/2}|)``."""
    return 2 * (2 * R) ** d / (r * ball_volume(d, r / 2))


def find_path(edges: EdgeSet, lattice: StochasticLattice, i: int, j: int) -> list[int]:
    """Shortest path (in hops) from ``i`` to ``j`` inside the tube ``[x_i, x_j] + B_{2R}``.

    Raises if the tube holds no path or the path is longer than
    ``C_{r,R} |x_i - x_j|`` points; either indicates a broken edge set.
    """
    if not edges.contains_voronoi:
        raise ValueError("paths are certified only for edge sets containing the Voronoi neighbors")
    if i == j:
        return [int(i)]
    win = lattice.window
    y = lattice.local_points()
    a = y[i]
    b = a + win.displacement(a, y[j])
    mid = 0.5 * (a + b)
    rel = mid + win.displacement(mid, y)
    seg = b - a
    length = float(np.linalg.norm(seg))
    t = np.clip(((rel - a) @ seg) / length ** 2, 0.0, 1.0)
    dist = np.linalg.norm(rel - (a + t[:, None] * seg), axis=1)
    inside = dist < 2 * lattice.R_pair
    adj = edges.adjacency()
    prev = np.full(lattice.n, -1, dtype=np.int64)
    prev[i] = i
    queue = deque([i])
    while queue:
        v = queue.popleft()
        if v == j:
            break
        for w in adj.indices[adj.indptr[v]:adj.indptr[v + 1]]:
            if inside[w] and prev[w] < 0:
                prev[w] = v
                queue.append(w)
    if prev[j] < 0:
        raise RuntimeError(f"no path from {i} to {j} inside the tube")
    path = [int(j)]
    while path[-1] != i:
        path.append(int(prev[path[-1]]))
    path.reverse()
    bound = path_constant(lattice.r, lattice.R_pair, lattice.d) * length
    if len(path) > bound:
        raise RuntimeError(f"path of {len(path)} points exceeds the bound {bound:.3f}")
    return path


# --- edge files ---------------------------------------------------------------------

def write_edges(path, edges: EdgeSet) -> None:
    with open(path, "w") as fh:
        fh.write(f"# M={edges.M:.17g},contains_voronoi={str(edges.contains_voronoi).lower()},"
                 f"n_points={edges.n_points},kind={edges.kind}\n")
        fh.write("i,j\n")
        for a, b in zip(edges.src, edges.dst):
            fh.write(f"{a},{b}\n")


def read_edges(path) -> EdgeSet:
    with open(path) as fh:
        head = fh.readline().lstrip("#").strip()
        meta = dict(kv.split("=", 1) for kv in head.split(","))
        if fh.readline().strip() != "i,j":
            raise ValueError("not an edge file")
        data = np.loadtxt(fh, delimiter=",", dtype=np.int64, ndmin=2)
    data = data.reshape(-1, 2)
    return EdgeSet(data[:, 0], data[:, 1], float(meta["M"]), meta["contains_voronoi"] == "true",
                   int(meta["n_points"]), meta.get("kind", "custom"))
