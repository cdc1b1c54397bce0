"""Slow, independent reference computations used to cross-check the fast paths."""
from __future__ import annotations

import itertools
from typing import Optional

import numpy as np


def clip_cell(poly: list, labels: list, x: np.ndarray, y: np.ndarray, tag: int):
    """Intersect a convex polygon with the half-plane of points closer to ``x`` than ``y``.

    ``labels[k]`` names the constraint that produced the polygon edge from
    vertex ``k`` to vertex ``k+1``; the new edge along the bisector gets ``tag``.
    """
    normal = y - x
    offset = normal @ (0.5 * (x + y))
    out_p, out_l = [], []
    n = len(poly)
    for k in range(n):
        p, q = poly[k], poly[(k + 1) % n]
        sp = normal @ p - offset
        sq = normal @ q - offset
        if sp <= 0:
            out_p.append(p)
            if sq <= 0:
                out_l.append(labels[k])
            else:
                out_p.append(p + (q - p) * (sp / (sp - sq)))
                out_l.extend([labels[k], tag])
        elif sq <= 0:
            out_p.append(p + (q - p) * (sp / (sp - sq)))
            out_l.append(labels[k])
    return out_p, out_l


def halfplane_cell(points: np.ndarray, i: int, bbox: np.ndarray):
    """Voronoi cell of ``points[i]`` inside ``bbox = [[xmin, ymin], [xmax, ymax]]``."""
    (x0, y0), (x1, y1) = bbox
    poly = [np.array([x0, y0]), np.array([x1, y0]), np.array([x1, y1]), np.array([x0, y1])]
    labels = [-1, -1, -1, -1]
    for j in range(len(points)):
        if j != i:
            poly, labels = clip_cell(poly, labels, points[i], points[j], j)
    return poly, labels


def shared_facet_length(points: np.ndarray, i: int, j: int, box: Optional[tuple] = None) -> float:
    """Length of the common edge of the Voronoi cells of ``points[i]`` and ``points[j]``.

    The edge lies on the bisector line ``m + t tau``; every other point ``k``
    restricts ``t`` by one half-plane, so the edge is an interval that may be
    unbounded (then the length is ``inf``).  With ``box = (lo, hi)`` the
    line is also restricted to the box.
    """
    xi, xj = points[i], points[j]
    m = 0.5 * (xi + xj)
    nrm = xj - xi
    tau = np.array([-nrm[1], nrm[0]]) / np.hypot(*nrm)
    others = np.ones(len(points), dtype=bool)
    others[[i, j]] = False
    nk = points[others] - xi
    a = nk @ tau
    b = np.einsum("ij,ij->i", 0.5 * (xi + points[others]) - m, nk)
    if np.any((a == 0) & (b < 0)):
        return 0.0
    with np.errstate(divide="ignore"):
        t = b / a
    hi = float(t[a > 0].min()) if np.any(a > 0) else np.inf
    lo = float(t[a < 0].max()) if np.any(a < 0) else -np.inf
    if box is not None:
        for k in range(2):
            if tau[k] != 0:
                t1 = (box[0][k] - m[k]) / tau[k]
                t2 = (box[1][k] - m[k]) / tau[k]
                lo, hi = max(lo, min(t1, t2)), min(hi, max(t1, t2))
            elif not box[0][k] <= m[k] <= box[1][k]:
                return 0.0
    return max(hi - lo, 0.0)


def halfplane_voronoi_neighbors(points: np.ndarray, tol: float,
                                periods: Optional[np.ndarray] = None, box: Optional[tuple] = None) -> set:
    """Unordered neighbor pairs by brute-force half-plane intersection.

    With ``periods`` the points live on a flat torus ``[0, L1) x [0, L2)``;
    all 3x3 images take part and indices are reduced modulo ``N``.  With
    ``box`` only facet parts inside the box count.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if periods is not None:
        L = np.asarray(periods, dtype=float)
        shifts = [s for s in itertools.product((0, -1, 1), repeat=2)]
        allp = np.vstack([pts + np.array(s) * L for s in shifts])
    else:
        allp = pts
    pairs = set()
    for i in range(n):
        for j in range(len(allp)):
            if j == i or j % n == i:
                continue
            if shared_facet_length(allp, i, j, box) > tol:
                pairs.add((min(i, j % n), max(i, j % n)))
    return pairs


def polygon_area(poly: np.ndarray) -> float:
    x, y = np.asarray(poly, dtype=float).T
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def enumerate_binary_ising(n_free: int, energy_of) -> tuple[np.ndarray, float]:
    """Minimize ``energy_of(bits)`` over all ``2**n_free`` bit vectors, one at a time."""
    best, best_bits = np.inf, None
    for code in range(2 ** n_free):
        bits = np.array([(code >> k) & 1 for k in range(n_free)], dtype=np.int8)
        e = energy_of(bits)
        if e < best:
            best, best_bits = e, bits
    return best_bits, best


# --- energy minimization oracles -------------------------------------------------------------
# These take plain arrays (edge lists already restricted to the region) and
# recompute every energy with scalar loops, sharing no code with the solvers.

def membrane_energy(u, src, dst, g, eps, d, alpha, cap, variant, weight) -> float:
    """Fidelity energy for scalar fields with ``p = q = 2``."""
    n = len(u)
    per_site = [[] for _ in range(n)]
    for a, b in zip(src, dst):
        per_site[a].append((u[a] - u[b]) ** 2 / eps)
    total = 0.0
    for x in range(n):
        vals = per_site[x]
        if variant == "pairwise_sum":
            f = sum(min(alpha * v, cap) for v in vals)
        else:
            f = min(alpha * sum(vals), cap) if vals else 0.0
        total += eps ** (d - 1) * f + weight * eps ** d * (u[x] - g[x]) ** 2
    return total


def exact_membrane_min(src, dst, g, eps, d, alpha, cap, variant, weight):
    """Global minimum over real-valued fields by trying every activation pattern.

    Each pattern fixes which terms stay quadratic; the remaining problem is a
    linear system.  For ``pairwise_sum`` both orientations of an edge share
    one switch (their jumps coincide, so their optimal switches agree).
    """
    g = np.asarray(g, dtype=float)
    n = len(g)
    if variant == "pairwise_sum":
        keys = sorted({(min(a, b), max(a, b)) for a, b in zip(src, dst)})
        switch_of = [keys.index((min(a, b), max(a, b))) for a, b in zip(src, dst)]
        n_sw = len(keys)
    else:
        owners = sorted(set(src))
        switch_of = [owners.index(a) for a in src]
        n_sw = len(owners)
    best_e, best_u = np.inf, None
    for code in range(2 ** n_sw):
        A = weight * eps ** d * np.eye(n)
        for (a, b), s in zip(zip(src, dst), switch_of):
            if (code >> s) & 1:
                c = alpha * eps ** (d - 2)
                A[a, a] += c
                A[b, b] += c
                A[a, b] -= c
                A[b, a] -= c
        u = np.linalg.solve(A, weight * eps ** d * g)
        e = membrane_energy(u, src, dst, g, eps, d, alpha, cap, variant, weight)
        if e < best_e:
            best_e, best_u = e, u
    return best_u, best_e


def grid_enumeration_min(src, dst, g, eps, d, alpha, cap, variant, weight, levels):
    """Minimum over fields with values in ``levels``, one labeling at a time."""
    best_e, best_u = np.inf, None
    for lab in itertools.product(levels, repeat=len(g)):
        e = membrane_energy(lab, src, dst, g, eps, d, alpha, cap, variant, weight)
        if e < best_e:
            best_e, best_u = e, np.array(lab, dtype=float)
    return best_u, best_e


def ising_enumeration_min(n, src, dst, fixed: dict, variant, weight):
    """Minimum Ising energy over binary labels with ``fixed[i]`` prescribed.

    ``pairwise_sum`` charges ``weight`` per disagreeing edge, ``capped_sum``
    charges ``weight`` per site with at least one disagreeing out-edge.
    Vectorized over labelings, chunked.
    """
    free = [i for i in range(n) if i not in fixed]
    base = np.zeros(n, dtype=np.int8)
    for i, v in fixed.items():
        base[i] = v
    src = np.asarray(src, dtype=int)
    dst = np.asarray(dst, dtype=int)
    best, best_lab = np.inf, None
    total = 2 ** len(free)
    for start in range(0, total, 1 << 16):
        codes = np.arange(start, min(total, start + (1 << 16)))
        lab = np.tile(base, (len(codes), 1))
        for k, i in enumerate(free):
            lab[:, i] = (codes >> k) & 1
        dis = lab[:, src] != lab[:, dst]
        if variant == "pairwise_sum":
            cost = dis.sum(axis=1)
        else:
            hit = np.zeros((len(codes), n), dtype=bool)
            for e, a in enumerate(src):
                hit[:, a] |= dis[:, e]
            cost = hit.sum(axis=1)
        k = int(np.argmin(cost))
        if cost[k] < best:
            best, best_lab = int(cost[k]), lab[k].copy()
    return best_lab, best * weight
