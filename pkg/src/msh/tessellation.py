"""Voronoi cells of a lattice: exact polygons in the plane, sampled volumes otherwise."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import Voronoi

from .geometry import ball_volume, _ghosted
from .lattice import StochasticLattice


@dataclass(eq=False)
class Tessellation:
    """Cell volumes and, in d <= 2, cell geometry in local coordinates.

    On a torus the polygons are unwrapped around their generating point; in a
    box they are clipped to the window, so volumes always sum to the window
    volume (up to rounding, or up to sampling error when ``method='mc'``).
    """

    volumes: np.ndarray
    cells: Optional[list]
    method: str
    meta: dict = field(default_factory=dict)


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_polygon_box(poly: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of a convex polygon to ``[lo, hi]``."""
    out = np.asarray(poly, dtype=float)
    for axis in range(2):
        for bound, sign in ((lo[axis], -1.0), (hi[axis], 1.0)):
            if len(out) == 0:
                return out
            s = sign * (out[:, axis] - bound)  # > 0 means outside
            nxt = np.roll(out, -1, axis=0)
            sn = np.roll(s, -1)
            res = []
            for p, q, sp, sq in zip(out, nxt, s, sn):
                if sp <= 0:
                    res.append(p)
                if (sp <= 0) != (sq <= 0):
                    t = sp / (sp - sq)
                    pt = p + t * (q - p)
                    pt[axis] = bound
                    res.append(pt)
            out = np.array(res).reshape(-1, 2)
    return out


def _sorted_loop(verts: np.ndarray) -> np.ndarray:
    c = verts.mean(axis=0)
    ang = np.arctan2(verts[:, 1] - c[1], verts[:, 0] - c[0])
    return verts[np.argsort(ang)]


def _cells_2d(lattice: StochasticLattice) -> list:
    win = lattice.window
    p, _ = _ghosted(lattice, 3 * lattice.R)
    center = 0.5 * (win.lower + win.upper)
    radius = 10 * (np.linalg.norm(win.lengths) + 3 * lattice.R)
    ang = 2 * np.pi * np.arange(16) / 16
    sentinels = center + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    vor = Voronoi(np.vstack([p, sentinels]))
    cells = []
    for i in range(lattice.n):
        reg = vor.regions[vor.point_region[i]]
        if -1 in reg or not reg:
            raise RuntimeError("unbounded cell for a lattice point")
        poly = _sorted_loop(vor.vertices[reg])
        if not win.periodic:
            poly = clip_polygon_box(poly, win.lower, win.upper)
        cells.append(poly)
    return cells


def _cells_1d(lattice: StochasticLattice) -> list:
    win = lattice.window
    y = lattice.local_points()[:, 0]
    order = np.argsort(y)
    ys = y[order]
    if win.periodic:
        L = win.lengths[0]
        left = 0.5 * (ys + np.roll(ys, 1) - np.r_[L, np.zeros(len(ys) - 1)])
        right = 0.5 * (ys + np.roll(ys, -1) + np.r_[np.zeros(len(ys) - 1), L])
    else:
        mids = 0.5 * (ys[1:] + ys[:-1])
        left = np.r_[win.lower[0], mids]
        right = np.r_[mids, win.upper[0]]
    cells = [None] * len(ys)
    for k, i in enumerate(order):
        cells[i] = np.array([left[k], right[k]])
    return cells


def sample_cell(lattice: StochasticLattice, i: int, n: int, rng: np.random.Generator):
    """Uniform samples of ``B_R(x_i)`` (local coordinates, clipped to a box window)
    and a mask of those falling in the cell of ``x_i``."""
    d = lattice.d
    y = lattice.local_points()[i]
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    z = y + lattice.R * g * rng.random((n, 1)) ** (1.0 / d)
    inside = lattice.window.contains_local(z)
    _, nearest = lattice.query_local(z)
    return z, inside & (nearest == i), inside


def compute_tessellation(lattice: StochasticLattice, mc_samples: int = 10_000,
                         seed: int = 0) -> Tessellation:
    """Voronoi cells; polygons when ``d=2``, intervals when ``d=1``, volumes by sampling otherwise."""
    if lattice.d == 2:
        cells = _cells_2d(lattice)
        vols = np.array([polygon_area(c) for c in cells])
        method = "exact"
    elif lattice.d == 1:
        cells = _cells_1d(lattice)
        vols = np.array([c[1] - c[0] for c in cells])
        method = "exact"
    else:
        rng = np.random.default_rng(seed)
        ball = ball_volume(lattice.d, lattice.R)
        vols = np.empty(lattice.n)
        for i in range(lattice.n):
            _, hit, _ = sample_cell(lattice, i, mc_samples, rng)
            vols[i] = ball * hit.mean()
        cells = None
        method = "mc"
    if np.any(vols <= 0):
        raise ValueError("zero-volume cell")
    return Tessellation(vols, cells, method, {"mc_samples": mc_samples if method == "mc" else 0})


def voronoi_inclusion_audit(lattice: StochasticLattice, samples: int = 1000,
                            seed: int = 0, cells: Optional[np.ndarray] = None) -> dict:
    """Check ``B_{r/2}(x) in C(x)`` and ``C(x) in B_R(x)`` by sampling.

    The second inclusion is probed with uniform points of ``B_{1.5R}(x)``
    (restricted to the window): every sample whose nearest lattice point is
    ``x`` must lie strictly within ``R`` of ``x``.
    """
    rng = np.random.default_rng(seed)
    d = lattice.d
    y = lattice.local_points()
    idx = np.arange(lattice.n) if cells is None else np.asarray(cells)
    inner_bad = outer_bad = 0
    checked = 0
    for i in idx:
        g = rng.standard_normal((samples, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        rad = rng.random((samples, 1)) ** (1.0 / d)
        z_in = y[i] + (0.5 * lattice.r) * (1 - 1e-12) * g * rad
        z_in = z_in[lattice.window.contains_local(z_in)]
        _, near = lattice.query_local(z_in)
        inner_bad += int(np.sum(near != i))
        z_out = y[i] + 1.5 * lattice.R * g * rad
        z_out = z_out[lattice.window.contains_local(z_out)]
        _, near = lattice.query_local(z_out)
        mine = z_out[near == i]
        dist = np.linalg.norm(lattice.window.displacement(y[i], mine), axis=1)
        outer_bad += int(np.sum(dist >= lattice.R))
        checked += 1
    return {"cells": checked, "inner_violations": inner_bad, "outer_violations": outer_bad,
            "passed": inner_bad == 0 and outer_bad == 0}
