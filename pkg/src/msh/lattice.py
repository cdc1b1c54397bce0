"""Admissible point sets: windows, random parking, cubic grids and audits.

All distance computations run in the window's local coordinates, which are
an isometric image of the global ones.  Box windows may carry a rotated
frame (so that rigid motions of a lattice keep its window attached); tori
are always axis aligned in their local coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

GENERATORS = ("rsa", "cubic", "jitter", "custom")


@dataclass(eq=False)
class Window:
    """Axis-aligned box ``[lower, upper]`` in local coordinates.

    Global coordinates are ``origin + frame @ y`` for a local point ``y``.
    """

    lower: np.ndarray
    upper: np.ndarray
    topology: str = "box"
    frame: Optional[np.ndarray] = None
    origin: Optional[np.ndarray] = None

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError("lower and upper must be vectors of equal length")
        if self.lower.size not in (1, 2, 3):
            raise ValueError("only dimensions 1, 2 and 3 are supported")
        if not np.all(self.upper > self.lower):
            raise ValueError("upper must exceed lower componentwise")
        if self.topology not in ("box", "torus"):
            raise ValueError(f"unknown topology {self.topology!r}")
        d = self.lower.size
        self.frame = np.eye(d) if self.frame is None else np.asarray(self.frame, dtype=float)
        self.origin = np.zeros(d) if self.origin is None else np.asarray(self.origin, dtype=float)
        if self.frame.shape != (d, d):
            raise ValueError("frame must be d x d")

    @classmethod
    def cube(cls, d: int, side: float, topology: str = "box", lower: float = 0.0) -> "Window":
        return cls(np.full(d, lower), np.full(d, lower + side), topology)

    @property
    def d(self) -> int:
        return self.lower.size

    @property
    def lengths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def periodic(self) -> bool:
        return self.topology == "torus"

    @property
    def is_axis_aligned(self) -> bool:
        return bool(np.array_equal(self.frame, np.eye(self.d)) and not np.any(self.origin))

    def to_local(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.is_axis_aligned:
            return x.copy()
        return (x - self.origin) @ self.frame

    def to_global(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.is_axis_aligned:
            return y.copy()
        return self.origin + y @ self.frame.T

    def wrap(self, y: np.ndarray) -> np.ndarray:
        """Wrap local coordinates into ``[lower, upper)`` (torus only)."""
        if not self.periodic:
            return np.asarray(y, dtype=float)
        L = self.lengths
        w = np.mod(np.asarray(y, dtype=float) - self.lower, L)
        w = np.where(w >= L, w - L, w)
        return w + self.lower

    def displacement(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Local displacement ``b - a`` (minimum image on a torus)."""
        delta = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
        if self.periodic:
            L = self.lengths
            delta = delta - L * np.round(delta / L)
        return delta

    def contains_local(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(y)
        if self.periodic:
            return np.ones(len(y), dtype=bool)
        return np.all((y >= self.lower) & (y <= self.upper), axis=1)

    def audit_grid(self, pitch: float) -> np.ndarray:
        """Regular grid of local points with spacing at most ``pitch``.

        Box windows include both faces; tori omit the upper face.
        """
        axes = []
        for lo, hi in zip(self.lower, self.upper):
            n = int(np.ceil((hi - lo) / pitch - 1e-12))
            n = max(n, 1)
            if self.periodic:
                axes.append(lo + (hi - lo) * np.arange(n) / n)
            else:
                axes.append(np.linspace(lo, hi, n + 1))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def to_dict(self) -> dict:
        out = {"lower": self.lower.tolist(), "upper": self.upper.tolist(), "topology": self.topology}
        if not self.is_axis_aligned:
            out["frame"] = self.frame.tolist()
            out["origin"] = self.origin.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Window":
        return cls(data["lower"], data["upper"], data.get("topology", "box"),
                   data.get("frame"), data.get("origin"))


@dataclass(eq=False)
class StochasticLattice:
    """Finite point set with separation ``r`` and covering radius ``R``."""

    points: np.ndarray
    r: float
    R: float
    window: Window
    seed: Optional[int] = None
    generator: str = "custom"
    spacing: Optional[float] = None
    jitter: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != self.window.d:
            raise ValueError("points must have shape (N, d) matching the window")
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}")
        self.points.setflags(write=False)
        self._tree = None

    @property
    def d(self) -> int:
        return self.window.d

    @property
    def n(self) -> int:
        return len(self.points)

    def local_points(self) -> np.ndarray:
        return self.window.wrap(self.window.to_local(self.points))

    def tree(self) -> cKDTree:
        """KD-tree on local coordinates shifted to start at zero (periodic on tori)."""
        if self._tree is None:
            y = self.local_points() - self.window.lower
            if self.window.periodic:
                self._tree = cKDTree(y, boxsize=self.window.lengths)
            else:
                self._tree = cKDTree(y)
        return self._tree

    def query_local(self, y: np.ndarray, k: int = 1):
        """Nearest lattice points of local query points ``y``."""
        y = self.window.wrap(np.atleast_2d(y)) - self.window.lower
        return self.tree().query(y, k=k)

    @property
    def R_pair(self) -> float:
        """Covering constant usable in a pair with ``R > r`` (grids can have ``R <= r``)."""
        return max(self.R, self.r * (1 + 1e-12))

    def is_cubic(self) -> bool:
        return self.generator == "cubic" and self.spacing is not None and self.jitter == 0.0


@dataclass
class AdmissibilityReport:
    r_emp: float
    R_emp: float
    passed: bool
    audit_pitch: float
    n_audit: int

    def to_dict(self) -> dict:
        return {"r_emp": self.r_emp, "R_emp": self.R_emp, "pass": self.passed,
                "audit_pitch": self.audit_pitch, "n_audit": self.n_audit}


def min_separation(lattice: StochasticLattice) -> float:
    if lattice.n < 2:
        return np.inf
    dist, _ = lattice.tree().query(lattice.local_points() - lattice.window.lower, k=2)
    return float(dist[:, 1].min())


def covering_radius(lattice: StochasticLattice, pitch: float, chunk: int = 1 << 18) -> tuple[float, int]:
    """Largest distance from an audit-grid point to the lattice."""
    grid = lattice.window.audit_grid(pitch)
    worst = 0.0
    for start in range(0, len(grid), chunk):
        dist, _ = lattice.query_local(grid[start:start + chunk])
        worst = max(worst, float(dist.max()))
    return worst, len(grid)


def check_admissibility(lattice: StochasticLattice, audit_pitch: Optional[float] = None) -> AdmissibilityReport:
    """Audit the separation and covering conditions of an admissible lattice.

    ``r_emp`` is the exact minimum pairwise distance.  ``R_emp`` is the
    maximum distance from a grid of pitch ``audit_pitch`` (default ``r/8``)
    to the lattice.  The covering condition is accepted when
    ``R_emp <= R`` up to a relative 1e-12 slack, since a grid audit samples
    the supremum and ``Z^d`` attains its covering radius exactly.
    """
    if lattice.n == 0:
        raise ValueError("empty lattice")
    pitch = float(audit_pitch) if audit_pitch is not None else lattice.r / 8.0
    if not pitch > 0:
        raise ValueError("audit pitch must be positive")
    r_emp = min_separation(lattice)
    R_emp, n_audit = covering_radius(lattice, pitch)
    passed = bool(r_emp >= lattice.r * (1 - 1e-12) and R_emp <= lattice.R * (1 + 1e-12))
    return AdmissibilityReport(r_emp, R_emp, passed, pitch, n_audit)


def generate_cubic(window: Window, spacing: float, jitter: float = 0.0,
                   seed: Optional[int] = None, offset: float = 0.5) -> StochasticLattice:
    """Scaled ``Z^d`` grid filling the window, optionally jittered.

    Points sit at ``lower + spacing * (i + offset)``; the default cell-centered
    placement makes the grid's Voronoi cells tile a box window exactly.
    Window sides must be multiples of the spacing.  Jitter displaces each
    point uniformly inside a ball of radius ``jitter``, so
    ``r = spacing - 2 jitter`` and ``R = sqrt(d)/2 spacing + jitter``.
    """
    spacing = float(spacing)
    jitter = float(jitter)
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if not 0 <= jitter < spacing / 2:
        raise ValueError("jitter must satisfy 0 <= jitter < spacing/2")
    d = window.d
    L = window.lengths
    counts = np.rint(L / spacing).astype(int)
    if np.any(counts < 1) or not np.allclose(counts * spacing, L, rtol=0, atol=1e-9 * spacing):
        raise ValueError("window side lengths must be multiples of the spacing")
    axes = [window.lower[i] + spacing * (np.arange(counts[i]) + offset) for i in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    y = np.stack([m.ravel() for m in mesh], axis=1)
    if jitter > 0:
        rng = np.random.default_rng(seed)
        y = y + jitter * _uniform_ball(rng, len(y), d)
    y = window.wrap(y)
    generator = "jitter" if jitter > 0 else "cubic"
    R = np.sqrt(d) / 2 * spacing + jitter
    return StochasticLattice(window.to_global(y), spacing - 2 * jitter, float(R), window,
                             seed=seed, generator=generator, spacing=spacing, jitter=jitter,
                             meta={"offset": offset})


def _uniform_ball(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.random((n, 1)) ** (1.0 / d)


def _greedy_in_order(cands: np.ndarray, diam: float, boxsize) -> np.ndarray:
    """Sequential acceptance of candidates against each other, in stream order."""
    accepted = np.ones(len(cands), dtype=bool)
    if len(cands) < 2:
        return accepted
    tree = cKDTree(cands, boxsize=boxsize)
    pairs = tree.query_pairs(diam * (1 - 1e-15), output_type="ndarray")
    if len(pairs) == 0:
        return accepted
    pairs = np.sort(pairs, axis=1)
    order = np.argsort(pairs[:, 1], kind="stable")
    later = pairs[order, 1]
    earlier = pairs[order, 0]
    bounds = np.flatnonzero(np.diff(later)) + 1
    starts = np.concatenate(([0], bounds))
    stops = np.concatenate((bounds, [len(later)]))
    for s, e in zip(starts, stops):
        if accepted[earlier[s:e]].any():
            accepted[later[s]] = False
    return accepted


def _far_enough(tree: Optional[cKDTree], cands: np.ndarray, diam: float) -> np.ndarray:
    if tree is None:
        return np.ones(len(cands), dtype=bool)
    dist, _ = tree.query(cands, k=1, distance_upper_bound=diam)
    return dist >= diam


def generate_random_parking(window: Window, hardcore_diameter: float, seed: int, *,
                            max_level: int = 6, max_batch: int = 20000,
                            audit_pitch: Optional[float] = None,
                            retry_budget: int = 20, walls: str = "centers") -> StochasticLattice:
    """Random sequential adsorption of hard-core points run to saturation.

    Candidates are drawn uniformly from a set of voxels that is a superset of
    the still-insertable region and accepted iff they keep distance
    ``hardcore_diameter`` from every accepted point, processed in stream
    order.  Since rejection from a superset is exact, this reproduces the
    sequential process; voxels provably covered by one exclusion ball are
    dropped and the survivors refined until none remain or ``max_level`` is
    reached.  Saturation is then certified on a grid of pitch ``diam/4``;
    open audit sites reseed the search, each retry refining four levels deeper.

    In a box, ``walls="inside"`` keeps every exclusion disk inside the box
    (centers at least ``diam/2`` from the faces, the usual hard-disk
    container); ``walls="centers"`` only constrains the centers.

    The returned ``R`` is the audited covering radius plus the audit grid's
    half diagonal, which makes it a certified bound.
    """
    diam = float(hardcore_diameter)
    if diam <= 0:
        raise ValueError("hardcore diameter must be positive")
    if walls not in ("inside", "centers"):
        raise ValueError("walls must be 'inside' or 'centers'")
    margin = diam / 2 if (walls == "inside" and not window.periodic) else 0.0
    L = window.lengths - 2 * margin
    if np.any(L < 0) or np.linalg.norm(L) < diam:
        raise ValueError("window too small to hold two points")
    if window.periodic and L.min() < 2 * diam:
        raise ValueError("torus sides must be at least twice the hardcore diameter")
    d = window.d
    rng = np.random.default_rng(seed)
    boxsize = L if window.periodic else None
    n0 = np.ceil(L / (diam / 4)).astype(np.int64)
    h0 = L / n0
    pts = np.empty((0, d))
    tree = None

    mesh = np.meshgrid(*[np.arange(n, dtype=np.int64) for n in n0], indexing="ij")
    voxels = np.stack([m.ravel() for m in mesh], axis=1)
    level = 0
    stalled = 0
    for attempt in range(retry_budget + 1):
        # each retry may refine deeper, down to slivers far below the audit pitch
        top = min(max_level + 4 * attempt, 40)
        while len(voxels):
            h = h0 / 2 ** level
            if tree is not None:
                centers = (voxels + 0.5) * h
                dist, _ = tree.query(centers, k=1)
                voxels = voxels[dist >= diam - 0.5 * np.linalg.norm(h)]
                if not len(voxels):
                    break
            batch = int(min(max(len(voxels), 64), max_batch))
            pick = voxels[rng.integers(0, len(voxels), size=batch)]
            cands = (pick + rng.random((batch, d))) * h
            if window.periodic:
                cands = np.mod(cands, L)
                cands = np.where(cands >= L, cands - L, cands)
            else:
                cands = np.minimum(cands, L)
            cands = cands[_far_enough(tree, cands, diam)]
            cands = cands[_greedy_in_order(cands, diam, boxsize)]
            if len(cands):
                pts = np.vstack([pts, cands])
                tree = cKDTree(pts, boxsize=boxsize)
                stalled = 0
                continue
            stalled += 1
            if stalled < 2:
                continue
            if level >= top:
                break
            level += 1
            stalled = 0
            offsets = np.stack(np.meshgrid(*[[0, 1]] * d, indexing="ij"), axis=-1).reshape(-1, d)
            voxels = (2 * voxels[:, None, :] + offsets[None, :, :]).reshape(-1, d)
        if len(pts) < 2:
            raise ValueError("window too small to hold two points")
        inner = Window(np.zeros(d), np.maximum(L, 1e-300), window.topology)
        grid = inner.audit_grid(diam / 4)
        dist, _ = tree.query(grid, k=1)
        open_sites = grid[dist >= diam]
        if not len(open_sites):
            break
        # reseed voxels around the open audit sites and keep going
        level = 0
        idx = np.floor(open_sites / h0).astype(np.int64)
        idx = idx % n0 if window.periodic else np.minimum(idx, n0 - 1)
        voxels = np.unique(idx, axis=0)
        stalled = 0
    else:
        raise RuntimeError("saturation audit failed after the retry budget")

    y = pts + window.lower + margin
    pitch = float(audit_pitch) if audit_pitch is not None else diam / 8
    lat = StochasticLattice(window.to_global(y), diam, 2 * diam, window, seed=seed, generator="rsa")
    R_emp, _ = covering_radius(lat, pitch)
    lat.R = float(R_emp + 0.5 * pitch * np.sqrt(d))
    lat.meta.update({"saturation_level": level, "audit_pitch": pitch, "R_emp": R_emp, "walls": walls})
    return lat


def packing_fraction(lattice: StochasticLattice) -> float:
    """Fraction of the window covered by the disks of radius ``r/2``."""
    from math import gamma, pi

    d = lattice.d
    ball = pi ** (d / 2) / gamma(d / 2 + 1) * (lattice.r / 2) ** d
    return lattice.n * ball / lattice.window.volume


def transform_lattice(lattice: StochasticLattice, rotation: np.ndarray,
                      shift: Optional[np.ndarray] = None) -> StochasticLattice:
    """Rigid motion ``x -> Q x + z``.

    Box windows move with the points.  Tori stay in place and the points wrap;
    ``Q`` must then map the period lattice onto itself.
    """
    d = lattice.d
    Q = np.asarray(rotation, dtype=float).reshape(d, d)
    z = np.zeros(d) if shift is None else np.asarray(shift, dtype=float).reshape(d)
    if np.abs(Q.T @ Q - np.eye(d)).max() > 1e-12:
        raise ValueError("rotation must be orthogonal within 1e-12")
    win = lattice.window
    if win.periodic:
        periods = np.diag(win.lengths)
        image = np.linalg.solve(periods, win.frame.T @ Q @ win.frame @ periods)
        if np.abs(image - np.round(image)).max() > 1e-9:
            raise ValueError("rotation does not preserve the torus periods")
        x = lattice.points @ Q.T + z
        y = win.wrap(win.to_local(x))
        new_win = win
        pts = win.to_global(y)
    else:
        pts = lattice.points @ Q.T + z
        new_win = Window(win.lower, win.upper, "box", Q @ win.frame, Q @ win.origin + z)
    return replace(lattice, points=pts, window=new_win, meta=dict(lattice.meta))


# --- point-cloud files ------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x)) if np.isfinite(x) else str(x)


def write_points(path, lattice: StochasticLattice) -> None:
    """CSV: header ``d,topology,r,R,seed``, its values, a window line, then points."""
    win = lattice.window
    with open(path, "w") as fh:
        fh.write("d,topology,r,R,seed\n")
        seed = "" if lattice.seed is None else str(lattice.seed)
        fh.write(f"{lattice.d},{win.topology},{lattice.r:.17g},{lattice.R:.17g},{seed}\n")
        extra = {"generator": lattice.generator, "spacing": lattice.spacing, "jitter": lattice.jitter}
        fh.write("# window " + " ".join(f"{v:.17g}" for v in np.r_[win.lower, win.upper]))
        fh.write(" " + " ".join(f"{k}={v}" for k, v in extra.items()) + "\n")
        if not win.is_axis_aligned:
            fh.write("# frame " + " ".join(f"{v:.17g}" for v in np.r_[win.frame.ravel(), win.origin]) + "\n")
        for p in lattice.points:
            fh.write(",".join(f"{v:.17g}" for v in p) + "\n")


def read_points(path) -> StochasticLattice:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if lines[0].replace(" ", "") != "d,topology,r,R,seed":
        raise ValueError("not a point-cloud file")
    d_s, topo, r_s, R_s, seed_s = lines[1].split(",")
    d = int(d_s)
    lower = np.zeros(d)
    upper = None
    frame = origin = None
    extra = {}
    body = []
    for ln in lines[2:]:
        if ln.startswith("# window"):
            toks = ln.split()[2:]
            vals = [float(t) for t in toks[:2 * d]]
            lower, upper = np.array(vals[:d]), np.array(vals[d:])
            for t in toks[2 * d:]:
                k, v = t.split("=", 1)
                extra[k] = v
        elif ln.startswith("# frame"):
            vals = np.array([float(t) for t in ln.split()[2:]])
            frame, origin = vals[:d * d].reshape(d, d), vals[d * d:]
        elif not ln.startswith("#"):
            body.append([float(t) for t in ln.split(",")])
    pts = np.array(body, dtype=float).reshape(-1, d)
    if upper is None:
        lower, upper = pts.min(axis=0), pts.max(axis=0)
    win = Window(lower, upper, topo, frame, origin)
    spacing = extra.get("spacing", "None")
    return StochasticLattice(
        pts, float(r_s), float(R_s), win,
        seed=int(seed_s) if seed_s else None,
        generator=extra.get("generator", "custom"),
        spacing=None if spacing == "None" else float(spacing),
        jitter=float(extra.get("jitter", 0.0)),
    )
