"""Images as data on the domain ``D`` and their discretization on a lattice.

An image of ``width x height`` pixels covers ``D = [0, width/height] x [0, 1]``;
pixel ``(row, col)`` has its center at ``((col + 0.5)/height, 1 - (row + 0.5)/height)``.
``g`` is the bilinear interpolant of the pixel centers, constant-extended up
to the border of ``D`` and zero outside ``D``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .energy import LatticeField
from .lattice import StochasticLattice, Window
from .tessellation import Tessellation

QUAD = 16  # midpoint sub-grid per axis for ball averages


@dataclass(eq=False)
class ImageData:
    samples: np.ndarray  # (height, width, channels) in [0, 1]

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 2:
            s = s[:, :, None]
        if s.ndim != 3 or s.shape[2] not in (1, 3):
            raise ValueError("samples must have shape (height, width, 1|3)")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        if s.min() < 0 or s.max() > 1:
            raise ValueError("samples must lie in [0, 1]")
        self.samples = s

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def channels(self) -> int:
        return self.samples.shape[2]

    @property
    def pitch(self) -> float:
        return 1.0 / self.height

    @property
    def extent(self) -> np.ndarray:
        return np.array([self.width / self.height, 1.0])

    @classmethod
    def from_function(cls, func, width: int, height: int) -> "ImageData":
        """Sample ``func(x, y)`` (vectorized, values in [0, 1]) at the pixel centers."""
        col, row = np.meshgrid(np.arange(width), np.arange(height))
        x = (col + 0.5) / height
        y = 1.0 - (row + 0.5) / height
        return cls(np.asarray(func(x, y), dtype=float))

    def domain_window(self, epsilon: float, topology: str = "box") -> Window:
        """Window in lattice units whose scaled version is ``D``."""
        return Window(np.zeros(2), self.extent / epsilon, topology)

    def sample(self, z: np.ndarray) -> np.ndarray:
        """``g`` at physical points ``z`` of shape ``(K, 2)``; rows of length ``channels``."""
        z = np.atleast_2d(z)
        H, W = self.height, self.width
        fx = z[:, 0] * H - 0.5
        fy = (1.0 - z[:, 1]) * H - 0.5
        fx = np.clip(fx, 0.0, W - 1.0)
        fy = np.clip(fy, 0.0, H - 1.0)
        x0 = np.minimum(np.floor(fx).astype(int), max(W - 2, 0))
        y0 = np.minimum(np.floor(fy).astype(int), max(H - 2, 0))
        x1 = np.minimum(x0 + 1, W - 1)
        y1 = np.minimum(y0 + 1, H - 1)
        tx = (fx - x0)[:, None]
        ty = (fy - y0)[:, None]
        s = self.samples
        val = ((1 - tx) * (1 - ty) * s[y0, x0] + tx * (1 - ty) * s[y0, x1]
               + (1 - tx) * ty * s[y1, x0] + tx * ty * s[y1, x1])
        ext = self.extent
        outside = (z[:, 0] < 0) | (z[:, 0] > ext[0]) | (z[:, 1] < 0) | (z[:, 1] > ext[1])
        val[outside] = 0.0
        return val


def _ball_offsets(n: int = QUAD) -> np.ndarray:
    t = (np.arange(n) + 0.5) / n * 2 - 1
    g = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
    return g[np.sum(g ** 2, axis=1) <= 1.0]


def discretize_fidelity(image: ImageData, lattice: StochasticLattice, epsilon: float,
                        chunk: int = 4096) -> LatticeField:
    """``g_eps(eps x)`` = average of ``g`` over ``B_eps(eps x)`` (midpoint rule, 16x16 sub-grid)."""
    if lattice.d != 2:
        raise ValueError("images live in the plane")
    if epsilon < image.pitch:
        warnings.warn("epsilon is below the pixel pitch", stacklevel=2)
    offs = _ball_offsets() * epsilon
    sites = epsilon * lattice.points
    out = np.empty((lattice.n, image.channels))
    for a in range(0, lattice.n, chunk):
        s = sites[a:a + chunk]
        z = (s[:, None, :] + offs[None]).reshape(-1, 2)
        out[a:a + chunk] = image.sample(z).reshape(len(s), len(offs), -1).mean(axis=1)
    return LatticeField(lattice, epsilon, out)


def rasterize(u: LatticeField, tess: Optional[Tessellation], width: int, height: int) -> ImageData:
    """Pixel value = value of the Voronoi cell holding the pixel center; clipped to [0, 1]."""
    lat = u.lattice
    if lat.d != 2:
        raise ValueError("rasterize needs a planar lattice")
    col, row = np.meshgrid(np.arange(width), np.arange(height))
    z = np.stack([(col + 0.5) / height, 1.0 - (row + 0.5) / height], axis=-1).reshape(-1, 2)
    _, idx = lat.query_local(lat.window.to_local(z / u.epsilon))
    vals = u.values[idx].reshape(height, width, -1)
    return ImageData(np.clip(vals, 0.0, 1.0))


def nearest_values(u: LatticeField, z: np.ndarray) -> np.ndarray:
    lat = u.lattice
    _, idx = lat.query_local(lat.window.to_local(np.atleast_2d(z) / u.epsilon))
    return u.values[idx]


def l2_error(g_eps: LatticeField, image: ImageData, n: int = 1024) -> float:
    """``||g_eps - g||_{L^2(D)}`` by the midpoint rule on ``n`` points per unit length."""
    ext = image.extent
    nx, ny = max(1, int(round(n * ext[0]))), max(1, int(round(n * ext[1])))
    x = (np.arange(nx) + 0.5) / nx * ext[0]
    y = (np.arange(ny) + 0.5) / ny * ext[1]
    z = np.stack(np.meshgrid(x, y, indexing="ij"), axis=-1).reshape(-1, 2)
    total = 0.0
    for a in range(0, len(z), 1 << 18):
        zz = z[a:a + (1 << 18)]
        diff = nearest_values(g_eps, zz) - image.sample(zz)
        total += float(np.sum(diff ** 2))
    return float(np.sqrt(total * ext.prod() / len(z)))
