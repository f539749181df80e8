"""Regular 2D grids, model fields, box bounds and acquisition geometry.

Fields are flat numpy arrays of length ``grid.n`` holding interior values
only; linear index ``i * nz + j`` with ``i`` the horizontal (x) index and
``j`` the vertical (z) index, so z runs fastest.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid2D:
    nx: int
    nz: int
    dx: float
    dz: float
    npml: int = 0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.nz) != self.nz or int(self.npml) != self.npml:
            raise GridError("grid counts must be integers")
        if self.nx < 3 or self.nz < 3:
            raise GridError(f"need nx, nz >= 3, got ({self.nx}, {self.nz})")
        if not (self.dx > 0 and self.dz > 0):
            raise GridError(f"spacings must be positive, got ({self.dx}, {self.dz})")
        if self.npml < 0:
            raise GridError(f"npml must be >= 0, got {self.npml}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def n(self) -> int:
        return self.nx * self.nz

    @property
    def nx_pad(self) -> int:
        return self.nx + 2 * self.npml

    @property
    def nz_pad(self) -> int:
        return self.nz + 2 * self.npml

    @property
    def n_pad(self) -> int:
        return self.nx_pad * self.nz_pad

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.nz)

    @property
    def x(self) -> np.ndarray:
        return self.origin[0] + self.dx * np.arange(self.nx)

    @property
    def z(self) -> np.ndarray:
        return self.origin[1] + self.dz * np.arange(self.nz)

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, zmin, zmax) of the interior node positions."""
        x0, z0 = self.origin
        return (x0, x0 + (self.nx - 1) * self.dx, z0, z0 + (self.nz - 1) * self.dz)

    def index(self, i, j):
        """Linear interior index of node (i, j)."""
        i = np.asarray(i)
        j = np.asarray(j)
        if np.any((i < 0) | (i >= self.nx) | (j < 0) | (j >= self.nz)):
            raise IndexError("node outside interior grid")
        return i * self.nz + j

    def unindex(self, k):
        k = np.asarray(k)
        if np.any((k < 0) | (k >= self.n)):
            raise IndexError("linear index outside interior grid")
        return k // self.nz, k % self.nz

    def pad_index(self, i, j):
        """Linear padded index of interior node (i, j)."""
        i = np.asarray(i)
        j = np.asarray(j)
        self.index(i, j)
        return (i + self.npml) * self.nz_pad + (j + self.npml)

    @property
    def interior_pad_indices(self) -> np.ndarray:
        """Padded linear index of every interior node, in interior order."""
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.nz), indexing="ij")
        return ((i + self.npml) * self.nz_pad + (j + self.npml)).ravel()

    def nearest_node(self, x: float, z: float) -> tuple[int, int]:
        """Grid node closest to (x, z); raises if the point is off the interior."""
        xmin, xmax, zmin, zmax = self.extent
        tol = 1e-9 * max(self.dx, self.dz)
        if not (xmin - tol <= x <= xmax + tol and zmin - tol <= z <= zmax + tol):
            raise GridError(f"position ({x}, {z}) lies outside the interior domain")
        i = int(np.floor((x - self.origin[0]) / self.dx + 0.5))
        j = int(np.floor((z - self.origin[1]) / self.dz + 0.5))
        return min(max(i, 0), self.nx - 1), min(max(j, 0), self.nz - 1)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat arrays of node x and z coordinates in interior order."""
        X, Z = np.meshgrid(self.x, self.z, indexing="ij")
        return X.ravel(), Z.ravel()

    def as_image(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values).reshape(self.nx, self.nz)

    def check_field(self, values, name="field") -> np.ndarray:
        values = np.asarray(values)
        if values.shape != (self.n,):
            raise GridError(f"{name} has shape {values.shape}, expected ({self.n},)")
        return values


def make_grid(nx, nz, dx, dz, npml=0, origin=(0.0, 0.0)) -> Grid2D:
    return Grid2D(int(nx), int(nz), float(dx), float(dz), int(npml), tuple(origin))


# ---------------------------------------------------------------------------
# shapes and piecewise-constant fields


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    diameter: float

    def contains(self, x, z):
        cx, cz = self.center
        return (x - cx) ** 2 + (z - cz) ** 2 <= (0.5 * self.diameter) ** 2

    def bbox(self):
        cx, cz = self.center
        r = 0.5 * self.diameter
        return cx - r, cx + r, cz - r, cz + r


@dataclass(frozen=True)
class Rectangle:
    center: tuple[float, float]
    width: float
    height: float

    def contains(self, x, z):
        cx, cz = self.center
        return (np.abs(x - cx) <= 0.5 * self.width) & (np.abs(z - cz) <= 0.5 * self.height)

    def bbox(self):
        cx, cz = self.center
        return cx - self.width / 2, cx + self.width / 2, cz - self.height / 2, cz + self.height / 2


def field_from_regions(grid: Grid2D, background: float, regions: Sequence = ()) -> np.ndarray:
    """Piecewise-constant field; later regions override earlier ones.

    Membership is a plain node-center test. A shape whose bounding box misses
    the domain entirely is rejected.
    """
    X, Z = grid.cell_centers()
    values = np.full(grid.n, float(background))
    xmin, xmax, zmin, zmax = grid.extent
    for shape, value in regions:
        bx0, bx1, bz0, bz1 = shape.bbox()
        if bx1 < xmin or bx0 > xmax or bz1 < zmin or bz0 > zmax:
            raise GridError(f"{shape} lies entirely outside the domain")
        values[shape.contains(X, Z)] = float(value)
    return values


def sample_at(grid: Grid2D, values: np.ndarray, x: float, z: float):
    i, j = grid.nearest_node(x, z)
    return np.asarray(values)[grid.index(i, j)]


def velocity_to_slowness_sq(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if np.any(~(v > 0)):
        raise ValueError("velocity must be strictly positive")
    return 1.0 / (v * v)


def slowness_sq_to_velocity(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if np.any(~(m > 0)):
        raise ValueError("squared slowness must be strictly positive")
    return 1.0 / np.sqrt(m)


# ---------------------------------------------------------------------------
# bounds and acquisition


@dataclass(frozen=True)
class BoxBounds:
    """Elementwise box [lower, upper]; scalars broadcast, ``inf`` disables a side."""

    lower: np.ndarray | float = -np.inf
    upper: np.ndarray | float = np.inf

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def unbounded(self) -> bool:
        return bool(np.all(np.isneginf(self.lower)) and np.all(np.isposinf(self.upper)))

    def contains(self, x, tol=0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    @classmethod
    def velocity_to_slowness_sq(cls, vmin: float, vmax: float) -> "BoxBounds":
        """Squared-slowness box from a velocity interval (the ends swap)."""
        lo = 0.0 if np.isinf(vmax) else 1.0 / vmax**2
        hi = np.inf if vmin <= 0 else 1.0 / vmin**2
        return cls(lo, hi)


@dataclass(frozen=True)
class Acquisition:
    """Point sources and receivers, each snapped to its nearest interior node."""

    grid: Grid2D
    sources: tuple[tuple[float, float], ...]
    receivers: tuple[tuple[float, float], ...]
    source_nodes: np.ndarray = field(init=False, repr=False)
    receiver_nodes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        src = tuple((float(x), float(z)) for x, z in self.sources)
        rec = tuple((float(x), float(z)) for x, z in self.receivers)
        object.__setattr__(self, "sources", src)
        object.__setattr__(self, "receivers", rec)
        if len(src) == 0 or len(rec) == 0:
            raise GridError("acquisition needs at least one source and one receiver")
        if len(rec) >= self.grid.n:
            raise GridError("receiver count must be smaller than the number of grid nodes")
        snodes = np.array([self.grid.index(*self.grid.nearest_node(x, z)) for x, z in src])
        rnodes = np.array([self.grid.index(*self.grid.nearest_node(x, z)) for x, z in rec])
        if len(np.unique(rnodes)) != len(rnodes):
            raise GridError("two receivers snap to the same grid node")
        snodes.setflags(write=False)
        rnodes.setflags(write=False)
        object.__setattr__(self, "source_nodes", snodes)
        object.__setattr__(self, "receiver_nodes", rnodes)

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    @property
    def n_receivers(self) -> int:
        return len(self.receivers)

    def to_dict(self) -> dict:
        return {"sources": [list(p) for p in self.sources], "receivers": [list(p) for p in self.receivers]}
