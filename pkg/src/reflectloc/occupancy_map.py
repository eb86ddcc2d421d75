"""Uniform voxel occupancy grid: rasterization, ray traversal and local normals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence, TextIO, Union

import numpy as np

VoxelKey = tuple[int, int, int]

# relative tolerance when snapping grid coordinates to integer cell boundaries
_SNAP = 1e-9


class GridBoundsError(ValueError):
    """A voxel key or box lies outside the grid bounds."""


class DegenerateGeometryError(ValueError):
    """Too few or collinear cells to fit a plane."""


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box ``[lo, hi]`` in meters."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("box corners must be 3D")
        if any(h < l for l, h in zip(lo, hi)):
            raise ValueError(f"box has hi < lo: {lo} {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.lo) + np.asarray(self.hi)) / 2

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    def contains(self, p, tol: float = 0.0) -> bool:
        return all(l - tol <= x <= h + tol for x, l, h in zip(p, self.lo, self.hi))

    def intersects(self, other: "Box") -> bool:
        return all(
            a_lo <= b_hi and b_lo <= a_hi
            for a_lo, a_hi, b_lo, b_hi in zip(self.lo, self.hi, other.lo, other.hi)
        )


@dataclass(frozen=True)
class HitRecord:
    voxel: VoxelKey
    hit_length: float
    hit_point: np.ndarray
    normal: Optional[np.ndarray] = None


@dataclass(frozen=True)
class LocalNeighborhood:
    center: VoxelKey
    cells: list[VoxelKey]
    half_width: int


def _snap_floor(x: float) -> int:
    r = round(x)
    return int(r) if abs(x - r) < _SNAP * max(1.0, abs(x)) else math.floor(x)


def _snap_ceil(x: float) -> int:
    r = round(x)
    return int(r) if abs(x - r) < _SNAP * max(1.0, abs(x)) else math.ceil(x)


@dataclass
class OccupancyGrid:
    """Voxel grid with edge length ``resolution`` anchored at ``origin``.

    Voxel ``(ix, iy, iz)`` spans ``origin + [i, i+1) * resolution`` per axis.
    Valid keys are the cells overlapping ``bounds``. Occupancy is stored as a
    dense boolean array so that traversal and neighborhood queries are O(1)
    lookups; after construction the grid is treated as read-only.
    """

    origin: tuple[float, float, float]
    resolution: float
    bounds: Box
    _occ: np.ndarray = field(init=False, repr=False)
    _imin: np.ndarray = field(init=False, repr=False)
    _imax: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError(f"resolution must be > 0, got {self.resolution}")
        self.origin = tuple(float(v) for v in self.origin)
        self.resolution = float(self.resolution)
        o, r = self.origin, self.resolution
        self._imin = np.array(
            [_snap_floor((lo - oo) / r) for lo, oo in zip(self.bounds.lo, o)], dtype=np.int64
        )
        self._imax = np.array(
            [_snap_ceil((hi - oo) / r) - 1 for hi, oo in zip(self.bounds.hi, o)], dtype=np.int64
        )
        self._imax = np.maximum(self._imax, self._imin)
        self._occ = np.zeros(tuple(self._imax - self._imin + 1), dtype=bool)

    @classmethod
    def from_bounds(cls, bounds: Box, resolution: float = 0.1) -> "OccupancyGrid":
        return cls(origin=bounds.lo, resolution=resolution, bounds=bounds)

    # -- keys and geometry -------------------------------------------------

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._occ.shape

    @property
    def index_min(self) -> VoxelKey:
        return tuple(int(v) for v in self._imin)

    @property
    def index_max(self) -> VoxelKey:
        return tuple(int(v) for v in self._imax)

    def in_bounds(self, key: Sequence[int]) -> bool:
        return all(lo <= k <= hi for k, lo, hi in zip(key, self._imin, self._imax))

    def key_of(self, point) -> VoxelKey:
        g = (np.asarray(point, dtype=float) - self.origin) / self.resolution
        return tuple(int(v) for v in np.floor(g))

    def center_of(self, keys) -> np.ndarray:
        """Voxel center(s); accepts one key or an ``(n, 3)`` array of keys."""
        k = np.asarray(keys, dtype=float)
        return np.asarray(self.origin) + (k + 0.5) * self.resolution

    def is_occupied(self, key: Sequence[int]) -> bool:
        if not self.in_bounds(key):
            return False
        i = np.asarray(key) - self._imin
        return bool(self._occ[i[0], i[1], i[2]])

    @property
    def occupied(self) -> set[VoxelKey]:
        idx = np.argwhere(self._occ) + self._imin
        return {tuple(int(v) for v in row) for row in idx}

    @property
    def occupied_count(self) -> int:
        return int(self._occ.sum())

    def occupied_keys(self) -> np.ndarray:
        """Sorted ``(n, 3)`` integer array of occupied keys."""
        return np.argwhere(self._occ) + self._imin

    # -- construction ------------------------------------------------------

    def set_occupied(self, key: Sequence[int]) -> "OccupancyGrid":
        key = tuple(int(k) for k in key)
        if not self.in_bounds(key):
            raise GridBoundsError(
                f"voxel {key} outside index range {self.index_min}..{self.index_max}"
            )
        i = np.asarray(key) - self._imin
        self._occ[i[0], i[1], i[2]] = True
        return self

    def rasterize_box(self, box: Box) -> "OccupancyGrid":
        """Occupy every voxel whose center lies in the closed ``box``."""
        if not box.intersects(self.bounds):
            raise GridBoundsError(f"box {box} does not intersect grid bounds {self.bounds}")
        r = self.resolution
        lo = [
            max(_snap_ceil((b - o) / r - 0.5), int(m))
            for b, o, m in zip(box.lo, self.origin, self._imin)
        ]
        hi = [
            min(_snap_floor((b - o) / r - 0.5), int(m))
            for b, o, m in zip(box.hi, self.origin, self._imax)
        ]
        if any(h < l for l, h in zip(lo, hi)):
            return self
        s = [slice(l - int(m), h - int(m) + 1) for l, h, m in zip(lo, hi, self._imin)]
        self._occ[s[0], s[1], s[2]] = True
        return self

    def copy(self) -> "OccupancyGrid":
        g = OccupancyGrid(self.origin, self.resolution, self.bounds)
        g._occ = self._occ.copy()
        return g

    def __eq__(self, other) -> bool:
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            self.origin == other.origin
            and self.resolution == other.resolution
            and self.bounds == other.bounds
            and np.array_equal(self._occ, other._occ)
        )


def bounds_exit_length(bounds: Box, origin, direction) -> float:
    """Ray parameter where a ray starting inside ``bounds`` leaves it."""
    t = math.inf
    for o, d, lo, hi in zip(origin, direction, bounds.lo, bounds.hi):
        if d > 0:
            t = min(t, (hi - o) / d)
        elif d < 0:
            t = min(t, (lo - o) / d)
    return max(t, 0.0)


def walk_voxels(
    grid: OccupancyGrid, origin, direction, max_length: float
) -> Iterator[tuple[VoxelKey, float]]:
    """Yield ``(key, entry_length)`` for each voxel the ray passes through, in order.

    Incremental grid DDA. The entry length of the start voxel is 0. Stops once
    the next boundary crossing lies at or beyond ``min(max_length, bounds exit)``.
    """
    ox, oy, oz = (float(v) for v in origin)
    dx, dy, dz = (float(v) for v in direction)
    r = grid.resolution
    gx, gy, gz = grid.origin
    t_end = min(float(max_length), bounds_exit_length(grid.bounds, (ox, oy, oz), (dx, dy, dz)))
    imin, imax = grid._imin.tolist(), grid._imax.tolist()

    o = (ox, oy, oz)
    d = (dx, dy, dz)
    g0 = (gx, gy, gz)
    key = [0, 0, 0]
    step = [0, 0, 0]
    t_next = [math.inf, math.inf, math.inf]
    for a in range(3):
        u = (o[a] - g0[a]) / r
        k = _snap_floor(u)
        # a start on a cell face belongs to the cell the ray moves into
        if d[a] < 0 and abs(u - k) < _SNAP * max(1.0, abs(u)):
            k -= 1
        key[a] = k
        if d[a] > 0:
            step[a] = 1
            t_next[a] = ((k + 1) * r + g0[a] - o[a]) / d[a]
        elif d[a] < 0:
            step[a] = -1
            t_next[a] = (k * r + g0[a] - o[a]) / d[a]

    t = 0.0
    while True:
        if not (
            imin[0] <= key[0] <= imax[0]
            and imin[1] <= key[1] <= imax[1]
            and imin[2] <= key[2] <= imax[2]
        ):
            return
        yield (key[0], key[1], key[2]), t
        if t_next[0] <= t_next[1] and t_next[0] <= t_next[2]:
            a = 0
        elif t_next[1] <= t_next[2]:
            a = 1
        else:
            a = 2
        t = t_next[a]
        if t >= t_end:
            return
        key[a] += step[a]
        edge = key[a] + 1 if step[a] > 0 else key[a]
        t_next[a] = (edge * r + g0[a] - o[a]) / d[a]


def traverse_ray(
    grid: OccupancyGrid, origin, direction, max_length: float
) -> Optional[HitRecord]:
    """First occupied voxel along the ray, or ``None`` if it leaves the map first.

    The returned record has no normal; ``hit_point`` is the entry point into
    the voxel (``hit_length == 0`` if the ray starts inside occupancy).
    """
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    if not max_length > 0:
        raise ValueError("max_length must be positive")
    origin = np.asarray(origin, dtype=float)
    if not grid.bounds.contains(origin, tol=1e-9):
        raise GridBoundsError(f"ray origin {origin.tolist()} outside grid bounds")
    occ = grid._occ
    i0, j0, k0 = grid._imin.tolist()
    for key, t in walk_voxels(grid, origin, direction, max_length):
        if occ[key[0] - i0, key[1] - j0, key[2] - k0]:
            return HitRecord(voxel=key, hit_length=t, hit_point=origin + direction * t)
    return None


def collect_neighborhood(
    grid: OccupancyGrid, center: VoxelKey, half_width: int = 2
) -> LocalNeighborhood:
    """All occupied cells in the ``(2*half_width+1)^3`` cube around ``center``."""
    c = np.asarray(center) - grid._imin
    lo = np.maximum(c - half_width, 0)
    hi = np.minimum(c + half_width + 1, grid._occ.shape)
    block = grid._occ[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
    idx = np.argwhere(block) + lo + grid._imin
    cells = [tuple(int(v) for v in row) for row in idx]
    return LocalNeighborhood(center=tuple(int(v) for v in center), cells=cells, half_width=half_width)


def entry_face(grid: OccupancyGrid, hit: HitRecord, direction) -> tuple[int, int]:
    """``(axis, side)`` of the face through which the ray entered ``hit.voxel``.

    ``side`` is -1 for the lower face, +1 for the upper one. The face is the
    one the hit point lies on; at edges and corners the first axis wins.
    """
    d = np.asarray(direction, dtype=float)
    lo = grid.center_of(hit.voxel) - grid.resolution / 2
    p = np.asarray(hit.hit_point, dtype=float)
    gaps = np.full(3, np.inf)
    for a in range(3):
        if d[a] > 0:
            gaps[a] = abs(p[a] - lo[a])
        elif d[a] < 0:
            gaps[a] = abs(p[a] - lo[a] - grid.resolution)
    axis = int(np.argmin(gaps))
    return axis, (-1 if d[axis] > 0 else 1)


def exposed_cells(grid: OccupancyGrid, neighborhood: LocalNeighborhood, axis: int,
                  side: int) -> LocalNeighborhood:
    """Subset of the neighborhood whose neighbor across the given face is free."""
    keep = []
    for c in neighborhood.cells:
        n = list(c)
        n[axis] += side
        if not grid.is_occupied(n):
            keep.append(c)
    return LocalNeighborhood(neighborhood.center, keep, neighborhood.half_width)


def fit_plane_normal(points: np.ndarray, rank_tol: float = 1e-9) -> np.ndarray:
    """Unit normal of the least-squares plane through ``points`` (unsigned).

    Minimizes ``||A^T n||`` where the columns of ``A`` are offsets from the
    centroid; the minimizer is the left singular vector of the smallest
    singular value.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] < 3:
        raise DegenerateGeometryError("need at least 3 points for a plane fit")
    a = (points - points.mean(axis=0)).T
    u, s, _ = np.linalg.svd(a, full_matrices=True)
    if s[0] == 0.0 or s[1] <= rank_tol * s[0]:
        raise DegenerateGeometryError("points are coincident or collinear")
    n = u[:, 2]
    return n / np.linalg.norm(n)


def estimate_normal(
    neighborhood: LocalNeighborhood, grid: OccupancyGrid, incoming_direction
) -> np.ndarray:
    """Smoothed surface normal at a hit cell, oriented against the arriving ray."""
    centers = grid.center_of(np.asarray(neighborhood.cells).reshape(-1, 3))
    n = fit_plane_normal(centers)
    dot = float(n @ np.asarray(incoming_direction, dtype=float))
    if dot == 0.0:
        raise DegenerateGeometryError("fitted plane is parallel to the incoming ray")
    return -n if dot > 0 else n


# -- map text format -----------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_map(grid: OccupancyGrid, dest: Union[str, Path, TextIO]) -> None:
    """Write ``voxelgrid`` header then one sorted ``ix iy iz`` row per occupied cell."""
    header = " ".join(
        ["voxelgrid", _fmt(grid.resolution)]
        + [_fmt(v) for v in grid.origin]
        + [_fmt(v) for v in grid.bounds.lo]
        + [_fmt(v) for v in grid.bounds.hi]
    )
    lines = [header] + [f"{i} {j} {k}" for i, j, k in sorted(grid.occupied)]
    text = "\n".join(lines) + "\n"
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(text)
    else:
        dest.write(text)


def read_map(src: Union[str, Path, TextIO]) -> OccupancyGrid:
    text = Path(src).read_text() if isinstance(src, (str, Path)) else src.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty map file")
    head = lines[0].split()
    if head[0] != "voxelgrid" or len(head) != 11:
        raise ValueError(f"bad map header: {lines[0]!r}")
    vals = [float(v) for v in head[1:]]
    grid = OccupancyGrid(
        origin=tuple(vals[1:4]), resolution=vals[0], bounds=Box(tuple(vals[4:7]), tuple(vals[7:10]))
    )
    for n, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 3:
            raise ValueError(f"line {n}: expected 'ix iy iz', got {ln!r}")
        grid.set_occupied(tuple(int(p) for p in parts))
    return grid
