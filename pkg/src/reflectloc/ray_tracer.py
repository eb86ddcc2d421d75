"""Inverse acoustic ray tracing over an occupancy grid.

Rays start at the microphone, pointing against each incoming sound direction,
and gain energy as they travel (the inverse of air attenuation). At every hit
a specular reflection is spawned whose initial energy is additionally divided
by ``1 - absorption``. A path ends at the energy ceiling, the order cap, or
when a ray leaves the map.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, TextIO

import numpy as np

from .occupancy_map import (
    DegenerateGeometryError,
    HitRecord,
    OccupancyGrid,
    bounds_exit_length,
    collect_neighborhood,
    entry_face,
    estimate_normal,
    exposed_cells,
    traverse_ray,
)

# nepers/m, room air at 20 C / 50% RH; placeholders, override per deployment
DEFAULT_ATTENUATION = {2000.0: 0.0025, 4000.0: 0.0049, 8000.0: 0.0113}


class ConfigurationError(ValueError):
    pass


class OrientationError(ValueError):
    """Reflection requested with a normal facing away from the ray."""


@dataclass(frozen=True)
class IncomingSignal:
    direction: np.ndarray  # unit vector pointing toward the microphone
    frequency: float
    energy: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (3,) or abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("signal direction must be a 3D unit vector")
        if not self.frequency > 0:
            raise ValueError("frequency must be positive")
        if not self.energy > 0:
            raise ValueError("energy must be positive")
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class AcousticRay:
    origin: np.ndarray
    direction: np.ndarray
    order: int
    initial_energy: float
    length: float = math.inf

    @property
    def end(self) -> np.ndarray:
        return self.origin + self.direction * self.length


@dataclass(frozen=True)
class RayPath:
    rays: list[AcousticRay]
    source_signal: IncomingSignal

    def __len__(self) -> int:
        return len(self.rays)


@dataclass
class TraceConfig:
    mic_position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    absorption: float = 0.1
    attenuation_table: dict[float, float] = field(default_factory=lambda: dict(DEFAULT_ATTENUATION))
    energy_ceiling: float = 900.0
    max_order: int = 4
    # None -> 3x the grid bounds diagonal
    max_ray_length: Optional[float] = None
    neighborhood_half_width: int = 2

    def __post_init__(self):
        if not self.energy_ceiling > 0:
            raise ConfigurationError("energy_ceiling must be positive")
        if not 0.0 <= self.absorption < 1.0:
            raise ConfigurationError("absorption must lie in [0, 1)")
        if self.max_order < 0:
            raise ConfigurationError("max_order must be >= 0")
        if self.max_ray_length is not None and not self.max_ray_length > 0:
            raise ConfigurationError("max_ray_length must be positive")
        if any(v < 0 for v in self.attenuation_table.values()):
            raise ConfigurationError("attenuation coefficients must be >= 0")

    def ray_length_cap(self, grid: OccupancyGrid) -> float:
        if self.max_ray_length is not None:
            return self.max_ray_length
        return 3.0 * grid.bounds.diagonal


def attenuation_coeff(config: TraceConfig, f: float) -> float:
    """Air attenuation at frequency ``f``, linear in the table, clamped at its ends."""
    if not config.attenuation_table:
        raise ConfigurationError("attenuation table is empty")
    if not f > 0:
        raise ValueError("frequency must be positive")
    freqs = sorted(config.attenuation_table)
    vals = [config.attenuation_table[k] for k in freqs]
    return float(np.interp(f, freqs, vals))


def init_ray(signal: IncomingSignal, config: TraceConfig) -> AcousticRay:
    return AcousticRay(
        origin=np.asarray(config.mic_position, dtype=float),
        direction=-signal.direction,
        order=0,
        initial_energy=signal.energy,
    )


def energy_at(ray: AcousticRay, l_prime: float, alpha: float) -> float:
    return ray.initial_energy * math.exp(alpha * l_prime)


def specular_direction(d, n) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    n = np.asarray(n, dtype=float)
    dn = float(d @ n)
    if dn >= 0:
        raise OrientationError(f"ray does not arrive against the normal (d.n = {dn})")
    return d - 2.0 * dn * n


def reflect(ray: AcousticRay, hit: HitRecord, config: TraceConfig, alpha: float,
            offset: float = 0.0) -> AcousticRay:
    """Spawn the order ``k+1`` ray at ``hit``.

    ``offset`` pushes the new origin off the surface along the normal so the
    next traversal does not immediately re-hit the same voxel.
    """
    if hit.normal is None:
        raise ValueError("hit record has no normal")
    if config.absorption >= 1.0:
        raise ConfigurationError("absorption must be < 1")
    direction = specular_direction(ray.direction, hit.normal)
    energy = energy_at(ray, hit.hit_length, alpha) / (1.0 - config.absorption)
    return AcousticRay(
        origin=np.asarray(hit.hit_point, dtype=float) + offset * hit.normal,
        direction=direction / np.linalg.norm(direction),
        order=ray.order + 1,
        initial_energy=energy,
    )


def surface_normal(grid: OccupancyGrid, hit: HitRecord, incoming, half_width: int = 2) -> np.ndarray:
    """SVD normal at the hit cell.

    The plane is fitted to the cells that show the same face as the one the
    ray entered through, so the far wall of an edge or corner does not tilt
    it. Falls back to the whole cube, then to the reversed ray.
    """
    hood = collect_neighborhood(grid, hit.voxel, half_width)
    surface = exposed_cells(grid, hood, *entry_face(grid, hit, incoming))
    for cells in (surface, hood):
        try:
            return estimate_normal(cells, grid, incoming)
        except DegenerateGeometryError:
            continue
    return -np.asarray(incoming, dtype=float)


def trace_path(signal: IncomingSignal, grid: OccupancyGrid, config: TraceConfig) -> RayPath:
    alpha = attenuation_coeff(config, signal.frequency)
    cap = config.ray_length_cap(grid)
    offset = grid.resolution / 2
    ray = init_ray(signal, config)
    rays: list[AcousticRay] = []
    while True:
        if ray.order > 0 and not grid.bounds.contains(ray.origin, tol=1e-9):
            break
        hit = traverse_ray(grid, ray.origin, ray.direction, cap)
        if hit is None:
            exit_len = min(cap, bounds_exit_length(grid.bounds, ray.origin, ray.direction))
            if exit_len > 0:
                rays.append(replace(ray, length=exit_len))
            break
        if hit.hit_length <= 0:
            # reflected origin landed inside occupancy (thin gap or corner)
            if ray.order == 0:
                rays.append(replace(ray, length=grid.resolution * 1e-6))
            break
        rays.append(replace(ray, length=hit.hit_length))

        if ray.order + 1 > config.max_order:
            break
        normal = surface_normal(grid, hit, ray.direction, config.neighborhood_half_width)
        hit = replace(hit, normal=normal)
        nxt = reflect(ray, hit, config, alpha, offset=offset)
        if nxt.initial_energy > config.energy_ceiling:
            break
        ray = nxt
    return RayPath(rays=rays, source_signal=signal)


def trace_all(signals: Iterable[IncomingSignal], grid: OccupancyGrid,
              config: TraceConfig) -> list[RayPath]:
    return [trace_path(s, grid, config) for s in signals]


PATH_CSV_HEADER = ["signal_id", "order", "ox", "oy", "oz", "dx", "dy", "dz", "length", "energy"]


def write_paths_csv(paths: list[RayPath], out: TextIO, frame: Optional[int] = None,
                    header: bool = True) -> None:
    """One row per ray segment, 9 significant digits."""
    w = csv.writer(out, lineterminator="\n")
    cols = (["frame"] if frame is not None else []) + PATH_CSV_HEADER
    if header:
        w.writerow(cols)
    for sid, path in enumerate(paths):
        for ray in path.rays:
            row = [sid, ray.order, *ray.origin, *ray.direction, ray.length, ray.initial_energy]
            cells = [str(v) if isinstance(v, int) else f"{v:.9g}" for v in row]
            w.writerow(([str(frame)] if frame is not None else []) + cells)
