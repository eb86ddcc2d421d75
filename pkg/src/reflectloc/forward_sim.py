"""Forward acoustic simulator producing ground-truth direction observations.

Rooms are unions of solid axis-aligned boxes. Propagation paths from the
source to the microphone are enumerated with the image-source construction,
validated against the actual box faces and checked for occlusion on the
voxel grid that the inverse tracer also uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .occupancy_map import Box, OccupancyGrid, traverse_ray
from .ray_tracer import DEFAULT_ATTENUATION, IncomingSignal

_DUP_TOL = 1e-6
_FACE_TOL = 1e-9


@dataclass(frozen=True)
class Waypoint:
    time: float
    position: tuple[float, float, float]
    emitting: bool = True


class ScenarioError(ValueError):
    """Invalid scenario; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass
class Scenario:
    room: list[Box]
    mic_position: tuple[float, float, float]
    source_trajectory: list[Waypoint]
    frequency: float = 4000.0
    source_energy: float = 100.0
    noise_angle_std: float = 0.0  # radians
    max_image_order: int = 1
    rng_seed: int = 0
    name: str = "scenario"
    resolution: float = 0.1
    frame_interval: float = 0.5
    duration: Optional[float] = None
    clutter_count: int = 0
    absorption: float = 0.1
    attenuation_table: dict[float, float] = field(default_factory=lambda: dict(DEFAULT_ATTENUATION))
    bounds: Optional[Box] = None
    interior: Optional[Box] = None
    # free-form overrides for the inverse pipeline, keyed by config field
    trace: dict = field(default_factory=dict)
    localizer: dict = field(default_factory=dict)

    def __post_init__(self):
        self.room = [b if isinstance(b, Box) else Box(*b) for b in self.room]
        self.mic_position = tuple(float(v) for v in self.mic_position)
        self.source_trajectory = [
            w if isinstance(w, Waypoint) else Waypoint(**w) for w in self.source_trajectory
        ]
        if self.bounds is None:
            if not self.room:
                raise ScenarioError("bounds", "required when the room has no boxes")
            lo = np.min([b.lo for b in self.room], axis=0)
            hi = np.max([b.hi for b in self.room], axis=0)
            self.bounds = Box(tuple(lo), tuple(hi))
        if self.interior is None:
            self.interior = self.bounds
        self.validate()

    def validate(self) -> None:
        if not self.resolution > 0:
            raise ScenarioError("resolution", "must be positive")
        if not self.frequency > 0:
            raise ScenarioError("frequency", "must be positive")
        if not self.source_energy > 0:
            raise ScenarioError("source_energy", "must be positive")
        if self.noise_angle_std < 0:
            raise ScenarioError("noise_angle_std", "must be >= 0")
        if self.max_image_order < 0:
            raise ScenarioError("max_image_order", "must be >= 0")
        if not self.frame_interval > 0:
            raise ScenarioError("frame_interval", "must be positive")
        if self.clutter_count < 0:
            raise ScenarioError("clutter_count", "must be >= 0")
        if not 0 <= self.absorption < 1:
            raise ScenarioError("absorption", "must lie in [0, 1)")
        if not self.source_trajectory:
            raise ScenarioError("trajectory", "needs at least one waypoint")
        times = [w.time for w in self.source_trajectory]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ScenarioError("trajectory", "waypoint times must be strictly increasing")
        if not self.in_free_space(self.mic_position):
            raise ScenarioError("mic_position", f"{self.mic_position} is not in the room interior")
        for i, w in enumerate(self.source_trajectory):
            if w.emitting and not self.in_free_space(w.position):
                raise ScenarioError(f"trajectory[{i}].position",
                                    f"{w.position} is not in the room interior")

    def in_free_space(self, p) -> bool:
        if not self.interior.contains(p):
            return False
        return not any(b.contains(p) for b in self.room)

    def build_grid(self) -> OccupancyGrid:
        grid = OccupancyGrid.from_bounds(self.bounds, self.resolution)
        for b in self.room:
            grid.rasterize_box(b)
        return grid

    def frame_times(self) -> list[float]:
        t0 = self.source_trajectory[0].time
        end = self.source_trajectory[-1].time if self.duration is None else t0 + self.duration
        n = int(math.floor((end - t0) / self.frame_interval + 1e-9)) + 1
        return [t0 + k * self.frame_interval for k in range(max(n, 1))]

    def source_state(self, t: float) -> tuple[np.ndarray, bool]:
        """Linearly interpolated position; the emit flag holds from each waypoint to the next."""
        wps = self.source_trajectory
        if t <= wps[0].time:
            return np.asarray(wps[0].position, float), wps[0].emitting
        for a, b in zip(wps, wps[1:]):
            if a.time <= t < b.time:
                f = (t - a.time) / (b.time - a.time)
                pos = (1 - f) * np.asarray(a.position, float) + f * np.asarray(b.position, float)
                return pos, a.emitting
        return np.asarray(wps[-1].position, float), wps[-1].emitting


def shell_room(size=(7.0, 7.0, 3.0), thickness: float = 0.2) -> list[Box]:
    """Six slabs enclosing ``[0, size]``: floor, ceiling and four walls."""
    x, y, z = size
    t = thickness
    return [
        Box((-t, -t, -t), (x + t, y + t, 0.0)),
        Box((-t, -t, z), (x + t, y + t, z + t)),
        Box((-t, -t, -t), (0.0, y + t, z + t)),
        Box((x, -t, -t), (x + t, y + t, z + t)),
        Box((-t, -t, -t), (x + t, 0.0, z + t)),
        Box((-t, y, -t), (x + t, y + t, z + t)),
    ]


# -- reflecting surfaces -------------------------------------------------------

@dataclass(frozen=True)
class Face:
    axis: int
    coord: float
    sign: int  # outward normal is sign * e_axis
    lo: tuple[float, float]  # extent over the two other axes
    hi: tuple[float, float]

    @property
    def plane(self) -> tuple[int, float, int]:
        return (self.axis, self.coord, self.sign)

    def contains(self, p, tol: float = _FACE_TOL) -> bool:
        others = [a for a in range(3) if a != self.axis]
        return all(self.lo[i] - tol <= p[a] <= self.hi[i] + tol for i, a in enumerate(others))


def reflecting_faces(room: Sequence[Box], bounds: Box) -> list[Face]:
    """Box faces that can be reached from free space."""
    faces = []
    for box in room:
        for axis in range(3):
            others = [a for a in range(3) if a != axis]
            lo2 = tuple(box.lo[a] for a in others)
            hi2 = tuple(box.hi[a] for a in others)
            for sign, coord in ((-1, box.lo[axis]), (1, box.hi[axis])):
                if sign < 0 and coord <= bounds.lo[axis]:
                    continue
                if sign > 0 and coord >= bounds.hi[axis]:
                    continue
                face = Face(axis, coord, sign, lo2, hi2)
                probe = np.empty(3)
                probe[axis] = coord + sign * 1e-6
                for i, a in enumerate(others):
                    probe[a] = (lo2[i] + hi2[i]) / 2
                if any(b.contains(probe) for b in room):
                    continue
                faces.append(face)
    return faces


def mirror(p, plane: tuple[int, float, int]) -> np.ndarray:
    axis, coord, _ = plane
    q = np.array(p, dtype=float)
    q[axis] = 2 * coord - q[axis]
    return q


@dataclass(frozen=True)
class ImageSource:
    position: np.ndarray
    reflection_count: int
    # planes applied in order, starting from the real source
    planes: tuple = ()
    # image positions after each mirroring, chain[0] is the source itself
    chain: tuple = ()


def image_sources(room: Sequence[Box], source, max_order: int,
                  bounds: Optional[Box] = None) -> list[ImageSource]:
    """Images up to ``max_order`` with duplicates (within 1e-6 m) removed."""
    if bounds is None:
        lo = np.min([b.lo for b in room], axis=0)
        hi = np.max([b.hi for b in room], axis=0)
        bounds = Box(tuple(lo), tuple(hi))
    planes = sorted({f.plane for f in reflecting_faces(room, bounds)})
    src = np.asarray(source, dtype=float)
    out = [ImageSource(src, 0, (), (src,))]
    seen = [src]
    frontier = out[:]
    for k in range(1, max_order + 1):
        nxt = []
        for img in frontier:
            for pl in planes:
                if img.planes and img.planes[-1] == pl:
                    continue
                axis, coord, sign = pl
                # the parent must sit in front of the reflecting face
                if (img.position[axis] - coord) * sign <= 0:
                    continue
                pos = mirror(img.position, pl)
                if any(np.all(np.abs(pos - s) <= _DUP_TOL) for s in seen):
                    continue
                seen.append(pos)
                nxt.append(ImageSource(pos, k, img.planes + (pl,), img.chain + (pos,)))
        out.extend(nxt)
        frontier = nxt
    return out


# -- occlusion ------------------------------------------------------------------

def visible(grid: OccupancyGrid, a, b, eps: float = 1e-6) -> bool:
    """True iff the open segment between ``a`` and ``b`` crosses no occupied voxel.

    The endpoints themselves are exempt so that points lying on a surface
    (reflection points) do not occlude themselves.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    length = float(np.linalg.norm(b - a))
    if length == 0:
        raise ValueError("visibility needs two distinct points")
    if length <= 2 * eps:
        return True
    d = (b - a) / length
    hit = traverse_ray(grid, a + d * eps, d, length - 2 * eps)
    return hit is None


@dataclass(frozen=True)
class PropagationPath:
    points: tuple  # source, reflection points..., microphone
    reflection_count: int

    @property
    def length(self) -> float:
        return float(sum(np.linalg.norm(np.subtract(q, p)) for p, q in zip(self.points, self.points[1:])))


def unfold_path(img: ImageSource, mic, faces_by_plane: dict, grid: OccupancyGrid) -> Optional[PropagationPath]:
    """Reflection points of ``img`` seen from ``mic``, or None if the path is invalid or blocked."""
    mic = np.asarray(mic, dtype=float)
    current = mic
    points = [mic]
    for j in range(img.reflection_count, 0, -1):
        target = img.chain[j]
        axis, coord, sign = img.planes[j - 1]
        if (current[axis] - coord) * sign <= 0:
            return None
        denom = target[axis] - current[axis]
        if denom == 0:
            return None
        t = (coord - current[axis]) / denom
        if not 0 < t < 1:
            return None
        x = current + t * (target - current)
        x[axis] = coord
        if not any(f.contains(x) for f in faces_by_plane[img.planes[j - 1]]):
            return None
        if not visible(grid, current, x):
            return None
        points.append(x)
        current = x
    src = img.chain[0]
    if not visible(grid, current, src):
        return None
    points.append(src)
    return PropagationPath(tuple(reversed(points)), img.reflection_count)


def propagation_paths(scenario: Scenario, grid: OccupancyGrid, source) -> list[PropagationPath]:
    faces = reflecting_faces(scenario.room, scenario.bounds)
    by_plane: dict = {}
    for f in faces:
        by_plane.setdefault(f.plane, []).append(f)
    paths = []
    for img in image_sources(scenario.room, source, scenario.max_image_order, scenario.bounds):
        p = unfold_path(img, scenario.mic_position, by_plane, grid)
        if p is not None:
            paths.append(p)
    return paths


# -- observations ----------------------------------------------------------------

@dataclass(frozen=True)
class ObservationFrame:
    time: float
    signals: list[IncomingSignal]
    ground_truth_source: np.ndarray
    emitting: bool = True
    # per signal: bounces and unfolded length; None for clutter
    reflection_counts: tuple = ()
    path_lengths: tuple = ()


def perturb_direction(v: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Rotate ``v`` by ``|N(0, sigma)|`` about a random axis orthogonal to it."""
    if sigma == 0:
        return v
    angle = abs(rng.normal(0.0, sigma))
    r = rng.standard_normal(3)
    axis = np.cross(v, r)
    axis /= np.linalg.norm(axis)
    out = v * math.cos(angle) + np.cross(axis, v) * math.sin(angle)
    return out / np.linalg.norm(out)


def frame_rng(scenario: Scenario, time: float) -> np.random.Generator:
    return np.random.default_rng([scenario.rng_seed & 0xFFFFFFFFFFFFFFFF, int(round(time * 1000))])


def _alpha(scenario: Scenario) -> float:
    freqs = sorted(scenario.attenuation_table)
    return float(np.interp(scenario.frequency, freqs, [scenario.attenuation_table[f] for f in freqs]))


def generate_frame(scenario: Scenario, grid: OccupancyGrid, time: float,
                   rng: Optional[np.random.Generator] = None) -> ObservationFrame:
    if rng is None:
        rng = frame_rng(scenario, time)
    source, emitting = scenario.source_state(time)
    if not emitting:
        return ObservationFrame(time, [], source, emitting=False)
    alpha = _alpha(scenario)
    mic = np.asarray(scenario.mic_position, float)
    signals, counts, lengths = [], [], []
    for path in propagation_paths(scenario, grid, source):
        last = np.asarray(path.points[-2])
        v = (mic - last) / np.linalg.norm(mic - last)
        v = perturb_direction(v, scenario.noise_angle_std, rng)
        length = path.length
        energy = scenario.source_energy * math.exp(-alpha * length) * (1 - scenario.absorption) ** path.reflection_count
        signals.append(IncomingSignal(v, scenario.frequency, energy))
        counts.append(path.reflection_count)
        lengths.append(length)
    if signals and scenario.clutter_count:
        ref = min(s.energy for s in signals)
        for _ in range(scenario.clutter_count):
            v = rng.standard_normal(3)
            signals.append(IncomingSignal(v / np.linalg.norm(v), scenario.frequency,
                                          ref * rng.uniform(0.2, 0.8)))
            counts.append(None)
            lengths.append(None)
    return ObservationFrame(time, signals, source, True, tuple(counts), tuple(lengths))


def generate_frames(scenario: Scenario, grid: Optional[OccupancyGrid] = None) -> list[ObservationFrame]:
    grid = grid if grid is not None else scenario.build_grid()
    return [generate_frame(scenario, grid, t) for t in scenario.frame_times()]
