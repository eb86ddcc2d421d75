"""Monte Carlo localization of the point where acoustic ray paths converge."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, TextIO

import numpy as np
from scipy.stats import chi2

from .occupancy_map import Box
from .ray_tracer import AcousticRay, RayPath

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass
class LocalizerConfig:
    particle_count: int = 1000
    sigma_s: float = 1.0  # perturbation std, m
    sigma_c: float = 0.01  # convergence threshold on the generalized variance, m^6
    sigma_w_floor: float = 0.05
    sigma_w_scale: float = 0.25
    max_iterations: int = 500
    rng_seed: int = 0
    # order-0 feet closer than this to the microphone are ignored
    near_field_radius: float = 1.0
    reset_per_frame: bool = False
    # spread statistic behind the kernel width: "max" (std along the principal axis), "rms" or "gv" (gv^(1/6))
    sigma_w_spread: str = "max"

    def __post_init__(self):
        if self.particle_count < 2:
            raise ValueError("particle_count must be >= 2")
        if not self.sigma_s > 0:
            raise ValueError("sigma_s must be positive")
        if not self.sigma_c > 0:
            raise ValueError("sigma_c must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.sigma_w_floor > 0:
            raise ValueError("sigma_w_floor must be positive")
        if self.near_field_radius < 0:
            raise ValueError("near_field_radius must be >= 0")
        if self.sigma_w_spread not in ("gv", "rms", "max"):
            raise ValueError("sigma_w_spread must be 'gv', 'rms' or 'max'")


@dataclass
class ParticleSet:
    positions: np.ndarray  # (W, 3)
    weights: np.ndarray  # (W,)
    iteration: int = 0
    zero_likelihood: bool = False

    def __len__(self) -> int:
        return len(self.weights)

    def copy(self) -> "ParticleSet":
        return replace(self, positions=self.positions.copy(), weights=self.weights.copy())


@dataclass(frozen=True)
class Estimate:
    mean: np.ndarray
    covariance: np.ndarray
    gv: float
    converged: bool
    iterations_used: int


@dataclass(frozen=True)
class Ellipsoid:
    center: np.ndarray
    axes: np.ndarray  # (3, 3), columns are unit semi-axis directions
    lengths: np.ndarray  # (3,), descending


# -- sampling --------------------------------------------------------------

def init_particles(bounds: Box, config: LocalizerConfig, rng: np.random.Generator) -> ParticleSet:
    lo, hi = np.asarray(bounds.lo), np.asarray(bounds.hi)
    if np.any(hi <= lo):
        raise ValueError("localization bounds are degenerate")
    w = config.particle_count
    pos = lo + rng.random((w, 3)) * (hi - lo)
    return ParticleSet(pos, np.full(w, 1.0 / w))


def random_unit_vectors(n: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.standard_normal((n, 3))
    norm = np.linalg.norm(u, axis=1, keepdims=True)
    # a zero draw has probability 0; guard anyway
    norm[norm == 0] = 1.0
    return u / norm


def perturb(pset: ParticleSet, config: LocalizerConfig, rng: np.random.Generator,
            bounds: Optional[Box] = None) -> ParticleSet:
    """Move every particle by ``|d| * u``, ``d ~ N(0, sigma_s)``, ``u`` uniform on the sphere."""
    w = len(pset)
    d = np.abs(rng.normal(0.0, config.sigma_s, w))
    u = random_unit_vectors(w, rng)
    pos = pset.positions + d[:, None] * u
    if bounds is not None:
        pos = np.clip(pos, bounds.lo, bounds.hi)
    return ParticleSet(pos, pset.weights.copy(), pset.iteration + 1)


# -- weighting ---------------------------------------------------------------

def perpendicular_foot(p, ray: AcousticRay) -> Optional[tuple[np.ndarray, float]]:
    """Closest point on the ray line, or ``None`` if it falls outside the segment."""
    p = np.asarray(p, dtype=float)
    s = float((p - ray.origin) @ ray.direction)
    if s < 0 or s > ray.length:
        return None
    foot = ray.origin + s * ray.direction
    return foot, float(np.linalg.norm(p - foot))


def normal_pdf(x, sigma: float):
    return np.exp(-0.5 * (np.asarray(x) / sigma) ** 2) / (sigma * _SQRT_2PI)


@dataclass(frozen=True)
class PackedPaths:
    """Ray segments of several paths stacked for vectorized evaluation."""

    origins: np.ndarray  # (R, 3)
    directions: np.ndarray  # (R, 3)
    lengths: np.ndarray  # (R,)
    orders: np.ndarray  # (R,)
    starts: np.ndarray  # first row of each non-empty path

    @classmethod
    def from_paths(cls, paths: Sequence[RayPath]) -> "PackedPaths":
        rays = [r for p in paths for r in p.rays]
        counts = [len(p.rays) for p in paths if len(p.rays) > 0]
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(int) if counts else np.zeros(0, int)
        if not rays:
            z = np.zeros((0, 3))
            return cls(z, z, np.zeros(0), np.zeros(0, int), starts)
        return cls(
            origins=np.array([r.origin for r in rays], dtype=float),
            directions=np.array([r.direction for r in rays], dtype=float),
            lengths=np.array([r.length for r in rays], dtype=float),
            orders=np.array([r.order for r in rays], dtype=int),
            starts=starts,
        )

    @property
    def n_paths(self) -> int:
        return len(self.starts)


def likelihoods(points: np.ndarray, packed: PackedPaths, sigma_w: float,
                near_field_radius: float = 0.0, chunk: int = 4096) -> np.ndarray:
    """Unnormalized likelihood of each point: sum over paths of the best single-ray weight."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(len(points))
    if packed.n_paths == 0:
        return out
    o, d, length = packed.origins, packed.directions, packed.lengths
    lo = np.where(packed.orders == 0, near_field_radius, 0.0)
    for a in range(0, len(points), chunk):
        p = points[a : a + chunk]
        diff = p[:, None, :] - o[None, :, :]
        s = np.einsum("wrk,rk->wr", diff, d)
        perp = diff - s[..., None] * d[None, :, :]
        dist = np.linalg.norm(perp, axis=2)
        w = normal_pdf(dist, sigma_w)
        w[(s < lo) | (s > length) | (s < 0)] = 0.0
        out[a : a + chunk] = np.maximum.reduceat(w, packed.starts, axis=1).sum(axis=1)
    return out


def likelihood(p, paths: Sequence[RayPath], sigma_w: float, near_field_radius: float = 0.0) -> float:
    if not sigma_w > 0:
        raise ValueError("sigma_w must be positive")
    return float(likelihoods(p, PackedPaths.from_paths(paths), sigma_w, near_field_radius)[0])


def generalized_variance(pset_or_positions) -> tuple[np.ndarray, float]:
    pos = getattr(pset_or_positions, "positions", pset_or_positions)
    pos = np.asarray(pos, dtype=float)
    if len(pos) < 2:
        raise ValueError("need at least 2 particles")
    cov = np.cov(pos, rowvar=False, ddof=1)
    return cov, float(np.linalg.det(cov))


def spread(cov: np.ndarray, how: str = "gv") -> float:
    """A length scale for a particle covariance."""
    if how == "gv":
        return max(float(np.linalg.det(cov)), 0.0) ** (1.0 / 6.0)
    vals = np.clip(np.linalg.eigvalsh(cov), 0.0, None)
    if how == "rms":
        return math.sqrt(vals.mean())
    if how == "max":
        return math.sqrt(vals[-1])
    raise ValueError(f"unknown spread statistic {how!r}")


def sigma_w_for(cov: np.ndarray, config: LocalizerConfig) -> float:
    return max(config.sigma_w_floor, config.sigma_w_scale * spread(cov, config.sigma_w_spread))


def compute_weights(pset: ParticleSet, paths, config: LocalizerConfig,
                    cov: Optional[np.ndarray] = None) -> ParticleSet:
    """Normalized weights; the kernel width comes from ``cov`` (default: this set's covariance)."""
    packed = paths if isinstance(paths, PackedPaths) else PackedPaths.from_paths(paths)
    if packed.n_paths == 0:
        raise ValueError("need at least one ray path")
    if cov is None:
        cov, _ = generalized_variance(pset)
    lik = likelihoods(pset.positions, packed, sigma_w_for(cov, config), config.near_field_radius)
    total = lik.sum()
    w = len(pset)
    if not total > 0 or not np.isfinite(total):
        return ParticleSet(pset.positions, np.full(w, 1.0 / w), pset.iteration, zero_likelihood=True)
    return ParticleSet(pset.positions, lik / total, pset.iteration)


def systematic_indices(weights: np.ndarray, u0: float) -> np.ndarray:
    """Indices picked by a comb of ``W`` teeth ``u0 + i/W`` over the weight CDF."""
    w = len(weights)
    cdf = np.cumsum(weights)
    cdf[-1] = max(cdf[-1], 1.0)
    positions = u0 + np.arange(w) / w
    return np.minimum(np.searchsorted(cdf, positions, side="right"), w - 1)


def resample(pset: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    w = len(pset)
    idx = systematic_indices(pset.weights, rng.uniform(0.0, 1.0 / w))
    return ParticleSet(pset.positions[idx].copy(), np.full(w, 1.0 / w), pset.iteration)


# -- driver ------------------------------------------------------------------

def _estimate(pset: ParticleSet, converged: bool, iterations: int) -> Estimate:
    cov, gv = generalized_variance(pset)
    return Estimate(pset.positions.mean(axis=0), cov, gv, converged, iterations)


def run(paths, bounds: Box, config: LocalizerConfig, rng: np.random.Generator,
        particles: Optional[ParticleSet] = None,
        trace: Optional[list] = None) -> tuple[Estimate, ParticleSet]:
    """Iterate perturb, weight, resample until the generalized variance drops below ``sigma_c``.

    Starts from ``particles`` when given, else from a fresh uniform set.
    When ``trace`` is a list, each iteration's weighted set is appended to it.
    """
    packed = PackedPaths.from_paths(paths)
    if packed.n_paths == 0:
        raise ValueError("need at least one ray path")
    pset = particles if particles is not None else init_particles(bounds, config, rng)
    est = None
    for it in range(1, config.max_iterations + 1):
        pset = perturb(pset, config, rng, bounds)
        pset = compute_weights(pset, packed, config)
        if trace is not None:
            trace.append(pset)
        pset = resample(pset, rng)
        cov, gv = generalized_variance(pset)
        if gv < config.sigma_c:
            est = Estimate(pset.positions.mean(axis=0), cov, gv, True, it)
            break
    if est is None:
        est = Estimate(pset.positions.mean(axis=0), cov, gv, False, config.max_iterations)
    return est, pset


@dataclass
class Localizer:
    """Stateful frame-by-frame wrapper that carries the particle set forward."""

    bounds: Box
    config: LocalizerConfig = field(default_factory=LocalizerConfig)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.config.rng_seed)
        self.particles = init_particles(self.bounds, self.config, self.rng)
        self.last: Optional[Estimate] = None

    def initial_estimate(self) -> Estimate:
        return _estimate(self.particles, False, 0)

    def update(self, paths: Sequence[RayPath], trace: Optional[list] = None) -> Estimate:
        """One frame. With no usable paths the particle set and estimate carry over."""
        if not any(len(p.rays) for p in paths):
            if self.last is None:
                self.last = self.initial_estimate()
            return replace(self.last, iterations_used=0)
        if self.config.reset_per_frame:
            self.particles = init_particles(self.bounds, self.config, self.rng)
        est, self.particles = run(paths, self.bounds, self.config, self.rng,
                                  particles=self.particles, trace=trace)
        self.last = est
        return est


def confidence_ellipsoid(estimate: Estimate, level: float = 0.95) -> Ellipsoid:
    cov = np.asarray(estimate.covariance, dtype=float)
    vals, vecs = np.linalg.eigh((cov + cov.T) / 2)
    vals = np.clip(vals, 0.0, None)
    order = np.argsort(vals)[::-1]
    q = chi2.ppf(level, df=3)
    return Ellipsoid(np.asarray(estimate.mean), vecs[:, order], np.sqrt(q * vals[order]))


PARTICLE_CSV_HEADER = ["iteration", "particle_id", "x", "y", "z", "weight"]
ESTIMATE_CSV_HEADER = ["frame", "iterations", "converged", "mx", "my", "mz", "gv",
                       "c11", "c12", "c13", "c22", "c23", "c33"]


def write_particles_csv(sets: Sequence[ParticleSet], out: TextIO, header: bool = True) -> None:
    w = csv.writer(out, lineterminator="\n")
    if header:
        w.writerow(PARTICLE_CSV_HEADER)
    for ps in sets:
        for i, (p, wt) in enumerate(zip(ps.positions, ps.weights)):
            w.writerow([ps.iteration, i, f"{p[0]:.9g}", f"{p[1]:.9g}", f"{p[2]:.9g}", f"{wt:.9g}"])


def estimate_row(frame: int, est: Estimate) -> list[str]:
    c = est.covariance
    vals = [est.mean[0], est.mean[1], est.mean[2], est.gv,
            c[0, 0], c[0, 1], c[0, 2], c[1, 1], c[1, 2], c[2, 2]]
    return [str(frame), str(est.iterations_used), str(int(est.converged))] + [f"{v:.9g}" for v in vals]
