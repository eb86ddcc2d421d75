"""Repeatable experiment drivers shared by scripts/ and the acceptance tests."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import partial
from typing import Optional, Sequence

import numpy as np

from .forward_sim import Scenario
from .localizer import LocalizerConfig, run
from .occupancy_map import Box
from .pipeline import RunReport, make_configs, run_scenario
from .ray_tracer import AcousticRay, IncomingSignal, RayPath
from .scenario_file import bundled_path, load_scenario


@dataclass(frozen=True)
class Trial:
    seed: int
    error_m: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class TrialStats:
    trials: tuple[Trial, ...]

    @property
    def errors(self) -> np.ndarray:
        return np.array([t.error_m for t in self.trials])

    @property
    def mean_error(self) -> float:
        return float(self.errors.mean())

    @property
    def std_error(self) -> float:
        return float(self.errors.std())

    @property
    def convergence_rate(self) -> float:
        return float(np.mean([t.converged for t in self.trials]))


def _map(fn, items, workers: Optional[int]):
    if workers is None or workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def bundled(name: str) -> Scenario:
    return load_scenario(bundled_path(name))


def _single_frame(seed: int, scenario: Scenario, trace: dict, loc: dict) -> Trial:
    sc = replace(scenario, rng_seed=seed, duration=0.0)
    tc, lc = make_configs(sc, trace, loc)
    r = run_scenario(sc, tc, lc).records[0]
    return Trial(seed, r.error_m, r.estimate.converged, r.estimate.iterations_used)


def single_frame_trials(scenario: Scenario, seeds: Sequence[int], trace: Optional[dict] = None,
                        loc: Optional[dict] = None, workers: Optional[int] = None) -> TrialStats:
    """First frame of ``scenario`` once per seed; the seed drives both noise and particles."""
    fn = partial(_single_frame, scenario=scenario, trace=trace or {}, loc=loc or {})
    return TrialStats(tuple(_map(fn, list(seeds), workers)))


def noisy_static(seeds: Sequence[int] = range(20), noise_deg: float = 5.0,
                 workers: Optional[int] = None) -> TrialStats:
    sc = bundled("static_room")
    sc.noise_angle_std = math.radians(noise_deg)
    return single_frame_trials(sc, seeds, workers=workers)


def order_ablation(orders: Sequence[int] = (0, 1, 2, 3, 4), seeds: Sequence[int] = range(20),
                   scenario: str = "occluded", workers: Optional[int] = None) -> dict[int, TrialStats]:
    sc = bundled(scenario)
    return {k: single_frame_trials(sc, seeds, trace={"max_order": k}, workers=workers) for k in orders}


def moving_intermittent(seed: Optional[int] = None) -> RunReport:
    sc = bundled("moving_intermittent")
    if seed is not None:
        sc.rng_seed = seed
    tc, lc = make_configs(sc)
    return run_scenario(sc, tc, lc)


# -- two crossing rays, no room -------------------------------------------------

ROOM_BOX = Box((0.0, 0.0, 0.0), (7.0, 7.0, 3.0))
_DUMMY = IncomingSignal(np.array([1.0, 0.0, 0.0]), 2000.0, 1.0)


def crossing_instance(rng: np.random.Generator, min_distance: float = 1.5,
                      overshoot: float = 2.0) -> tuple[np.ndarray, list[RayPath]]:
    """Two rays from random origins in the box that cross exactly at a random point."""
    q = rng.uniform([1.0, 1.0, 0.5], [6.0, 6.0, 2.5])
    paths = []
    for _ in range(2):
        o = rng.uniform(ROOM_BOX.lo, ROOM_BOX.hi)
        while np.linalg.norm(o - q) < min_distance:
            o = rng.uniform(ROOM_BOX.lo, ROOM_BOX.hi)
        d = q - o
        length = float(np.linalg.norm(d))
        paths.append(RayPath([AcousticRay(o, d / length, 0, 1.0, length + overshoot)], _DUMMY))
    return q, paths


def _crossing_trial(seed: int, loc: dict) -> Trial:
    q, paths = crossing_instance(np.random.default_rng(1000 + seed))
    cfg = LocalizerConfig(**{"rng_seed": seed, **loc})
    est, _ = run(paths, ROOM_BOX, cfg, np.random.default_rng(seed))
    return Trial(seed, float(np.linalg.norm(est.mean - q)), est.converged, est.iterations_used)


def two_ray_trials(seeds: Sequence[int] = range(50), loc: Optional[dict] = None,
                   workers: Optional[int] = None) -> TrialStats:
    fn = partial(_crossing_trial, loc=loc or {})
    return TrialStats(tuple(_map(fn, list(seeds), workers)))
