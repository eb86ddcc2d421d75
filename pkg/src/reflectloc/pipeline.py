"""End-to-end frame loop: simulate, trace, localize, score."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields
from typing import Optional, TextIO

import numpy as np

from .forward_sim import Scenario, generate_frame
from .localizer import Estimate, Localizer, LocalizerConfig
from .ray_tracer import RayPath, TraceConfig, trace_all


@dataclass(frozen=True)
class FrameRecord:
    frame: int
    time: float
    ground_truth: np.ndarray
    estimate: Estimate
    signal_count: int
    emitting: bool

    @property
    def error_m(self) -> float:
        return float(np.linalg.norm(self.estimate.mean - self.ground_truth))


@dataclass
class RunReport:
    records: list[FrameRecord] = field(default_factory=list)

    def scored(self) -> list[FrameRecord]:
        """Frames that carried signals; summary statistics use only these."""
        return [r for r in self.records if r.signal_count > 0]

    @property
    def summary(self) -> dict:
        rows = self.scored()
        errs = np.array([r.error_m for r in rows])
        return {
            "frames": len(self.records),
            "scored_frames": len(rows),
            "mean_error_m": float(errs.mean()) if len(rows) else math.nan,
            "std_error_m": float(errs.std()) if len(rows) else math.nan,
            "convergence_rate": float(np.mean([r.estimate.converged for r in rows])) if rows else 0.0,
        }


REPORT_HEADER = ["frame", "time", "gt_x", "gt_y", "gt_z", "est_x", "est_y", "est_z",
                 "error_m", "gv", "converged", "iterations", "signal_count", "emitting"]


def write_report_csv(report: RunReport, out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in report.records:
        e = r.estimate
        w.writerow([r.frame, f"{r.time:.9g}",
                    *(f"{v:.9g}" for v in r.ground_truth),
                    *(f"{v:.9g}" for v in e.mean),
                    f"{r.error_m:.9g}", f"{e.gv:.9g}", int(e.converged), e.iterations_used,
                    r.signal_count, int(r.emitting)])


def write_summary_json(report: RunReport, out: TextIO) -> None:
    # NaN (no scored frames) becomes null so the file stays valid JSON
    doc = {k: (None if isinstance(v, float) and math.isnan(v) else v)
           for k, v in report.summary.items()}
    json.dump(doc, out, indent=2, sort_keys=True)
    out.write("\n")


def _coerce(cls, overrides: dict) -> dict:
    names = {f.name: f for f in fields(cls)}
    out = {}
    for k, v in overrides.items():
        if k not in names:
            raise KeyError(f"{cls.__name__} has no field {k!r}")
        out[k] = v
    return out


def make_configs(scenario: Scenario, trace_overrides: Optional[dict] = None,
                 loc_overrides: Optional[dict] = None) -> tuple[TraceConfig, LocalizerConfig]:
    """Configs for a scenario: defaults, then the scenario's overrides, then the caller's."""
    t = {"mic_position": scenario.mic_position, "absorption": scenario.absorption,
         "attenuation_table": dict(scenario.attenuation_table)}
    t.update(_coerce(TraceConfig, scenario.trace))
    t.update(_coerce(TraceConfig, trace_overrides or {}))
    loc = {"rng_seed": scenario.rng_seed}
    loc.update(_coerce(LocalizerConfig, scenario.localizer))
    loc.update(_coerce(LocalizerConfig, loc_overrides or {}))
    return TraceConfig(**t), LocalizerConfig(**loc)


@dataclass
class FrameHooks:
    """Optional per-frame sinks used by the CLI dumps."""

    paths: Optional[list] = None  # receives (frame, list[RayPath])
    particles: Optional[list] = None  # receives (frame, list[ParticleSet])


def run_scenario(scenario: Scenario, trace_cfg: TraceConfig, loc_cfg: LocalizerConfig,
                 hooks: Optional[FrameHooks] = None) -> RunReport:
    grid = scenario.build_grid()
    localizer = Localizer(scenario.interior, loc_cfg)
    report = RunReport()
    for i, t in enumerate(scenario.frame_times()):
        obs = generate_frame(scenario, grid, t)
        paths: list[RayPath] = trace_all(obs.signals, grid, trace_cfg)
        ptrace = [] if hooks is not None and hooks.particles is not None else None
        est = localizer.update(paths, trace=ptrace)
        if hooks is not None:
            if hooks.paths is not None:
                hooks.paths.append((i, paths))
            if ptrace is not None:
                hooks.particles.append((i, ptrace))
        report.records.append(FrameRecord(i, t, obs.ground_truth_source, est,
                                          len(obs.signals), obs.emitting))
    return report
