"""YAML scenario documents.

Schema (all lengths in meters, angles in radians)::

    name: static_room
    resolution: 0.1            # voxel edge
    room:                      # solid boxes
      - {lo: [x, y, z], hi: [x, y, z]}
    bounds: {lo: [...], hi: [...]}      # optional, default: hull of room boxes
    interior: {lo: [...], hi: [...]}    # optional, particle domain
    mic_position: [x, y, z]
    trajectory:
      - {time: 0.0, position: [x, y, z], emitting: true}
    frequency: 4000.0
    source_energy: 100.0
    noise_angle_std: 0.0
    max_image_order: 1
    rng_seed: 0
    frame_interval: 0.5
    duration: 2.0              # optional, default: last waypoint time
    clutter_count: 0
    absorption: 0.1
    attenuation_table: {2000.0: 0.0025, 4000.0: 0.0049}
    trace: {max_order: 4}      # TraceConfig overrides
    localizer: {particle_count: 1000}   # LocalizerConfig overrides
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Any, Union

import yaml

from .forward_sim import Scenario, ScenarioError, Waypoint
from .occupancy_map import Box

_REQUIRED = ("room", "mic_position", "trajectory")
_OPTIONAL = {
    "name": str, "resolution": float, "frequency": float, "source_energy": float,
    "noise_angle_std": float, "max_image_order": int, "rng_seed": int,
    "frame_interval": float, "duration": float, "clutter_count": int, "absorption": float,
}


def _vec3(value: Any, field: str) -> tuple[float, float, float]:
    try:
        v = tuple(float(x) for x in value)
    except (TypeError, ValueError):
        raise ScenarioError(field, f"expected 3 numbers, got {value!r}") from None
    if len(v) != 3:
        raise ScenarioError(field, f"expected 3 numbers, got {value!r}")
    return v


def _box(value: Any, field: str) -> Box:
    if not isinstance(value, dict) or set(value) != {"lo", "hi"}:
        raise ScenarioError(field, "expected a mapping with 'lo' and 'hi'")
    try:
        return Box(_vec3(value["lo"], f"{field}.lo"), _vec3(value["hi"], f"{field}.hi"))
    except ScenarioError:
        raise
    except ValueError as e:
        raise ScenarioError(field, str(e)) from None


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("<root>", "scenario document must be a mapping")
    for key in _REQUIRED:
        if key not in doc:
            raise ScenarioError(key, "missing required field")
    known = set(_REQUIRED) | set(_OPTIONAL) | {"bounds", "interior", "trace", "localizer",
                                                "attenuation_table"}
    for key in doc:
        if key not in known:
            raise ScenarioError(key, "unknown field")
    if not isinstance(doc["room"], list):
        raise ScenarioError("room", "expected a list of boxes")
    kwargs: dict = {
        "room": [_box(b, f"room[{i}]") for i, b in enumerate(doc["room"])],
        "mic_position": _vec3(doc["mic_position"], "mic_position"),
    }
    if not isinstance(doc["trajectory"], list) or not doc["trajectory"]:
        raise ScenarioError("trajectory", "expected a non-empty list of waypoints")
    wps = []
    for i, w in enumerate(doc["trajectory"]):
        f = f"trajectory[{i}]"
        if not isinstance(w, dict) or "time" not in w or "position" not in w:
            raise ScenarioError(f, "waypoint needs 'time' and 'position'")
        emitting = w.get("emitting", True)
        if not isinstance(emitting, bool):
            raise ScenarioError(f"{f}.emitting", "expected true/false")
        try:
            t = float(w["time"])
        except (TypeError, ValueError):
            raise ScenarioError(f"{f}.time", f"expected a number, got {w['time']!r}") from None
        wps.append(Waypoint(t, _vec3(w["position"], f"{f}.position"), emitting))
    kwargs["source_trajectory"] = wps
    for key, typ in _OPTIONAL.items():
        if key in doc and doc[key] is not None:
            try:
                kwargs[key] = typ(doc[key])
            except (TypeError, ValueError):
                raise ScenarioError(key, f"expected {typ.__name__}, got {doc[key]!r}") from None
    for key in ("bounds", "interior"):
        if doc.get(key) is not None:
            kwargs[key] = _box(doc[key], key)
    if "attenuation_table" in doc:
        table = doc["attenuation_table"]
        if not isinstance(table, dict) or not table:
            raise ScenarioError("attenuation_table", "expected a non-empty frequency -> alpha mapping")
        kwargs["attenuation_table"] = {float(k): float(v) for k, v in table.items()}
    for key in ("trace", "localizer"):
        if doc.get(key) is not None:
            if not isinstance(doc[key], dict):
                raise ScenarioError(key, "expected a mapping of overrides")
            kwargs[key] = dict(doc[key])
    return Scenario(**kwargs)


def _box_doc(b: Box) -> dict:
    return {"lo": list(b.lo), "hi": list(b.hi)}


def scenario_to_dict(sc: Scenario) -> dict:
    doc: dict = {
        "name": sc.name,
        "resolution": sc.resolution,
        "room": [_box_doc(b) for b in sc.room],
        "bounds": _box_doc(sc.bounds),
        "interior": _box_doc(sc.interior),
        "mic_position": list(sc.mic_position),
        "trajectory": [
            {"time": w.time, "position": list(w.position), "emitting": w.emitting}
            for w in sc.source_trajectory
        ],
        "frequency": sc.frequency,
        "source_energy": sc.source_energy,
        "noise_angle_std": sc.noise_angle_std,
        "max_image_order": sc.max_image_order,
        "rng_seed": sc.rng_seed,
        "frame_interval": sc.frame_interval,
        "clutter_count": sc.clutter_count,
        "absorption": sc.absorption,
        "attenuation_table": dict(sc.attenuation_table),
    }
    if sc.duration is not None:
        doc["duration"] = sc.duration
    if sc.trace:
        doc["trace"] = dict(sc.trace)
    if sc.localizer:
        doc["localizer"] = dict(sc.localizer)
    return doc


def load_scenario(path: Union[str, Path]) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ScenarioError("<file>", f"cannot read {path}: {e.strerror}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ScenarioError("<file>", f"invalid YAML: {e}") from None
    return scenario_from_dict(doc)


def dump_scenario(sc: Scenario, path: Union[str, Path, None] = None) -> str:
    text = yaml.safe_dump(scenario_to_dict(sc), sort_keys=False, default_flow_style=None)
    if path is not None:
        Path(path).write_text(text)
    return text


def bundled_scenarios() -> list[str]:
    root = resources.files("reflectloc") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def bundled_path(name: str) -> Path:
    p = resources.files("reflectloc") / "scenarios" / f"{name}.yaml"
    return Path(str(p))


def resolve_scenario(ref: Union[str, Path]) -> Path:
    """A file path, or the name of a bundled scenario."""
    p = Path(ref)
    if p.exists():
        return p
    if str(ref) in bundled_scenarios():
        return bundled_path(str(ref))
    return p
