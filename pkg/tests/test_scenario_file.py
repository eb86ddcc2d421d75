import pytest
import yaml

from reflectloc.forward_sim import ScenarioError
from reflectloc.scenario_file import (
    bundled_path,
    bundled_scenarios,
    dump_scenario,
    load_scenario,
    scenario_from_dict,
    scenario_to_dict,
)


def test_bundled_scenarios_present():
    assert {"static_room", "occluded", "moving_intermittent"} <= set(bundled_scenarios())


@pytest.mark.parametrize("name", ["static_room", "occluded", "moving_intermittent"])
def test_round_trip_is_lossless(name, tmp_path):
    sc = load_scenario(bundled_path(name))
    p = tmp_path / "s.yaml"
    text = dump_scenario(sc, p)
    back = load_scenario(p)
    assert back == sc
    assert dump_scenario(back) == text


def test_overrides_survive(tmp_path):
    doc = scenario_to_dict(load_scenario(bundled_path("static_room")))
    doc["trace"] = {"max_order": 2}
    doc["localizer"] = {"particle_count": 300, "sigma_w_spread": "rms"}
    sc = scenario_from_dict(doc)
    p = tmp_path / "s.yaml"
    dump_scenario(sc, p)
    assert load_scenario(p).localizer == {"particle_count": 300, "sigma_w_spread": "rms"}


def base_doc():
    return scenario_to_dict(load_scenario(bundled_path("static_room")))


@pytest.mark.parametrize("mutate, field", [
    (lambda d: d.pop("mic_position"), "mic_position"),
    (lambda d: d.update(mic_position=[1, 2]), "mic_position"),
    (lambda d: d.update(mic_position=[-1, 2, 1]), "mic_position"),
    (lambda d: d.update(resolution=0), "resolution"),
    (lambda d: d.update(resolution="fine"), "resolution"),
    (lambda d: d.update(colour="red"), "colour"),
    (lambda d: d["room"].append({"lo": [0, 0, 0]}), "room[6]"),
    (lambda d: d["room"].append({"lo": [1, 1, 1], "hi": [0, 0, 0]}), "room[6]"),
    (lambda d: d.update(trajectory=[]), "trajectory"),
    (lambda d: d["trajectory"][0].update(position=[9, 9, 9]), "trajectory[0].position"),
    (lambda d: d["trajectory"][0].update(emitting="yes"), "trajectory[0].emitting"),
    (lambda d: d.update(absorption=1.5), "absorption"),
    (lambda d: d.update(trace=[1, 2]), "trace"),
])
def test_errors_name_the_field(mutate, field):
    doc = base_doc()
    mutate(doc)
    with pytest.raises(ScenarioError) as e:
        scenario_from_dict(doc)
    assert e.value.field == field
    assert field in str(e.value)


def test_unreadable_file(tmp_path):
    with pytest.raises(ScenarioError) as e:
        load_scenario(tmp_path / "missing.yaml")
    assert e.value.field == "<file>"


def test_invalid_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("room: [\n")
    with pytest.raises(ScenarioError):
        load_scenario(p)


def test_dump_is_plain_yaml():
    text = dump_scenario(load_scenario(bundled_path("occluded")))
    doc = yaml.safe_load(text)
    assert doc["name"] == "occluded"
    assert len(doc["room"]) == 7
