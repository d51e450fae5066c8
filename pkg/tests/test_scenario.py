import json

import pytest

from entlink.scenario import (
    ScenarioError,
    bundled_scenarios,
    load_scenario,
    parse_scenario,
    resolve_scenario,
)


def _base(**kw):
    d = {"name": "t", "experiment": "bell_test", "seed": 3, "link": {"duration": 1}}
    d.update(kw)
    return d


def test_bundled_scenarios_parse():
    names = bundled_scenarios()
    assert set(names) >= {"table1", "fig3", "bell_paper", "qkd_paper"}
    for path in names.values():
        scn = load_scenario(path)
        assert scn.link.seed == scn.seed


def test_resolve_by_name():
    assert resolve_scenario("table1").name == "table1.scenario"
    assert resolve_scenario("table1.json").name == "table1.scenario"


def test_link_fields_mapped():
    scn = parse_scenario(_base(link={"duration": 2, "visibility": {"v_hv": 0.9, "v_diag": 0.8},
                                     "settings_bob": {"basis_angles": [0, 45]},
                                     "coupler_efficiencies_alice": [1, 0.5, 1, 1]}))
    assert scn.link.duration == 2
    assert scn.link.visibility.v_diag == 0.8
    assert scn.link.settings_bob.basis_angles == (0.0, 45.0)
    assert scn.link.coupler_efficiencies_alice[1] == 0.5


@pytest.mark.parametrize("patch, field", [
    ({"link": {"duration": 0}}, "link.duration"),
    ({"link": {"duration": -1}}, "link.duration"),
    ({"link": {"wavelength": 1}}, "link"),
    ({"experiment": "teleport"}, "scenario.experiment"),
    ({"name": ""}, "name"),
    ({"seed": -1}, "seed"),
    ({"seed": 1.5}, "seed"),
    ({"bell": {"runs": 0}}, "bell.runs"),
    ({"bell": {"mode": "published", "e_values": [0.1]}}, "bell.e_values"),
    ({"link": {"visibility": 1.2}}, "link.visibility"),
    ({"link": {"settings_alice": {"basis_angles": [0, 45], "splitter_ratio": 1.0}}},
     "link.settings_alice"),
    ({"extra": 1}, "scenario"),
])
def test_validation_errors(patch, field):
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(_base(**patch))
    assert exc.value.field == field
    assert exc.value.to_dict()["error"] == "validation"


def test_experiment_sections_validated():
    with pytest.raises(ScenarioError):
        parse_scenario(_base(experiment="visibility_scan", scan={"alice_angles": [0, 45]}))
    with pytest.raises(ScenarioError):
        parse_scenario(_base(experiment="qkd_session", qkd={"pa_mode": "generous"}))
    with pytest.raises(ScenarioError):
        parse_scenario(_base(experiment="qkd_session", qkd={"sample_fraction": 1.0}))
    scn = parse_scenario(_base(experiment="visibility_scan",
                               scan={"alice_angles": {"start": 0, "step": 20, "count": 9}}))
    assert scn.scan.alice_angles[-1] == 160.0


def test_overrides_revalidate_and_change_hash():
    scn = parse_scenario(_base())
    assert scn.with_overrides(seed=9).seed == 9
    assert scn.with_overrides(seed=9).config_hash != scn.config_hash
    assert scn.with_overrides().config_hash == scn.config_hash
    with pytest.raises(ScenarioError):
        scn.with_overrides(duration=0)


def test_bad_json_file(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{nope")
    with pytest.raises(ScenarioError) as exc:
        load_scenario(p)
    assert exc.value.field == "json"
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "missing.json")


def test_published_mode_defaults_to_table1():
    scn = parse_scenario(_base(bell={"mode": "published"}))
    assert scn.bell.e_values == (-0.681, 0.764, -0.421, -0.581)
    assert json.loads(json.dumps(scn.source)) == scn.source
