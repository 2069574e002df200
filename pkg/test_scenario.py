"""Tests for scenario loading, include merging and validation"""

import numpy as np
import pytest
import yaml

from impact_catching.config import SCENARIO_DIR
from impact_catching.controller import STRATEGIES
from impact_catching.errors import ConfigError
from impact_catching.impact_model import analytic_restitution
from impact_catching.scenario import deep_merge, load_scenario, parse_scenario

MINIMAL = {
    "strategy": "VM-VIC",
    "catch_plane_z": 0.35,
    "arm": {"start_position": [0.4, 0.0, 0.45]},
    "object": {"release_position": [0.4, 0.0, 0.67]},
}


def write(path, document):
    path.write_text(yaml.safe_dump(document))
    return path


def test_minimal_scenario_takes_defaults():
    cfg = parse_scenario(MINIMAL, name="minimal")
    assert cfg.name == "minimal"
    assert cfg.force_threshold == 3.0
    assert cfg.object.mass == 0.1
    assert cfg.arm.start_position == (0.4, 0.0, 0.45)
    assert cfg.tag.variable_stiffness and not cfg.dim_enabled


def test_include_merges_base_and_including_file_wins(tmp_path):
    write(tmp_path / "base.yaml", {**MINIMAL, "seed": 3, "contact": {"restitution": 0.5, "stiffness": 1500.0}})
    path = write(tmp_path / "child.yaml", {"include": "base.yaml", "strategy": "VM-KH",
                                           "contact": {"restitution": 0.7}})
    cfg = load_scenario(path)
    assert cfg.name == "child"
    assert cfg.strategy == "VM-KH"
    assert cfg.seed == 3
    assert cfg.contact.restitution == 0.7
    assert cfg.contact.stiffness == 1500.0


def test_include_cycle_is_reported(tmp_path):
    write(tmp_path / "a.yaml", {"include": "b.yaml"})
    write(tmp_path / "b.yaml", {"include": "a.yaml"})
    with pytest.raises(ConfigError) as err:
        load_scenario(tmp_path / "a.yaml")
    assert err.value.field == "include"


def test_missing_required_field_names_it():
    raw = deep_merge(MINIMAL, {})
    del raw["arm"]
    with pytest.raises(ConfigError) as err:
        parse_scenario(raw)
    assert err.value.field == "arm.start_position"


def test_missing_top_level_field():
    raw = {k: v for k, v in MINIMAL.items() if k != "catch_plane_z"}
    with pytest.raises(ConfigError) as err:
        parse_scenario(raw)
    assert err.value.field == "catch_plane_z"


def test_unknown_fields_are_rejected():
    with pytest.raises(ConfigError) as err:
        parse_scenario(deep_merge(MINIMAL, {"poc": {"d_lmi": 0.1}}))
    assert err.value.field == "poc.d_lmi"
    with pytest.raises(ConfigError) as err:
        parse_scenario({**MINIMAL, "planer": {}})
    assert err.value.field == "planer"


@pytest.mark.parametrize("override, field", [
    ({"strategy": "VM-XYZ"}, "strategy"),
    ({"force_threshold": 0.0}, "force_threshold"),
    ({"contact": {"restitution": 1.5}}, "contact.restitution"),
    ({"poc": {"eps": 0.0}}, "poc.eps"),
    ({"sim": {"dt_ctrl": 0.00125}}, "sim.dt_ctrl"),
    ({"planner": {"dt": 0.0005}}, "planner.dt"),
    ({"object": {"release_position": [0.4, 0.0, 0.3]}}, "object.release_position"),
    ({"arm": {"start_position": [0.4, 0.0]}}, "arm.start_position"),
    ({"estimator": {"two_axis": "yes"}}, "estimator.two_axis"),
    ({"object": {"mass": "heavy"}}, "object.mass"),
    ({"planner": {"height_selector": "highest"}}, "planner.height_selector"),
])
def test_invalid_values_name_their_field(override, field):
    with pytest.raises(ConfigError) as err:
        parse_scenario(deep_merge(MINIMAL, override))
    assert err.value.field == field


def test_overrides_are_merged_last(tmp_path):
    path = write(tmp_path / "run.yaml", MINIMAL)
    cfg = load_scenario(path, {"seed": 11, "sim": {"deterministic": False}, "controller": {"dim": True}})
    assert cfg.seed == 11
    assert not cfg.sim.deterministic
    assert cfg.dim_enabled


def test_damping_is_calibrated_from_restitution():
    cfg = parse_scenario(MINIMAL)
    assert analytic_restitution(cfg.contact.stiffness, cfg.contact_damping, cfg.object.mass) == pytest.approx(
        cfg.contact.restitution, abs=1e-6)
    explicit = parse_scenario(deep_merge(MINIMAL, {"contact": {"damping": 1.25}}))
    assert explicit.contact_damping == 1.25


def test_gain_sets():
    cfg = parse_scenario(MINIMAL)
    high, low = cfg.gains(7)
    np.testing.assert_allclose(high.K_p, cfg.controller.K_H)
    np.testing.assert_allclose(low.K_p, cfg.controller.K_L)
    np.testing.assert_allclose(low.K_qd, high.K_qd)
    with pytest.raises(ConfigError) as err:
        cfg.gains(2)
    assert err.value.field == "controller.K_qp"


def test_to_dict_reparses_to_the_same_config():
    cfg = parse_scenario(MINIMAL, name="minimal")
    assert parse_scenario(cfg.to_dict()) == cfg


def test_bundled_scenarios_load():
    names = sorted(p.stem for p in SCENARIO_DIR.glob("nominal_drop_*.yaml"))
    assert len(names) == len(STRATEGIES)
    for path in SCENARIO_DIR.glob("*_*.yaml"):
        if path.stem.endswith("base"):
            continue
        cfg = load_scenario(path)
        assert cfg.strategy in STRATEGIES
    throw = load_scenario(SCENARIO_DIR / "throw_2d_vm_vic_dim.yaml")
    assert throw.estimator.two_axis and throw.dim_enabled
    assert throw.poc.d_lim == 0.09 and throw.poc.dt_poc == 0.15
