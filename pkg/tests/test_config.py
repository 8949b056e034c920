import json
from pathlib import Path

import pytest

from hybrid_pinn.config import ConfigError, build_problem, dump_config, parse_config, validate_dict

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MINIMAL = {
    "experiment": "mini",
    "geometry": {"shape": {"kind": "box", "lo": [0, 0], "hi": [1, 1]}, "n_interior": 50, "n_boundary": 5},
    "subdomains": [{"physics": "poisson", "network": {"outputs": ["T"], "hidden": [8]}, "source": "poisson_sine"}],
    "boundaries": [{"tag": f, "field": "T", "value": 0.0} for f in ("xmin", "xmax", "ymin", "ymax")],
}


def test_minimal_config_fills_defaults():
    cfg, warns = validate_dict(MINIMAL)
    assert warns == []
    echo = json.loads(dump_config(cfg))
    assert echo["training"]["lr0"] == 1e-3
    assert echo["training"]["decay_every"] == 10_000
    assert echo["annealing"]["threshold"] == 1e-5 and echo["annealing"]["every"] == 100
    assert echo["subdomains"][0]["region"] == "main"


def test_large_batch_fraction_warns():
    doc = dict(MINIMAL, training={"batch_fraction": 0.5})
    cfg, warns = validate_dict(doc)
    assert cfg.training.batch_fraction == 0.5
    assert len(warns) == 1 and "batch_fraction" in warns[0]


def test_unknown_key_named():
    doc = dict(MINIMAL, turbulence_model="k-omega")
    with pytest.raises(ConfigError) as err:
        validate_dict(doc)
    assert err.value.errors == [("turbulence_model", "unknown key 'turbulence_model'")]


def test_all_errors_reported_with_locators():
    doc = json.loads(json.dumps(MINIMAL))
    doc["training"] = {"batch_fraction": 2.0, "lr0": -1}
    doc["subdomains"][0]["network"]["hidden"] = [8, 0]
    doc["subdomains"][0]["colour"] = "red"
    del doc["experiment"]
    with pytest.raises(ConfigError) as err:
        validate_dict(doc)
    locs = {loc for loc, _ in err.value.errors}
    assert {"experiment", "training.batch_fraction", "training.lr0", "subdomains[0].network.hidden",
            "subdomains[0].colour"} <= locs


def test_semantic_errors():
    doc = json.loads(json.dumps(MINIMAL))
    doc["boundaries"].append({"tag": "inlet", "field": "T", "value": 1.0})
    doc["subdomains"][0]["physics"] = "ns"
    with pytest.raises(ConfigError) as err:
        validate_dict(doc)
    assert any("outputs" in loc for loc, _ in err.value.errors)
    doc["subdomains"][0]["physics"] = "poisson"
    with pytest.raises(ConfigError) as err:
        validate_dict(doc)
    assert err.value.errors == [("boundaries[4].tag", "no points tagged boundary:inlet in the cloud")]


def test_geometry_xor_cloud():
    doc = dict(MINIMAL, cloud="points.csv")
    with pytest.raises(ConfigError, match="exactly one"):
        validate_dict(doc)


def test_conjugate_needs_interface():
    doc = json.loads((CONFIGS / "two_slab.json").read_text())
    doc["interfaces"] = []
    with pytest.raises(ConfigError, match="interface"):
        validate_dict(doc)


@pytest.mark.parametrize("name", ["poisson.json", "kovasznay_hybrid.json", "two_slab.json"])
def test_shipped_configs_round_trip(name, tmp_path):
    cfg, _ = parse_config(CONFIGS / name)
    text = dump_config(cfg)
    (tmp_path / "c.json").write_text(text)
    again, _ = validate_dict(json.loads(text), CONFIGS)
    assert dump_config(again) == text
    assert again == cfg


def test_malformed_json(tmp_path):
    (tmp_path / "c.json").write_text('{"experiment": ')
    with pytest.raises(ConfigError, match="malformed"):
        parse_config(tmp_path / "c.json")


def test_build_problem_from_minimal():
    cfg, _ = validate_dict(MINIMAL)
    problem, tc, cloud = build_problem(cfg, ".", seed=3)
    assert len(cloud) == 50 + 4 * 5
    assert [p.name for p in tc.phases] == ["physics"]
    assert tc.total_steps == 30_000 and tc.seed == 3
    assert problem.components(["residual", "boundary"]) == ["residual", "bc:xmax", "bc:xmin", "bc:ymax", "bc:ymin"]


def test_warm_fraction_builds_hybrid_phases():
    doc = dict(MINIMAL, training={"steps": 100, "warm_fraction": 0.2}, reference="poisson_sine",
               data={"fraction": 0.1})
    cfg, _ = validate_dict(doc)
    _, tc, cloud = build_problem(cfg, ".", seed=0)
    assert [(p.name, p.max_steps) for p in tc.phases] == [("warm_start", 20), ("physics", 80)]
    assert sum(str(t).startswith("data") for t in cloud.tags) == 5
