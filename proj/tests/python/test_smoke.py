import os
import pathlib

import pytest

import capgov

DATA = pathlib.Path(os.environ.get("CAPGOV_DATA_DIR", pathlib.Path(__file__).resolve().parents[2] / "data"))
REGISTRY = DATA / "default_registry.yaml"
CONFIG = DATA / "run.yaml"


def inspect_request(**overrides):
    req = {
        "capability": "inspect_area",
        "profile": "sim_relaxed",
        "params": {"area_zone": "dock"},
        "agent_permissions": ["perception"],
        "meta": {"confidence": 0.9, "intent": "survey", "priority": 1, "execution_mode": "sim"},
    }
    req.update(overrides)
    return req


def test_protocol_version():
    assert capgov.protocol_version == 1


def test_validate_registry_lists_capabilities():
    names = capgov.validate_registry(REGISTRY)
    assert "grasp_object" in names
    assert "inspect_area" in names
    assert len(names) == 6


def test_bad_registry_raises(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("zones: [dock]\nprofiles: [\n")
    with pytest.raises(capgov.RegistryError):
        capgov.validate_registry(bad)


def test_govern_accepts_a_wellformed_request():
    d = capgov.govern(REGISTRY, inspect_request())
    assert d["classification"] == "launch"
    assert "final_params" in d


def test_govern_refuses_missing_permission():
    d = capgov.govern(REGISTRY, inspect_request(agent_permissions=[]))
    assert d["classification"] == "refused"
    assert d["refusal"] == "missing_permission"
    assert "final_params" not in d


def test_run_cell_is_deterministic():
    a = capgov.run_cell(CONFIG, "proposed", 42, trials=30)
    b = capgov.run_cell(CONFIG, "proposed", 42, trials=30)
    assert a["metrics"]["counts"]["trials"] == 30
    strip = lambda m: {k: v for k, v in m.items() if k != "adl_us"}
    assert strip(a["metrics"]) == strip(b["metrics"])
    assert 0.0 <= a["metrics"]["uair"] <= 1.0


def test_run_cell_rejects_unknown_variant():
    with pytest.raises(ValueError):
        capgov.run_cell(CONFIG, "no_such_variant", 42, trials=5)


def test_missing_config_raises_config_error(tmp_path):
    with pytest.raises(capgov.ConfigError):
        capgov.run_cell(tmp_path / "absent.yaml", "proposed", 42, trials=5)


def test_run_tables_returns_csv():
    tables = capgov.run_tables(CONFIG, ["proposed", "capability_internal"], trials=20)
    assert tables["admission"].startswith("row,UAIR_mean")
    assert "ttests" in tables


def test_paired_t_test():
    t, p = capgov.paired_t_test([1.0, 2.0, 3.0, 4.0], [0.0, 0.5, 2.0, 2.5])
    assert t > 0
    assert 0.0 < p < 0.05


def test_replay_of_golden_log():
    golden = pathlib.Path(__file__).resolve().parents[1] / "golden" / "proposed_seed42_t40.jsonl"
    r = capgov.replay(golden)
    assert r["matches"] is True
    assert r["metrics"]["counts"]["trials"] == 40


def test_replay_of_corrupt_log(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    with pytest.raises(capgov.CorruptLog):
        capgov.replay(bad)
