import csv
import json
from collections import Counter

import pytest

from caloric_mc import domain_from_spec, point_from_spec
from content_measures import GridSet
from exceptions import AuditFailure, ParameterError
from main import RunResult, _full_configs, execute, gridset_from_spec, main, run, suite
from parabolic_geometry import ParabolicCube
from schemas import AuditRecord, CaloricParams, ExperimentConfig, GridSetSpec


def read_json(path):
    with open(path) as f:
        return json.load(f)


def write_config(tmp_path, config):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return str(path)


def test_kernel_portrait_writes_artifacts(tmp_path):
    out = tmp_path / "portrait"
    assert main(["kernel-portrait", "--n-max", "2", "--samples", "5", "--out", str(out)]) == 0
    assert {p.name for p in out.iterdir()} == {
        "results.csv",
        "results_horizontal.csv",
        "results_vertical.csv",
        "audit.json",
        "metadata.json",
    }
    with open(out / "results.csv") as f:
        rows = list(csv.DictReader(f))
    assert [row["n"] for row in rows] == ["1", "2"]
    audit = read_json(out / "audit.json")
    assert audit["subcommand"] == "kernel-portrait"
    assert audit["passed"]
    assert {a["name"] for a in audit["audits"]} == {"phi-argmax", "kernel-mass"}
    assert "elapsed_seconds" in read_json(out / "metadata.json")


def test_constants_without_regression(tmp_path):
    assert main(["constants", "--n", "1", "--alpha", "1", "--no-regression", "--out", str(tmp_path)]) == 0
    audit = read_json(tmp_path / "audit.json")
    assert [a["name"] for a in audit["audits"]] == ["grid-constants"]
    assert audit["constants"]["grid"]["phase"] == "scan"


def test_audit_file_is_reproducible(tmp_path):
    config = ExperimentConfig(subcommand="net-content", id="content", params={"gridset": {"kind": "full", "root": "3:0:0,0", "K": 1}, "rho": 2.0, "rectangles": 3})
    assert run(config, str(tmp_path / "a")) == 0
    assert run(config, str(tmp_path / "b")) == 0
    assert (tmp_path / "a" / "audit.json").read_text() == (tmp_path / "b" / "audit.json").read_text()


def test_run_with_a_config_file(tmp_path):
    config = {"subcommand": "caloric", "id": "survival", "params": {"audit": "survival", "N": 200}, "outputs": {"csv": "survival.csv"}}
    path = write_config(tmp_path, config)
    code = main(["run", "--config", path, "--seed", "5", "--out", str(tmp_path / "out")])
    assert code in (0, 1)
    audit = read_json(tmp_path / "out" / "audit.json")
    assert audit["seed"] == 5
    assert audit["audits"][0]["name"] == "interval-survival"
    assert (tmp_path / "out" / "survival.csv").exists()


def test_stochastic_run_without_seed_is_rejected(tmp_path):
    path = write_config(tmp_path, {"subcommand": "caloric", "params": {"audit": "survival"}})
    assert main(["run", "--config", path, "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize(
    "config",
    [
        {"subcommand": "unknown"},
        {"subcommand": "net-content", "params": {"gridset": {"kind": "full"}, "rho": 1.0}},
        {"subcommand": "net-content", "params": {"gridset": {"kind": "full", "root": "3:0:0,0"}, "rho": -1.0}},
    ],
)
def test_malformed_configs_exit_with_2(tmp_path, config):
    assert main(["run", "--config", write_config(tmp_path, config), "--out", str(tmp_path)]) == 2


def test_config_errors_exit_with_2(tmp_path):
    assert main(["run", "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["net-content", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_lab_errors_use_their_exit_code(tmp_path):
    path = write_config(tmp_path, {"gridset": {"kind": "full", "root": "3:0:0,0", "K": 1}, "rho": 4.0})
    assert main(["net-content", "--config", path, "--out", str(tmp_path)]) == 2


def test_failed_audit_exits_with_1(tmp_path):
    params = {"gridset": {"kind": "full", "root": "3:0:0,0", "K": 2}, "measure": "volume", "rho": 1.0, "lam": 1.0, "delta_generation": 2}
    path = write_config(tmp_path, params)
    assert main(["dim-tree", "--config", path, "--out", str(tmp_path)]) == 1
    audit = read_json(tmp_path / "audit.json")
    assert audit["audits"][0]["details"]["offenders"] == ["3:0:0,0"]


def test_dim_tree_slab(tmp_path):
    config = ExperimentConfig(
        subcommand="dim-tree",
        params={"gridset": {"kind": "slab", "root": "3:0:0,0", "K": 3}, "measure_rho": 1.0, "rho": 1.0, "lam": 1.0, "delta_generation": 2},
    )
    result = execute(config)
    assert result.passed
    assert result.constants["s"] == 1
    assert result.tables["results"][0] == {"level": 0, "type1": 1, "type2": 0, "terminal": 0}


def test_unknown_suite():
    with pytest.raises(ParameterError):
        suite("medium")


@pytest.mark.slow
def test_fast_suite_passes():
    result = suite("fast", seed=1)
    assert result.passed
    assert "kernel-portrait_horizontal" in result.tables


def test_run_result_merge():
    total = RunResult()
    part = RunResult(tables={"results": [{"a": 1}]}, audits=[AuditRecord(name="x", passed=False)], constants={"c": 2})
    total.merge(part, "exp")
    assert total.tables == {"exp_results": [{"a": 1}]}
    assert total.constants == {"exp": {"c": 2}}
    assert not total.passed
    assert RunResult().passed


@pytest.mark.parametrize(
    "spec, count",
    [
        ({"kind": "full", "root": "2:0:0,0", "K": 1}, 8),
        ({"kind": "empty", "root": "2:0:0,0", "K": 1}, 0),
        ({"kind": "slab", "root": "3:0:0,0", "K": 2, "time_row": 4}, 9),
        ({"kind": "product", "root": "2:0:0,0", "K": 1, "axes": [[0, 1], [3]]}, 2),
        ({"kind": "cubes", "root": "3:0:0,0", "K": 2, "cubes": ["3:1:1,4"]}, 27),
    ],
)
def test_gridset_from_spec(spec, count):
    assert len(gridset_from_spec(GridSetSpec(**spec)).occupied) == count


def test_gridset_from_file(tmp_path):
    E = GridSet(ParabolicCube.unit(2, 1), 1, frozenset({(0, 1), (1, 2)}))
    path = tmp_path / "set.txt"
    E.save(str(path))
    assert gridset_from_spec(GridSetSpec(kind="file", path=str(path))) == E


def test_failed_run_raises_after_writing_artifacts(tmp_path):
    params = {"gridset": {"kind": "full", "root": "3:0:0,0", "K": 2}, "measure": "volume", "rho": 1.0, "lam": 1.0, "delta_generation": 2}
    config = ExperimentConfig(subcommand="dim-tree", params=params)
    with pytest.raises(AuditFailure) as info:
        run(config, str(tmp_path))
    assert info.value.failed == ["dimension-tree"]
    assert info.value.exit_code == 1
    assert read_json(tmp_path / "audit.json")["passed"] is False


def test_full_suite_covers_the_monte_carlo_audits():
    configs = _full_configs(7)
    ids = [c.id for c in configs]
    assert len(set(ids)) == len(ids)
    assert all(c.seed == 7 for c in configs)
    kinds = Counter(c.params.get("audit", c.subcommand) for c in configs)
    assert kinds == {"survival": 1, "strong-markov": 3, "nested": 3, "ball": 12, "cylinder": 8, "projection": 3, "bourgain-alt": 2}
    caloric = [CaloricParams.model_validate(c.params) for c in configs if c.subcommand == "caloric"]
    assert {len(p.rectangles) for p in caloric if p.audit == "nested"} == {1, 2, 3}
    assert {len(p.pole.X) for p in caloric if p.audit == "strong-markov"} == {1, 2}
    sweep = [p for p in caloric if p.audit in ("ball", "cylinder")]
    assert {len(p.pole.X) for p in sweep} == {1, 2}
    for p in sweep:
        dist = domain_from_spec(p.domain).essential_distance(point_from_spec(p.pole))
        assert min(abs(p.r / dist - ratio) for ratio in (0.1, 0.3, 1.0)) < 1e-12
    assert sorted(p.exact for p in caloric if p.audit == "projection") == [0.25, 0.3, 0.7]
