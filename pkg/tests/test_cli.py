import json
import math

import pytest

from nonlocal_acf.core.errors import ConfigError
from nonlocal_acf.main import main, parse_spec_overrides
from nonlocal_acf.services import experiment_service


@pytest.fixture
def out_dir(tmp_path):
    return tmp_path / "results"


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_constants_command(out_dir, capsys):
    code = main(["constants", "--n", "2", "--s", "0.5", "--out", str(out_dir)])
    assert code == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["outcome"] == "pass"
    report = json.loads((out_dir / "constants.json").read_text())
    assert report["claim"] == "constants"
    assert report["summary"]["a_ns"] == pytest.approx(0.101321, rel=1e-5)
    header = (out_dir / "constants.csv").read_text().splitlines()[0]
    assert header.startswith("n,s,c_ns,c_ns_error")


def test_reports_are_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["constants", "--n", "1", "--s", "0.25", "--out", str(tmp_path / name)]) == 0
    first = (tmp_path / "a" / "constants.csv").read_bytes()
    assert first == (tmp_path / "b" / "constants.csv").read_bytes()


def test_moments_config(tmp_path, out_dir):
    config = _write(tmp_path / "moments-small.toml", 'claim = "moments"\ns_grid = [0.5]\n')
    assert main(["moments", "--config", str(config), "--out", str(out_dir)]) == 0
    rows = (out_dir / "moments-small.csv").read_text().splitlines()
    # header plus n, k in {1, 2, 3}
    assert len(rows) == 10


def test_unknown_config_key_fails(tmp_path, out_dir, capsys):
    config = _write(tmp_path / "bad.toml", 'claim = "moments"\nbogus = 1\n')
    assert main(["moments", "--config", str(config), "--out", str(out_dir)]) == 1
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "ConfigError"
    assert error["module"] == "cli"


def test_claim_must_match_subcommand(tmp_path, out_dir):
    config = _write(tmp_path / "moments.toml", 'claim = "moments"\n')
    assert main(["constants", "--config", str(config), "--out", str(out_dir)]) == 1


def test_missing_config_fails(tmp_path, out_dir):
    assert main(["greens", "--config", str(tmp_path / "nope.toml"), "--out", str(out_dir)]) == 1


def test_empty_manifest(tmp_path, out_dir, capsys):
    manifest = _write(tmp_path / "manifest.txt", "# nothing to run\n\n")
    assert main(["verify-all", "--config", str(manifest), "--out", str(out_dir)]) == 0
    assert json.loads(capsys.readouterr().out)["total"] == 0
    assert json.loads((out_dir / "summary.json").read_text())["failed"] == []


def test_missing_manifest(tmp_path, out_dir):
    assert main(["verify-all", "--config", str(tmp_path / "missing.txt"), "--out", str(out_dir)]) == 1


def test_manifest_records_failures(tmp_path, out_dir):
    _write(tmp_path / "ok.toml", 'claim = "constants"\nn = 1\ns = 0.25\n')
    _write(tmp_path / "broken.toml", 'claim = "constants"\nn = 7\n')
    manifest = _write(tmp_path / "manifest.txt", "ok.toml\nbroken.toml\n")
    assert main(["verify-all", "--config", str(manifest), "--out", str(out_dir)]) == 1
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary == {"total": 2, "passed": ["ok"], "failed": ["broken.toml"], "hypothesis_not_met": []}


def test_eval_prints_operator_value(capsys):
    code = main(["eval", "--operator", "frac_laplacian", "--field", "gaussian:w=1",
                 "--point", "0", "--n", "1", "--s", "0.5"])
    assert code == 0
    record = json.loads(capsys.readouterr().out)
    assert record["value"] == pytest.approx(math.sqrt(2.0 / math.pi), rel=1e-6)
    assert record["error_estimate"] >= 0


def test_eval_needs_radius():
    assert main(["eval", "--operator", "s_mean", "--field", "gaussian:w=1"]) == 1


def test_parse_spec_overrides():
    assert parse_spec_overrides(["panels=20", "tail_tol=1e-8", "allow_high_cost=true"]) == {
        "panels": 20, "tail_tol": 1e-8, "allow_high_cost": True}
    with pytest.raises(ConfigError):
        parse_spec_overrides(["panels"])


def test_invalid_spec_override_is_config_error():
    with pytest.raises(ConfigError):
        experiment_service.config_from_dict({"claim": "constants", "spec": {"angular_nodes": 30}})
