import json

import pytest

from mixerlab.harness import bench, diag, verify
from mixerlab.harness.cli import main
from mixerlab.harness.config import ConfigError, build_config, parse_sizes


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_verify_passes_and_is_byte_identical(capsys, tmp_path):
    code, out, err = run(capsys, "verify", "--seed", "11")
    assert code == 0
    doc = json.loads(out)
    assert doc["schema_version"] == 1 and doc["passed"] and len(doc["checks"]) == len(verify.CHECKS)
    assert all(c["trials"] >= 100 for c in doc["checks"])
    assert "checks passed" in err and "checks passed" not in out
    target = tmp_path / "again.json"
    assert run(capsys, "verify", "--seed", "11", "--out", str(target))[0] == 0
    assert target.read_text() == out


def test_fault_fails_exactly_the_recurrent_checks(capsys):
    code, out, _ = run(capsys, "verify", "--inject-fault", "z-sign")
    assert code == 1
    doc = json.loads(out)
    recurrent = {c["name"] for c in doc["checks"] if c["uses_recurrent_path"]}
    assert recurrent and set(doc["failed"]) == recurrent


def test_verify_csv(capsys):
    code, out, _ = run(capsys, "verify", "--format", "csv")
    lines = out.splitlines()
    assert code == 0 and lines[0] == ",".join(verify.CSV_COLUMNS) and len(lines) == len(verify.CHECKS) + 1


def test_usage_errors_exit_2(capsys, tmp_path):
    assert run(capsys, "nonsense")[0] == 2
    assert run(capsys, "verify", "--repeats", "0")[0] == 2
    assert run(capsys, "verify", "--inject-fault", "nope")[0] == 2
    assert run(capsys, "bench", "--sizes", "64,x")[0] == 2
    assert run(capsys, "bench", "--sizes", "128,64")[0] == 2
    assert run(capsys, "model", "--preset", "Q")[0] == 2
    assert run(capsys, "model", "--resolution", "100")[0] == 2
    assert run(capsys, "diag", "--preset", "nope")[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(capsys, "verify", "--config", str(bad))[0] == 2
    bad.write_text(json.dumps({"colour": "red"}))
    assert run(capsys, "verify", "--config", str(bad))[0] == 2


def test_config_file_then_flags(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 5, "trials": 3, "sizes": {"N": [16], "C": 8}}))
    from mixerlab.harness.config import load_config_file

    cfg = build_config("verify", load_config_file(path), {"seed": 9})
    assert cfg.seed == 9 and cfg.trials == 3
    assert cfg.sizes.N == (16,) and cfg.sizes.C == 8 and cfg.sizes.d == 16
    with pytest.raises(ConfigError):
        build_config("verify", {"command": "bench"})
    assert parse_sizes("1,2, 3") == [1, 2, 3]


def test_model_command(capsys, tmp_path):
    code, out, err = run(capsys, "model", "--preset", "T")
    doc = json.loads(out)
    assert code == 0 and doc["model"] == "MILA-T"
    assert doc["totals"]["flops"] == sum(doc["flops_by_term"].values())
    assert "1 MAC = 1 FLOP" in err
    code, out, _ = run(capsys, "model", "--preset", "B", "--format", "csv")
    assert out.startswith("section,name,params,flops")


def test_diag_command(capsys):
    code, out, err = run(capsys, "diag")
    doc = json.loads(out)
    assert code == 0 and doc["passed"]
    assert doc["attenuation"]["0.2"][3] == pytest.approx(0.008)
    assert len(doc["forget_gate_means"]) == 4
    assert doc["permutation"]["forget_off_max_delta"] <= 1e-12
    assert doc["permutation"]["forget_on_min_delta"] > 1e-6
    assert "prefix swap" in err


def test_diag_csv_rows():
    bundle = diag.run_diag(build_config("diag", overrides={"diag_seeds": 3}))
    rows = diag.csv_rows(bundle)
    assert {r["section"] for r in rows} >= {"forget_gate", "attenuation", "permutation"}


def test_bench_records_small(capsys):
    code, out, err = run(capsys, "bench", "--sizes", "64,128", "--repeats", "2")
    doc = json.loads(out)
    assert code == 0
    assert [r["mixer"] for r in doc["records"]] == [m for m in bench.MIXERS for _ in (64, 128)]
    assert all(r["median_s"] > 0 and r["checksum_stable"] for r in doc["records"])
    sums = {r["mixer"]: r["checksum"] for r in doc["records"] if r["n"] == 64}
    assert len(set(sums.values())) == len(sums)
    assert {"machine", "numpy", "cpu_count"} <= set(doc["hardware"])
    assert len(doc["growth"]) == len(bench.MIXERS)
