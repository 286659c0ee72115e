import csv
import json
import subprocess
import sys

import pytest

from fusemap.cli import ConfigError, ExperimentConfig, load_config, main

HALF_IDLE = """SpatialMap(3,3) M; TemporalMap(3,3) N; TemporalMap(3,3) K
Cluster(3); SpatialMap(1,1) K; TemporalMap(1,1) M; TemporalMap(1,1) N
"""

SMALL = {
    "model": {"d": 32, "l": 16, "n_h": 2, "d_ffn": 64},
    "hardware": {"pe_count": 4, "s1_bytes": 48, "s2_bytes": 4096,
                 "bw_noc_bytes_per_sec": 4e9, "bw_offchip_bytes_per_sec": 2e9},
    "ga": {"population_size": 8, "generations": 3, "seed": 2},
}


def write(tmp_path, name, payload):
    p = tmp_path / name
    p.write_text(payload if isinstance(payload, str) else json.dumps(payload))
    return str(p)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_config_round_trip():
    cfg = ExperimentConfig.from_dict(SMALL)
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again.model == cfg.model and again.hardware == cfg.hardware and again.ga == cfg.ga


@pytest.mark.parametrize("raw", [
    {"hardware": {}},
    {"model": {"d": "wide", "l": 4}},
    {"model": {"d": 10, "l": 4, "n_h": 3}},
    {"model": {"d": 8, "l": 4}, "template": "Systolic"},
    {"model": {"d": 8, "l": 4}, "ga": {"crossover_rate": 2.0}},
    {"model": {"d": 8, "l": 4}, "unknown": 1},
])
def test_bad_configs_rejected(raw):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(raw)


def test_malformed_json_names_line(tmp_path):
    path = write(tmp_path, "bad.json", '{\n  "model": {"d": 8,,\n}')
    with pytest.raises(ConfigError, match="line 2"):
        load_config(path)


def test_analyze(tmp_path):
    cfg = write(tmp_path, "c.json", {**SMALL, "model": {**SMALL["model"], "seq_lens": [8, 16]}})
    assert main(["analyze", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "analyze.csv")
    assert [r["l"] for r in rows if r["op"] == "layer"] == ["8", "16"]


def test_enumerate_fusions_json(tmp_path):
    cfg = write(tmp_path, "c.json", SMALL)
    assert main(["enumerate-fusions", "--config", cfg, "--out", str(tmp_path), "--format", "json"]) == 0
    rows = json.loads((tmp_path / "fusions.json").read_text())
    assert len(rows) == 64 and rows[0]["code"] == "000000"


def test_cost_single_operator(tmp_path, capsys):
    cfg = write(tmp_path, "c.json", {"model": {"d": 1, "l": 1}, "operator": {"M": 3, "N": 3, "K": 3},
                                     "hardware": {"pe_count": 6, "s1_bytes": 64, "s2_bytes": 4096}})
    genome = write(tmp_path, "g.txt", HALF_IDLE)
    assert main(["cost", "--config", cfg, "--genome", genome]) == 0
    report = json.loads(capsys.readouterr().out)["report"]
    assert report["compute_cycles"] == 9 and report["pe_utilization"] == 0.5


def test_cost_invalid_genome_lists_violations(tmp_path, capsys):
    cfg = write(tmp_path, "c.json", {"model": {"d": 1, "l": 1}, "operator": {"M": 3, "N": 3, "K": 3},
                                     "hardware": {"pe_count": 2}})
    genome = write(tmp_path, "g.txt", HALF_IDLE)
    assert main(["cost", "--config", cfg, "--genome", genome]) == 2
    assert "Cluster(3)" in capsys.readouterr().err


def test_cost_infeasible_code(tmp_path):
    cfg = write(tmp_path, "c.json", {"model": {"d": 768, "l": 1024, "n_h": 12, "d_ffn": 3072},
                                     "hardware": {"preset": "edge", "s2_bytes": 12582912}})
    genome = write(tmp_path, "g.txt", HALF_IDLE.replace("(3,3)", "(1,1)"))
    assert main(["cost", "--config", cfg, "--genome", genome, "--code", "111111"]) == 3


def test_missing_genome_file_is_io_error(tmp_path):
    cfg = write(tmp_path, "c.json", SMALL)
    assert main(["cost", "--config", cfg, "--genome", str(tmp_path / "none.txt")]) == 4


def test_search_outputs_and_determinism(tmp_path):
    cfg = write(tmp_path, "c.json", SMALL)
    for run in ("a", "b"):
        assert main(["search", "--config", cfg, "--out", str(tmp_path / run)]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "pareto.csv").read_bytes() == (b / "pareto.csv").read_bytes()
    best = json.loads((a / "best.json").read_text())
    assert best["fusion_code"] in best["feasible_codes"]
    for row in read_csv(a / "pareto.csv"):
        assert (a / row["genome_ref"]).exists()
    assert len(read_csv(a / "trace.csv")) == SMALL["ga"]["generations"] + 1
    assert not list(a.glob(".*"))        # no temp files left behind


def test_seed_override_changes_config(tmp_path):
    cfg = write(tmp_path, "c.json", SMALL)
    assert main(["search", "--config", cfg, "--seed", "11", "--out", str(tmp_path / "s")]) == 0


def test_sweep_records_errors_per_point(tmp_path):
    raw = {**SMALL, "sweep": {"parameter": "hardware.s2_bytes", "values": [4096, 1]}}
    cfg = write(tmp_path, "c.json", raw)
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "sw")]) == 0
    rows = read_csv(tmp_path / "sw" / "sweep.csv")
    assert rows[0]["status"] == "ok" and rows[1]["status"].startswith("error")
    assert (tmp_path / "sw" / "hardware.s2_bytes=4096" / "pareto.csv").exists()


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, "c.json", SMALL)
    proc = subprocess.run([sys.executable, "-m", "fusemap", "enumerate-fusions", "--config", cfg],
                          capture_output=True, text=True, check=True)
    assert proc.stdout.startswith("code,chains")
