import json
import os
import subprocess
import sys

import pytest

from freepressure.cli import main
from freepressure.experiments import (ConfigError, config_hash, materialize, plot_artifact, read_records, replay,
                                      run)

TINY_PRESSURE = {"n": [3, 4, 5], "h": "0.5 * X1.X1", "R": 3.0,
                 "mc": {"chains": 4, "adapt": 60, "samples": 40}, "schedule": {"nodes": 16}}


def _write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def _stable(path):
    """metrics.jsonl lines without the wall-clock timestamp."""
    out = []
    for r in read_records(path):
        r.pop("timestamp")
        out.append(json.dumps(r, sort_keys=True))
    return out


# -- config validation ----------------------------------------------------------------------

@pytest.mark.parametrize("bad,field", [({"R": -1}, "R"), ({"n": [4, -2]}, "n[1]"), ({"colour": 1}, "colour"),
                                       ({"h": "X1.X2 +"}, "h"), ({"mc": {"chains": 1}}, "mc.chains"),
                                       ({"schedule": {"nodes": 4}}, "schedule")])
def test_bad_config_names_field(bad, field):
    with pytest.raises(ConfigError) as exc:
        materialize("pressure", bad)
    assert exc.value.field == field


def test_bad_config_exits_2_without_outputs(tmp_path):
    cfg = _write(tmp_path, "bad.json", {"n": [-3]})
    out = tmp_path / "out"
    assert main(["volume", "--config", cfg, "--out", str(out)]) == 2
    assert not out.exists()


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["volume", "--bogus"])
    assert exc.value.code == 2


def test_non_selfadjoint_h_rejected():
    with pytest.raises(ConfigError):
        materialize("pressure", {"h": "X1.X2"})


def test_hash_stable_under_key_order():
    a = materialize("pressure", {"R": 2.0, "n": [4, 8, 16], "mc": {"chains": 4, "samples": 50}})
    b = materialize("pressure", {"mc": {"samples": 50, "chains": 4}, "n": [4, 8, 16], "R": 2.0})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(materialize("pressure", {"R": 2.5}))


# -- deterministic commands -------------------------------------------------------------------------

def test_volume_outputs(tmp_path):
    out = tmp_path / "vol"
    assert main(["volume", "--out", str(out)]) == 0
    assert {"metrics.jsonl", "volume.csv", "volume.svg"} <= set(os.listdir(out))
    recs = {r["metric"]: r for r in read_records(out / "metrics.jsonl")}
    ext = recs["extrapolated_scaled_log_volume"]
    assert abs(ext["value"] - 1.668939) < 1e-3
    assert all("stderr" in r and r["stderr"] is not None for r in recs.values())


def test_equilibrium_outputs(tmp_path):
    out = tmp_path / "eq"
    assert main(["equilibrium", "--out", str(out)]) == 0
    recs = {r["metric"]: r for r in read_records(out / "metrics.jsonl")}
    assert abs(recs["pressure"]["value"] - 0.918939) < 1e-3
    assert (out / "equilibrium.csv").exists() and (out / "equilibrium.svg").exists()


def test_replay_volume_exact(tmp_path):
    out = tmp_path / "vol"
    main(["volume", "--out", str(out)])
    chash = read_records(out / "metrics.jsonl")[0]["config_hash"]
    rep = replay(out / "metrics.jsonl", chash)
    assert rep.same_seed and rep.ok


def test_replay_errors(tmp_path):
    with pytest.raises(ConfigError):
        replay(tmp_path / "missing.jsonl", "abc")
    out = tmp_path / "vol"
    main(["volume", "--out", str(out)])
    assert main(["replay", "--results", str(out / "metrics.jsonl"), "--hash", "0000"]) == 2


def test_plots_regenerate_from_csv(tmp_path):
    out = tmp_path / "vol"
    main(["volume", "--out", str(out)])
    svg = out / "volume.svg"
    first = svg.read_bytes()
    svg.unlink()
    assert plot_artifact(str(out / "volume.csv")) == str(svg)
    assert svg.read_bytes() == first


# -- Monte Carlo determinism ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def pressure_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("mc")
    cfg = _write(base, "p.json", TINY_PRESSURE)
    codes = {}
    for jobs in (1, 2):
        codes[jobs] = main(["pressure", "--config", cfg, "--seed", "7", "--jobs", str(jobs),
                            "--out", str(base / f"j{jobs}")])
    return base, codes


def test_pressure_independent_of_jobs(pressure_runs):
    base, codes = pressure_runs
    assert codes[1] == codes[2]
    assert _stable(base / "j1" / "metrics.jsonl") == _stable(base / "j2" / "metrics.jsonl")
    for name in ("pressure.csv", "pressure.svg"):
        assert (base / "j1" / name).read_bytes() == (base / "j2" / name).read_bytes()


def test_pressure_replay_same_and_other_seed(pressure_runs):
    base, _ = pressure_runs
    path = base / "j1" / "metrics.jsonl"
    chash = read_records(path)[0]["config_hash"]
    assert replay(path, chash, jobs=2).ok
    other = replay(path, chash, seed=99)
    assert not other.same_seed and other.ok


def test_every_metric_has_error_field():
    res = run(materialize("duality-gap", {"grid": 300}))
    assert res.records and all(r.stderr is not None for r in res.records)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "freepressure", "volume", "--config", "/nonexistent.json"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "config" in proc.stderr
