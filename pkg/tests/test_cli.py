"""Command-line front end: configuration precedence, artifact layout,
and the exit-code contract, all exercised in-process."""

import json

import pytest

from sbmlab import cli
from sbmlab.experiments import run_experiment


@pytest.fixture(autouse=True)
def isolated_cache(monkeypatch, tmp_path):
    cache = tmp_path / "cache"
    cache.mkdir()
    monkeypatch.setenv("SBMLAB_CACHE", str(cache))
    # keep stray SBMLAB_* vars from other shells out of the resolution
    import os
    for key in list(os.environ):
        if key.startswith("SBMLAB_") and key != "SBMLAB_CACHE":
            monkeypatch.delenv(key)
    return cache


def test_list_experiments(capsys):
    assert cli.main(["--list-experiments"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 14
    names = [line.split()[0] for line in out]
    assert "extinction" in names and "envelope" in names
    assert names == [n for n, _ in cli.CATALOG]


def test_parse_value_literals():
    assert cli._parse_value("3") == 3
    assert cli._parse_value("2.5e-4") == 2.5e-4
    assert cli._parse_value("(1.0, 2.0)") == (1.0, 2.0)
    assert cli._parse_value("criticality,extinction") == "criticality,extinction"


def test_load_config_flat(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(
        "# comment line\n"
        "experiment = pde\n"
        "\n"
        "lam = 24.0   # trailing comment\n"
        "npoints = 501\n")
    name, params = cli.load_config(p)
    assert name == "pde"
    assert params == {"lam": 24.0, "npoints": 501}


def test_load_config_rejects_garbage(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("this line has no equals sign\n")
    with pytest.raises(ValueError):
        cli.load_config(p)


def test_load_config_manifest_mode(tmp_path):
    p = tmp_path / "manifest.txt"
    p.write_text(json.dumps({"experiment": "pde",
                             "params": {"lam": 6.0, "npoints": 301},
                             "extra_ignored": True}))
    name, params = cli.load_config(p)
    assert name == "pde"
    assert params == {"lam": 6.0, "npoints": 301}


def test_full_run_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "artifacts"
    rc = cli.main(["--experiment", "pde", "--out", str(out),
                   "--seed", "0"])
    assert rc == 0
    files = {f.name for f in out.iterdir()}
    assert files == {"pde_pde_solution.csv", "pde_pde_summary.csv",
                     "manifest.txt"}
    printed = capsys.readouterr().out
    assert "[pass] pde-sup-error" in printed
    assert "[pass] pde-runtime" in printed
    manifest = json.loads((out / "manifest.txt").read_text())
    assert manifest["experiment"] == "pde"
    assert manifest["code_version"]
    assert manifest["params"]["seed"] == 0
    assert sorted(manifest["tables"]) == ["pde_solution", "pde_summary"]
    assert all(v["name"].startswith("pde-") for v in manifest["verdicts"])


def test_csv_floats_round_trip(tmp_path):
    out = tmp_path / "rt"
    assert cli.main(["--experiment", "pde", "--out", str(out)]) == 0
    # cache hit returns the identical result object content
    res = run_experiment("pde")
    assert res.meta["cache_hit"] is True
    lines = (out / "pde_pde_solution.csv").read_text().splitlines()
    header = lines[0].split(",")
    assert header == res.tables["pde_solution"].columns
    row0 = [float(v) for v in lines[1].split(",")]
    assert row0 == [float(v) for v in res.tables["pde_solution"].rows[0]]


def test_manifest_reruns_byte_identical(tmp_path, monkeypatch):
    """A manifest is a complete re-run recipe: feeding it back as
    --config reproduces every CSV byte-for-byte even with the cache
    disabled (fresh computation both times)."""
    monkeypatch.delenv("SBMLAB_CACHE")
    out1 = tmp_path / "first"
    out2 = tmp_path / "second"
    assert cli.main(["--experiment", "pde", "--out", str(out1)]) == 0
    assert cli.main(["--config", str(out1 / "manifest.txt"),
                     "--out", str(out2)]) == 0
    for name in ("pde_pde_solution.csv", "pde_pde_summary.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_env_overrides_config_flags_override_env(tmp_path, monkeypatch,
                                                 capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("experiment = pde\nnpoints = 1001\nseed = 9\n")
    monkeypatch.setenv("SBMLAB_NPOINTS", "501")
    monkeypatch.setenv("SBMLAB_BOGUS_KNOB", "3")
    out = tmp_path / "o"
    rc = cli.main(["--config", str(cfg), "--out", str(out), "--seed", "4"])
    assert rc == 0
    err = capsys.readouterr().err
    assert "SBMLAB_BOGUS_KNOB" in err and "ignoring" in err
    manifest = json.loads((out / "manifest.txt").read_text())
    assert manifest["params"]["npoints"] == 501   # env beat config
    assert manifest["params"]["seed"] == 4        # flag beat config


def test_unknown_experiment_exit_4(capsys):
    assert cli.main(["--experiment", "warp-drive"]) == 4
    assert "unknown experiment" in capsys.readouterr().err


def test_no_experiment_exit_4(capsys):
    assert cli.main([]) == 4
    assert "no experiment named" in capsys.readouterr().err


def test_bad_config_exit_4(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("no equals here\n")
    assert cli.main(["--config", str(bad)]) == 4
    assert cli.main(["--config", str(tmp_path / "missing.cfg")]) == 4


def test_unknown_param_exit_4(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("experiment = pde\nwarp_factor = 9\n")
    assert cli.main(["--config", str(cfg)]) == 4
    assert "warp_factor" in capsys.readouterr().err


def test_bad_flag_exit_4():
    with pytest.raises(SystemExit) as exc:
        cli.main(["--experiment", "pde", "--particles", "not-an-int"])
    assert exc.value.code == 4


def test_unwritable_out_exit_5(tmp_path, capsys):
    blocker = tmp_path / "blocker"
    blocker.write_text("a file, not a directory")
    rc = cli.main(["--experiment", "pde",
                   "--out", str(blocker / "sub")])
    assert rc == 5
    assert "cannot write artifacts" in capsys.readouterr().err


def test_failing_verdict_propagates_exit_2(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("experiment = pde\ntol_sup = 1e-30\ntime_budget = 300.0\n")
    rc = cli.main(["--config", str(cfg), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "[FAIL] pde-sup-error" in capsys.readouterr().out
