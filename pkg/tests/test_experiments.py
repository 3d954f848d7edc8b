"""Experiment driver layer: registry, caching, worker invariance, and
exit-code semantics, exercised on deliberately tiny runs."""

import numpy as np
import pytest

from sbmlab.experiments import (
    EXPERIMENTS,
    ExperimentResult,
    Verdict,
    experiment_defaults,
    experiment_names,
    run_experiment,
)

CATALOG_14 = [
    "extinction", "criticality", "mean-localtime", "tanaka", "qvar",
    "exit-law", "csbp-law", "two-sim-agreement", "pde", "cluster-tail",
    "superposition", "exponent", "oscillation", "envelope",
    "range-interval",
]
# criticality rides inside extinction's checks as well; the registry
# carries the 15 catalog drivers plus the high-resolution exponent rerun
EXTRA = ["exponent-fine"]

TINY_EXTINCTION = {"N": 200, "dt": 2.5e-4, "y0": 1.0, "t_grid": (0.5,),
                   "replicates": 400, "seed": 1, "chunk": 100,
                   "tol_abs": 0.2, "tol_z": 6.0, "crit_z": 6.0,
                   "checks": "criticality,extinction"}


def test_registry_contents():
    names = experiment_names()
    for n in CATALOG_14 + EXTRA:
        assert n in names, n
    assert set(names) == set(EXPERIMENTS)
    for n in names:
        driver, defaults = EXPERIMENTS[n]
        assert callable(driver)
        assert isinstance(defaults, dict) and defaults
        assert experiment_defaults(n) == defaults
        assert experiment_defaults(n) is not defaults  # caller-safe copy


def test_unknown_experiment_and_param():
    with pytest.raises(KeyError):
        run_experiment("nope")
    with pytest.raises(KeyError):
        run_experiment("pde", {"bogus_knob": 3})
    with pytest.raises(KeyError):
        experiment_defaults("nope")


def test_exit_code_semantics():
    def v(passed):
        return Verdict(name="x", measured=0.0, target=0.0,
                       tolerance=0.0, passed=passed)
    ok = ExperimentResult("e", {}, {}, [v(True), v(True)])
    assert ok.exit_code == 0
    bad = ExperimentResult("e", {}, {}, [v(True), v(False), v(None)])
    assert bad.exit_code == 2          # any failure dominates
    und = ExperimentResult("e", {}, {}, [v(True), v(None)])
    assert und.exit_code == 3
    with pytest.raises(KeyError):
        ok.verdict("missing")
    assert ok.verdict("x").passed is True


def test_tiny_extinction_run_structure(monkeypatch, tmp_path):
    monkeypatch.setenv("SBMLAB_CACHE", str(tmp_path))
    res = run_experiment("extinction", TINY_EXTINCTION)
    assert res.experiment == "extinction"
    assert res.params["replicates"] == 400
    names = [v.name for v in res.verdicts]
    assert "extinction-abs-t0.5" in names
    assert "extinction-z-t0.5" in names
    assert "criticality-t0.5" in names
    assert "extinction" in res.tables
    assert res.meta["cache_hit"] is False
    assert res.meta["wall_time_s"] > 0


def test_cache_round_trip(monkeypatch, tmp_path):
    monkeypatch.setenv("SBMLAB_CACHE", str(tmp_path))
    first = run_experiment("extinction", TINY_EXTINCTION)
    assert first.meta["cache_hit"] is False
    second = run_experiment("extinction", TINY_EXTINCTION)
    assert second.meta["cache_hit"] is True
    assert [v.name for v in second.verdicts] == [v.name for v in first.verdicts]
    for a, b in zip(first.verdicts, second.verdicts):
        assert a.measured == b.measured and a.passed == b.passed
    for key, tab in first.tables.items():
        np.testing.assert_array_equal(np.asarray(tab.rows, dtype=float),
                                      np.asarray(second.tables[key].rows,
                                                 dtype=float))
    # different parameters miss the cache
    other = dict(TINY_EXTINCTION, seed=2)
    third = run_experiment("extinction", other)
    assert third.meta["cache_hit"] is False


def test_cache_disabled(monkeypatch, tmp_path):
    monkeypatch.setenv("SBMLAB_CACHE", str(tmp_path))
    run_experiment("extinction", TINY_EXTINCTION)
    res = run_experiment("extinction", TINY_EXTINCTION, use_cache=False)
    assert res.meta["cache_hit"] is False


def test_no_cache_env_means_no_files(monkeypatch, tmp_path):
    monkeypatch.delenv("SBMLAB_CACHE", raising=False)
    res = run_experiment("extinction", TINY_EXTINCTION)
    assert res.meta["cache_hit"] is False
    assert not list(tmp_path.iterdir())


def test_worker_invariance(monkeypatch, tmp_path):
    """Chunks own their streams, so the result is identical for any
    worker count; compared entry-for-entry on tables and verdicts."""
    monkeypatch.setenv("SBMLAB_CACHE", str(tmp_path / "a"))
    (tmp_path / "a").mkdir()
    one = run_experiment("extinction", TINY_EXTINCTION, workers=1)
    monkeypatch.setenv("SBMLAB_CACHE", str(tmp_path / "b"))
    (tmp_path / "b").mkdir()
    three = run_experiment("extinction", TINY_EXTINCTION, workers=3)
    assert one.meta["workers"] == 1 and three.meta["workers"] == 3
    for a, b in zip(one.verdicts, three.verdicts):
        assert a.name == b.name
        assert a.measured == b.measured
        assert a.passed == b.passed
    for key in one.tables:
        np.testing.assert_array_equal(np.asarray(one.tables[key].rows),
                                      np.asarray(three.tables[key].rows))


def test_forced_failure_exit_code(monkeypatch, tmp_path):
    monkeypatch.setenv("SBMLAB_CACHE", str(tmp_path))
    res = run_experiment("pde", {"tol_sup": 1e-30, "time_budget": 300.0})
    assert res.exit_code == 2
    assert res.verdict("pde-sup-error").passed is False


def test_indeterminate_exit_code(monkeypatch, tmp_path):
    """Too few extinct replicates for the exponent fit leaves the window
    verdict indeterminate rather than failed."""
    monkeypatch.setenv("SBMLAB_CACHE", str(tmp_path))
    res = run_experiment("exponent", {
        "N": 200, "dt": 2.5e-4, "y0": 0.06, "t_max": 0.6, "h": 0.05,
        "window": (0.1, 0.3), "replicates": 4, "min_extinct": 200,
        "seed": 5, "chunk": 2})
    assert res.verdict("exponent-count").passed is False or \
        res.verdict("exponent-window").passed is None
    assert res.exit_code in (2, 3)
