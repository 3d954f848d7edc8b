"""Single-ancestor cluster statistics and the Poisson superposition
identity connecting them to the full process."""

import math

import numpy as np
import pytest

from sbmlab.clusters import (
    TailEstimate,
    cluster_tail,
    sample_clusters,
    save_tail_csv,
    superposition_check,
)
from sbmlab.engine import SimConfig


def test_tail_estimate_arithmetic():
    e = TailEstimate(r=1.0, N=100, dt=1e-3, replicates=1000,
                     successes=40, undecided=10)
    assert e.estimate == pytest.approx(100 * 45 / 1000)
    lo, hi = e.ci
    assert lo < e.estimate < hi
    assert not e.zero_success
    z = TailEstimate(r=1.0, N=100, dt=1e-3, replicates=1000,
                     successes=0, undecided=0)
    assert z.zero_success and z.estimate == 0.0
    assert z.ci[0] == 0.0 and z.ci[1] > 0.0


def test_tail_estimate_undecided_widens_ci():
    base = TailEstimate(r=1.0, N=100, dt=1e-3, replicates=1000,
                        successes=40, undecided=0)
    wide = TailEstimate(r=1.0, N=100, dt=1e-3, replicates=1000,
                        successes=40, undecided=20)
    assert wide.ci[0] == base.ci[0]       # lower bound treats them as misses
    assert wide.ci[1] > base.ci[1]


def test_cluster_tail_validation():
    cfg = SimConfig(N=100, dt=1e-3, y0=0.01, t_max=2.0, seed=3)
    with pytest.raises(ValueError):
        cluster_tail(cfg, 0.0, 100)
    with pytest.raises(ValueError):
        cluster_tail(cfg, -1.0, 100)


def test_cluster_tail_deterministic_and_batch_invariant():
    cfg = SimConfig(N=100, dt=1e-3, y0=0.01, t_max=2.0, seed=3)
    a = cluster_tail(cfg, 0.5, 500, batch=500)
    b = cluster_tail(cfg, 0.5, 500, batch=77)
    assert a.successes == b.successes
    assert a.undecided == b.undecided


def test_cluster_tail_matches_hit_law():
    """N * P(ancestor reaches r) against the exact per-particle freeze
    probability N * 6/(N (r + sqrt(6/N))^2) = 6/(r + sqrt(6/N))^2."""
    N = 100
    cfg = SimConfig(N=N, dt=5e-4, y0=0.01, t_max=4.0, seed=1117)
    est = cluster_tail(cfg, 0.8, 8000)
    target = 6.0 / (0.8 + math.sqrt(6.0 / N)) ** 2
    p = target / N
    se = N * math.sqrt(p * (1 - p) / 8000)
    assert abs(est.estimate - target) < 5.0 * se, (est.estimate, target, se)
    lo, hi = est.ci
    assert lo < target < hi


def test_superposition_rows_internally_consistent():
    full = SimConfig(N=100, dt=1e-3, y0=0.5, t_max=10.0, seed=41)
    tail = SimConfig(N=100, dt=1e-3, y0=0.01, t_max=4.0, seed=42)
    rows = superposition_check(full, (1.0,), 300, tail, 4000)
    assert len(rows) == 1
    row = rows[0]
    assert row.implied == pytest.approx(
        -math.expm1(-full.y0 * row.tail_estimate), rel=1e-12)
    assert row.deviation == pytest.approx(row.full_prob - row.implied)
    assert 0.0 < row.full_prob < 1.0
    # the identity itself, at small-run tolerance: 4 sigma + bias slack
    assert abs(row.deviation) < 4.0 * row.full_se + 0.05


def test_superposition_ladder_masses_reuse():
    full = SimConfig(N=100, dt=1e-3, y0=0.5, t_max=10.0, seed=43)
    tail = SimConfig(N=100, dt=1e-3, y0=0.01, t_max=4.0, seed=44)
    masses = np.array([[0.0], [0.2], [np.nan], [0.6], [0.0]])
    rows = superposition_check(full, (1.0,), 5, tail, 1000,
                               method="ladder", ladder_masses=masses)
    assert rows[0].full_replicates == 4
    assert rows[0].full_prob == pytest.approx(0.5)
    with pytest.raises(ValueError):
        superposition_check(full, (1.0,), 5, tail, 10, method="bogus")


def test_sample_clusters_conditioning():
    cfg = SimConfig(N=50, dt=2e-3, y0=0.02, t_max=6.0, seed=55)
    out = sample_clusters(cfg, ("level", 0.3), 5)
    assert len(out.accepted) == 5
    assert out.attempts >= 5
    assert all(r > 0.3 for r in out.rhats)
    # accepted replicate indices are increasing (rejection in order)
    assert out.accepted == sorted(out.accepted)
    assert len(out.profiles) == 5
    out_t = sample_clusters(cfg, ("time", 0.5), 4)
    assert all(z > 0.5 for z in out_t.zetas)


def test_sample_clusters_validation():
    cfg = SimConfig(N=50, dt=2e-3, y0=0.02, t_max=6.0, seed=55)
    with pytest.raises(ValueError):
        sample_clusters(cfg, ("mass", 0.3), 2)
    multi = SimConfig(N=50, dt=2e-3, y0=1.0, t_max=6.0, seed=55)
    with pytest.raises(ValueError):
        sample_clusters(multi, ("level", 0.3), 2)
    with pytest.raises(RuntimeError):
        sample_clusters(cfg, ("level", 50.0), 1, max_attempts=10)


def test_sample_clusters_deterministic():
    cfg = SimConfig(N=50, dt=2e-3, y0=0.02, t_max=6.0, seed=55)
    a = sample_clusters(cfg, ("level", 0.3), 3)
    b = sample_clusters(cfg, ("level", 0.3), 3)
    assert a.accepted == b.accepted
    np.testing.assert_array_equal(a.rhats, b.rhats)


def test_save_tail_csv(tmp_path):
    e = TailEstimate(r=1.0, N=100, dt=1e-3, replicates=1000,
                     successes=40, undecided=10)
    path = tmp_path / "tail.csv"
    save_tail_csv([e], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "r,estimate,ci_low,ci_high,replicates,accepts"
    fields = lines[1].split(",")
    assert float(fields[1]) == pytest.approx(e.estimate)
    assert int(fields[4]) == 1000
