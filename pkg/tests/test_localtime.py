"""Occupation-based local time profiles: exact bookkeeping identities,
the dual-route mean formula, and boundary detection on synthetic data."""

import csv
import math

import numpy as np
import pytest

from sbmlab.engine import SimConfig, run_until_extinction
from sbmlab.localtime import (
    LocalTimeProfile,
    accumulate_occupation,
    default_threshold,
    derivative_profile,
    detect_boundary,
    mean_local_time_exact,
    mean_local_time_oracle,
    qvar_consistency,
    save_profile_csv,
    tanaka_residual,
)


@pytest.fixture(scope="module")
def short_traj():
    cfg = SimConfig(N=200, dt=5e-4, y0=1.0, t_max=0.5, seed=909)
    return run_until_extinction(cfg, replicate=0, h=0.05,
                                snapshot_stride=1,
                                checkpoint_times=(0.25, 0.5))


@pytest.mark.parametrize("t,x", [(1.0, 0.0), (1.0, 0.5), (1.0, 1.0),
                                 (2.0, 0.0), (0.25, -0.7), (4.0, 2.0)])
def test_mean_local_time_two_routes_agree(t, x):
    """Quadrature and closed form are independent derivations of the same
    integral int_0^t p_s(x) ds; they must agree to 1e-8."""
    assert mean_local_time_oracle(t, x) == pytest.approx(
        mean_local_time_exact(t, x), abs=1e-8)


def test_mean_local_time_known_value_at_origin():
    # int_0^1 (2 pi s)^(-1/2) ds = sqrt(2/pi)
    assert mean_local_time_exact(1.0, 0.0) == pytest.approx(
        math.sqrt(2.0 / math.pi), rel=1e-12)


def test_mean_local_time_symmetry_and_decay():
    assert mean_local_time_exact(1.0, 0.7) == mean_local_time_exact(1.0, -0.7)
    vals = [mean_local_time_exact(1.0, x) for x in (0.0, 0.5, 1.0, 2.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        mean_local_time_exact(0.0, 0.5)
    with pytest.raises(ValueError):
        mean_local_time_oracle(-1.0, 0.5)


def test_accumulate_occupation_identity(short_traj):
    """values must be exactly counts * dt / (N h), and the total count
    must equal the summed alive series (every particle-step lands in
    exactly one bin)."""
    prof = accumulate_occupation(short_traj)
    np.testing.assert_array_equal(
        prof.values, prof.counts * (short_traj.dt / (short_traj.N * prof.h)))
    assert prof.counts.sum() == short_traj.alive.sum()
    assert prof.h == short_traj.h
    assert prof.N == short_traj.N


def test_accumulate_occupation_regroup(short_traj):
    """Coarsening to an integer multiple of the native width regroups the
    integer counts; the integral sum(values)*h is conserved exactly."""
    fine = accumulate_occupation(short_traj)
    coarse = accumulate_occupation(short_traj, h=2 * short_traj.h)
    assert coarse.nbins == (fine.nbins + 1) // 2
    assert coarse.counts.sum() == fine.counts.sum()
    np.testing.assert_allclose(coarse.values.sum() * coarse.h,
                               fine.values.sum() * fine.h, rtol=1e-12)


def test_accumulate_occupation_rejects_non_multiple(short_traj):
    with pytest.raises(ValueError):
        accumulate_occupation(short_traj, h=1.5 * short_traj.h)
    with pytest.raises(ValueError):
        accumulate_occupation(short_traj, h=0.5 * short_traj.h)


def test_accumulate_occupation_checkpoints(short_traj):
    early = accumulate_occupation(short_traj, t=0.25)
    late = accumulate_occupation(short_traj)
    assert early.t == pytest.approx(0.25)
    assert early.counts.sum() <= late.counts.sum()
    with pytest.raises(ValueError):
        accumulate_occupation(short_traj, t=0.123)


def test_profile_lookup_methods(short_traj):
    prof = accumulate_occupation(short_traj)
    edges = prof.bin_edges
    centers = prof.bin_centers
    assert edges.size == prof.nbins + 1
    assert centers.size == prof.nbins
    i = prof.bin_of(centers[3])
    assert i == 3
    assert prof.value_at(centers[3]) == prof.values[3]
    with pytest.raises(ValueError):
        prof.bin_of(edges[0] - 1.0)
    with pytest.raises(ValueError):
        prof.bin_of(edges[-1] + 1.0)


def test_profile_scaled(short_traj):
    prof = accumulate_occupation(short_traj)
    doubled = prof.scaled(2.0)
    np.testing.assert_array_equal(doubled.values, 2.0 * prof.values)
    assert doubled.h == prof.h and doubled.grid_lo == prof.grid_lo


def synthetic_profile(values, h=0.1, lo=0.0):
    arr = np.asarray(values, dtype=float)
    return LocalTimeProfile(grid_lo=lo, h=h, values=arr,
                            counts=np.zeros(arr.size, dtype=np.int64),
                            t=1.0, N=100, dt=1e-3)


def test_detect_boundary_simple_block():
    prof = synthetic_profile([0, 0, 1, 2, 3, 1, 0, 0])
    be = detect_boundary(prof, threshold=0.5)
    assert be.left == pytest.approx(0.2)
    assert be.right == pytest.approx(0.6)
    assert be.interior_gaps == 0
    assert be.threshold == 0.5


def test_detect_boundary_counts_interior_gaps():
    prof = synthetic_profile([0, 1, 0, 2, 0, 0, 3, 0])
    be = detect_boundary(prof, threshold=0.5)
    assert be.left == pytest.approx(0.1)
    assert be.right == pytest.approx(0.7)
    assert be.interior_gaps == 3


def test_detect_boundary_threshold_strictness():
    # mask is values > threshold, so bins exactly at the threshold drop out
    prof = synthetic_profile([0.5, 1.0, 0.5])
    be = detect_boundary(prof, threshold=0.5)
    assert be.left == pytest.approx(0.1)
    assert be.right == pytest.approx(0.2)


def test_detect_boundary_default_threshold_and_empty():
    prof = synthetic_profile([0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        detect_boundary(prof)
    assert default_threshold(100, 0.1) == pytest.approx(1.0 / (2 * 100 * 0.1))


def test_derivative_profile_exact_on_linear():
    h = 0.25
    prof = synthetic_profile(2.0 + 3.0 * np.arange(10) * h, h=h)
    np.testing.assert_allclose(derivative_profile(prof), 3.0, rtol=1e-12)
    with pytest.raises(ValueError):
        derivative_profile(synthetic_profile([1.0, 2.0]))


def test_qvar_consistency_residual_roundoff(short_traj):
    """Aligned summation orders walk the same integers, so the relative
    residual is pure float roundoff."""
    prof = accumulate_occupation(short_traj)
    r = qvar_consistency(short_traj, prof, x=-0.525, y=0.525, t=0.5)
    assert r < 1e-12


def test_qvar_consistency_validation(short_traj):
    prof = accumulate_occupation(short_traj)
    with pytest.raises(ValueError):
        qvar_consistency(short_traj, prof, x=0.5, y=0.5, t=0.5)
    if not short_traj.extinct:
        with pytest.raises(ValueError):
            qvar_consistency(short_traj, prof, x=-0.5, y=0.5, t=5.0)


def test_tanaka_residual_finite_and_guarded(short_traj):
    prof = accumulate_occupation(short_traj)
    r = tanaka_residual(short_traj, prof, x=0.5, t=0.5)
    assert math.isfinite(r)
    with pytest.raises(ValueError):
        tanaka_residual(short_traj, prof, x=short_traj.x0, t=0.5)


def test_tanaka_residual_zero_profile_is_pure_mass_term():
    """With an identically zero profile the residual reduces to the
    grid-summed mass functional minus y0*|x - x0|, checkable by hand."""
    cfg = SimConfig(N=100, dt=1e-3, y0=1.0, t_max=0.1, seed=4242)
    traj = run_until_extinction(cfg, replicate=1, h=0.1)
    zero = LocalTimeProfile(grid_lo=traj.grid_lo, h=traj.h,
                            values=np.zeros(traj.nbins),
                            counts=np.zeros(traj.nbins, dtype=np.int64),
                            t=traj.t_run, N=traj.N, dt=traj.dt)
    x = 0.7
    r = tanaka_residual(traj, zero, x=x, t=traj.t_run)
    centers = traj.bin_centers
    expect = (traj.final_counts * np.abs(centers - x)).sum() / traj.N \
        - traj.y0 * abs(x - traj.x0)
    assert r == pytest.approx(expect, rel=1e-12)


def test_save_profile_csv(tmp_path, short_traj):
    prof = accumulate_occupation(short_traj)
    path = tmp_path / "prof.csv"
    save_profile_csv(prof, path)
    with open(path, newline="") as f:
        comment = f.readline()
        rows = list(csv.reader(f))
    assert comment.startswith("# N=200")
    assert rows[0] == ["bin_left", "bin_right", "value"]
    assert len(rows) == prof.nbins + 1
    got = np.array([float(r[2]) for r in rows[1:]])
    np.testing.assert_allclose(got, prof.values, rtol=1e-15)
    lefts = np.array([float(r[0]) for r in rows[1:]])
    np.testing.assert_allclose(lefts, prof.bin_edges[:-1], rtol=1e-15)
