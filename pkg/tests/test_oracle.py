"""Tests for the Monte Carlo reference implementation and its RNG streams."""

import os
import subprocess
import sys
import warnings

import numpy as np
import pytest
from scipy.special import ndtri

from gsrl import (
    ChangePointModel,
    Method,
    UndefinedConditionalError,
    build_matrix,
    conditional_pfa,
    martingale_residual,
    run_length_std,
    simulate_run_length,
    solve_arl,
    solve_second_moment,
    survival_series,
)
from gsrl.oracle import _inverse_normal_cdf


def test_same_seed_reproduces_bit_for_bit():
    model = ChangePointModel.gsr(1.0)
    a = simulate_run_length(model, 56.0, paths=4000, seed=123)
    b = simulate_run_length(model, 56.0, paths=4000, seed=123)
    assert np.array_equal(a.run_lengths, b.run_lengths)
    assert np.array_equal(a.capped, b.capped)
    c = simulate_run_length(model, 56.0, paths=4000, seed=124)
    assert not np.array_equal(a.run_lengths, c.run_lengths)


def test_streams_are_indexed_by_path_not_by_count():
    # each path draws from its own counter stream: enlarging the experiment
    # leaves earlier paths untouched
    model = ChangePointModel.gsr(1.0)
    small = simulate_run_length(model, 56.0, paths=2000, seed=9)
    large = simulate_run_length(model, 56.0, paths=6000, seed=9)
    assert np.array_equal(small.run_lengths, large.run_lengths[:2000])


def test_inverse_normal_cdf_matches_reference():
    ps = np.concatenate([
        np.linspace(1e-9, 1.0 - 1e-9, 20011),
        [1e-300, 1e-30, 1e-12, 0.5, 1.0 - 1e-12, 1.0 - 1e-16],
    ])
    ours = np.array([_inverse_normal_cdf(p) for p in ps])
    ref = ndtri(ps)
    err = np.abs(ours - ref) / np.maximum(1.0, np.abs(ref))
    assert float(np.max(err)) <= 1e-13


def test_run_lengths_are_positive_and_within_cap():
    model = ChangePointModel.gsr(0.5)
    res = simulate_run_length(model, 30.0, paths=3000, seed=5)
    assert res.run_lengths.min() >= 1
    assert res.run_lengths.max() <= res.cap
    assert res.paths == 3000


def test_mean_matches_solver_within_three_standard_errors():
    model = ChangePointModel.gsr(1.0)
    res = simulate_run_length(model, 56.0, paths=40000, seed=2024)
    ref = float(solve_arl(build_matrix(model, 56.0, 1024, Method.COLLOCATION_HAT)).coeffs[0])
    est = res.arl()
    assert abs(est.estimate - ref) <= 3.0 * est.std_error
    assert est.quantity == "arl"


def test_standard_deviation_matches_solver():
    model = ChangePointModel.gsr(1.0)
    res = simulate_run_length(model, 56.0, paths=40000, seed=77)
    m = build_matrix(model, 56.0, 1024, Method.COLLOCATION_HAT)
    arl = solve_arl(m)
    ref = run_length_std(arl, solve_second_moment(m, arl), 0.0)
    est = res.std_dev()
    assert abs(est.estimate - ref) <= 3.0 * est.std_error


def test_cumulative_maximum_recursion_matches_solver():
    model = ChangePointModel.cusum(1.0)
    res = simulate_run_length(model, 20.0, paths=30000, seed=31)
    ref = float(solve_arl(build_matrix(model, 20.0, 1024, Method.COLLOCATION_HAT)).coeffs[0])
    est = res.arl()
    assert abs(est.estimate - ref) <= 3.0 * est.std_error


def test_headstart_shortens_runs():
    model = ChangePointModel.gsr(1.0)
    r0 = simulate_run_length(model, 56.0, paths=20000, seed=4)
    r40 = simulate_run_length(model, 56.0, headstart=40.0, paths=20000, seed=4)
    assert r40.arl().estimate < r0.arl().estimate


def test_custom_map_fallback_agrees_with_compiled_ratio_recursion():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        custom = ChangePointModel.custom(1.0, lambda x: 1.0 + x)
    gsr = ChangePointModel.gsr(1.0)
    a = simulate_run_length(gsr, 20.0, paths=3000, seed=15)
    b = simulate_run_length(custom, 20.0, paths=3000, seed=15)
    assert np.array_equal(a.run_lengths, b.run_lengths)


def test_survival_and_window_estimates_match_solver():
    model = ChangePointModel.gsr(1.0)
    res = simulate_run_length(model, 56.0, paths=40000, seed=88)
    m = build_matrix(model, 56.0, 512, Method.COLLOCATION_HAT)
    series = survival_series(m, 0.0, epsilon_tail=0.0, k_max=120)
    sv = res.survival(100)
    assert abs(sv.estimate - series.values[100]) <= 3.0 * sv.std_error
    pf = res.conditional_pfa(50, 50)
    ref = conditional_pfa(series, 50, 50)
    assert abs(pf.estimate - ref) <= 3.0 * pf.std_error


def test_survival_curve_consistent_with_point_estimates():
    model = ChangePointModel.gsr(1.0)
    res = simulate_run_length(model, 56.0, paths=5000, seed=61)
    curve = res.survival_curve(50)
    assert curve.shape == (51,)
    assert curve[0] == 1.0
    assert np.all(np.diff(curve) <= 0.0)
    assert curve[30] == res.survival(30).estimate


def test_histogram_accounts_for_every_path():
    model = ChangePointModel.gsr(1.0)
    res = simulate_run_length(model, 56.0, paths=5000, seed=3)
    counts = res.histogram()
    assert counts.sum() == 5000
    assert counts[0] == 0  # no zero-length runs
    assert np.all(counts[res.run_lengths] > 0)


def test_capped_paths_flag_reliability():
    model = ChangePointModel.gsr(1.0)
    res = simulate_run_length(model, 56.0, paths=2000, seed=10, cap=20)
    assert res.capped_fraction > 0.01
    assert not res.reliable
    assert not res.arl().reliable
    # capped paths report the cap itself: the estimate is a lower bound
    assert res.run_lengths.max() == 20


def test_conditioning_on_no_survivors_raises():
    model = ChangePointModel.gsr(1.0)
    res = simulate_run_length(model, 56.0, paths=500, seed=12, cap=600)
    top = int(res.run_lengths.max())
    with pytest.raises(UndefinedConditionalError):
        res.conditional_pfa(top + 1, 5)


def test_martingale_identity_holds_in_expectation():
    model = ChangePointModel.gsr(0.1)
    for n_steps in (1, 10, 50):
        est = martingale_residual(model, n_steps=n_steps, paths=60000, seed=n_steps)
        assert abs(est.estimate) <= 3.0 * est.std_error, n_steps


def test_martingale_identity_requires_ratio_recursion():
    with pytest.raises(ValueError):
        martingale_residual(ChangePointModel.cusum(0.5))


def test_simulation_validates_arguments():
    model = ChangePointModel.gsr(1.0)
    with pytest.raises(ValueError):
        simulate_run_length(model, -1.0)
    with pytest.raises(ValueError):
        simulate_run_length(model, 56.0, paths=0)
    with pytest.raises(ValueError):
        simulate_run_length(model, 56.0, headstart=-2.0)
    with pytest.raises(ValueError):
        simulate_run_length(model, 56.0, cap=-5)


def test_thread_cap_environment_variable():
    # honored at import time in a fresh interpreter
    code = (
        "from gsrl import ChangePointModel, simulate_run_length\n"
        "r = simulate_run_length(ChangePointModel.gsr(1.0), 10.0, paths=200, seed=1)\n"
        "print(int(r.run_lengths.sum()))\n"
    )
    env = dict(os.environ, GSR_THREADS="1")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True,
                         text=True, env=env, timeout=300)
    assert out.returncode == 0, out.stderr
    assert int(out.stdout.strip()) > 0
