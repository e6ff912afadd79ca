"""Tests for the observation model: likelihood-ratio laws and transition densities."""

import math
import warnings

import numpy as np
import pytest
from scipy.integrate import quad

from gsrl import ChangePointModel, Measure, PsiKind

# Frozen with mpmath at 30 digits: Phi(0.5), Phi(-0.5), and the Gaussian
# mean-shift likelihood-ratio cdfs at t=2, theta=0.5.
PHI_HALF = 0.6914624612740131
PHI_MINUS_HALF = 0.3085375387259869
PRE_CDF_T2_TH05 = 0.9491110021533846
POST_CDF_T2_TH05 = 0.8720833050187581

# Frozen transition density values (same mpmath script).
DENSITY_TH1_X0_Y1 = 0.3520653267642995
DENSITY_TH05_X3_Y2 = 0.20918819643853673


def test_constructors_and_labels():
    g = ChangePointModel.gsr(0.5)
    assert g.psi_kind is PsiKind.GSR
    assert g.theta == 0.5
    assert "0.5" in g.label
    c = ChangePointModel.cusum(1.0)
    assert c.psi_kind is PsiKind.CUSUM
    assert c.psi_values(np.array([0.0, 0.5, 3.0])).tolist() == [1.0, 1.0, 3.0]
    assert g.psi_values(np.array([0.0, 0.5, 3.0])).tolist() == [1.0, 1.5, 4.0]


def test_theta_validation():
    with pytest.raises(ValueError):
        ChangePointModel.gsr(0.0)
    with pytest.raises(ValueError):
        ChangePointModel.gsr(-0.5)
    with pytest.raises(ValueError):
        ChangePointModel.gsr(float("nan"))
    with pytest.raises(ValueError):
        ChangePointModel.gsr(float("inf"))


def test_custom_psi_accepted_with_warning():
    with pytest.warns(UserWarning):
        m = ChangePointModel.custom(1.0, lambda x: 1.0 + 0.5 * x)
    assert m.psi_kind is PsiKind.CUSTOM
    assert m.psi_values(np.array([2.0]))[0] == 2.0


def test_custom_psi_rejects_negative_values():
    with pytest.raises(ValueError):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ChangePointModel.custom(1.0, lambda x: x - 0.5)


def test_lr_cdf_trivial_points():
    m = ChangePointModel.gsr(1.0)
    # zero and negative-limit behavior
    assert m.lr_cdf(0.0, Measure.PRE_CHANGE) == 0.0
    assert m.lr_cdf(0.0, Measure.POST_CHANGE) == 0.0
    with pytest.raises(ValueError):
        m.lr_cdf(-1.0, Measure.PRE_CHANGE)
    # t -> infinity gives 1
    assert m.lr_cdf(1e300, Measure.PRE_CHANGE) == pytest.approx(1.0, abs=1e-15)
    # median points: pre-change law has median exp(-theta^2/2)
    assert m.lr_cdf(math.exp(-0.5), Measure.PRE_CHANGE) == pytest.approx(0.5, abs=1e-15)
    assert m.lr_cdf(math.exp(0.5), Measure.POST_CHANGE) == pytest.approx(0.5, abs=1e-15)


def test_lr_cdf_frozen_values():
    m = ChangePointModel.gsr(1.0)
    # at t=1 the argument is +-theta/2
    assert m.lr_cdf(1.0, Measure.PRE_CHANGE) == pytest.approx(PHI_HALF, abs=1e-15)
    assert m.lr_cdf(1.0, Measure.POST_CHANGE) == pytest.approx(PHI_MINUS_HALF, abs=1e-15)
    m5 = ChangePointModel.gsr(0.5)
    assert m5.lr_cdf(2.0, Measure.PRE_CHANGE) == pytest.approx(PRE_CDF_T2_TH05, abs=1e-15)
    assert m5.lr_cdf(2.0, Measure.POST_CHANGE) == pytest.approx(POST_CDF_T2_TH05, abs=1e-15)


def test_lr_cdf_vectorized_and_monotone():
    m = ChangePointModel.gsr(0.5)
    t = np.linspace(0.0, 8.0, 200)
    for measure in (Measure.PRE_CHANGE, Measure.POST_CHANGE):
        c = m.lr_cdf(t, measure)
        assert c.shape == t.shape
        assert c[0] == 0.0
        assert np.all(np.diff(c) >= 0.0)
        assert np.all((c >= 0.0) & (c <= 1.0))


def test_kernel_density_frozen_values():
    m1 = ChangePointModel.gsr(1.0)
    assert m1.kernel_density(0.0, 1.0, Measure.PRE_CHANGE) == pytest.approx(
        DENSITY_TH1_X0_Y1, rel=1e-14)
    # at y = psi(x) the log term vanishes and both measures agree
    assert m1.kernel_density(0.0, 1.0, Measure.POST_CHANGE) == pytest.approx(
        DENSITY_TH1_X0_Y1, rel=1e-14)
    m5 = ChangePointModel.gsr(0.5)
    assert m5.kernel_density(3.0, 2.0, Measure.PRE_CHANGE) == pytest.approx(
        DENSITY_TH05_X3_Y2, rel=1e-14)


def test_kernel_density_edge_cases():
    m = ChangePointModel.gsr(1.0)
    assert m.kernel_density(0.0, 0.0, Measure.PRE_CHANGE) == 0.0
    with pytest.raises(ValueError):
        m.kernel_density(0.0, -1.0, Measure.PRE_CHANGE)
    with pytest.raises(ValueError):
        m.kernel_density(-1.5, 1.0, Measure.PRE_CHANGE)
    out = m.kernel_density(np.array([0.0, 1.0]), np.array([[1.0], [2.0]]),
                           Measure.PRE_CHANGE)
    assert out.shape == (2, 2)


def test_kernel_density_is_cdf_derivative():
    # central finite differences of the cdf in y reproduce the density;
    # y is sampled within two log-sigmas of psi(x) so the difference quotient
    # stays well conditioned
    rng = np.random.default_rng(20240811)
    for _ in range(25):
        theta = float(rng.uniform(0.1, 2.0))
        x = float(rng.uniform(0.0, 20.0))
        m = ChangePointModel.gsr(theta)
        psi = 1.0 + x
        y = psi * math.exp(theta * float(rng.uniform(-2.0, 2.0)))
        h = 1e-6 * max(1.0, y)
        for measure in (Measure.PRE_CHANGE, Measure.POST_CHANGE):
            fd = (m.lr_cdf((y + h) / psi, measure)
                  - m.lr_cdf((y - h) / psi, measure)) / (2.0 * h)
            dens = m.kernel_density(x, y, measure)
            assert dens == pytest.approx(fd, rel=5e-8, abs=1e-12)


def test_change_of_measure_identity():
    # psi(x) * K_post(x, y) == y * K_pre(x, y), both sides coded independently
    rng = np.random.default_rng(911)
    for _ in range(200):
        theta = float(rng.uniform(0.05, 2.5))
        x = float(rng.uniform(-1.0, 50.0))
        y = float(rng.uniform(0.0, 80.0))
        m = ChangePointModel.gsr(theta)
        psi = float(m.psi_values(np.array([x]))[0])
        if psi == 0.0:
            continue
        lhs = psi * m.kernel_density(x, y, Measure.POST_CHANGE)
        rhs = y * m.kernel_density(x, y, Measure.PRE_CHANGE)
        assert abs(lhs - rhs) <= 1e-13 * max(1.0, abs(lhs), abs(rhs))


def test_pre_change_likelihood_ratio_has_unit_mean():
    # integral of y * K_pre(0, y) dy over (0, inf) equals 1 for any theta
    for theta in (0.25, 0.5, 1.0, 1.5):
        m = ChangePointModel.gsr(theta)
        val, err = quad(lambda y: y * m.kernel_density(0.0, y, Measure.PRE_CHANGE),
                        0.0, np.inf, limit=200)
        assert val == pytest.approx(1.0, abs=max(1e-8, 10 * err))


def test_densities_integrate_to_one():
    for theta in (0.3, 1.0):
        m = ChangePointModel.gsr(theta)
        for x in (0.0, 2.5):
            for measure in (Measure.PRE_CHANGE, Measure.POST_CHANGE):
                val, err = quad(lambda y: m.kernel_density(x, y, measure),
                                0.0, np.inf, limit=200)
                assert val == pytest.approx(1.0, abs=max(1e-8, 10 * err))


def test_cdf_matches_density_integral():
    # cdf at t equals the integral of the density of y = psi(x) * Lambda up to t
    m = ChangePointModel.gsr(0.7)
    x = 1.3
    psi = 2.3
    for t in (0.5, 2.0, 10.0):
        val, _ = quad(lambda y: m.kernel_density(x, y, Measure.PRE_CHANGE), 0.0, t,
                      limit=200)
        assert val == pytest.approx(m.lr_cdf(t / psi, Measure.PRE_CHANGE), abs=1e-9)
