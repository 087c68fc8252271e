"""Convergence diagnostics: TV metric, rate fits, uniformity, plateau, plots."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qslab.analysis import (
    AnalysisError,
    ConvergenceCurve,
    convergence_curve,
    fit_rate,
    plateau_check,
    plot_curves_svg,
    tv_distance,
    uniformity_report,
    write_curve_csv,
    write_fits_csv,
)
from qslab.models import make_preset
from qslab.spectral import evolve, qsd_solve, truncate


@pytest.fixture(scope="module")
def two_state_spectral():
    return qsd_solve(truncate(make_preset("two-state"), 2), tol=1e-12)


@pytest.fixture(scope="module")
def logistic_spectral():
    return qsd_solve(truncate(make_preset("logistic"), 80), tol=1e-11)


# ---------------------------------------------------------------------------
# the metric


def test_tv_distance_hand_value():
    assert tv_distance(np.array([0.382, 0.618]), np.array([0.5, 0.5])) == \
        pytest.approx(0.236, abs=1e-12)
    with pytest.raises(ValueError):
        tv_distance(np.ones(3) / 3, np.ones(4) / 4)


weights = st.lists(st.floats(0.0, 1.0), min_size=2, max_size=12)


@settings(max_examples=200, deadline=None)
@given(weights, weights, weights)
def test_tv_distance_is_a_bounded_metric(wp, wq, wr):
    n = min(len(wp), len(wq), len(wr))

    def norm(w):
        v = np.array(w[:n]) + 1e-9
        return v / v.sum()

    p, q, r = norm(wp), norm(wq), norm(wr)
    assert tv_distance(p, p) == 0.0
    assert tv_distance(p, q) == pytest.approx(tv_distance(q, p), abs=1e-15)
    assert 0.0 <= tv_distance(p, q) <= 2.0 + 1e-12  # unhalved convention
    assert tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-12


# ---------------------------------------------------------------------------
# curves


def test_curve_validation():
    ConvergenceCurve(times=(0.0, 1.0), tv=(0.5, 0.1), initial="x")  # fine
    with pytest.raises(ValueError):
        ConvergenceCurve(times=(0.0, 1.0), tv=(0.5,), initial="x")
    with pytest.raises(ValueError):
        ConvergenceCurve(times=(1.0, 1.0), tv=(0.5, 0.1), initial="x")
    with pytest.raises(ValueError):
        ConvergenceCurve(times=(0.0, 1.0), tv=(0.5, 2.5), initial="x")
    with pytest.raises(ValueError):
        ConvergenceCurve(times=(0.0, 1.0), tv=(-0.1, 0.5), initial="x")


def test_convergence_curve_agrees_with_pointwise_evolve(two_state_spectral):
    res = two_state_spectral
    times = [0.5, 1.0, 2.0, 4.0]
    curve = convergence_curve(res, 1, times, tol=1e-12)
    assert curve.initial == "1"
    assert curve.times == tuple(times)
    for t, v in zip(curve.times, curve.tv):
        law = evolve(res.gen, 1, t, tol=1e-12)
        assert v == pytest.approx(tv_distance(law.dist, res.qsd), abs=1e-9)
    labeled = convergence_curve(res, 1, times, tol=1e-12, label="delta at 1")
    assert labeled.initial == "delta at 1"


def test_curve_from_the_qsd_sits_at_the_floor(two_state_spectral):
    curve = convergence_curve(two_state_spectral, two_state_spectral.qsd.copy(),
                              [0.5, 1.0, 2.0, 4.0], tol=1e-12)
    assert curve.initial == "vector"
    assert max(curve.tv) <= 1e-9  # stationarity of the fixed point


# ---------------------------------------------------------------------------
# rate fits


def test_fit_rate_recovers_a_synthetic_exponential():
    times = tuple(np.linspace(0.0, 10.0, 21))
    gamma, C = 0.85, 1.7
    curve = ConvergenceCurve(times=times,
                             tv=tuple(C * math.exp(-gamma * t) for t in times),
                             initial="synthetic", evolve_tol=1e-15)
    fit = fit_rate(curve)
    assert fit.gamma == pytest.approx(gamma, rel=1e-10)
    assert fit.C == pytest.approx(C, rel=1e-8)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.n_points == sum(1 for t in times if C * math.exp(-gamma * t) <= 0.5 * C)


def test_fit_rate_window_excludes_burnin_and_floor():
    # 1.0, then a clean decade ladder, then values under the 1e-8 floor
    times = tuple(float(i) for i in range(10))
    tv = (1.0, 0.9, 0.4, 0.04, 0.004, 4e-4, 4e-5, 4e-6, 1e-10, 1e-11)
    curve = ConvergenceCurve(times=times, tv=tv, initial="x", evolve_tol=1e-9)
    fit = fit_rate(curve)
    assert fit.window == (2.0, 7.0)
    assert fit.n_points == 6


def test_fit_rate_needs_enough_points():
    curve = ConvergenceCurve(times=(0.0, 1.0, 2.0), tv=(1.0, 0.9, 0.85), initial="x")
    with pytest.raises(AnalysisError, match="window"):
        fit_rate(curve)


def test_two_state_rate_is_the_spectral_gap(two_state_spectral):
    # gap = lambda1 - lambda0 = sqrt(5) for this chain
    times = list(np.linspace(0.5, 6.0, 23))
    fit = fit_rate(convergence_curve(two_state_spectral, 1, times, tol=1e-12))
    assert fit.gamma == pytest.approx(math.sqrt(5.0), rel=0.02)
    assert fit.r_squared >= 0.999


# ---------------------------------------------------------------------------
# uniformity across initial conditions


def test_uniformity_report_logistic(logistic_spectral):
    times = list(np.linspace(1.0, 8.0, 15))
    rep = uniformity_report(logistic_spectral, [1, 10, 60], times, tol=1e-11)
    assert rep.initials == ("1", "10", "60")
    assert len(rep.fits) == 3
    assert rep.gamma_spread <= 0.01  # rate does not depend on the start
    assert not rep.flag_gamma_spread
    assert not rep.flag_c_growth
    assert rep.fit_for("10") is rep.fits[1]
    assert len(rep.max_tv) == len(times)
    # worst-case TV dominates each curve and decays along the grid
    assert rep.max_tv[0] > rep.max_tv[-1]
    for f in rep.fits:
        assert f.r_squared >= 0.99


def test_uniformity_report_needs_initials(logistic_spectral):
    with pytest.raises(ValueError):
        uniformity_report(logistic_spectral, [], [1.0, 2.0])


# ---------------------------------------------------------------------------
# mortality plateau


def test_plateau_flattens_at_eta(two_state_spectral):
    res = two_state_spectral
    rep = plateau_check(res, 1, tol=1e-12)
    assert rep.fluctuation <= 1e-3
    assert not rep.notes
    # the compensated survival levels off at the survival eigenfunction
    assert rep.plateau_value == pytest.approx(res.eta_at(1), abs=1e-9)
    # started from the qsd, survival is exactly exponential
    assert rep.qsd_exp_error <= 1e-9
    assert rep.times[0] == pytest.approx(rep.T)
    assert rep.times[-1] == pytest.approx(2.0 * rep.T)
    assert len(rep.compensated) == len(rep.times)


def test_plateau_short_window_is_flagged(two_state_spectral):
    rep = plateau_check(two_state_spectral, 1, T=0.05, tol=1e-12)
    assert rep.fluctuation > 1e-3
    assert any("increase T" in note for note in rep.notes)


# ---------------------------------------------------------------------------
# exports


def test_curve_and_fit_csv_roundtrip(tmp_path, two_state_spectral):
    times = list(np.linspace(0.5, 6.0, 12))
    curve = convergence_curve(two_state_spectral, 1, times, tol=1e-12)
    cpath = tmp_path / "curve.csv"
    write_curve_csv(curve, cpath)
    lines = cpath.read_text().strip().split("\n")
    assert lines[0] == "t,tv"
    assert len(lines) == 1 + len(times)
    t0, v0 = lines[1].split(",")
    assert float(t0) == curve.times[0] and float(v0) == curve.tv[0]

    fit = fit_rate(curve)
    fpath = tmp_path / "fits.csv"
    write_fits_csv({"1": fit}, fpath)
    lines = fpath.read_text().strip().split("\n")
    assert lines[0] == "initial,gamma,logC,r_squared,t_lo,t_hi,n_points"
    cells = lines[1].split(",")
    assert cells[0] == "1"
    assert float(cells[1]) == fit.gamma
    assert int(cells[6]) == fit.n_points


def test_svg_plot_bytes_are_deterministic(tmp_path, two_state_spectral):
    times = list(np.linspace(0.5, 6.0, 12))
    curve = convergence_curve(two_state_spectral, 1, times, tol=1e-12)
    fit = fit_rate(curve)
    p1, p2 = tmp_path / "a.svg", tmp_path / "b.svg"
    plot_curves_svg([curve], p1, fits=[fit], title="tv decay")
    plot_curves_svg([curve], p2, fits=[fit], title="tv decay")
    data = p1.read_bytes()
    assert data == p2.read_bytes()
    assert data.lstrip().startswith(b"<?xml")
    assert b"<svg" in data
