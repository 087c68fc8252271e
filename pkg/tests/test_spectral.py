"""Truncated generators, eigenpair solves, and conditioned time marching.

The heavy checks run the package's sparse power iteration and uniformization
against the dense routes in oracles.py (scipy eig / expm on loop-filled
matrices). Tolerances follow the solver contracts, not wishful thinking.
"""

import csv
import math

import numpy as np
import pytest

import oracles as orc
from qslab.analysis import tv_distance
from qslab.models import BDCModel, ModelError, enumerate_states, make_preset
from qslab.spectral import (
    MAX_STATES,
    SpectralError,
    evolve,
    evolve_path,
    qsd_solve,
    truncate,
    truncation_sweep,
    write_qsd_csv,
    write_sweep_csv,
)

# dense-eigen reference rates, frozen from oracles.principal_pair runs
LOGISTIC_300_RATE = 0.702799893578
OSC_KILL_400_RATE = 2.049990901163
LV_INTERIOR_12_RATE = 3.322762114322


def lv_instance():
    return make_preset("lv-interior", r=2, beta=2.0, delta=1.0,
                       c=[[1.0, 1.0], [1.0, 1.0]])


# ---------------------------------------------------------------------------
# truncation structure


def test_two_state_generator_is_the_closed_form_matrix():
    gen = truncate(make_preset("two-state"), 2)
    assert np.array_equal(gen.L.toarray(), orc.TWO_STATE_L)
    assert np.array_equal(gen.abs_vec, np.array([1.0, 0.0]))
    assert gen.Lambda == 2.0
    assert gen.states == [1, 2]


def test_truncate_matches_dense_oracle_1d():
    m = make_preset("logistic")
    gen = truncate(m, 60)
    L_ref, abs_ref = orc.dense_generator_1d(m.b, m.d, m.a, 60)
    assert np.allclose(gen.L.toarray(), L_ref, rtol=1e-14, atol=0.0)
    assert np.allclose(gen.abs_vec, abs_ref, rtol=1e-14, atol=0.0)


def test_truncate_matches_dense_oracle_multitype():
    lv = lv_instance()
    gen = truncate(lv, 10)
    states = enumerate_states(2, 10)
    assert gen.states == states
    L_ref, abs_ref = orc.dense_generator_multitype(lv, states)
    assert np.allclose(gen.L.toarray(), L_ref, rtol=1e-12, atol=1e-12)
    assert np.allclose(gen.abs_vec, abs_ref, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("model", ["logistic", "logistic-osc-kill"])
def test_row_sums_equal_minus_absorption_1d(model):
    gen = truncate(make_preset(model), 200)
    row_sums = np.asarray(gen.L.sum(axis=1)).ravel()
    # identity up to float re-association; entries reach ~N^2
    assert np.allclose(row_sums, -gen.abs_vec, atol=1e-9 * gen.Lambda)


def test_row_sums_equal_minus_absorption_multitype():
    gen = truncate(lv_instance(), 12)
    row_sums = np.asarray(gen.L.sum(axis=1)).ravel()
    assert np.allclose(row_sums, -gen.abs_vec, atol=1e-10 * gen.Lambda)


def test_uniformization_constant_dominates_every_total_rate():
    gen = truncate(make_preset("logistic"), 100)
    assert gen.Lambda == pytest.approx(float(gen.tot.max()))
    gen_lv = truncate(lv_instance(), 10)
    for x in gen_lv.states:
        assert gen_lv.Lambda >= gen_lv.model.transitions_from(x).total_rate - 1e-12


def test_truncate_input_validation():
    with pytest.raises(ModelError):
        truncate(make_preset("logistic"), 0)
    bad = BDCModel(b=lambda k: float("nan"), d=lambda k: 1.0, a=lambda k: 0.0)
    with pytest.raises(ModelError):
        truncate(bad, 5)
    neg = BDCModel(b=lambda k: 1.0, d=lambda k: -2.0, a=lambda k: 0.0)
    with pytest.raises(ModelError):
        truncate(neg, 5)


def test_truncation_size_cap_raises():
    # r = 2 at cap 2001 holds 2001*2000/2 = 2_001_000 > MAX_STATES states
    n_cap = 2001
    assert n_cap * (n_cap - 1) // 2 > MAX_STATES
    with pytest.raises(SpectralError, match="cap"):
        truncate(lv_instance(), n_cap)


# ---------------------------------------------------------------------------
# eigenpairs


def test_two_state_eigenpair_closed_form():
    res = qsd_solve(truncate(make_preset("two-state"), 2), tol=1e-13)
    assert res.lambda0 == pytest.approx(orc.TWO_STATE_LAMBDA0, abs=1e-12)
    assert np.allclose(res.qsd, orc.TWO_STATE_QSD, atol=1e-12)
    assert res.eta[1] / res.eta[0] == pytest.approx(orc.TWO_STATE_ETA_RATIO, abs=1e-10)
    assert float(res.qsd @ res.eta) == pytest.approx(1.0, abs=1e-12)


def test_qsd_solve_matches_dense_eig_logistic():
    m = make_preset("logistic")
    gen = truncate(m, 120)
    res = qsd_solve(gen, tol=1e-11)
    L_ref, _ = orc.dense_generator_1d(m.b, m.d, m.a, 120)
    lam_ref, qsd_ref, eta_ref = orc.principal_pair(L_ref)
    assert abs(res.lambda0 - lam_ref) <= 1e-9
    assert tv_distance(res.qsd, qsd_ref) <= 1e-8
    rel = np.abs(res.eta - eta_ref) / np.abs(eta_ref)
    assert float(rel.max()) <= 1e-6


def test_qsd_solve_matches_dense_eig_multitype():
    lv = lv_instance()
    gen = truncate(lv, 12)
    res = qsd_solve(gen, tol=1e-11)
    L_ref, _ = orc.dense_generator_multitype(lv, enumerate_states(2, 12))
    lam_ref, qsd_ref, _ = orc.principal_pair(L_ref)
    assert abs(res.lambda0 - lam_ref) <= 1e-9
    assert tv_distance(res.qsd, qsd_ref) <= 1e-8
    assert res.lambda0 == pytest.approx(LV_INTERIOR_12_RATE, abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_qsd_solve_matches_dense_eig_random_models(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 9))
    b, d, a = orc.random_bdc_rates(rng, n)
    model = BDCModel(b=b, d=d, a=a, name=f"random-{seed}")
    res = qsd_solve(truncate(model, n), tol=1e-12)
    lam_ref, qsd_ref, _ = orc.principal_pair(orc.dense_generator_1d(b, d, a, n)[0])
    assert abs(res.lambda0 - lam_ref) <= 1e-9
    assert tv_distance(res.qsd, qsd_ref) <= 1e-8


def test_logistic_decay_rate_frozen_reference():
    res = qsd_solve(truncate(make_preset("logistic"), 300), tol=1e-11)
    assert res.lambda0 == pytest.approx(LOGISTIC_300_RATE, abs=1e-9)


def test_osc_kill_decay_rate_frozen_reference():
    res = qsd_solve(truncate(make_preset("logistic-osc-kill"), 400), tol=1e-11)
    assert res.lambda0 == pytest.approx(OSC_KILL_400_RATE, abs=1e-9)


def test_spectral_result_invariants_and_residuals():
    gen = truncate(make_preset("logistic"), 120)
    tol = 1e-11
    res = qsd_solve(gen, tol=tol)
    assert (res.qsd >= 0.0).all()
    assert float(res.qsd.sum()) == pytest.approx(1.0, abs=1e-12)
    assert (res.eta > 0.0).all()
    assert float(res.qsd @ res.eta) == pytest.approx(1.0, abs=1e-12)
    if not res.stalled:
        assert res.residual <= tol
    # residuals must be re-derivable from the returned vectors alone
    left = float(np.abs(gen.apply_left(res.qsd) + res.lambda0 * res.qsd).sum())
    assert left == pytest.approx(res.residual, rel=1e-6, abs=1e-15)
    # the eta defect is cancellation-limited (entries shrink from the
    # Lambda*eta scale to ~1e-10), so recomputing it on the rescaled vector
    # reproduces the magnitude, not the last bits
    right = float(np.abs(gen.apply_right(res.eta) + res.lambda0 * res.eta).sum())
    assert right == pytest.approx(res.eta_residual, rel=0.05, abs=1e-12)
    assert res.qsd_at(1) == res.qsd[0]
    assert res.eta_at(120) == res.eta[-1]
    assert res.as_dict()[5] == float(res.qsd[4])


def test_qsd_solve_is_deterministic():
    gen = truncate(make_preset("logistic"), 80)
    r1 = qsd_solve(gen, tol=1e-10)
    r2 = qsd_solve(gen, tol=1e-10)
    assert np.array_equal(r1.qsd, r2.qsd)
    assert r1.lambda0 == r2.lambda0
    assert r1.iterations == r2.iterations


def test_single_state_truncation_is_exact():
    res = qsd_solve(truncate(make_preset("logistic"), 1), tol=1e-10)
    # the lone state absorbs at its full outflow b(1) + d(1) = 2
    assert res.lambda0 == 2.0
    assert np.array_equal(res.qsd, np.ones(1))
    assert np.array_equal(res.eta, np.ones(1))
    assert res.residual == 0.0


def test_qsd_solve_rejects_reducible_truncation():
    dead = BDCModel(b=lambda k: 0.0, d=lambda k: 1.0, a=lambda k: 0.1)
    with pytest.raises(SpectralError, match="strongly connected"):
        qsd_solve(truncate(dead, 5))


def test_qsd_solve_tol_validation():
    gen = truncate(make_preset("two-state"), 2)
    with pytest.raises(ValueError):
        qsd_solve(gen, tol=0.0)
    with pytest.raises(ValueError):
        qsd_solve(gen, tol=-1e-9)


# ---------------------------------------------------------------------------
# conditioned evolution


def test_evolve_matches_expm_oracle():
    m = make_preset("logistic")
    gen = truncate(m, 80)
    L_ref, _ = orc.dense_generator_1d(m.b, m.d, m.a, 80)
    v0 = np.zeros(80)
    v0[4] = 1.0
    dist_ref, surv_ref = orc.conditional_expm(L_ref, v0, 1.5)
    law = evolve(gen, 5, 1.5, tol=1e-12)
    assert abs(law.survival - surv_ref) <= 1e-10
    assert tv_distance(law.dist, dist_ref) <= 1e-10
    assert float(law.dist.sum()) == pytest.approx(1.0, abs=1e-12)
    # the Poisson expansion accounts for all mass up to the dropped tail
    assert law.survival + law.killed == pytest.approx(1.0, abs=1e-11)


def test_evolve_semigroup_property():
    gen = truncate(make_preset("logistic"), 60)
    tol = 1e-9
    direct = evolve(gen, 3, 2.0, tol=tol)
    mid = evolve(gen, 3, 0.8, tol=tol)
    relay = evolve(gen, mid.dist, 1.2, tol=tol)
    assert tv_distance(direct.dist, relay.dist) <= 2.0 * tol


def test_evolve_time_zero_is_the_initial_law():
    gen = truncate(make_preset("logistic"), 30)
    law = evolve(gen, 7, 0.0)
    expected = np.zeros(30)
    expected[6] = 1.0
    assert np.array_equal(law.dist, expected)
    assert law.survival == 1.0 and law.killed == 0.0


def test_evolve_argument_validation():
    gen = truncate(make_preset("two-state"), 2)
    with pytest.raises(ValueError):
        evolve(gen, 1, -0.5)
    with pytest.raises(ValueError):
        evolve(gen, 1, 1.0, tol=0.0)
    with pytest.raises(ValueError):
        evolve(gen, 1, 1.0, tol=1.0)


def test_evolve_raises_when_no_mass_survives():
    gen = truncate(make_preset("two-state"), 2)
    with pytest.raises(SpectralError, match="surviving"):
        evolve(gen, 1, 5000.0)


def test_evolve_path_matches_single_shot_and_orders_survival():
    gen = truncate(make_preset("logistic"), 60)
    tol = 1e-9
    times = [0.0, 0.3, 0.3, 1.0, 2.5]
    laws = evolve_path(gen, 3, times, tol=tol)
    assert [law.time for law in laws] == times
    for law in laws:
        assert float(law.dist.sum()) == pytest.approx(1.0, abs=1e-12)
    survs = [law.survival for law in laws]
    assert all(s1 <= s0 for s0, s1 in zip(survs, survs[1:]))
    assert survs[0] == 1.0
    # a repeated time point is the same law
    assert np.array_equal(laws[1].dist, laws[2].dist)
    single = evolve(gen, 3, 2.5, tol=tol)
    budget = max(2.0 * tol, 1e-10)
    assert tv_distance(laws[-1].dist, single.dist) <= budget
    assert abs(laws[-1].survival - single.survival) <= budget


def test_evolve_path_time_grid_validation():
    gen = truncate(make_preset("two-state"), 2)
    with pytest.raises(ValueError):
        evolve_path(gen, 1, [1.0, 0.5])
    with pytest.raises(ValueError):
        evolve_path(gen, 1, [-1.0, 2.0])


def test_initial_distribution_forms():
    gen = truncate(make_preset("two-state"), 2)
    by_int = evolve(gen, 1, 0.0).dist
    assert np.array_equal(by_int, np.array([1.0, 0.0]))
    by_dict = evolve(gen, {1: 2.0, 2: 6.0}, 0.0).dist
    assert np.allclose(by_dict, np.array([0.25, 0.75]))
    by_array = evolve(gen, np.array([1.0, 3.0]), 0.0).dist
    assert np.allclose(by_array, np.array([0.25, 0.75]))
    gen_lv = truncate(lv_instance(), 6)
    by_tuple = evolve(gen_lv, (1, 2), 0.0).dist
    assert by_tuple[gen_lv.index[(1, 2)]] == 1.0
    by_list = evolve(gen_lv, [1, 2], 0.0).dist
    assert np.array_equal(by_tuple, by_list)


def test_initial_distribution_rejects_bad_input():
    gen = truncate(make_preset("two-state"), 2)
    with pytest.raises(ModelError, match="outside the truncation"):
        evolve(gen, 99, 1.0)
    with pytest.raises(ModelError, match="outside the truncation"):
        evolve(gen, {5: 1.0}, 1.0)
    with pytest.raises(ModelError):
        evolve(gen, np.array([1.0, 2.0, 3.0]), 1.0)  # wrong shape
    with pytest.raises(ModelError):
        evolve(gen, np.array([1.0, -2.0]), 1.0)
    with pytest.raises(ModelError):
        evolve(gen, np.zeros(2), 1.0)


# ---------------------------------------------------------------------------
# truncation sweep and CSV output


def test_truncation_sweep_converges_on_logistic():
    sweep = truncation_sweep(make_preset("logistic"), tol=1e-6, n_start=32)
    assert sweep.converged
    assert sweep.Ns[0] == 32
    assert all(n1 == 2 * n0 for n0, n1 in zip(sweep.Ns, sweep.Ns[1:]))
    assert len(sweep.lambda0s) == len(sweep.Ns)
    assert len(sweep.tv_steps) == len(sweep.Ns) - 1
    assert sweep.tv_steps[-1] <= 1e-6
    assert sweep.result.lambda0 == pytest.approx(LOGISTIC_300_RATE, abs=1e-6)


def test_truncation_sweep_reports_failure_at_cap():
    # supercritical drift: the capped law keeps chasing the cap, no settling
    sweep = truncation_sweep(make_preset("supercritical"), tol=1e-6,
                             n_start=32, n_cap=128, solver_tol=1e-7)
    assert not sweep.converged
    assert sweep.Ns == (32, 64, 128)
    assert all(tv > 0.5 for tv in sweep.tv_steps)


def test_qsd_csv_roundtrip(tmp_path):
    res = qsd_solve(truncate(lv_instance(), 6), tol=1e-10)
    path = tmp_path / "qsd.csv"
    write_qsd_csv(res, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == res.gen.n
    assert set(rows[0]) == {"state", "qsd", "eta_fn"}
    labels = [row["state"] for row in rows]
    assert labels[0] == "1|1"
    assert labels == ["|".join(map(str, x)) for x in res.gen.states]
    back = np.array([float(row["qsd"]) for row in rows])
    assert np.array_equal(back, res.qsd)  # repr round-trip is exact
    eta_back = np.array([float(row["eta_fn"]) for row in rows])
    assert np.array_equal(eta_back, res.eta)


def test_sweep_csv_roundtrip(tmp_path):
    sweep = truncation_sweep(make_preset("logistic"), tol=1e-6, n_start=32)
    path = tmp_path / "sweep.csv"
    write_sweep_csv(sweep, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert [int(row["N"]) for row in rows] == list(sweep.Ns)
    assert rows[0]["tv_step"] == ""
    assert [float(row["lambda0"]) for row in rows] == list(sweep.lambda0s)
    assert [float(row["tv_step"]) for row in rows[1:]] == list(sweep.tv_steps)
