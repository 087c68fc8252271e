"""Stochastic layer: exact SSA runs, conditioned estimates, Fleming-Viot,
and the eta-tilted Q-process.

Distributional checks compare Monte Carlo output against the spectral laws
computed on the same truncations; tolerances sit 2-3x above the measured
sampling noise at the fixed seeds, so failures mean bias, not bad luck.
"""

import csv
import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as orc
from qslab.analysis import tv_distance
from qslab.models import BDCModel, ModelError, make_preset
from qslab.simulate import (
    ConditionalEstimate,
    SeededRng,
    SimulationError,
    Trajectory,
    conditional_estimate,
    fleming_viot,
    occupation_measure,
    q_process_trajectory,
    ssa_trajectory,
    write_ensemble_csv,
    write_trajectory_csv,
)
from qslab.spectral import evolve, qsd_solve, truncate


def lv_instance():
    return make_preset("lv-interior", r=2, beta=2.0, delta=1.0,
                       c=[[1.0, 1.0], [1.0, 1.0]])


# ---------------------------------------------------------------------------
# rng plumbing


def test_seeded_rng_reproduces_streams():
    a = SeededRng(7, 1).generator().random(8)
    b = SeededRng(7, 1).generator().random(8)
    assert np.array_equal(a, b)
    c = SeededRng(7, 2).generator().random(8)
    assert not np.array_equal(a, c)
    s1 = SeededRng(7, 1).substream_states(16)
    s2 = SeededRng(7, 1).substream_states(16)
    assert np.array_equal(s1, s2)


def test_rng_argument_coercion():
    traj_int = ssa_trajectory(make_preset("two-state"), 1, 1.0, 42)
    traj_obj = ssa_trajectory(make_preset("two-state"), 1, 1.0, SeededRng(42, 0))
    assert traj_int.records() == traj_obj.records()
    with pytest.raises(ModelError):
        ssa_trajectory(make_preset("two-state"), 1, 1.0, "not-a-seed")


# ---------------------------------------------------------------------------
# exact trajectories


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**20))
def test_trajectory_invariants_1d(seed):
    traj = ssa_trajectory(make_preset("logistic"), 5, 4.0, SeededRng(seed, 0))
    assert traj.times[0] == 0.0 and traj.states[0] == 5
    assert all(t1 > t0 for t0, t1 in zip(traj.times, traj.times[1:]))
    # birth-death moves only; the cemetery never shows up in the path
    assert all(abs(s1 - s0) == 1 for s0, s1 in zip(traj.states, traj.states[1:]))
    assert all(s >= 1 for s in traj.states)
    if traj.absorbed:
        assert traj.times[-1] < traj.absorption_time < traj.horizon
    assert traj.final_state == traj.states[-1]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**20))
def test_trajectory_invariants_multitype(seed):
    traj = ssa_trajectory(lv_instance(), (2, 2), 2.0, SeededRng(seed, 1))
    assert traj.states[0] == (2, 2)
    assert all(t1 > t0 for t0, t1 in zip(traj.times, traj.times[1:]))
    for s0, s1 in zip(traj.states, traj.states[1:]):
        diffs = [abs(a - b) for a, b in zip(s0, s1)]
        assert sorted(diffs) == [0, 1]  # exactly one coordinate moves, by 1
        assert min(s1) >= 1


def test_trajectory_determinism_and_horizon_zero():
    t1 = ssa_trajectory(make_preset("logistic"), 3, 5.0, SeededRng(9, 4))
    t2 = ssa_trajectory(make_preset("logistic"), 3, 5.0, SeededRng(9, 4))
    assert t1 == t2
    t0 = ssa_trajectory(make_preset("logistic"), 3, 0.0, SeededRng(9, 4))
    assert t0.records() == [(0.0, 3)] and not t0.absorbed
    with pytest.raises(ValueError):
        ssa_trajectory(make_preset("logistic"), 3, -1.0, SeededRng(9, 4))


def test_holding_times_are_exponential():
    # from state 2 of the two-state chain the only exit has rate 1
    samples = [ssa_trajectory(make_preset("two-state"), 2, 1e9, SeededRng(100 + i, 0)).times[1]
               for i in range(400)]
    stat = scipy.stats.kstest(samples, "expon", args=(0.0, 1.0))
    assert stat.pvalue > 1e-3


# ---------------------------------------------------------------------------
# conditioned-on-survival estimates


def test_conditional_time_zero_is_a_point_mass():
    est = conditional_estimate(make_preset("logistic"), 4, 0.0, 50, SeededRng(1, 0))
    assert est.states == (4,) and est.probs[0] == 1.0
    assert est.survivors == 50 and est.survival == 1.0


def test_conditional_argument_validation():
    m = make_preset("logistic")
    with pytest.raises(ValueError):
        conditional_estimate(m, 4, 1.0, 0, SeededRng(1, 0))
    with pytest.raises(ValueError):
        conditional_estimate(m, 4, -1.0, 10, SeededRng(1, 0))


def test_conditional_determinism():
    a = conditional_estimate(make_preset("logistic"), 5, 1.0, 400, SeededRng(3, 0))
    b = conditional_estimate(make_preset("logistic"), 5, 1.0, 400, SeededRng(3, 0))
    assert a.states == b.states and np.array_equal(a.probs, b.probs)
    c = conditional_estimate(make_preset("logistic"), 5, 1.0, 400, SeededRng(3, 1))
    assert (a.states != c.states) or (not np.array_equal(a.probs, c.probs))
    d1 = conditional_estimate(lv_instance(), (1, 1), 0.5, 60, SeededRng(5, 2))
    d2 = conditional_estimate(lv_instance(), (1, 1), 0.5, 60, SeededRng(5, 2))
    assert d1.states == d2.states and np.array_equal(d1.probs, d2.probs)


def test_conditional_matches_evolve_two_state():
    two = make_preset("two-state")
    gen = truncate(two, 2)
    est = conditional_estimate(two, 1, 1.0, 100_000, SeededRng(11, 0))
    law = evolve(gen, 1, 1.0, tol=1e-12)
    assert tv_distance(est.vector(gen), law.dist) <= 0.02
    se = math.sqrt(law.survival * (1.0 - law.survival) / est.n_traj)
    assert abs(est.survival - law.survival) <= 5.0 * se


def test_conditional_matches_evolve_multitype():
    lv = lv_instance()
    gen = truncate(lv, 14)
    est = conditional_estimate(lv, (1, 1), 0.4, 10_000, SeededRng(12, 0))
    law = evolve(gen, (1, 1), 0.4, tol=1e-10)
    assert tv_distance(est.vector(gen), law.dist) <= 0.1
    assert abs(est.survival - law.survival) <= 0.02


def test_conditional_all_absorbed_is_a_valid_result():
    est = conditional_estimate(make_preset("two-state"), 1, 60.0, 200, SeededRng(4, 0))
    assert est.all_absorbed
    assert est.states == () and est.probs.size == 0
    assert est.survival == 0.0


def test_conditional_vector_needs_the_full_support():
    est = ConditionalEstimate(time=1.0, states=(7,), probs=np.array([1.0]),
                              survivors=10, n_traj=10)
    gen = truncate(make_preset("logistic"), 5)
    with pytest.raises(SimulationError, match="enlarge N"):
        est.vector(gen)


def test_explosive_rates_overflow_loudly(monkeypatch):
    import qslab.simulate as sim
    monkeypatch.setattr(sim, "_MAX_TABLE", 1 << 14)
    runaway = BDCModel(b=lambda k: 10.0 * k * k, d=lambda k: 1.0, a=lambda k: 0.0)
    with pytest.raises(SimulationError, match="explosive"):
        conditional_estimate(runaway, 1, 5.0, 8, SeededRng(2, 0))


# ---------------------------------------------------------------------------
# Fleming-Viot


def test_fleming_viot_mechanics():
    ens = fleming_viot(make_preset("two-state"), 10, 2, 30.0, SeededRng(13, 1))
    assert ens.n == 10 and len(ens.particles) == 10
    assert all(x in (1, 2) for x in ens.particles)  # nobody sits absorbed
    assert ens.burnin == 15.0
    assert sum(ens.occupation.values()) == pytest.approx(1.0, abs=1e-12)
    assert sum(ens.snapshot().values()) == pytest.approx(1.0, abs=1e-12)
    times = ens.resampling_times
    assert all(0.0 < s < 30.0 for s in times)
    assert all(s1 >= s0 for s0, s1 in zip(times, times[1:]))


def test_fleming_viot_occupation_tracks_the_qsd():
    two = make_preset("two-state")
    gen = truncate(two, 2)
    res = qsd_solve(gen, tol=1e-12)
    ens = fleming_viot(two, 400, 2, 60.0, SeededRng(13, 0))
    assert tv_distance(ens.occupation_vector(gen), res.qsd) <= 0.05
    assert tv_distance(ens.snapshot_vector(gen), res.qsd) <= 0.08


def test_fleming_viot_multitype_and_dict_initial_law():
    lv = lv_instance()
    ens = fleming_viot(lv, 50, {(1, 1): 0.5, (2, 1): 0.5}, 4.0, SeededRng(21, 0))
    assert all(min(x) >= 1 for x in ens.particles)
    again = fleming_viot(lv, 50, {(1, 1): 0.5, (2, 1): 0.5}, 4.0, SeededRng(21, 0))
    assert ens.particles == again.particles


def test_fleming_viot_argument_validation():
    two = make_preset("two-state")
    with pytest.raises(ValueError):
        fleming_viot(two, 1, 2, 10.0, SeededRng(1, 0))
    with pytest.raises(ValueError):
        fleming_viot(two, 10, 2, 0.0, SeededRng(1, 0))
    with pytest.raises(ValueError):
        fleming_viot(two, 10, 2, 10.0, SeededRng(1, 0), burnin=10.0)


# ---------------------------------------------------------------------------
# Q-process


def test_q_process_never_absorbs_and_matches_the_tilted_occupation():
    two = make_preset("two-state")
    res = qsd_solve(truncate(two, 2), tol=1e-12)
    traj = q_process_trajectory(two, res, 1, 3000.0, SeededRng(14, 0))
    assert not traj.absorbed
    occ = occupation_measure(traj, burnin=100.0)
    v = np.array([occ.get(1, 0.0), occ.get(2, 0.0)])
    assert tv_distance(v, orc.TWO_STATE_Q_OCCUPATION) <= 0.08


def test_q_process_argument_validation():
    two = make_preset("two-state")
    res = qsd_solve(truncate(two, 2), tol=1e-12)
    with pytest.raises(ModelError, match="truncation"):
        q_process_trajectory(two, res, 9, 10.0, SeededRng(1, 0))
    with pytest.raises(ValueError):
        q_process_trajectory(two, res, 1, -1.0, SeededRng(1, 0))


def test_q_process_stuck_truncation_raises():
    # N = 1 keeps one state whose only move leaves the truncation
    two = make_preset("two-state")
    res = qsd_solve(truncate(two, 1), tol=1e-10)
    with pytest.raises(SimulationError, match="stuck"):
        q_process_trajectory(two, res, 1, 10.0, SeededRng(1, 0))


# ---------------------------------------------------------------------------
# occupation measure


def test_occupation_measure_by_hand():
    traj = Trajectory(times=(0.0, 1.0, 3.0), states=(1, 2, 1),
                      absorption_time=None, horizon=5.0)
    occ = occupation_measure(traj)
    assert occ == {1: pytest.approx(0.6), 2: pytest.approx(0.4)}
    occ_b = occupation_measure(traj, burnin=2.0)
    assert occ_b == {1: pytest.approx(2.0 / 3.0), 2: pytest.approx(1.0 / 3.0)}
    with pytest.raises(ValueError):
        occupation_measure(traj, burnin=5.0)


def test_occupation_measure_stops_at_absorption():
    traj = Trajectory(times=(0.0, 2.0), states=(3, 2),
                      absorption_time=4.0, horizon=50.0)
    occ = occupation_measure(traj)
    assert occ == {3: pytest.approx(0.5), 2: pytest.approx(0.5)}


# ---------------------------------------------------------------------------
# CSV export


def test_trajectory_csv_schema_1d(tmp_path):
    traj = ssa_trajectory(make_preset("logistic"), 3, 2.0, SeededRng(17, 0))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(traj, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert set(rows[0]) == {"t", "x", "event"}
    assert rows[0]["event"] == "init" and int(rows[0]["x"]) == 3
    assert rows[-1]["event"] in ("absorbed", "censored")
    for prev, row in zip(rows, rows[1:-1]):
        step = int(row["x"]) - int(prev["x"])
        assert (step, row["event"]) in ((1, "birth"), (-1, "death"))
    if traj.absorbed:
        assert rows[-1]["x"] == ""
        assert float(rows[-1]["t"]) == traj.absorption_time


def test_trajectory_csv_schema_multitype(tmp_path):
    traj = ssa_trajectory(lv_instance(), (2, 3), 1.5, SeededRng(18, 0))
    path = tmp_path / "traj2.csv"
    write_trajectory_csv(traj, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert set(rows[0]) == {"t", "x1", "x2", "event"}
    for prev, row in zip(rows, rows[1:-1]):
        d1 = int(row["x1"]) - int(prev["x1"])
        d2 = int(row["x2"]) - int(prev["x2"])
        expected = {(1, 0): "birth_1", (-1, 0): "death_1",
                    (0, 1): "birth_2", (0, -1): "death_2"}[(d1, d2)]
        assert row["event"] == expected


def test_ensemble_csv_schema(tmp_path):
    ens = fleming_viot(make_preset("two-state"), 12, 2, 8.0, SeededRng(19, 0))
    path = tmp_path / "particles.csv"
    write_ensemble_csv(ens, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12
    assert [int(r["particle"]) for r in rows] == list(range(12))
    assert all(int(r["x"]) in (1, 2) for r in rows)
