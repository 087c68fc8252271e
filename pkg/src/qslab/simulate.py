"""Exact stochastic simulation of absorbed chains.

Three ways to look at the conditioned process: plain SSA trajectories with the
absorption time recorded, conditioned-law estimation by simulate-and-discard,
and a Fleming-Viot particle system where absorbed particles respawn on a
uniformly chosen survivor. A fourth simulator runs the Q-process (the chain
conditioned to never die) through the h-transform built from a spectral
result.

Reproducibility contract: every public entry point takes a (seed, stream)
pair, per-trajectory substreams are derived from it with
numpy.random.SeedSequence, and batch k of n gives the same trajectory whether
run alone or inside the batch.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .criteria import eval_on_grid
from .models import ModelError

_MAX_EVENTS = 50_000_000
_MAX_TABLE = 1 << 24


class SimulationError(RuntimeError):
    """Simulation could not finish: rate blowup, event-budget or table limits."""


@dataclass(frozen=True)
class SeededRng:
    """Master seed plus stream id; equal pairs reproduce runs exactly."""

    seed: int
    stream: int = 0

    def _sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=(int(self.seed), int(self.stream)))

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(self._sequence())

    def substream_states(self, n: int) -> np.ndarray:
        """n independent 64-bit states, one per trajectory index."""
        return self._sequence().generate_state(n, dtype=np.uint64)


def _as_rng(rng) -> SeededRng:
    if isinstance(rng, SeededRng):
        return rng
    if isinstance(rng, int):
        return SeededRng(seed=rng)
    raise ModelError(f"rng must be a SeededRng or an int seed, got {type(rng).__name__}")


@dataclass(frozen=True)
class Trajectory:
    """Jump records (time, state) of one run, absorption censored at horizon.

    ``absorption_time`` is None when the run reached the horizon alive. The
    first record is (0, x0); states are the live states only, the cemetery
    never appears.
    """

    times: tuple
    states: tuple
    absorption_time: float | None
    horizon: float

    @property
    def absorbed(self) -> bool:
        return self.absorption_time is not None

    @property
    def final_state(self):
        return self.states[-1]

    def records(self):
        return list(zip(self.times, self.states))


def _total_rate_checked(tl, x) -> float:
    tot = tl.total_rate
    if not math.isfinite(tot):
        raise SimulationError(f"total jump rate is not finite at state {x}")
    return tot


def ssa_trajectory(model, x0, horizon: float, rng,
                   max_events: int = _MAX_EVENTS) -> Trajectory:
    """Exact event-driven run from x0 until absorption or the horizon."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    gen = _as_rng(rng).generator()
    x = tuple(x0) if isinstance(x0, (list, tuple)) else int(x0)
    times = [0.0]
    states = [x]
    t = 0.0
    for _ in range(max_events):
        tl = model.transitions_from(x)
        tot = _total_rate_checked(tl, x)
        if tot <= 0.0:
            return Trajectory(tuple(times), tuple(states), None, horizon)
        t += gen.exponential(1.0 / tot)
        if t >= horizon:
            return Trajectory(tuple(times), tuple(states), None, horizon)
        u = gen.uniform(0.0, tot)
        acc = 0.0
        dest = None
        for y, rate in tl.moves:
            acc += rate
            if u < acc:
                dest = y
                break
        if dest is None:  # the remaining mass is the absorption channel
            return Trajectory(tuple(times), tuple(states), t, horizon)
        x = dest
        times.append(t)
        states.append(x)
    raise SimulationError(f"event budget {max_events} exhausted before the horizon")


# ---------------------------------------------------------------------------
# conditioned law by simulate-and-discard

@dataclass(frozen=True)
class ConditionalEstimate:
    """Empirical conditioned law at one time: survivor histogram + counts."""

    time: float
    states: tuple
    probs: np.ndarray
    survivors: int
    n_traj: int

    @property
    def survival(self) -> float:
        return self.survivors / self.n_traj

    @property
    def all_absorbed(self) -> bool:
        return self.survivors == 0

    def as_dict(self) -> dict:
        return {x: float(p) for x, p in zip(self.states, self.probs)}

    def vector(self, gen) -> np.ndarray:
        """Histogram aligned to a truncation's state list."""
        v = np.zeros(gen.n)
        for x, p in zip(self.states, self.probs):
            i = gen.index.get(x)
            if i is None:
                raise SimulationError(
                    f"survivor state {x} lies outside the truncation; enlarge N")
            v[i] = p
        return v


def _bdc_rate_tables(model, size: int):
    ks = np.arange(1, size + 1, dtype=float)
    b = eval_on_grid(model.b, ks)
    d = eval_on_grid(model.d, ks)
    a = eval_on_grid(model.a, ks)
    for name, arr in (("birth", b), ("death", d), ("catastrophe", a)):
        if (arr < 0).any() or not np.isfinite(arr).all():
            raise SimulationError(f"{name} rates not finite nonnegative on 1..{size}")
    return b, d, a


def _conditional_bdc(model, x0: int, t: float, n_traj: int, rng: SeededRng):
    seeds = rng.substream_states(n_traj)
    out_state = np.zeros(n_traj, dtype=np.int64)
    out_status = np.zeros(n_traj, dtype=np.int64)
    size = max(4 * x0, 256)
    x0_vec = np.full(n_traj, x0, dtype=np.int64)
    pending = np.arange(n_traj)
    while True:
        b, d, a = _bdc_rate_tables(model, size)
        # fancy indexing copies, so the kernel fills temporaries scattered back
        tmp_state = out_state[pending]
        tmp_status = out_status[pending]
        _kernels.bdc_ssa_batch(b, d, a, x0_vec[pending], t, seeds[pending],
                               tmp_state, tmp_status)
        out_state[pending] = tmp_state
        out_status[pending] = tmp_status
        pending = pending[tmp_status == _kernels.TABLE_OVERFLOW]
        if pending.size == 0:
            break
        size *= 2
        if size > _MAX_TABLE:
            raise SimulationError(
                f"trajectories exceeded population {_MAX_TABLE}; rates look explosive")
    alive = out_status == _kernels.SURVIVED
    return out_state[alive]


def conditional_estimate(model, x0, t: float, n_traj: int, rng) -> ConditionalEstimate:
    """Law at time t given survival, from n_traj independent exact runs.

    Absorbed-by-t runs are discarded; the survivor fraction estimates the
    unconditioned survival probability. Zero survivors is a valid result.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if t < 0:
        raise ValueError("t must be nonnegative")
    rng = _as_rng(rng)
    if t == 0.0:
        x = tuple(x0) if isinstance(x0, (list, tuple)) else int(x0)
        return ConditionalEstimate(time=0.0, states=(x,), probs=np.array([1.0]),
                                   survivors=n_traj, n_traj=n_traj)
    if model.kind == "bdc":
        finals = _conditional_bdc(model, int(x0), t, n_traj, rng)
        finals = [int(k) for k in finals]
    else:
        seeds = rng.substream_states(n_traj)
        finals = []
        for s in seeds:
            traj = ssa_trajectory(model, x0, t, SeededRng(int(s), 0))
            if not traj.absorbed:
                finals.append(traj.final_state)
    if not finals:
        return ConditionalEstimate(time=t, states=(), probs=np.array([]),
                                   survivors=0, n_traj=n_traj)
    counts: dict = {}
    for x in finals:
        counts[x] = counts.get(x, 0) + 1
    states = tuple(sorted(counts))
    probs = np.array([counts[x] for x in states], dtype=float)
    probs /= probs.sum()
    return ConditionalEstimate(time=t, states=states, probs=probs,
                               survivors=len(finals), n_traj=n_traj)


# ---------------------------------------------------------------------------
# Fleming-Viot particle system

@dataclass(frozen=True)
class ParticleEnsemble:
    """Particle states at the horizon plus the resampling log.

    ``occupation`` is the dwell-time-weighted empirical law over
    (burnin, horizon], aggregated across particles; it is the lower-variance
    estimate of the quasi-stationary law. ``snapshot`` is the plain
    end-of-run histogram.
    """

    n: int
    horizon: float
    burnin: float
    particles: tuple
    resampling_times: tuple
    occupation: dict

    def snapshot(self) -> dict:
        counts: dict = {}
        for x in self.particles:
            counts[x] = counts.get(x, 0) + 1
        return {x: c / self.n for x, c in sorted(counts.items())}

    def occupation_vector(self, gen) -> np.ndarray:
        v = np.zeros(gen.n)
        for x, w in self.occupation.items():
            i = gen.index.get(x)
            if i is None:
                raise SimulationError(
                    f"occupied state {x} lies outside the truncation; enlarge N")
            v[i] = w
        return v

    def snapshot_vector(self, gen) -> np.ndarray:
        v = np.zeros(gen.n)
        for x, p in self.snapshot().items():
            i = gen.index.get(x)
            if i is None:
                raise SimulationError(
                    f"particle state {x} lies outside the truncation; enlarge N")
            v[i] = p
        return v


def _draw_move(tl, tot, gen):
    """Pick a destination or None for absorption, by one uniform draw."""
    u = gen.uniform(0.0, tot)
    acc = 0.0
    for y, rate in tl.moves:
        acc += rate
        if u < acc:
            return y
    return None


def fleming_viot(model, n_particles: int, x0_law, horizon: float, rng,
                 burnin: float | None = None,
                 max_events: int = _MAX_EVENTS) -> ParticleEnsemble:
    """Fleming-Viot run: absorbed particles respawn on a uniform other one.

    x0_law is a single state (all particles start there) or a dict law
    sampled independently per particle. Holding times are exponential at the
    current total rate; because the donor keeps its state, no scheduled event
    ever needs invalidation.
    """
    if n_particles < 2:
        raise ValueError("n_particles must be >= 2")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if burnin is None:
        burnin = 0.5 * horizon
    if not 0.0 <= burnin < horizon:
        raise ValueError("burnin must lie in [0, horizon)")
    gen = _as_rng(rng).generator()

    def initial_state():
        if isinstance(x0_law, dict):
            keys = sorted(x0_law)
            w = np.array([x0_law[k] for k in keys], dtype=float)
            return keys[int(gen.choice(len(keys), p=w / w.sum()))]
        return tuple(x0_law) if isinstance(x0_law, (list, tuple)) else int(x0_law)

    pos = [initial_state() for _ in range(n_particles)]
    last = [0.0] * n_particles
    dwell: dict = {}
    resample_log: list = []
    heap: list = []
    seq = 0
    for i in range(n_particles):
        tl = model.transitions_from(pos[i])
        tot = _total_rate_checked(tl, pos[i])
        if tot > 0.0:
            heapq.heappush(heap, (gen.exponential(1.0 / tot), seq, i))
            seq += 1

    def settle(i: int, now: float) -> None:
        t0 = max(last[i], burnin)
        if now > t0:
            dwell[pos[i]] = dwell.get(pos[i], 0.0) + (now - t0)
        last[i] = now

    events = 0
    while heap:
        s, _, i = heapq.heappop(heap)
        if s >= horizon:
            break
        events += 1
        if events > max_events:
            raise SimulationError(f"event budget {max_events} exhausted at t={s:.3g}")
        tl = model.transitions_from(pos[i])
        tot = _total_rate_checked(tl, pos[i])
        dest = _draw_move(tl, tot, gen)
        settle(i, s)
        if dest is None:
            j = int(gen.integers(n_particles - 1))
            if j >= i:
                j += 1
            assert j != i
            pos[i] = pos[j]
            resample_log.append(s)
        else:
            pos[i] = dest
        tl = model.transitions_from(pos[i])
        tot = _total_rate_checked(tl, pos[i])
        if tot > 0.0:
            heapq.heappush(heap, (s + gen.exponential(1.0 / tot), seq, i))
            seq += 1
    for i in range(n_particles):
        settle(i, horizon)
    total = sum(dwell.values())
    occupation = {x: w / total for x, w in sorted(dwell.items())} if total > 0 else {}
    return ParticleEnsemble(n=n_particles, horizon=horizon, burnin=burnin,
                            particles=tuple(pos), resampling_times=tuple(resample_log),
                            occupation=occupation)


# ---------------------------------------------------------------------------
# Q-process via h-transform

def q_process_trajectory(model, spectral, x0, horizon: float, rng,
                         max_events: int = _MAX_EVENTS) -> Trajectory:
    """Run the chain conditioned to survive forever, inside the truncation.

    Jump rates are tilted by the survival eigenfunction, q~(x,y) =
    q(x,y) eta(y) / eta(x), which removes the absorption channel entirely;
    the total jump rate drops to (total out-rate - lambda0). Moves that would
    leave the truncation are part of the killed channel, so the run never
    exits the retained states.
    """
    gen_t = spectral.gen
    x = tuple(x0) if isinstance(x0, (list, tuple)) else int(x0)
    if x not in gen_t.index:
        raise ModelError(f"x0 {x0} outside the truncation; use a larger N")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    eta = spectral.eta
    if eta[gen_t.index[x]] <= 0.0:
        raise SimulationError("eta vanishes at x0; h-transform undefined")
    gen = _as_rng(rng).generator()
    times = [0.0]
    states = [x]
    t = 0.0
    for _ in range(max_events):
        tl = model.transitions_from(x)
        hx = eta[gen_t.index[x]]
        moves = []
        total = 0.0
        for y, rate in tl.moves:
            j = gen_t.index.get(y)
            if j is None:
                continue  # killed channel of the truncated chain
            r = rate * eta[j] / hx
            if r > 0.0:
                moves.append((y, r))
                total += r
        if not math.isfinite(total):
            raise SimulationError(f"tilted rate overflow at state {x}")
        if total <= 0.0:
            raise SimulationError(f"Q-process stuck at state {x}; enlarge N")
        t += gen.exponential(1.0 / total)
        if t >= horizon:
            return Trajectory(tuple(times), tuple(states), None, horizon)
        u = gen.uniform(0.0, total)
        acc = 0.0
        for y, r in moves:
            acc += r
            if u < acc:
                x = y
                break
        times.append(t)
        states.append(x)
    raise SimulationError(f"event budget {max_events} exhausted before the horizon")


def occupation_measure(traj: Trajectory, burnin: float = 0.0) -> dict:
    """Dwell-time fraction per state over (burnin, end-of-run]."""
    end = traj.absorption_time if traj.absorbed else traj.horizon
    if end <= burnin:
        raise ValueError("burnin not smaller than the trajectory span")
    dwell: dict = {}
    times = list(traj.times) + [end]
    for x, t0, t1 in zip(traj.states, times[:-1], times[1:]):
        lo = max(t0, burnin)
        if t1 > lo:
            dwell[x] = dwell.get(x, 0.0) + (t1 - lo)
    total = sum(dwell.values())
    return {x: w / total for x, w in sorted(dwell.items())}


# ---------------------------------------------------------------------------
# CSV export

def _coords(x) -> list:
    return list(x) if isinstance(x, tuple) else [x]


def _event_label(prev, cur) -> str:
    a, b = _coords(prev), _coords(cur)
    for i, (p, c) in enumerate(zip(a, b)):
        if c == p + 1:
            return "birth" if len(a) == 1 else f"birth_{i + 1}"
        if c == p - 1:
            return "death" if len(a) == 1 else f"death_{i + 1}"
    return "move"


def write_trajectory_csv(traj: Trajectory, path, dim: int | None = None) -> None:
    """Rows (t, state coordinates, event type); a final absorbed row if any."""
    if dim is None:
        dim = len(_coords(traj.states[0]))
    cols = ["x"] if dim == 1 else [f"x{i + 1}" for i in range(dim)]
    with open(path, "w") as fh:
        fh.write("t," + ",".join(cols) + ",event\n")
        prev = None
        for t, x in zip(traj.times, traj.states):
            label = "init" if prev is None else _event_label(prev, x)
            fh.write(f"{t!r}," + ",".join(str(c) for c in _coords(x)) + f",{label}\n")
            prev = x
        if traj.absorbed:
            fh.write(f"{traj.absorption_time!r}," + "," * (dim - 1) + ",absorbed\n")
        else:
            fh.write(f"{traj.horizon!r}," +
                     ",".join(str(c) for c in _coords(traj.states[-1])) + ",censored\n")


def write_ensemble_csv(ens: ParticleEnsemble, path) -> None:
    """One row per particle: (particle id, state coordinates) at the horizon."""
    dim = len(_coords(ens.particles[0]))
    cols = ["x"] if dim == 1 else [f"x{i + 1}" for i in range(dim)]
    with open(path, "w") as fh:
        fh.write("particle," + ",".join(cols) + "\n")
        for i, x in enumerate(ens.particles):
            fh.write(f"{i}," + ",".join(str(c) for c in _coords(x)) + "\n")
