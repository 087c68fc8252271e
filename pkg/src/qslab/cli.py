"""Batch front end: check criteria, solve QSDs, measure convergence, simulate.

Every command reads a model (INI file or preset name), writes its artifacts
into --out, and finishes with a manifest.json recording the configuration,
library versions, and sha256 of every file written, so identical configs can
be diffed by hash alone.

Exit codes: 0 success (all checked criteria hold), 1 criterion failed,
2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .analysis import (AnalysisError, convergence_curve, fit_rate, plateau_check,
                       plot_curves_svg, tv_distance, uniformity_report,
                       write_curve_csv, write_fits_csv)
from .criteria import (CriterionError, build_V_1d, build_V_multitype, check_alt_H1,
                       check_domination, check_H1, check_H2, check_oscillation_1d,
                       check_summability, check_W_condition, measure_drift_check,
                       pointwise_drift_check, suggest_W)
from .models import ModelError, PRESETS, make_preset, parse_model_file
from .reports import LyapunovReport, Verdict, render_report
from .simulate import (SeededRng, SimulationError, conditional_estimate, fleming_viot,
                       ssa_trajectory, write_ensemble_csv, write_trajectory_csv)
from .spectral import (SpectralError, evolve, qsd_solve, truncate, truncation_sweep,
                       write_qsd_csv, write_sweep_csv)

CRITERIA_1D = ("summability", "weighted-summability", "catastrophe-oscillation-summability",
               "pointwise-drift", "measure-drift")
CRITERIA_MT = ("envelope-domination", "intra-specific-domination",
               "boundary-pressure-domination", "catastrophe-shell-oscillation",
               "pointwise-drift", "measure-drift")


@dataclasses.dataclass
class RunConfig:
    """Parsed command-line configuration for one batch run."""

    model_path: str
    cmd: str
    out_dir: str
    N: int | None
    seed: int | None
    times: list
    initials: list
    tol_evolve: float
    tol_series: float
    scan_range: tuple
    criteria: list | None
    n_traj: int = 1000
    fv_particles: int = 0
    fv_horizon: float = 8.0

    def __post_init__(self):
        if self.tol_evolve <= 0 or self.tol_series <= 0:
            raise ModelError("tolerances must be positive")
        if self.scan_range[0] < 1 or self.scan_range[1] <= self.scan_range[0]:
            raise ModelError(f"bad scan range {self.scan_range}")
        if self.cmd == "simulate" and self.seed is None:
            raise ModelError("simulate is stochastic: a --seed is required")


def _load_model(cfg: RunConfig):
    if cfg.model_path in PRESETS:
        return make_preset(cfg.model_path)
    if not os.path.exists(cfg.model_path):
        raise ModelError(f"model file {cfg.model_path!r} does not exist "
                         f"and is not a preset name")
    return parse_model_file(cfg.model_path)


def _read_simulate_section(cfg: RunConfig) -> None:
    if not os.path.exists(cfg.model_path):
        return
    cp = configparser.ConfigParser()
    cp.read(cfg.model_path)
    if "simulate" not in cp:
        return
    sec = cp["simulate"]
    cfg.n_traj = sec.getint("n_traj", fallback=cfg.n_traj)
    cfg.fv_particles = sec.getint("fv_particles", fallback=cfg.fv_particles)
    cfg.fv_horizon = sec.getfloat("fv_horizon", fallback=cfg.fv_horizon)


class _Out:
    """Output directory with hashed artifact tracking."""

    def __init__(self, cfg: RunConfig):
        self.dir = cfg.out_dir
        os.makedirs(self.dir, exist_ok=True)
        self.cfg = cfg
        self.files: list[str] = []

    def path(self, name: str) -> str:
        p = os.path.join(self.dir, name)
        self.files.append(name)
        return p

    def write_text(self, name: str, text: str) -> None:
        with open(self.path(name), "w") as fh:
            fh.write(text)

    def finish(self, extra: dict | None = None) -> None:
        import numba
        import scipy
        hashes = {}
        for name in sorted(set(self.files)):
            with open(os.path.join(self.dir, name), "rb") as fh:
                hashes[name] = hashlib.sha256(fh.read()).hexdigest()
        manifest = {
            "config": {k: (list(v) if isinstance(v, tuple) else v)
                       for k, v in dataclasses.asdict(self.cfg).items()},
            "versions": {"python": sys.version.split()[0], "numpy": np.__version__,
                         "scipy": scipy.__version__, "numba": numba.__version__,
                         "qslab": __version__},
            "outputs": hashes,
        }
        if extra:
            manifest["results"] = extra
        with open(os.path.join(self.dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _default_N(model) -> int:
    return 512 if model.kind == "bdc" else 40


def _first_initial(cfg: RunConfig, model):
    if cfg.initials:
        return cfg.initials[0]
    return 1 if model.kind == "bdc" else (1,) * model.r


# ---------------------------------------------------------------------------
# cmd_check

def _skipped(name: str, why: str) -> LyapunovReport:
    return LyapunovReport(criterion=name, verdict=Verdict.INCONCLUSIVE,
                          scan_range=(0, 0), constants={}, notes=(why,))


def _check_bdc(model, cfg: RunConfig) -> list[LyapunovReport]:
    lo, hi = cfg.scan_range
    reports = [check_summability(model, tol=cfg.tol_series)]
    if not reports[0].holds:
        why = "skipped: the unweighted return series did not certify"
        reports += [_skipped(n, why) for n in CRITERIA_1D[1:]]
        return reports
    W = suggest_W(model, tol=cfg.tol_series)
    reports.append(check_W_condition(model, W, tol=cfg.tol_series))
    reports.append(check_oscillation_1d(model, tol=cfg.tol_series))
    V = build_V_1d(model, W, x_max=hi + 1)  # drift scan evaluates V one step up
    reports.append(pointwise_drift_check(model, V, W, scan_range=(lo, hi)))
    seed = cfg.seed if cfg.seed is not None else 0
    reports.append(measure_drift_check(model, V, W, seed=seed, scan_range=(lo, hi)))
    return reports


def _check_multitype(model, cfg: RunConfig) -> list[LyapunovReport]:
    lo, hi = cfg.scan_range
    s_max = max(hi, model.r + 20)
    reports = [check_domination(model, s_max=min(s_max, 200), tol=cfg.tol_series)]
    if model.comp is None:
        # rate-level model without competition coefficients: the shell
        # criteria and the eps-sized drift construction do not apply
        print("note: no competition coefficients; only envelope domination applies")
        return reports
    h1 = check_H1(model, s_max=s_max)
    alt = check_alt_H1(model, s_max=s_max)
    reports += [h1, alt]
    if h1.holds:
        eta = h1.constant("h1_margin")
    elif alt.holds:
        eta = alt.constant("h1_margin")
    else:
        eta = 1.0  # diagnostic H2 run only; the pipeline already failed
    h2 = check_H2(model, eta=eta, s_max=s_max)
    reports.append(h2)
    if (h1.holds or alt.holds) and h2.holds:
        eta_prime = h2.constant("eta_prime")
        eps = 0.5 * ((1.0 - eta) + (1.0 - eta_prime))
        V = build_V_multitype(eps)
        reports.append(pointwise_drift_check(model, V, V, scan_range=(max(lo, model.r), hi)))
        seed = cfg.seed if cfg.seed is not None else 0
        reports.append(measure_drift_check(model, V, V, seed=seed,
                                           scan_range=(max(lo, model.r), hi)))
    else:
        why = "skipped: no shell margin available to size the Lyapunov exponent"
        reports += [_skipped(n, why) for n in ("pointwise-drift", "measure-drift")]
    return reports


def cmd_check(cfg: RunConfig) -> int:
    model = _load_model(cfg)
    model.validate(bound=min(cfg.scan_range[1], 200))
    reports = _check_bdc(model, cfg) if model.kind == "bdc" else _check_multitype(model, cfg)
    if cfg.criteria is not None:
        known = CRITERIA_1D if model.kind == "bdc" else CRITERIA_MT
        bad = [c for c in cfg.criteria if c not in known]
        if bad:
            raise ModelError(f"unknown criteria {bad}; known: {', '.join(known)}")
        reports = [r for r in reports if r.criterion in cfg.criteria]
    out = _Out(cfg)
    verdicts = {}
    for rep in reports:
        out.write_text(f"check-{rep.criterion}.txt", render_report(rep))
        verdicts[rep.criterion] = rep.verdict.value
        print(f"{rep.criterion}: {rep.verdict.value}")
    out.finish(extra={"verdicts": verdicts})
    return 0 if all(r.holds for r in reports) else 1


# ---------------------------------------------------------------------------
# cmd_qsd

def cmd_qsd(cfg: RunConfig) -> int:
    model = _load_model(cfg)
    N = cfg.N or _default_N(model)
    out = _Out(cfg)
    sweep = truncation_sweep(model, tol=1e-6, n_start=min(32, N), n_cap=N)
    res = sweep.result if sweep.Ns[-1] == N else qsd_solve(truncate(model, N), tol=1e-9)
    write_qsd_csv(res, out.path("qsd.csv"))
    write_sweep_csv(sweep, out.path("sweep.csv"))
    print(f"N={res.gen.N}  lambda0={res.lambda0:.12g}  residual={res.residual:.3g}  "
          f"sweep converged: {sweep.converged}")
    out.finish(extra={"lambda0": res.lambda0, "residual": res.residual,
                      "sweep_converged": sweep.converged})
    return 0


# ---------------------------------------------------------------------------
# cmd_converge

def _label(x) -> str:
    return "|".join(str(c) for c in x) if isinstance(x, tuple) else str(x)


def cmd_converge(cfg: RunConfig) -> int:
    model = _load_model(cfg)
    N = cfg.N or _default_N(model)
    res = qsd_solve(truncate(model, N), tol=1e-9)
    times = cfg.times or list(np.arange(0.25, 5.01, 0.25))
    initials = cfg.initials or ([1, max(2, N // 2), N] if model.kind == "bdc"
                                else [(1,) * model.r])
    out = _Out(cfg)
    curves, fits = [], {}
    for x0 in initials:
        curve = convergence_curve(res, x0, times, tol=cfg.tol_evolve, label=_label(x0))
        curves.append(curve)
        write_curve_csv(curve, out.path(f"curve-{_label(x0)}.csv"))
        try:
            fits[_label(x0)] = fit_rate(curve)
        except AnalysisError as e:
            print(f"fit for initial {_label(x0)} failed: {e}")
    if fits:
        write_fits_csv(fits, out.path("fits.csv"))
    plot_curves_svg(curves, out.path("curves.svg"),
                    fits=[fits.get(c.initial) for c in curves], title=model.name)
    summary = {}
    if len(initials) > 1 and len(fits) == len(initials):
        rep = uniformity_report(res, initials, times, tol=cfg.tol_evolve)
        lines = ["initial,gamma,C,r_squared"]
        for lab, f in zip(rep.initials, rep.fits):
            lines.append(f"{lab},{f.gamma!r},{f.C!r},{f.r_squared!r}")
        lines.append(f"# gamma_spread={rep.gamma_spread!r} "
                     f"flag_spread={rep.flag_gamma_spread} flag_c_growth={rep.flag_c_growth}")
        out.write_text("uniformity.csv", "\n".join(lines) + "\n")
        summary["gamma_spread"] = rep.gamma_spread
        print(f"gamma spread {rep.gamma_spread:.4f} "
              f"(flagged: {rep.flag_gamma_spread})")
    try:
        pl = plateau_check(res, _first_initial(cfg, model), tol=min(cfg.tol_evolve, 1e-10))
        out.write_text("plateau.txt",
                       f"T: {pl.T!r}\nfluctuation: {pl.fluctuation!r}\n"
                       f"plateau_value: {pl.plateau_value!r}\n"
                       f"qsd_exp_error: {pl.qsd_exp_error!r}\n"
                       + "".join(f"note: {n}\n" for n in pl.notes))
        summary["plateau_fluctuation"] = pl.fluctuation
    except AnalysisError as e:
        print(f"plateau check failed: {e}")
    for lab, f in fits.items():
        print(f"initial {lab}: gamma={f.gamma:.6g} C={f.C:.6g} r2={f.r_squared:.6f}")
    out.finish(extra=summary)
    return 0


# ---------------------------------------------------------------------------
# cmd_simulate

def cmd_simulate(cfg: RunConfig) -> int:
    model = _load_model(cfg)
    _read_simulate_section(cfg)
    N = cfg.N or _default_N(model)
    gen = truncate(model, N)
    res = qsd_solve(gen, tol=1e-9)
    x0 = _first_initial(cfg, model)
    t = cfg.times[-1] if cfg.times else 2.0
    out = _Out(cfg)
    rng = SeededRng(cfg.seed, 0)

    traj = ssa_trajectory(model, x0, t, SeededRng(cfg.seed, 1))
    write_trajectory_csv(traj, out.path("trajectory.csv"))

    est = conditional_estimate(model, x0, t, cfg.n_traj, SeededRng(cfg.seed, 2))
    law = evolve(gen, x0, t, tol=cfg.tol_evolve)
    summary = {"n_traj": cfg.n_traj, "t": t, "survival_mc": est.survival,
               "survival_spectral": law.survival}
    lines = ["state,empirical,spectral"]
    if not est.all_absorbed:
        emp = est.vector(gen)
        tv = tv_distance(emp, law.dist)
        summary["tv_mc_vs_evolve"] = tv
        for x, e, s in zip(gen.states, emp, law.dist):
            if e > 0.0 or s > 1e-12:
                lines.append(f"{_label(x)},{float(e)!r},{float(s)!r}")
        print(f"conditional estimate: {est.survivors}/{cfg.n_traj} survivors, "
              f"TV to evolve {tv:.4f}")
    else:
        print("conditional estimate: all trajectories absorbed")
    out.write_text("mc_vs_spectral.csv", "\n".join(lines) + "\n")

    if cfg.fv_particles >= 2:
        ens = fleming_viot(model, cfg.fv_particles, x0, cfg.fv_horizon,
                           SeededRng(cfg.seed, 3))
        write_ensemble_csv(ens, out.path("ensemble.csv"))
        tv_fv = tv_distance(ens.snapshot_vector(gen), res.qsd)
        summary["tv_fv_vs_qsd"] = tv_fv
        print(f"fleming-viot: {cfg.fv_particles} particles, snapshot TV to qsd {tv_fv:.4f}")
    out.finish(extra=summary)
    return 0


# ---------------------------------------------------------------------------
# argument handling

def _parse_state(txt: str):
    if "|" in txt:
        return tuple(int(c) for c in txt.split("|"))
    return int(txt)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="qslab",
        description="Quasi-stationary laboratory: criteria checks, spectral QSD "
                    "solves, convergence measurement, exact simulation.")
    p.add_argument("--model", required=True,
                   help="model INI file or preset name "
                        f"({', '.join(sorted(PRESETS))})")
    p.add_argument("--cmd", required=True, choices=["check", "qsd", "converge", "simulate"])
    p.add_argument("--N", type=int, default=None, help="truncation bound")
    p.add_argument("--seed", type=int, default=None, help="master seed (simulate)")
    p.add_argument("--times", default=None,
                   help="comma-separated times, e.g. 0.5,1,2")
    p.add_argument("--initials", default=None,
                   help="comma-separated initial states; multi-type coords joined "
                        "by |, e.g. 1|1,2|3")
    p.add_argument("--out", default="qslab-out", help="output directory")
    p.add_argument("--tol-evolve", type=float, default=1e-9)
    p.add_argument("--tol-series", type=float, default=1e-3)
    p.add_argument("--range", default="1:200", dest="scan_range",
                   help="criteria scan range lo:hi")
    p.add_argument("--criteria", default=None,
                   help="comma-separated criterion subset for --cmd check")
    return p


def parse_config(argv) -> RunConfig:
    args = build_parser().parse_args(argv)
    try:
        lo, hi = (int(v) for v in args.scan_range.replace(":", ",").split(","))
    except ValueError:
        raise ModelError(f"cannot parse --range {args.scan_range!r}; expected lo:hi")
    return RunConfig(
        model_path=args.model,
        cmd=args.cmd,
        out_dir=args.out,
        N=args.N,
        seed=args.seed,
        times=[float(v) for v in args.times.split(",")] if args.times else [],
        initials=[_parse_state(v) for v in args.initials.split(",")] if args.initials else [],
        tol_evolve=args.tol_evolve,
        tol_series=args.tol_series,
        scan_range=(lo, hi),
        criteria=args.criteria.split(",") if args.criteria else None,
    )


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except ModelError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    dispatch = {"check": cmd_check, "qsd": cmd_qsd,
                "converge": cmd_converge, "simulate": cmd_simulate}
    try:
        return dispatch[cfg.cmd](cfg)
    except ModelError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (SpectralError, SimulationError, AnalysisError, CriterionError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())
