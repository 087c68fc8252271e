"""Convergence measurement: TV curves, exponential-rate fits, plateau checks.

The distance convention throughout is the unhalved total variation
sum_i |p_i - q_i|, the supremum of |mu(f)| over |f| <= 1, so values live in
[0, 2] and disjoint supports score 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .spectral import SpectralResult, evolve, evolve_path


class AnalysisError(RuntimeError):
    """Fit window empty, plateau search failed, or similar diagnostic dead end."""


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Unhalved total variation sum |p_i - q_i| between probability vectors."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"dimension mismatch: {p.shape} vs {q.shape}")
    return float(np.abs(p - q).sum())


@dataclass(frozen=True)
class ConvergenceCurve:
    """TV distance to the quasi-stationary law along a time grid."""

    times: tuple
    tv: tuple
    initial: str
    evolve_tol: float = 1e-9

    def __post_init__(self):
        if len(self.times) != len(self.tv):
            raise ValueError("times and tv lengths differ")
        if any(t1 <= t0 for t0, t1 in zip(self.times, self.times[1:])):
            raise ValueError("times must be strictly increasing")
        if any(not (0.0 <= v <= 2.0 + 1e-12) for v in self.tv):
            raise ValueError("tv values must lie in [0, 2]")


def convergence_curve(spectral: SpectralResult, mu0, times: Sequence[float],
                      tol: float = 1e-9, label: str | None = None) -> ConvergenceCurve:
    """TV(conditioned law at t, qsd) for each t, marched in one incremental pass."""
    laws = evolve_path(spectral.gen, mu0, sorted(float(t) for t in times), tol=tol)
    tvs = tuple(tv_distance(law.dist, spectral.qsd) for law in laws)
    if label is None:
        label = str(mu0) if not isinstance(mu0, np.ndarray) else "vector"
    return ConvergenceCurve(times=tuple(law.time for law in laws), tv=tvs,
                            initial=label, evolve_tol=tol)


@dataclass(frozen=True)
class RateFit:
    """Least-squares exponential fit tv ~ C exp(-gamma t) on a stated window."""

    gamma: float
    logC: float
    r_squared: float
    window: tuple
    n_points: int

    @property
    def C(self) -> float:
        return math.exp(self.logC)


def fit_rate(curve: ConvergenceCurve, tol_floor: float | None = None,
             min_points: int = 5) -> RateFit:
    """Fit the exponential regime of a TV curve.

    Burn-in policy: keep times where tv has fallen to half its initial value
    but still sits above the numerical floor (default 10x the evolve
    tolerance). Empty or short windows raise AnalysisError.
    """
    if tol_floor is None:
        tol_floor = 10.0 * curve.evolve_tol
    t = np.array(curve.times)
    v = np.array(curve.tv)
    mask = (v <= 0.5 * v[0]) & (v >= tol_floor) & (v > 0.0)
    if mask.sum() < min_points:
        raise AnalysisError(
            f"fit window holds {int(mask.sum())} points (need >= {min_points}); "
            "extend the time grid or lower the floor")
    tw, vw = t[mask], np.log(v[mask])
    slope, intercept = np.polyfit(tw, vw, 1)
    pred = slope * tw + intercept
    ss_res = float(((vw - pred) ** 2).sum())
    ss_tot = float(((vw - vw.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateFit(gamma=float(-slope), logC=float(intercept), r_squared=r2,
                   window=(float(tw[0]), float(tw[-1])), n_points=int(mask.sum()))


@dataclass(frozen=True)
class UniformityReport:
    """Per-initial rate fits plus cross-initial worst-case TV per time.

    ``gamma_spread`` is (max-min)/mean over the fitted rates; the flags call
    out a spread above the configured bound and a prefactor C that grows
    monotonically along the initial list by more than the growth factor.
    """

    initials: tuple
    fits: tuple
    times: tuple
    max_tv: tuple
    gamma_spread: float
    flag_gamma_spread: bool
    flag_c_growth: bool

    def fit_for(self, label: str) -> RateFit:
        return self.fits[self.initials.index(label)]


def uniformity_report(spectral: SpectralResult, initials: Sequence, times: Sequence[float],
                      tol: float = 1e-9, spread_tol: float = 0.10,
                      c_growth_factor: float = 10.0) -> UniformityReport:
    """Convergence-rate comparison across initial conditions."""
    if not initials:
        raise ValueError("need at least one initial condition")
    curves = [convergence_curve(spectral, x0, times, tol=tol) for x0 in initials]
    fits = tuple(fit_rate(c) for c in curves)
    tv_matrix = np.array([c.tv for c in curves])
    gammas = np.array([f.gamma for f in fits])
    spread = float((gammas.max() - gammas.min()) / gammas.mean()) if len(fits) > 1 else 0.0
    cs = [f.C for f in fits]
    growing = len(cs) > 1 and all(c1 > c0 for c0, c1 in zip(cs, cs[1:])) \
        and cs[-1] > c_growth_factor * cs[0]
    return UniformityReport(
        initials=tuple(str(x) for x in initials), fits=fits,
        times=tuple(curves[0].times), max_tv=tuple(tv_matrix.max(axis=0)),
        gamma_spread=spread, flag_gamma_spread=spread > spread_tol,
        flag_c_growth=bool(growing))


@dataclass(frozen=True)
class PlateauReport:
    """Behaviour of exp(lambda0 t) * survival(t) on [T, 2T].

    ``fluctuation`` is (max-min)/mean of the compensated survival over the
    window; small values certify the mortality plateau. ``qsd_exp_error`` is
    the worst |survival_from_qsd(t) - exp(-lambda0 t)| over the window, which
    isolates the solver-residual contribution.
    """

    T: float
    times: tuple
    compensated: tuple
    fluctuation: float
    plateau_value: float
    qsd_exp_error: float
    notes: tuple


def plateau_check(spectral: SpectralResult, x0, T: float | None = None,
                  n_grid: int = 17, tol: float = 1e-12,
                  fluctuation_bound: float = 1e-3,
                  mixing_tv: float = 1e-6) -> PlateauReport:
    """Check that mortality flattens: exp(lambda0 t) P_x0(alive at t) goes constant.

    With T omitted, doubles from 1/lambda0 until TV(conditioned law, qsd)
    drops under mixing_tv and uses that time. Also evolves the qsd itself,
    whose survival must be exactly exponential up to solver residual.
    """
    gen = spectral.gen
    lam = spectral.lambda0
    if T is None:
        T = 1.0 / lam
        for _ in range(64):
            law = evolve(gen, x0, T, tol=tol)
            if tv_distance(law.dist, spectral.qsd) <= mixing_tv:
                break
            T *= 2.0
        else:
            raise AnalysisError("no mixing time found; conditioned law never "
                                f"reached TV {mixing_tv} of the qsd")
    times = list(np.linspace(T, 2.0 * T, n_grid))
    laws = evolve_path(gen, x0, times, tol=tol)
    comp = tuple(law.survival * math.exp(lam * law.time) for law in laws)
    mean = sum(comp) / len(comp)
    fluct = (max(comp) - min(comp)) / mean
    qsd_laws = evolve_path(gen, spectral.qsd.copy(), times, tol=tol)
    qsd_err = max(abs(law.survival - math.exp(-lam * law.time)) for law in qsd_laws)
    notes = []
    if fluct > fluctuation_bound:
        notes.append(f"fluctuation {fluct:.2e} above {fluctuation_bound:.0e}: increase T")
    return PlateauReport(T=float(T), times=tuple(times), compensated=comp,
                         fluctuation=float(fluct), plateau_value=float(mean),
                         qsd_exp_error=float(qsd_err), notes=tuple(notes))


# ---------------------------------------------------------------------------
# exports

def write_curve_csv(curve: ConvergenceCurve, path) -> None:
    with open(path, "w") as fh:
        fh.write("t,tv\n")
        for t, v in zip(curve.times, curve.tv):
            fh.write(f"{float(t)!r},{float(v)!r}\n")


def write_fits_csv(fits: dict, path) -> None:
    """fits: mapping from curve label to RateFit."""
    with open(path, "w") as fh:
        fh.write("initial,gamma,logC,r_squared,t_lo,t_hi,n_points\n")
        for label, f in fits.items():
            fh.write(f"{label},{f.gamma!r},{f.logC!r},{f.r_squared!r},"
                     f"{f.window[0]!r},{f.window[1]!r},{f.n_points}\n")


def plot_curves_svg(curves: Sequence[ConvergenceCurve], path,
                    fits: Sequence[RateFit] | None = None,
                    title: str = "") -> None:
    """Static SVG of log TV against t, one line per curve, deterministic bytes."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "qslab"
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for i, c in enumerate(curves):
        pos = [(t, v) for t, v in zip(c.times, c.tv) if v > 0]
        if not pos:
            continue
        ax.semilogy([t for t, _ in pos], [v for _, v in pos],
                    marker=".", lw=1.0, label=c.initial)
        if fits is not None and i < len(fits) and fits[i] is not None:
            f = fits[i]
            ts = np.linspace(f.window[0], f.window[1], 32)
            ax.semilogy(ts, np.exp(f.logC - f.gamma * ts), "--", lw=0.8, color="gray")
    ax.set_xlabel("t")
    ax.set_ylabel("TV to qsd")
    if title:
        ax.set_title(title)
    if len(curves) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
