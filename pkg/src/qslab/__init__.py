"""qslab: a numerical laboratory for quasi-stationary distributions.

Absorbed continuous-time Markov chains (1D birth-death with catastrophes and
multi-type competitive populations), their Lyapunov-type survival criteria with
certified range-qualified verdicts, spectral solvers for the quasi-stationary
distribution on truncations, exact-in-distribution simulation, and convergence
diagnostics.
"""

from .models import (
    BDCModel,
    ModelError,
    MultiTypeModel,
    PRESETS,
    State,
    TransitionList,
    enumerate_states,
    make_preset,
    parse_model_file,
    state_index_map,
)
from .reports import LyapunovReport, SeriesEstimate, Verdict, parse_report, render_report
from .criteria import (
    CriterionError,
    OscillationData,
    PiWeights,
    build_V_1d,
    build_V_multitype,
    certify_series,
    check_H1,
    check_H2,
    check_summability,
    check_W_condition,
    check_alt_H1,
    check_domination,
    check_oscillation_1d,
    measure_drift_check,
    oscillation_data,
    pointwise_drift_check,
    series_S,
    suggest_W,
)
from .spectral import (
    ConditionalLaw,
    SpectralError,
    SpectralResult,
    TruncatedGenerator,
    TruncationSweep,
    evolve,
    evolve_path,
    qsd_solve,
    truncate,
    truncation_sweep,
    write_qsd_csv,
    write_sweep_csv,
)
from .simulate import (
    ConditionalEstimate,
    ParticleEnsemble,
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
from .analysis import (
    AnalysisError,
    ConvergenceCurve,
    PlateauReport,
    RateFit,
    UniformityReport,
    convergence_curve,
    fit_rate,
    plateau_check,
    plot_curves_svg,
    tv_distance,
    uniformity_report,
    write_curve_csv,
    write_fits_csv,
)

__version__ = "0.1.0"

__all__ = [
    "BDCModel",
    "MultiTypeModel",
    "TransitionList",
    "State",
    "ModelError",
    "CriterionError",
    "PRESETS",
    "make_preset",
    "parse_model_file",
    "enumerate_states",
    "state_index_map",
    "LyapunovReport",
    "SeriesEstimate",
    "Verdict",
    "render_report",
    "parse_report",
    "PiWeights",
    "certify_series",
    "series_S",
    "check_summability",
    "check_W_condition",
    "suggest_W",
    "build_V_1d",
    "build_V_multitype",
    "OscillationData",
    "oscillation_data",
    "check_oscillation_1d",
    "pointwise_drift_check",
    "measure_drift_check",
    "check_domination",
    "check_H1",
    "check_alt_H1",
    "check_H2",
    "TruncatedGenerator",
    "SpectralError",
    "SpectralResult",
    "ConditionalLaw",
    "TruncationSweep",
    "truncate",
    "qsd_solve",
    "evolve",
    "evolve_path",
    "truncation_sweep",
    "write_qsd_csv",
    "write_sweep_csv",
    "SeededRng",
    "SimulationError",
    "Trajectory",
    "ConditionalEstimate",
    "ParticleEnsemble",
    "ssa_trajectory",
    "conditional_estimate",
    "fleming_viot",
    "q_process_trajectory",
    "occupation_measure",
    "write_trajectory_csv",
    "write_ensemble_csv",
    "AnalysisError",
    "ConvergenceCurve",
    "RateFit",
    "UniformityReport",
    "PlateauReport",
    "tv_distance",
    "convergence_curve",
    "fit_rate",
    "uniformity_report",
    "plateau_check",
    "write_curve_csv",
    "write_fits_csv",
    "plot_curves_svg",
    "__version__",
]
