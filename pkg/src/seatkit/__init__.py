"""seatkit: separatrix-crossing toolkit for perturbed 1-DOF Hamiltonians.

Second-order averaging machinery for general (not necessarily
Hamiltonian) perturbations, a closed-formula prediction of the
pseudo-phase at separatrix crossing, a direct-integration measurement
oracle, and Monte-Carlo capture-probability experiments.
"""

__version__ = "0.1.0"

from .systems import (PhasePoint, SaddleData, SystemDef, f_h, find_saddle,
                      make_duffing_eight)
from .chart import (AnglePoint, ChartPartials, OrbitSample, chart_partials,
                    f_components, from_angle, orbit, to_angle,
                    transversal_point)
from .separatrix import (SeparatrixSet, compute_theta, separatrix_set,
                         theta_limit_check, trace_loops)
from .averaging import (AveragedCoefficients, AveragingKernelSample, fbar1,
                        fbar2, fbar2_direct, hat_coefficients,
                        kernel_samples, omega1, shift_initial, u1, u_phi1)
from .flow import (AveragedTrajectory, CoefficientTable,
                   PseudoPhasePrediction, compare_to_true, default_h_cut,
                   integrate_averaged, phase_integral, predict_pseudo_phase)
from .simulate import (CaptureResult, CrossingLog, classify_capture,
                       integrate_perturbed, measure_pseudo_phase,
                       run_measure_batch)
from . import errors

__all__ = [
    "AnglePoint",
    "AveragedCoefficients", "AveragedTrajectory", "AveragingKernelSample",
    "CaptureResult", "ChartPartials", "CoefficientTable", "CrossingLog",
    "OrbitSample", "PhasePoint", "PseudoPhasePrediction", "SaddleData",
    "SeparatrixSet", "SystemDef",
    "chart_partials", "classify_capture", "compare_to_true", "compute_theta",
    "default_h_cut", "errors", "f_components", "f_h", "fbar1", "fbar2",
    "fbar2_direct", "find_saddle", "from_angle", "hat_coefficients",
    "integrate_averaged", "integrate_perturbed", "kernel_samples",
    "make_duffing_eight", "measure_pseudo_phase", "omega1", "orbit",
    "phase_integral", "predict_pseudo_phase", "run_measure_batch",
    "separatrix_set", "shift_initial", "theta_limit_check", "to_angle",
    "trace_loops", "transversal_point", "u1", "u_phi1",
]
