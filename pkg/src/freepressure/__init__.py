"""Free pressure, free entropy and their matrix approximations."""
__version__ = "0.1.0"

from .ncpoly import MatrixTuple, NCPolynomial, TensorPolynomial, cyclic_reduce, dilate, transform, word_traces
from .measures import CHI_CONST, DiscreteMeasure, make_measure
from .equilibrium import EquilibriumResult, chi_via_legendre, free_pressure, solve_equilibrium
from .moments import MomentSpec
from .chains import MCConfig
from .matrixmc import (MicroPressure, MicrostateSpec, PressureEstimate, Schedule, estimate_micro_pressure,
                       extrapolate_pressure, log_ball_volume, microstate_volume, pressure_path,
                       sample_uniform_ball, scaled_log_volume, volume_limit)
from .gibbs import (GibbsChain, boltzmann_entropy, continue_chain, estimate_state, load_checkpoint,
                    polar_descartes_check, run_chain, save_checkpoint)
from .duality import (PressureBackend, circular_check, divergence_certificate, duality_gap, estimate_chi_penalty,
                      eta_upper)

__all__ = [
    "CHI_CONST", "DiscreteMeasure", "EquilibriumResult", "GibbsChain", "MCConfig", "MatrixTuple", "MicroPressure",
    "MicrostateSpec", "MomentSpec", "NCPolynomial", "PressureBackend", "PressureEstimate", "Schedule",
    "TensorPolynomial", "boltzmann_entropy", "chi_via_legendre", "circular_check", "continue_chain",
    "cyclic_reduce", "dilate", "divergence_certificate", "duality_gap", "estimate_chi_penalty",
    "estimate_micro_pressure", "estimate_state", "eta_upper", "extrapolate_pressure", "free_pressure",
    "load_checkpoint", "log_ball_volume", "make_measure", "microstate_volume", "polar_descartes_check",
    "pressure_path", "run_chain", "sample_uniform_ball", "save_checkpoint", "scaled_log_volume",
    "solve_equilibrium", "transform", "volume_limit", "word_traces",
]
