"""Asymptotic key rate: SDP assembly, certified relative-entropy minimisation, rates."""
from .ipm import DenseConstraints, KronConstraints, SdpError, SdpResult, solve_sdp
from .objective import DEFAULT_EPS, RelativeEntropy, objective, reduced_objective
from .problem import GMapSpec, SdpProblem, alice_marginal, build_gmap, build_problem
from .rates import (BOTTOM, KeyRateReport, RateContext, append_results_csv, asymptotic_rate,
                    compute_key_rate, conditional_distribution, error_correction_leakage,
                    key_map_classify, sweep_delta0, sweep_distance, system_rate)
from .solver import InfeasibleError, SolveResult, find_feasible, solve

__all__ = [
    "BOTTOM", "DEFAULT_EPS", "DenseConstraints", "GMapSpec", "InfeasibleError", "KeyRateReport",
    "KronConstraints", "RateContext", "RelativeEntropy", "SdpError", "SdpProblem", "SdpResult",
    "SolveResult", "alice_marginal", "append_results_csv", "asymptotic_rate", "build_gmap",
    "build_problem", "compute_key_rate", "conditional_distribution", "error_correction_leakage",
    "find_feasible", "key_map_classify", "objective", "reduced_objective", "solve", "solve_sdp",
    "sweep_delta0", "sweep_distance", "system_rate",
]
