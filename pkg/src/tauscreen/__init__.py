"""Trend screening of many genes against an ordered design with a rescaled Kendall tau."""
from .errors import (DataError, DegenerateDesign, EmptyGrid, Infeasible, ParseError, TauScreenError,
                     TooLarge, Unattainable)
from .null_dist import (NullDistribution, ThresholdGrid, exact_null, mc_null, null_for,
                        right_p_values, threshold_grid)
from .tau_core import (DesignStructure, DesignVariates, ExpressionMatrix, TauVector,
                       build_design_structure, kendall_tau, screen_matrix, tau_scores)

__version__ = "0.1.0"

__all__ = [
    "DataError", "DegenerateDesign", "DesignStructure", "DesignVariates", "EmptyGrid",
    "ExpressionMatrix", "Infeasible", "NullDistribution", "ParseError", "TauScreenError",
    "TauVector", "ThresholdGrid", "TooLarge", "Unattainable", "build_design_structure",
    "exact_null", "kendall_tau", "mc_null", "null_for", "right_p_values", "screen_matrix",
    "tau_scores", "threshold_grid",
]
