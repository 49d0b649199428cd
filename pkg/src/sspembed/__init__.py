"""Strongly symmetric positive first-order systems, their discretisation, and embedding-jet algebra."""

from .core import LinearSystemField, PolynomialJet, PositivityReport, check_p_convex, check_ssp
from .transform import ChangeOfVars, run_pipeline_2d, run_pipeline_3d

__all__ = [
    "ChangeOfVars",
    "LinearSystemField",
    "PolynomialJet",
    "PositivityReport",
    "check_p_convex",
    "check_ssp",
    "run_pipeline_2d",
    "run_pipeline_3d",
]
__version__ = "0.1.0"
