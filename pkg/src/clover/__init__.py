"""Contour location by entropy reduction with multiple information sources."""

from .acquisition import AcquisitionDecision, CandidateSet, acquisition_value, expected_lookahead_entropy, select_next
from .algorithm import CloverConfig, IterationTrace, RunResult, initial_design, run
from .benchmarks import AnalyticProblem, get_problem
from .contour import ContourResult, extract_contour
from .entropy import IntegrationGrid, ToleranceRule, contour_entropy, entropy_from_moments
from .hyperfit import HyperPriors, Normal, fit
from .kernels import KernelSpec, MeanSpec
from .misgp import DomainBox, InformationSource, MultiSourceGP, Posterior, SampleSet

__version__ = "0.1.0"

__all__ = [
    "AcquisitionDecision", "AnalyticProblem", "CandidateSet", "CloverConfig", "ContourResult", "DomainBox",
    "HyperPriors", "InformationSource", "IntegrationGrid", "IterationTrace", "KernelSpec", "MeanSpec",
    "MultiSourceGP", "Normal", "Posterior", "RunResult", "SampleSet", "ToleranceRule", "acquisition_value",
    "contour_entropy", "entropy_from_moments", "expected_lookahead_entropy", "extract_contour", "fit",
    "get_problem", "initial_design", "run", "select_next",
]
