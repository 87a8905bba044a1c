"""Robust density estimation from dependent data by rho-estimation on spaced blocks."""

from .blocks import BlockPlan, InsufficientDataError, block_size, estimate_with_spacing, \
    make_blocks, s_max
from .measure import DensityCandidate, FiniteModel, NormalizationError, SampleSpace, \
    SpaceMismatchError, hellinger2, kl_divergence, total_variation
from .rho import RhoScoreTable, Sample, psi, rho_estimate, t_statistic, upsilon
from .selection import make_s_grid, select_s

__version__ = "0.1.0"

__all__ = [
    "BlockPlan", "InsufficientDataError", "block_size", "estimate_with_spacing", "make_blocks",
    "s_max", "DensityCandidate", "FiniteModel", "NormalizationError", "SampleSpace",
    "SpaceMismatchError", "hellinger2", "kl_divergence", "total_variation", "RhoScoreTable",
    "Sample", "psi", "rho_estimate", "t_statistic", "upsilon", "make_s_grid", "select_s",
]
