"""Hyper-rectangular conformal prediction sets for multivariate regression."""
from .calibrators import (ThresholdRectangle, bonferroni, calibrate, plugin_standardized,
                          population_oracle, split_standardized, transductive_oracle,
                          unscaled_max)
from .core_stats import ScalingParams, augmented_moments, conformal_quantile, moments
from .errors import (BudgetExceeded, DegenerateDimension, EmptyCell, InvalidLevel,
                     RankDeficient, ShapeError, ShiftTooSmall, TSCPError)
from .link import critical_radius, omega
from .residuals import (ModelOutput, OutcomeRectangle, ResidualMatrix, absolute_residuals,
                        cqr_residuals, invert_rectangle, jitter)
from .transductive import (GwcResult, LocalBounds, TscpResult, gwc_calibrate, phi_gwc,
                           tscp_calibrate)

__version__ = "0.1.0"

__all__ = [
    "BudgetExceeded", "DegenerateDimension", "EmptyCell", "GwcResult", "InvalidLevel",
    "LocalBounds", "ModelOutput", "OutcomeRectangle", "RankDeficient", "ResidualMatrix",
    "ScalingParams", "ShapeError", "ShiftTooSmall", "TSCPError", "ThresholdRectangle",
    "TscpResult", "absolute_residuals", "augmented_moments", "bonferroni", "calibrate",
    "conformal_quantile", "cqr_residuals", "critical_radius", "gwc_calibrate",
    "invert_rectangle", "jitter", "moments", "omega", "phi_gwc", "plugin_standardized",
    "population_oracle", "split_standardized", "transductive_oracle", "tscp_calibrate",
    "unscaled_max",
]
