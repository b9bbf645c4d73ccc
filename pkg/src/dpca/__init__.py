"""Dynamic principal components: MSE and S-estimator fits, baselines and simulation."""

from .core import (
    Convergence,
    DpcComponent,
    DpcModel,
    SeriesPanel,
    SolverConfig,
    StructureSelection,
    explained_variance,
    information_proportion,
    mse,
    select_structure,
)
from .errors import (
    AnalyticFormUnavailable,
    ConfigError,
    DegenerateFitError,
    DomainError,
    DpcError,
    ExactFitError,
    InputError,
    ShapeError,
)
from .robust import MScaleSpec, RobustOptions, fit_s, fit_s_component, m_scale
from .solver import fit, fit_component, reconstruct

__version__ = "0.1.0"

__all__ = [
    "AnalyticFormUnavailable",
    "ConfigError",
    "Convergence",
    "DegenerateFitError",
    "DomainError",
    "DpcComponent",
    "DpcError",
    "DpcModel",
    "ExactFitError",
    "InputError",
    "MScaleSpec",
    "RobustOptions",
    "SeriesPanel",
    "ShapeError",
    "SolverConfig",
    "StructureSelection",
    "explained_variance",
    "fit",
    "fit_component",
    "fit_s",
    "fit_s_component",
    "information_proportion",
    "m_scale",
    "mse",
    "reconstruct",
    "select_structure",
]
