"""Strong approximation laboratory for scalar SDEs."""

from .sde_model import (CATALOG_NAMES, SdeSpec, catalog, check_conditions,
                        lie_gap, linear_sde, localize)
from .brownian import PathState
from .schemes import SCHEMES, SchemeConfig, run

__version__ = "0.1.0"

__all__ = [
    "CATALOG_NAMES", "SdeSpec", "catalog", "check_conditions", "lie_gap",
    "linear_sde", "localize", "PathState", "SCHEMES", "SchemeConfig", "run",
    "__version__",
]
