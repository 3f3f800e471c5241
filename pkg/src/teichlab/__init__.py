"""Holonomy length functions, integration formulas and orbit counting on
hyperbolic surfaces built from pairs of pants."""

from __future__ import annotations

from .errors import NumericAssumptionError, TeichlabError, ValidationError

__version__ = "0.1.0"

__all__ = ["NumericAssumptionError", "TeichlabError", "ValidationError", "__version__"]
