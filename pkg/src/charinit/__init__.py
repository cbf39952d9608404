"""Characteristic initial data for the Einstein-Vlasov-scalar field system.

Solves the constraint hierarchy on the two null hypersurfaces
``I0 = {y0 = 0}`` and ``I1 = {y1 = 0}`` in temporal gauge, and verifies the
result against the constraints with independent finite differences.
"""

from .freedata import FreeDataError, FreeDataSpec
from .geometry import CharSurfaceGrid, SurfaceId, build_surface_grid

__version__ = "0.1.0"

__all__ = ["CharSurfaceGrid", "FreeDataError", "FreeDataSpec", "SurfaceId", "build_surface_grid"]
