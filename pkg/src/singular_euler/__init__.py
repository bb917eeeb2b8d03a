"""Scale-invariant singular vortices in m-fold symmetric 2D Euler flow.

Modules
-------
sector        sector conventions, graded grids, endpoint-singular quadrature, L^p metrics
si_euler      the 1D angular transport system (Green solver, Lagrangian markers, blow-up runs)
biot_savart   polar Biot-Savart kernels, spectral oracle and calibration
lagrangian2d  vortex-blob particles for the 2D flow and the origin-limit experiment
norms         analytic norms with singular weights and their majorant flow
harness       command-line driver (``python -m singular_euler``)
"""

from .sector import Convention, SectorConfig, graded_grid, lp_loc_distance, lp_sphere_distance, make_sector_config

__version__ = "0.1.0"

__all__ = ["Convention", "SectorConfig", "make_sector_config", "graded_grid", "lp_sphere_distance", "lp_loc_distance", "__version__"]
