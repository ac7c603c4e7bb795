"""Matrix-free monolithic geometric multigrid for Taylor-Hood Stokes systems."""

__version__ = "0.1.0"
