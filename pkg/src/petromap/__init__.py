"""petromap: raster prospectivity mapping with MLP and ANFIS integration."""

__version__ = "0.1.0"
