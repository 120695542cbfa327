"""Recurrent estimation of hourly surface solar irradiance from geostationary satellite slices."""

__version__ = "0.1.0"
