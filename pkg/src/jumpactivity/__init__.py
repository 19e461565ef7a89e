"""Jump activity index estimation from high-frequency observations."""

__version__ = "0.1.0"
