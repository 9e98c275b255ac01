"""Kinematic analysis pipeline for teleoperated and open needle-driving trials."""

from needlemetrics.backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
