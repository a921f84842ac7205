"""Generative forecasting (GenF) laboratory."""

__version__ = "0.1.0"

from genf._accel import HAVE_NUMBA, backend  # noqa: F401
