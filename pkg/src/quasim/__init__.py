"""Simulated quantum kernels for structural and thermal engineering surrogates.

Modules: ``qsim`` (statevector simulator), ``fem`` (classical modal oracle),
``qpe`` (phase-estimation eigenfrequencies), ``heat`` (laser heating oracle),
``qgnn`` (quantum graph surrogate), ``cli`` and ``service``.
"""
from .errors import ConfigError, NumericalError, QuasimError

__version__ = "0.1.0"
__all__ = ["ConfigError", "NumericalError", "QuasimError", "__version__"]
