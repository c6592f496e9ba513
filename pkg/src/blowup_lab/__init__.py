"""Numerical companion for blow-up of weakly coupled damped wave systems
with time-derivative nonlinearities.

Modules: ``specialfn`` (Bessel-type weights), ``frames`` (iteration
constants and lifespan envelopes), ``solver`` (radial integrator),
``functionals`` (weighted averages and their inequalities) and ``harness``
(sweeps, fits, config files, output).
"""

from .exceptions import (BlowupLabError, ConfigError, ConvergenceError, DomainError,
                         OutputError, UsageError)

__version__ = "0.1.0"

__all__ = ["BlowupLabError", "ConfigError", "ConvergenceError", "DomainError",
           "OutputError", "UsageError", "__version__"]
