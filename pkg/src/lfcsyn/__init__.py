"""Synthesis and verification of decentralized load-frequency controllers.

Builds the state-space model of a delayed nonlinear multi-area power
system, assembles the controller-synthesis LMI minimization problems,
solves them with a built-in interior-point SDP solver, and validates
the resulting closed loop by delay-aware nonlinear simulation.
"""

from lfcsyn.errors import (
    CertificateError,
    DimensionError,
    LfcError,
    ParameterError,
    SolveError,
)

__version__ = "0.1.0"

__all__ = [
    "LfcError",
    "ParameterError",
    "DimensionError",
    "CertificateError",
    "SolveError",
    "__version__",
]
