"""Simulator and optimizer toolkit for local unitary cluster Jastrow
wavefunctions: exact determinant-sector simulation, stochastic
reconfiguration and linear-method optimization, measurement-protocol
estimators, cost accounting, and dissociation-curve drivers.

Submodules are imported lazily; ``import lucjopt`` stays lightweight so
the command-line entry point can configure threading first.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "hamiltonian", "fock", "ansatz", "derivatives", "optimize",
    "estimators", "costmodel", "scan", "plotting", "cli",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
