"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: parameter errors exit 2,
divergence errors exit 3, solver non-convergence exits 4, and identity
verification failures exit 5.
"""


class GnsForgeError(Exception):
    """Base class for all package errors."""


class ParameterError(GnsForgeError, ValueError):
    """Invalid (n, m, k), grid, or configuration parameters."""


class GridMismatchError(GnsForgeError, ValueError):
    """Fields defined on different grids were combined."""


class DomainError(GnsForgeError, ValueError):
    """Input field violates a positivity or constancy requirement."""


class DivergenceError(GnsForgeError, RuntimeError):
    """A quadrature failed its tail check; carries the integrand name."""

    def __init__(self, name: str, tail_fraction: float, message: str | None = None):
        self.name = name
        self.tail_fraction = tail_fraction
        super().__init__(
            message
            or f"integral of '{name}' failed the tail check "
            f"(estimated tail fraction {tail_fraction:.3e})"
        )


class PreconditionError(GnsForgeError, RuntimeError):
    """A theorem hypothesis (Einstein background, parallel tractor, ...) fails."""


class NonConvergenceError(GnsForgeError, RuntimeError):
    """The minimizer stopped without reaching its gradient tolerance."""
