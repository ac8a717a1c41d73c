"""Exception types mapped onto CLI exit codes."""


class CcqsimError(Exception):
    exit_code = 2


class ConfigError(CcqsimError, ValueError):
    """Invalid or inconsistent configuration (exit code 1)."""

    exit_code = 1


class NumericalError(CcqsimError, ArithmeticError):
    """Integration instability, positivity or truncation failure (exit code 2)."""

    exit_code = 2


class TruncationError(NumericalError):
    """Fock truncation too small for the evolved state."""


class PositivityError(NumericalError):
    """Density matrix eigenvalue below the clipping tolerance."""
