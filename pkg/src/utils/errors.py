"""
Error types for the localization pipeline.

Every error carries the process exit code the command-line tool reports for it:
- 2: configuration problems
- 3: numerical-contract violations (non-Hermitian input, non-convergence, norm drift)
- 4: capacity (Fock basis too large)
Input-validation errors also derive from ValueError so callers can catch them generically.
"""


class BoselocError(Exception):
    """Base class for all pipeline errors."""
    exit_code = 1


class ConfigError(BoselocError):
    """Invalid or inconsistent run configuration."""
    exit_code = 2


class NumericalContractError(BoselocError):
    """A numerical contract (residual, orthonormality, norm) was violated."""
    exit_code = 3


class NonHermitianError(NumericalContractError):
    """Matrix handed to a Hermitian routine is not Hermitian within tolerance."""


class ConvergenceError(NumericalContractError):
    """LAPACK routine did not converge."""


class NormDriftError(NumericalContractError):
    """Time evolution lost unitarity beyond tolerance."""


class CapacityError(BoselocError):
    """Requested Fock basis exceeds the configured size cap."""
    exit_code = 4


class DimensionMismatchError(BoselocError, ValueError):
    """Vector or tensor does not match the lattice/basis dimension."""


class SymmetryViolationError(BoselocError, ValueError):
    """Tensor is not symmetric under index permutations."""


class DegenerateSpectrumError(BoselocError, ValueError):
    """Spectrum is unsorted or has exactly degenerate levels."""


class OrderError(BoselocError, ValueError):
    """Correlation order exceeds the particle number."""


class ZeroStateError(BoselocError, ValueError):
    """Vector, tensor or reconstructed state is identically zero."""


class EmptyEnsembleError(BoselocError, ValueError):
    """No samples to aggregate."""
