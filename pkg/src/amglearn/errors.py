"""Exception types shared across the package.

The CLI maps these onto process exit codes: usage errors exit 2,
numeric/setup/solver failures exit 3, format and I/O failures exit 4.
"""


class UsageError(ValueError):
    """Caller violated a precondition (dimension mismatch, bad argument)."""


class PatternError(UsageError):
    """A sparsity-pattern contract was violated (entry outside the allowed pattern)."""


class SetupError(RuntimeError):
    """Hierarchy construction failed (zero diagonal, aggregation stall)."""


class SolverError(RuntimeError):
    """Iteration-time failure (zero diagonal in a smoother, invalid state)."""


class InferenceError(RuntimeError):
    """GNN forward pass produced non-finite values; message names the stage."""


class FormatError(IOError):
    """On-disk artifact malformed: bad magic/version, shape mismatch, truncation."""
