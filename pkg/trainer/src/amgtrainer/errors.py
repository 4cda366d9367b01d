"""Error taxonomy mirroring the solver's exit-code convention:
usage 2, numeric failure 3, I/O and format problems 4."""


class UsageError(ValueError):
    exit_code = 2


class NumericError(RuntimeError):
    exit_code = 3


class DataError(IOError):
    exit_code = 4
