"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures to distinct
process statuses without a lookup table of its own.
"""


class DifpathError(Exception):
    exit_code = 1
    kind = "error"


class ParameterError(DifpathError, ValueError):
    exit_code = 10
    kind = "parameter"


class ContractError(DifpathError, ValueError):
    exit_code = 11
    kind = "contract"


class SizeError(ContractError):
    exit_code = 12
    kind = "size"


class SymmetryError(DifpathError, ValueError):
    exit_code = 13
    kind = "symmetry"


class NotPSDError(DifpathError, ValueError):
    exit_code = 14
    kind = "not_psd"


class InsufficientDataError(DifpathError, ValueError):
    exit_code = 15
    kind = "insufficient_data"


class DegenerateDataError(DifpathError, ValueError):
    exit_code = 16
    kind = "degenerate_data"


class DivergenceError(DifpathError, RuntimeError):
    exit_code = 17
    kind = "divergence"

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ExtractionError(DifpathError, ValueError):
    exit_code = 18
    kind = "extraction"


class FormatError(DifpathError, ValueError):
    """Malformed or truncated file; ``offset`` is the byte where parsing failed."""

    exit_code = 20
    kind = "format"

    def __init__(self, message, offset=None, path=None):
        where = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{message}{where}")
        self.offset = offset
        self.path = path


class ConfigError(DifpathError, ValueError):
    exit_code = 21
    kind = "config"


class MissingFileError(DifpathError, FileNotFoundError):
    exit_code = 22
    kind = "missing_file"
