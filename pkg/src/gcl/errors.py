"""Exception types raised across the package."""


class GCLError(Exception):
    """Base class for all package errors."""


class ShapeError(GCLError, ValueError):
    pass


class ContractError(GCLError, ValueError):
    """A documented precondition was violated by the caller."""


class DegenerateInputError(ContractError):
    pass


class LabelError(ContractError):
    pass


class EmptyBufferError(GCLError, LookupError):
    pass


class ParseError(GCLError, ValueError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class IntegrityError(GCLError, ValueError):
    pass


class MissingFileError(GCLError, FileNotFoundError):
    pass


class VersionError(GCLError, ValueError):
    pass


class VariantError(GCLError, ValueError):
    pass


class ConfigError(GCLError, ValueError):
    pass
