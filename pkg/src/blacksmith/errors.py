"""Exception types. Each carries a short ``category`` used by the CLI error line."""


class ToolkitError(Exception):
    category = "error"


class ConfigError(ToolkitError, ValueError):
    category = "config"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class BoundsError(ToolkitError, IndexError):
    category = "bounds"


class NameResolutionError(ToolkitError, KeyError):
    category = "name"

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class StructuralError(ToolkitError, ValueError):
    category = "structure"


class FormatError(ToolkitError, ValueError):
    category = "format"

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DegenerateProbeError(ToolkitError, ArithmeticError):
    category = "degenerate-probe"
