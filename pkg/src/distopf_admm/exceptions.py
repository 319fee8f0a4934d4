"""Exception hierarchy shared by the library and the CLI."""


class DistOPFError(Exception):
    """Base class for all errors raised by this package."""


class FeederSyntaxError(DistOPFError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"syntax error at line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class FeederSchemaError(DistOPFError):
    def __init__(self, path: str, message: str):
        super().__init__(f"schema violation at {path}: {message}")
        self.path = path


class FeederValidationError(DistOPFError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        lines = "\n".join(f"  {d}" for d in self.diagnostics)
        super().__init__(f"feeder failed validation:\n{lines}")


class SubsystemError(DistOPFError):
    """An error attributable to one subsystem ``s``."""

    def __init__(self, subsystem: int, message: str):
        super().__init__(f"subsystem {subsystem}: {message}")
        self.subsystem = subsystem


class InfeasibleSubsystemError(SubsystemError):
    pass


class SingularSubsystemError(SubsystemError):
    pass


class SubsystemExecutionError(SubsystemError):
    """A worker body failed while processing a subsystem."""


class OracleSizeError(DistOPFError):
    pass
