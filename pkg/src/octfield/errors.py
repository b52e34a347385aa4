"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class OctFieldError(Exception):
    exit_code = 1


class UsageError(OctFieldError):
    exit_code = 1


class MeshIOError(OctFieldError):
    exit_code = 2


class MeshFormatError(MeshIOError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ContainerError(MeshIOError):
    pass


class NumericFaultError(OctFieldError):
    exit_code = 3


class DomainError(OctFieldError):
    exit_code = 4


class EmptyInputError(DomainError):
    pass


class DegenerateInputError(DomainError):
    pass


class OracleUnavailableError(DomainError):
    def __init__(self, bad_edges):
        super().__init__(f"mesh is not watertight: {bad_edges} edges not shared by exactly 2 faces")
        self.bad_edges = bad_edges


class SamplingFailureError(DomainError):
    pass


class DimensionError(DomainError):
    pass


class MetricUndefinedError(DomainError):
    pass
