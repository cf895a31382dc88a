"""Exception hierarchy shared by all arwlab modules."""


class ARWError(Exception):
    """Base class for every error raised by arwlab."""


class IllegalTopple(ARWError):
    """Toppling requested at a stable site (or at a frozen endpoint)."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


class OutOfRegion(ARWError):
    pass


class OdometerOverflow(ARWError):
    pass


class NoActiveParticles(ARWError):
    pass


class WindowExcludesOrigin(ARWError):
    pass


class StateSpaceTooLarge(ARWError):
    pass


class InvalidDensities(ARWError):
    pass


class DomainError(ARWError, ValueError):
    pass


class NonPositiveLambda(DomainError):
    pass


class ParseError(ARWError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnknownKey(ParseError):
    pass
