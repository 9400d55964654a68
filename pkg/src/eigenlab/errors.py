"""Exception hierarchy. Every domain error derives from :class:`EigenlabError`;
the CLI maps those to exit status 1."""


class EigenlabError(Exception):
    pass


class SolverError(EigenlabError):
    """Jacobi iteration exhausted its sweep budget."""


class SingularMatrixError(EigenlabError):
    pass


class DegenerateReferenceError(EigenlabError):
    """Relative error requested against an all-zero reference."""


class PreconditionError(EigenlabError, ValueError):
    pass


class EncodeRangeError(EigenlabError):
    pass


class DecodeError(EigenlabError):
    """Malformed token sequence. ``position`` indexes the offending token."""

    def __init__(self, position, reason):
        super().__init__(f"position {position}: {reason}")
        self.position = position
        self.reason = reason


class GenerationError(EigenlabError):
    pass


class DatasetFormatError(EigenlabError):
    def __init__(self, line, reason):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class TrainingDivergenceError(EigenlabError):
    pass
