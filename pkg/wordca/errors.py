from typing import Any


class WordcaError(Exception):
    """Base class for every error raised by wordca."""


class CorpusDecodeError(WordcaError, ValueError):
    def __init__(self, offset: int, encoding: str, reason: str) -> None:
        super().__init__(f"Cannot decode corpus as {encoding} at byte offset {offset}: {reason}")
        self.offset = offset
        self.encoding = encoding


class ConfigurationError(WordcaError, ValueError):
    pass


class DegenerateInputError(WordcaError, ValueError):
    pass


class SingularityError(WordcaError, ZeroDivisionError):
    def __init__(self, axis: str, index: int) -> None:
        super().__init__(f"Zero margin for {axis} {index}; drop empty rows and columns before transforming")
        self.axis = axis
        self.index = index


class UnsupportedCoordinatesError(WordcaError, ValueError):
    pass


class DatasetParseError(WordcaError, ValueError):
    def __init__(self, path: str, line_number: int, reason: str) -> None:
        super().__init__(f"{path}:{line_number}: {reason}")
        self.path = path
        self.line_number = line_number


class InsufficientDataError(WordcaError, ValueError):
    pass


class UndefinedSimilarityError(InsufficientDataError):
    pass


class ConvergenceError(WordcaError, RuntimeError):
    pass


class StageError(WordcaError, RuntimeError):
    def __init__(self, stage: str, cause: BaseException, partial_manifest: Any = None) -> None:
        super().__init__(f"Stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.partial_manifest = partial_manifest


class RankWarning(UserWarning):
    pass
