"""Exception hierarchy shared by every drp module."""


class DrpError(Exception):
    """Base class for all drp errors."""


class InputError(DrpError):
    """Bad input data or configuration (CLI exit code 2)."""


class RuntimeFailure(DrpError):
    """Provider or runtime failure (CLI exit code 3)."""


# corpus
class CorpusIoError(InputError):
    pass


class ParseError(InputError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class PartitionError(InputError):
    pass


class UnknownUser(InputError):
    pass


# embed / retrieve
class EmptyText(InputError):
    pass


class EmptyHistory(InputError):
    pass


class ZeroVector(InputError):
    pass


class ProviderError(RuntimeFailure):
    pass


# cluster
class TooFewPoints(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class InsufficientUsers(InputError):
    pass


# llm gateway
class GatewayError(RuntimeFailure):
    pass


class Timeout(GatewayError):
    pass


class HttpError(GatewayError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status


class FixtureMiss(GatewayError):
    pass


class ProtocolError(GatewayError):
    pass


class CacheIoError(GatewayError):
    pass


# pipeline
class ExtractionParseError(RuntimeFailure):
    def __init__(self, message: str, raw_output: str = ""):
        super().__init__(message)
        self.raw_output = raw_output


class ValidationParseError(RuntimeFailure):
    pass


# metrics
class LengthMismatch(InputError):
    pass


class EmptyInput(InputError):
    pass


class MissingReference(InputError):
    pass


class SampleSetMismatch(InputError):
    pass


# uvq
class JudgeParseError(RuntimeFailure):
    pass


class DegenerateInput(InputError):
    pass
