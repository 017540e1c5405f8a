class AidrError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(AidrError, ValueError):
    pass


class InvalidScenarioError(AidrError, ValueError):
    pass


class IncompleteContextError(AidrError, ValueError):
    pass


class InvalidSceneError(AidrError, ValueError):
    pass


class DatasetParseError(AidrError, ValueError):
    def __init__(self, message: str, record_id: str | None = None, field: str | None = None,
                 line: int | None = None):
        where = []
        if record_id is not None:
            where.append(f"record {record_id!r}")
        if field is not None:
            where.append(f"field {field!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.record_id = record_id
        self.field = field
        self.line = line


class FormatVersionError(AidrError, ValueError):
    pass


class SequencingError(AidrError, RuntimeError):
    """A prompt step was requested before the steps it depends on ran."""


class TransportError(AidrError, RuntimeError):
    """Transient endpoint failure (network error, 429, 5xx)."""


class AuthenticationError(AidrError, RuntimeError):
    pass


class EndpointUnreachableError(AidrError, RuntimeError):
    pass


class VocabularyError(AidrError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ShapeError(AidrError, ValueError):
    pass


class InvariantError(AidrError, ValueError):
    pass


class ExtractionError(AidrError, ValueError):
    def __init__(self, raw: str):
        super().__init__(f"no option letter (A)-(H) found in {raw!r}")
        self.raw = raw


class ConfigError(AidrError, ValueError):
    pass
