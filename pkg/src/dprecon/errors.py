"""Exception types shared across the toolkit."""


class DpreconError(Exception):
    """Base class for all toolkit errors."""


class EmbeddingError(DpreconError):
    """Embedding file parsing or nearest-neighbor query failure."""


class SanitizeError(DpreconError):
    """A sanitization mechanism could not produce output."""


class ProviderError(SanitizeError):
    """A logit provider failed after the configured number of attempts."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class NerError(DpreconError):
    """PII tagging failure."""


class NerTransportError(NerError):
    """The external NER service could not be reached."""


class NerMappingError(NerError):
    """The external NER service replied with an unusable payload."""


class MetricsError(DpreconError):
    """Invalid input to metric aggregation."""


class GatewayError(DpreconError):
    """Chat-completion gateway failure."""


class GatewayAuthError(GatewayError):
    """Authentication rejected by the endpoint. Detail is redacted."""


class GatewayRetryError(GatewayError):
    """All retry attempts were exhausted on a transient failure."""

    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class AttackError(DpreconError):
    """Attack orchestration failure."""


class LeakageError(AttackError):
    """A prompt would have leaked the target's original text."""


class CorpusError(DpreconError):
    """Corpus file could not be loaded or split."""


class ConfigError(DpreconError):
    """Invalid run configuration."""
