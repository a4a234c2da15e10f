class SdiotError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(SdiotError, ValueError):
    """Invalid topology, adversary script or scenario configuration."""

    def __init__(self, message: str = "", field: str | None = None):
        super().__init__(message)
        self.field = field


class EccError(SdiotError, ValueError):
    """Off-curve input, degenerate shared secret or bad point encoding."""


class EncodingError(SdiotError, ValueError):
    """A southbound frame could not be encoded or decoded."""


class FlowModError(SdiotError):
    """A flow-table modification was rejected by the switch."""


class RegistrationError(SdiotError):
    """Device registration or credential issuance refused."""


class KeyRevokedError(SdiotError):
    """Operation attempted with a revoked or superseded key."""


class CredentialExpiredError(SdiotError):
    """Credential used outside of its validity range."""


class AuthError(SdiotError):
    """Authentication session refused or failed."""


class AggregationError(SdiotError):
    """Secure aggregation aborted; no partial result is released."""


class TrustError(SdiotError, ValueError):
    """Trust evaluation is undefined for the given input."""


class ScenarioError(ConfigError):
    """Scenario file rejected; carries the offending line and field."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message, field)
        self.line = line


class InvariantError(SdiotError):
    """A run finished but broke one of its bookkeeping invariants."""
