"""Exception types raised across the toolkit.

Every exception carries a stable machine-readable ``code`` so CLI output
and wire acks can name the failure without string-matching messages.
"""


class CarbonLedgerError(Exception):
    code = "error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)


class UnsupportedPlatformError(CarbonLedgerError):
    """The requested power counter interface is absent on this machine."""

    code = "unsupported-platform"


class MalformedReplayError(CarbonLedgerError):
    code = "malformed-replay-file"

    def __init__(self, path: str, line_no: int, reason: str):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {reason}")


class InsufficientSamplesError(CarbonLedgerError):
    code = "insufficient-samples"


class InvalidPueError(CarbonLedgerError):
    code = "invalid-pue"


class EpochAlreadyOpenError(CarbonLedgerError):
    code = "epoch-already-open"


class NoOpenEpochError(CarbonLedgerError):
    code = "no-open-epoch"


class EmptyLedgerError(CarbonLedgerError):
    code = "empty-ledger"


class TotalLessThanMeasuredError(CarbonLedgerError):
    code = "total-less-than-measured"


class UnknownRegionError(CarbonLedgerError):
    code = "unknown-region-no-default"


class NetworkTimeoutError(CarbonLedgerError):
    code = "network-timeout"


class MalformedResponseError(CarbonLedgerError):
    code = "malformed-response"


class HttpStatusError(CarbonLedgerError):
    code = "http-status-error"

    def __init__(self, status: int):
        self.status = status
        super().__init__(f"endpoint returned HTTP {status}")


class InvalidFactorError(CarbonLedgerError):
    code = "invalid-factor"


class InvalidPerCapitaError(CarbonLedgerError):
    code = "invalid-per-capita"


class InvalidAcceptanceError(CarbonLedgerError):
    code = "invalid-acceptance"


class ForecastTooShortError(CarbonLedgerError):
    code = "forecast-too-short"


class EmptyFeasibleSetError(CarbonLedgerError):
    code = "empty-feasible-set"


class SpawnFailureError(CarbonLedgerError):
    code = "spawn-failure"


class TelemetryUnavailableError(CarbonLedgerError):
    code = "telemetry-unavailable"
