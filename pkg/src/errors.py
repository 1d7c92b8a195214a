"""
Exception hierarchy for the simulator-in-the-loop estimator.

Every error raised on purpose by the package derives from SilError, so the
command-line entry point can report it and exit with a nonzero status.
"""

from typing import Optional


class SilError(Exception):
    """Base class for all package errors"""


# =============================================================================
# Configuration & Numerics
# =============================================================================

class ConfigurationError(SilError):
    """Invalid parameters, labels, templates or dimensions"""


class DomainError(SilError):
    """Input outside the mathematical domain of a model function"""


class IntegrationError(SilError):
    """Non-finite value produced by a model step"""

    def __init__(self, channel: str, time: Optional[float] = None):
        self.channel = channel
        self.time = time
        where = f" at t={time:.3f}s" if time is not None else ""
        super().__init__(f"non-finite value in channel '{channel}'{where}")


# =============================================================================
# Observer
# =============================================================================

class PredictorError(SilError):
    """Predictor failure, tagged with the step index it happened at"""

    def __init__(self, step: int, cause: Exception):
        self.step = step
        self.cause = cause
        super().__init__(f"predictor failed at step {step}: {cause}")


class ObserverDivergenceError(SilError):
    """Augmented state became non-finite during an observer run"""

    def __init__(self, step: int, channel: str):
        self.step = step
        self.channel = channel
        super().__init__(f"observer diverged at step {step} (channel '{channel}')")


# =============================================================================
# Datasets
# =============================================================================

class DatasetError(SilError):
    """Base class for dataset schema and file errors"""


class MissingChannelError(DatasetError):
    def __init__(self, channel: str, role: str = ""):
        self.channel = channel
        self.role = role
        suffix = f" required for role '{role}'" if role else ""
        super().__init__(f"missing channel '{channel}'{suffix}")


class InconsistentLengthError(DatasetError):
    def __init__(self, channel: str, expected: int, found: int):
        self.channel = channel
        super().__init__(
            f"channel '{channel}' has {found} values, expected {expected}"
        )


class MalformedRowError(DatasetError):
    def __init__(self, row: int, column: str, value: object):
        self.row = row
        self.column = column
        super().__init__(f"malformed value {value!r} in column '{column}' at row {row}")


class EmptyDatasetError(DatasetError):
    """File carries a header but no samples"""


# =============================================================================
# External predictor bridge
# =============================================================================

class BridgeError(SilError):
    """Base class for wire protocol failures; all are fatal to a run"""


class HandshakeError(BridgeError):
    """Malformed or missing declaration record"""


class VersionMismatchError(HandshakeError):
    def __init__(self, expected: str, received: str):
        self.expected = expected
        self.received = received
        super().__init__(f"protocol version mismatch: expected {expected}, got {received}")


class BridgeTimeoutError(BridgeError):
    """No record received within the configured timeout"""


class DimensionError(BridgeError):
    def __init__(self, field: str, expected: int, found: int):
        self.field = field
        super().__init__(f"field '{field}' has length {found}, expected {expected}")


class OutOfOrderError(BridgeError):
    def __init__(self, expected: int, received: int):
        self.expected = expected
        self.received = received
        super().__init__(f"step index {received} received, expected {expected}")


class StreamClosedError(BridgeError):
    def __init__(self, last_step: Optional[int]):
        self.last_step = last_step
        super().__init__(f"stream closed by peer (last good step: {last_step})")


class RemoteError(BridgeError):
    """Error record sent by the remote predictor"""

    def __init__(self, message: str, kind: str = "protocol"):
        self.kind = kind
        super().__init__(f"remote {kind} error: {message}")


# =============================================================================
# Tuning
# =============================================================================

class TuningAbortedError(SilError):
    def __init__(self, message: str, history_path: Optional[str] = None):
        self.history_path = history_path
        where = f" (partial history: {history_path})" if history_path else ""
        super().__init__(f"{message}{where}")
