"""Exception types shared across the harness."""

from __future__ import annotations


class FaultHarnessError(Exception):
    """Base class for all harness errors."""


class ConfigError(FaultHarnessError):
    """Invalid or missing configuration (flags, env vars, field values)."""


# --- recovery bank ----------------------------------------------------------

class BankError(FaultHarnessError):
    """Base class for dictionary/bank validation failures."""

    def __init__(self, exemplar_id: str, message: str):
        super().__init__(f"{exemplar_id}: {message}")
        self.exemplar_id = exemplar_id


class DuplicateId(BankError):
    def __init__(self, exemplar_id: str):
        super().__init__(exemplar_id, "duplicate exemplar id")


class EmptyScript(BankError):
    def __init__(self, exemplar_id: str):
        super().__init__(exemplar_id, "exemplar script is empty")


class FullyWildcardPattern(BankError):
    def __init__(self, exemplar_id: str):
        super().__init__(exemplar_id, "pattern binds neither error_class nor kind")


class UnknownErrorClass(BankError):
    def __init__(self, exemplar_id: str, label: str):
        super().__init__(exemplar_id, f"unknown error class {label!r}")
        self.label = label


# --- simulator / agents -----------------------------------------------------

class AgentProtocolError(FaultHarnessError):
    """Agent emitted text that does not parse under the action grammar."""


class TransportError(FaultHarnessError):
    """Network-level failure talking to a remote endpoint."""


class ProtocolError(FaultHarnessError):
    """Remote endpoint answered with a malformed wire payload."""


# --- trace pipeline ---------------------------------------------------------

class MalformedTrace(FaultHarnessError):
    """Trace violates role ordering or the action grammar."""


class TeacherFailure(FaultHarnessError):
    """Repair teacher could not produce a valid continuation."""


class InsufficientTraces(FaultHarnessError):
    """A trace pool is too small for the requested corpus composition."""


# --- benchgen ----------------------------------------------------------------

class PoolExhausted(FaultHarnessError):
    """Task pool too small for the requested suite size after dedup."""


class HeldOutCoversClass(FaultHarnessError):
    """Holding out these kinds would strip an entire class from the bank."""


# --- metrics ------------------------------------------------------------------

class EpisodeMismatch(FaultHarnessError):
    """Trajectory and episode card do not belong together."""


class EmptySuite(FaultHarnessError):
    """No grades to aggregate."""
