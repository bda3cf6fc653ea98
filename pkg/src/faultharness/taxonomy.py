"""Closed error-class taxonomy, runtime-failure catalog, and error signatures.

The taxonomy is fixed at seven classes. The catalog maps concrete failure
kinds (HTTP statuses, timeouts, malformed bodies, ...) onto those classes and
ships as a versioned JSON file so suites and corpora can pin its version.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum, unique
from importlib import resources


@unique
class ErrorClass(Enum):
    """The seven canonical error classes for tool-using agents."""

    TOOL_HALLUCINATION = "ToolHallucination"
    ARGUMENT_HALLUCINATION = "ArgumentHallucination"
    INVALID_TOOL_INVOCATION = "InvalidToolInvocation"
    PARTIAL_EXECUTION = "PartialExecution"
    OUTPUT_HALLUCINATION = "OutputHallucination"
    INVALID_INTERMEDIATE_REASONING = "InvalidIntermediateReasoning"
    REENTRANT_FAILURE = "ReentrantFailure"

    @classmethod
    def parse(cls, label: str) -> "ErrorClass":
        for member in cls:
            if member.value == label:
                return member
        raise ValueError(f"unknown error class {label!r}")


@unique
class Manifestation(Enum):
    """How a failure is rendered into the function-turn text."""

    ERROR_PAYLOAD = "ErrorPayload"        # structured error body
    MALFORMED_OUTPUT = "MalformedOutput"  # syntactically broken body
    SILENT_FAILURE = "SilentFailure"      # empty/absent response
    PARTIAL_OUTPUT = "PartialOutput"      # truncated but valid body

    @classmethod
    def parse(cls, label: str) -> "Manifestation":
        for member in cls:
            if member.value == label:
                return member
        raise ValueError(f"unknown manifestation {label!r}")


@dataclass(frozen=True)
class FailureKind:
    """One catalog entry: a concrete runtime failure and its class."""

    identifier: str
    error_class: ErrorClass
    default_manifestation: Manifestation
    example_output: str
    http_status: int | None = None

    def __post_init__(self):
        is_http = self.identifier.startswith("http_")
        if is_http != (self.http_status is not None):
            raise ValueError(
                f"{self.identifier}: http_status present iff identifier starts with http_"
            )


UNKNOWN_KIND = "unknown"
PROTOCOL_ERROR_KIND = "protocol_error"


def load_catalog_file(path) -> tuple[str, dict[str, FailureKind]]:
    """Load a catalog JSON file; returns (version, kinds keyed by identifier)."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return _parse_catalog(doc)


def _parse_catalog(doc: dict) -> tuple[str, dict[str, FailureKind]]:
    kinds: dict[str, FailureKind] = {}
    for entry in doc["failures"]:
        kind = FailureKind(
            identifier=entry["identifier"],
            error_class=ErrorClass.parse(entry["error_class"]),
            default_manifestation=Manifestation.parse(entry["default_manifestation"]),
            example_output=entry["example_output"],
            http_status=entry.get("http_status"),
        )
        if kind.identifier in kinds:
            raise ValueError(f"duplicate catalog identifier {kind.identifier!r}")
        kinds[kind.identifier] = kind
    return str(doc.get("version", "0")), kinds


def _load_shipped_catalog() -> tuple[str, dict[str, FailureKind]]:
    doc = json.loads(
        resources.files("faultharness.data").joinpath("catalog.json").read_text("utf-8")
    )
    return _parse_catalog(doc)


CATALOG_VERSION, CATALOG = _load_shipped_catalog()

# Retry-vs-terminate partition used by the bank's scripts: auth failures must
# never be retried; rate limits and transient server faults must be.
NON_RETRYABLE_KINDS = frozenset({"http_401", "http_403", "http_407"})
RETRYABLE_KINDS = frozenset(
    {"http_429", "http_500", "http_503", "timeout", "dns_error", "malformed_json"}
)


@dataclass(frozen=True)
class ErrorSignature:
    """Canonical description of one observed runtime failure."""

    error_class: ErrorClass
    kind: str
    message: str
    tool_name: str
    turn_index: int
    status_code: int | None = None
    manifestation: Manifestation = Manifestation.ERROR_PAYLOAD

    def __post_init__(self):
        if self.turn_index < 0:
            raise ValueError("turn_index must be non-negative")
        is_http = self.kind.startswith("http_")
        if is_http and self.status_code is None:
            raise ValueError("http_* signatures require a status_code")
        if not is_http and self.status_code is not None:
            raise ValueError("status_code only allowed on http_* signatures")
        if self.status_code is not None and not 100 <= self.status_code <= 599:
            raise ValueError("status_code out of range")
        if self.manifestation is Manifestation.ERROR_PAYLOAD and not self.message:
            raise ValueError("ErrorPayload signatures carry a non-empty message")

    def to_json(self) -> dict:
        out = {
            "error_class": self.error_class.value,
            "kind": self.kind,
            "message": self.message,
            "tool_name": self.tool_name,
            "turn_index": self.turn_index,
            "manifestation": self.manifestation.value,
        }
        if self.status_code is not None:
            out["status_code"] = self.status_code
        return out

    @classmethod
    def from_json(cls, doc: dict) -> "ErrorSignature":
        return cls(
            error_class=ErrorClass.parse(doc["error_class"]),
            kind=doc["kind"],
            message=doc["message"],
            tool_name=doc["tool_name"],
            turn_index=doc["turn_index"],
            status_code=doc.get("status_code"),
            manifestation=Manifestation.parse(doc.get("manifestation", "ErrorPayload")),
        )


_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")
_DIGITS = re.compile(r"[0-9]+")


def message_tokens(message: str) -> frozenset[str]:
    """Normalized token set of a failure message.

    Lowercased, split on non-alphanumerics, digits stripped (messages embed
    volatile ids and counters that must not affect dedup or similarity).
    """
    tokens = set()
    for raw in _TOKEN_SPLIT.split(message.lower()):
        token = _DIGITS.sub("", raw)
        if token:
            tokens.add(token)
    return frozenset(tokens)


def canonical_key(sig: ErrorSignature) -> str:
    """Stable dedup key: lowercased kind + status + sorted message tokens."""
    status = "" if sig.status_code is None else str(sig.status_code)
    return f"{sig.kind.lower()}|{status}|{' '.join(sorted(message_tokens(sig.message)))}"


# Known status → class assignments follow retry-vs-terminate semantics; the
# range fallback covers statuses outside the shipped catalog.
_STATUS_CLASS: dict[int, ErrorClass] = {
    400: ErrorClass.ARGUMENT_HALLUCINATION,
    402: ErrorClass.INVALID_TOOL_INVOCATION,
    401: ErrorClass.INVALID_TOOL_INVOCATION,
    403: ErrorClass.INVALID_TOOL_INVOCATION,
    404: ErrorClass.TOOL_HALLUCINATION,
    405: ErrorClass.INVALID_TOOL_INVOCATION,
    406: ErrorClass.INVALID_TOOL_INVOCATION,
    407: ErrorClass.INVALID_TOOL_INVOCATION,
    408: ErrorClass.REENTRANT_FAILURE,
    409: ErrorClass.INVALID_INTERMEDIATE_REASONING,
    410: ErrorClass.TOOL_HALLUCINATION,
    412: ErrorClass.INVALID_INTERMEDIATE_REASONING,
    413: ErrorClass.ARGUMENT_HALLUCINATION,
    414: ErrorClass.ARGUMENT_HALLUCINATION,
    415: ErrorClass.ARGUMENT_HALLUCINATION,
    422: ErrorClass.ARGUMENT_HALLUCINATION,
    425: ErrorClass.REENTRANT_FAILURE,
    428: ErrorClass.INVALID_INTERMEDIATE_REASONING,
    429: ErrorClass.REENTRANT_FAILURE,
    431: ErrorClass.ARGUMENT_HALLUCINATION,
    451: ErrorClass.INVALID_TOOL_INVOCATION,
    501: ErrorClass.INVALID_TOOL_INVOCATION,
    505: ErrorClass.INVALID_TOOL_INVOCATION,
}


def status_error_class(status: int) -> ErrorClass:
    if status in _STATUS_CLASS:
        return _STATUS_CLASS[status]
    if 500 <= status <= 599:
        return ErrorClass.REENTRANT_FAILURE
    return ErrorClass.INVALID_TOOL_INVOCATION


def _looks_like_success(body: dict) -> bool:
    # the error slot is the failure marker; bodies without one (or with an
    # empty one) are ordinary payloads even if they carry a "status" field
    return not body.get("error")


def detect_failure(raw: str, tool_name: str, turn_index: int) -> ErrorSignature | None:
    """Classify `raw` if it is a failure; None for a normal tool response.

    A normal response is a JSON object whose "error" slot is empty or absent
    and which carries no status marker.
    """
    stripped = raw.strip()
    if not stripped:
        return ErrorSignature(
            error_class=ErrorClass.INVALID_TOOL_INVOCATION,
            kind=UNKNOWN_KIND,
            message="",
            tool_name=tool_name,
            turn_index=turn_index,
            manifestation=Manifestation.SILENT_FAILURE,
        )
    try:
        body = json.loads(stripped)
    except (json.JSONDecodeError, ValueError):
        return _classify_unparseable(stripped, tool_name, turn_index)
    if isinstance(body, dict):
        if _looks_like_success(body):
            return None
        return _classify_error_body(body, stripped, tool_name, turn_index)
    # bare scalars/arrays are not something the renderer emits
    return None


def classify_raw_failure(raw: str, tool_name: str, turn_index: int) -> ErrorSignature:
    """Total classifier: failures map to a signature, anything else to "unknown".

    Round-trip property: text produced by the simulator's own renderer (at the
    kind's default manifestation) classifies back to the injected kind.
    """
    sig = detect_failure(raw, tool_name, turn_index)
    if sig is not None:
        return sig
    return ErrorSignature(
        error_class=ErrorClass.INVALID_TOOL_INVOCATION,
        kind=UNKNOWN_KIND,
        message=raw.strip()[:200] or "unclassified output",
        tool_name=tool_name,
        turn_index=turn_index,
    )


def _classify_unparseable(text: str, tool_name: str, turn_index: int) -> ErrorSignature:
    lowered = text.lower()
    kind = None
    if "timeout" in lowered:
        kind = "timeout"
    elif "getaddrinfo" in lowered or "connectionerror" in lowered:
        kind = "dns_error"
    elif "syntaxerror" in lowered and ("json" in lowered or "parse" in lowered):
        kind = "malformed_json"
    elif "validationerror" in lowered or "is not of type" in lowered:
        kind = "schema_violation"
    if kind is not None:
        return ErrorSignature(
            error_class=CATALOG[kind].error_class,
            kind=kind,
            message=text[:200],
            tool_name=tool_name,
            turn_index=turn_index,
        )
    if text[0] in "{[":
        # unparseable JSON-looking text: a truncated/corrupted body
        return ErrorSignature(
            error_class=ErrorClass.OUTPUT_HALLUCINATION,
            kind="malformed_json",
            message=text[:200],
            tool_name=tool_name,
            turn_index=turn_index,
            manifestation=Manifestation.MALFORMED_OUTPUT,
        )
    return ErrorSignature(
        error_class=ErrorClass.INVALID_TOOL_INVOCATION,
        kind=UNKNOWN_KIND,
        message=text[:200],
        tool_name=tool_name,
        turn_index=turn_index,
    )


def _classify_error_body(
    body: dict, raw: str, tool_name: str, turn_index: int
) -> ErrorSignature:
    error_text = body.get("error") or ""
    status = body.get("status")
    if isinstance(status, int) and 100 <= status <= 599:
        return ErrorSignature(
            error_class=status_error_class(status),
            kind=f"http_{status}",
            message=error_text or f"HTTP {status}",
            tool_name=tool_name,
            turn_index=turn_index,
            status_code=status,
        )
    lowered = error_text.lower()
    manifestation = Manifestation.ERROR_PAYLOAD
    if "partial" in lowered or "truncat" in lowered or "interrupted" in lowered:
        kind, error_class = "partial_output", ErrorClass.PARTIAL_EXECUTION
        if "response" in body:
            manifestation = Manifestation.PARTIAL_OUTPUT
    elif "state conflict" in lowered or "contradict" in lowered:
        kind, error_class = "inconsistent_state", ErrorClass.INVALID_INTERMEDIATE_REASONING
    elif "invalid action format" in lowered:
        kind, error_class = PROTOCOL_ERROR_KIND, ErrorClass.INVALID_INTERMEDIATE_REASONING
    elif "not found" in lowered or "does not exist" in lowered:
        kind, error_class = "tool_not_found", ErrorClass.TOOL_HALLUCINATION
    else:
        kind, error_class = UNKNOWN_KIND, ErrorClass.INVALID_TOOL_INVOCATION
    return ErrorSignature(
        error_class=error_class,
        kind=kind,
        message=error_text or raw[:200],
        tool_name=tool_name,
        turn_index=turn_index,
        manifestation=manifestation,
    )
