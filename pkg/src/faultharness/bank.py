"""Recovery exemplar bank: action scripts, signature similarity, retrieval.

The shipped dictionary groups failure kinds into branches that share one
script (e.g. all auth statuses terminate); `load_bank` expands each branch
into one exemplar per member kind so pattern matching stays first-class.
"""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources

from .errors import (
    ConfigError,
    DuplicateId,
    EmptyScript,
    FullyWildcardPattern,
    HeldOutCoversClass,
    UnknownErrorClass,
)
from .taxonomy import (
    CATALOG,
    ErrorClass,
    ErrorSignature,
    message_tokens,
    status_error_class,
)

# --- recovery actions --------------------------------------------------------


@dataclass(frozen=True)
class RetryWithBackoff:
    max_attempts: int = 3
    base_delay_ms: int = 500
    cap_ms: int = 8000
    respect_retry_after: bool = False

    def __post_init__(self):
        if not 1 <= self.max_attempts <= 4:
            raise ValueError("max_attempts must be within [1, 4]")
        if self.base_delay_ms < 0 or self.cap_ms < 0:
            raise ValueError("delays must be non-negative")


@dataclass(frozen=True)
class ReformatArguments:
    hint: str


@dataclass(frozen=True)
class SwitchTool:
    strategy: str = "alternative"

    def __post_init__(self):
        if self.strategy not in ("alternative", "fallback"):
            raise ValueError(f"unknown switch strategy {self.strategy!r}")


@dataclass(frozen=True)
class RefreshCredentials:
    pass


@dataclass(frozen=True)
class ValidateAndReissue:
    check: str = "payload"

    def __post_init__(self):
        if self.check not in ("url", "payload", "headers", "params"):
            raise ValueError(f"unknown check {self.check!r}")


@dataclass(frozen=True)
class LenientParse:
    pass


@dataclass(frozen=True)
class TerminateGracefully:
    report: str = "Could not complete the step using {tool}: {error}"


@dataclass(frozen=True)
class WaitUntilHealthy:
    poll_interval_ms: int = 500
    max_wait_ms: int = 8000

    def __post_init__(self):
        if self.poll_interval_ms <= 0 or self.max_wait_ms < self.poll_interval_ms:
            raise ValueError("invalid wait bounds")


RecoveryAction = (
    RetryWithBackoff
    | ReformatArguments
    | SwitchTool
    | RefreshCredentials
    | ValidateAndReissue
    | LenientParse
    | TerminateGracefully
    | WaitUntilHealthy
)

_ACTION_TAGS: dict[str, type] = {
    "retry_with_backoff": RetryWithBackoff,
    "reformat_arguments": ReformatArguments,
    "switch_tool": SwitchTool,
    "refresh_credentials": RefreshCredentials,
    "validate_and_reissue": ValidateAndReissue,
    "lenient_parse": LenientParse,
    "terminate_gracefully": TerminateGracefully,
    "wait_until_healthy": WaitUntilHealthy,
}
_TAG_BY_TYPE = {cls: tag for tag, cls in _ACTION_TAGS.items()}

# Actions that re-execute a call and can therefore complete the step; scripts
# must end with one of these or with TerminateGracefully (never with a purely
# preparatory action).
_SUCCESS_TERMINAL = (
    RetryWithBackoff,
    SwitchTool,
    ValidateAndReissue,
    LenientParse,
    WaitUntilHealthy,
)


def action_to_json(action: RecoveryAction) -> dict:
    doc = {"action": _TAG_BY_TYPE[type(action)]}
    for name in getattr(action, "__dataclass_fields__", {}):
        doc[name] = getattr(action, name)
    return doc


def action_from_json(doc: dict) -> RecoveryAction:
    tag = doc.get("action")
    if tag not in _ACTION_TAGS:
        raise ValueError(f"unknown recovery action {tag!r}")
    params = {k: v for k, v in doc.items() if k != "action"}
    return _ACTION_TAGS[tag](**params)


# --- patterns and exemplars ---------------------------------------------------


@dataclass(frozen=True)
class SignaturePattern:
    """Error-signature template; unbound fields are wildcards."""

    error_class: ErrorClass | None = None
    kind: str | None = None
    status_code: int | None = None
    message_tokens: frozenset[str] | None = None

    def is_fully_wildcard(self) -> bool:
        return self.error_class is None and self.kind is None

    def implied_class(self) -> ErrorClass | None:
        """Bound class, or the class the bound kind maps to in the catalog."""
        if self.error_class is not None:
            return self.error_class
        if self.kind is not None:
            if self.kind in CATALOG:
                return CATALOG[self.kind].error_class
            if self.kind.startswith("http_"):
                try:
                    return status_error_class(int(self.kind.split("_", 1)[1]))
                except ValueError:
                    return None
        return None

    def to_json(self) -> dict:
        out: dict = {}
        if self.error_class is not None:
            out["error_class"] = self.error_class.value
        if self.kind is not None:
            out["kind"] = self.kind
        if self.status_code is not None:
            out["status_code"] = self.status_code
        if self.message_tokens is not None:
            out["message_tokens"] = sorted(self.message_tokens)
        return out


@dataclass(frozen=True)
class RecoveryExemplar:
    id: str
    pattern: SignaturePattern
    script: tuple[RecoveryAction, ...]
    rationale: str = ""
    dialogue_template: tuple[dict, ...] | None = None

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "pattern": self.pattern.to_json(),
            "script": [action_to_json(a) for a in self.script],
            "rationale": self.rationale,
        }
        if self.dialogue_template is not None:
            out["dialogue_template"] = list(self.dialogue_template)
        return out


@dataclass(frozen=True)
class ExemplarBank:
    exemplars: tuple[RecoveryExemplar, ...]
    version: str = "0"

    def __len__(self) -> int:
        return len(self.exemplars)

    def by_id(self, exemplar_id: str) -> RecoveryExemplar:
        for ex in self.exemplars:
            if ex.id == exemplar_id:
                return ex
        raise KeyError(exemplar_id)

    def covered_classes(self) -> set[ErrorClass]:
        return {c for ex in self.exemplars if (c := ex.pattern.implied_class())}

    def without_kinds(self, kinds: set[str]) -> "ExemplarBank":
        """Bank with every exemplar matching one of `kinds` removed.

        Raises HeldOutCoversClass if the removal empties an error class.
        """
        kept = tuple(ex for ex in self.exemplars if ex.pattern.kind not in kinds)
        pruned = ExemplarBank(exemplars=kept, version=self.version)
        missing = set(ErrorClass) - pruned.covered_classes()
        if missing:
            raise HeldOutCoversClass(
                "holding out "
                + ", ".join(sorted(kinds))
                + " empties class(es): "
                + ", ".join(sorted(c.value for c in missing))
            )
        return pruned


DEFAULT_WEIGHTS = (4, 2, 1, 1)


def similarity_distance(
    observed: ErrorSignature,
    pattern: SignaturePattern,
    weights: tuple[int, int, int, int] = DEFAULT_WEIGHTS,
) -> Fraction:
    """Weighted mismatch distance between an observed signature and a pattern.

    d = w1*[class mismatch] + w2*[kind mismatch] + w3*[status mismatch]
      + w4*(1 - Jaccard(message tokens)); wildcard pattern fields contribute 0.
    """
    if pattern.is_fully_wildcard():
        raise FullyWildcardPattern("<pattern>")
    w1, w2, w3, w4 = weights
    d = Fraction(0)
    if pattern.error_class is not None and pattern.error_class != observed.error_class:
        d += w1
    if pattern.kind is not None and pattern.kind != observed.kind:
        d += w2
    if pattern.status_code is not None and pattern.status_code != observed.status_code:
        d += w3
    if pattern.message_tokens is not None:
        obs = message_tokens(observed.message)
        pat = pattern.message_tokens
        union = obs | pat
        jaccard = Fraction(1) if not union else Fraction(len(obs & pat), len(union))
        d += w4 * (1 - jaccard)
    return d


def retrieve_top_k(
    bank: ExemplarBank,
    observed: ErrorSignature,
    k: int = 1,
    weights: tuple[int, int, int, int] = DEFAULT_WEIGHTS,
) -> list[RecoveryExemplar]:
    """The k nearest exemplars, distance-then-id ordered (deterministic)."""
    if not bank.exemplars:
        raise ConfigError("cannot retrieve from an empty bank")
    ranked = sorted(
        bank.exemplars,
        key=lambda ex: (similarity_distance(observed, ex.pattern, weights), ex.id),
    )
    return ranked[: max(1, k)]


def retrieve(
    bank: ExemplarBank,
    observed: ErrorSignature,
    weights: tuple[int, int, int, int] = DEFAULT_WEIGHTS,
) -> RecoveryExemplar:
    """The nearest exemplar; ties broken by lexicographically smallest id."""
    return retrieve_top_k(bank, observed, 1, weights)[0]


# --- dictionary loading -------------------------------------------------------


def _kind_status(kind: str) -> int | None:
    if kind.startswith("http_"):
        tail = kind.split("_", 1)[1]
        if tail.isdigit():
            return int(tail)
    return None


def _expand_entry(entry: dict) -> list[RecoveryExemplar]:
    entry_id = str(entry.get("id", "<missing id>"))
    pattern_doc = dict(entry.get("pattern", {}))
    class_label = pattern_doc.get("error_class")
    error_class = None
    if class_label is not None:
        try:
            error_class = ErrorClass.parse(class_label)
        except ValueError:
            raise UnknownErrorClass(entry_id, class_label) from None

    script_docs = entry.get("script", [])
    if not script_docs:
        raise EmptyScript(entry_id)
    script = tuple(action_from_json(doc) for doc in script_docs)
    if not isinstance(script[-1], (TerminateGracefully, *_SUCCESS_TERMINAL)):
        raise ValueError(
            f"{entry_id}: script must end with TerminateGracefully or a "
            "success-terminal action"
        )

    rationale = entry.get("rationale", "")
    template = entry.get("dialogue_template")
    template_t = tuple(template) if template else None

    kinds: list[str | None]
    if "kinds" in entry:
        kinds = list(entry["kinds"])
    else:
        kinds = [pattern_doc.get("kind")]

    messages: dict = pattern_doc.get("messages", {})
    exemplars = []
    for kind in kinds:
        tokens = None
        if kind is not None and kind in messages:
            tokens = message_tokens(messages[kind])
        elif pattern_doc.get("message_tokens") is not None:
            tokens = frozenset(pattern_doc["message_tokens"])
        status = pattern_doc.get("status_code")
        if status is None and kind is not None:
            status = _kind_status(kind)
        pattern = SignaturePattern(
            error_class=error_class,
            kind=kind,
            status_code=status,
            message_tokens=tokens,
        )
        if pattern.is_fully_wildcard():
            raise FullyWildcardPattern(entry_id)
        ex_id = entry_id if len(kinds) == 1 else f"{entry_id}__{kind}"
        exemplars.append(
            RecoveryExemplar(
                id=ex_id,
                pattern=pattern,
                script=script,
                rationale=rationale,
                dialogue_template=template_t,
            )
        )
    return exemplars


def parse_bank(doc: dict) -> ExemplarBank:
    exemplars: list[RecoveryExemplar] = []
    seen: set[str] = set()
    for entry in doc.get("exemplars", []):
        for ex in _expand_entry(entry):
            if ex.id in seen:
                raise DuplicateId(ex.id)
            seen.add(ex.id)
            exemplars.append(ex)
    bank = ExemplarBank(exemplars=tuple(exemplars), version=str(doc.get("version", "0")))
    missing = set(ErrorClass) - bank.covered_classes()
    if missing:
        raise ConfigError(
            "bank does not cover class(es): " + ", ".join(sorted(c.value for c in missing))
        )
    return bank


def load_bank(path) -> ExemplarBank:
    """Load and validate a dictionary file, expanding branch groups."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return parse_bank(doc)


def load_shipped_bank() -> ExemplarBank:
    doc = json.loads(
        resources.files("faultharness.data")
        .joinpath("recovery_bank.json")
        .read_text("utf-8")
    )
    return parse_bank(doc)


# --- legacy-format converter ---------------------------------------------------

_CLASS_DEFAULT_SCRIPT: dict[ErrorClass, tuple[RecoveryAction, ...]] = {
    ErrorClass.ARGUMENT_HALLUCINATION: (
        ReformatArguments(hint="correct the request formatting per the tool docs"),
        ValidateAndReissue(check="payload"),
        TerminateGracefully(),
    ),
    ErrorClass.INVALID_TOOL_INVOCATION: (TerminateGracefully(),),
    ErrorClass.TOOL_HALLUCINATION: (
        ValidateAndReissue(check="url"),
        SwitchTool(strategy="alternative"),
        TerminateGracefully(),
    ),
    ErrorClass.PARTIAL_EXECUTION: (
        ValidateAndReissue(check="payload"),
        TerminateGracefully(),
    ),
    ErrorClass.OUTPUT_HALLUCINATION: (
        RetryWithBackoff(max_attempts=2),
        LenientParse(),
        TerminateGracefully(),
    ),
    ErrorClass.INVALID_INTERMEDIATE_REASONING: (
        ValidateAndReissue(check="params"),
        TerminateGracefully(),
    ),
    ErrorClass.REENTRANT_FAILURE: (
        RetryWithBackoff(max_attempts=3, respect_retry_after=True),
        TerminateGracefully(),
    ),
}


def _branch_kinds(branch_key: str) -> list[str]:
    parts = branch_key.split("_")
    if all(p.isdigit() for p in parts):
        return [f"http_{p}" for p in parts]
    return [branch_key]


def _branch_class(kinds: list[str]) -> ErrorClass:
    kind = kinds[0]
    if kind in CATALOG:
        return CATALOG[kind].error_class
    status = _kind_status(kind)
    if status is not None:
        return status_error_class(status)
    raise ConfigError(f"cannot infer error class for branch kind {kind!r}")


def convert_legacy_dictionary(source_text: str) -> dict:
    """Convert a Python-literal branch dictionary into the canonical format.

    Accepts either a bare dict literal / JSON object, or a module snippet
    assigning one (``recovery_paths = {...}``). Branch keys name member kinds
    ("400_422" -> http_400/http_422); each branch becomes one group entry
    whose script is the default script for the branch's error class and whose
    dialogue becomes the group's dialogue_template.
    """
    text = source_text.strip()
    branches = None
    if text.startswith("{"):
        try:
            branches = json.loads(text)
        except json.JSONDecodeError:
            branches = ast.literal_eval(text)
    else:
        module = ast.parse(text)
        for node in module.body:
            if isinstance(node, ast.Assign):
                branches = ast.literal_eval(node.value)
                break
        if branches is None:
            raise ConfigError("no dictionary assignment found in source")
    if not isinstance(branches, dict):
        raise ConfigError("legacy dictionary must be a mapping of branch -> turns")

    exemplars = []
    for branch_key, turns in branches.items():
        kinds = _branch_kinds(str(branch_key))
        error_class = _branch_class(kinds)
        rationale = ""
        for turn in turns:
            value = turn.get("value", "")
            if turn.get("from", "").lower() == "assistant" and value:
                rationale = value.split("\n")[0][:240]
                break
        entry = {
            "id": f"branch_{branch_key}",
            "kinds": kinds,
            "pattern": {"error_class": error_class.value},
            "script": [action_to_json(a) for a in _CLASS_DEFAULT_SCRIPT[error_class]],
            "rationale": rationale,
            "dialogue_template": [
                {"from": t.get("from", ""), "value": t.get("value", "")} for t in turns
            ],
        }
        exemplars.append(entry)
    return {"version": "converted-1", "exemplars": exemplars}
