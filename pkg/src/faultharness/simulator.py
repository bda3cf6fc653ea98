"""Episode execution: scripted tools, deterministic fault injection, simulated
time, retry budgets, and trajectory logging.

World model for injected faults:

* transient kinds (rate limits, 5xx, timeouts, DNS, malformed bodies) clear
  after a seeded number of failed identical retries (0-2, always within the
  default 3-retry budget);
* structural kinds clear only once the agent emits a recovery action of the
  kind's fixing family (reformat/validate for argument errors, lenient parse
  for schema violations, ...);
* auth failures (401/403/407) and missing resources (404) never clear on the
  same call; the correct moves are graceful termination and tool switching.

The clock is simulated and integer-valued; nothing ever sleeps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .bank import (
    ExemplarBank,
    RecoveryAction,
    RetryWithBackoff,
    TerminateGracefully,
    WaitUntilHealthy,
    _TAG_BY_TYPE,
)
from .episode import (
    Abandoned,
    Finished,
    GracefulFailure,
    InjectionPlan,
    ROLE_ASSISTANT,
    ROLE_FUNCTION,
    ROLE_SYSTEM,
    ROLE_USER,
    StepBudgetExhausted,
    Trajectory,
    Turn,
)
from .errors import ConfigError, TransportError
from .protocol import (
    Finish,
    GiveUp,
    ProtocolViolation,
    RecoveryStep,
    ToolCall,
    render_action,
)
from .seeds import derive_seed, rng_for
from .taxonomy import (
    CATALOG,
    ErrorClass,
    ErrorSignature,
    FailureKind,
    Manifestation,
    detect_failure,
)

SYSTEM_PROMPT = (
    "You are a tool-using assistant. Use the provided tools to complete the "
    "task. Respond in the Thought/Action/Action Input format; finish with the "
    "Finish action. Prefix corrective steps after tool failures with "
    "\"Recovery:\" and never claim success for data you did not obtain."
)

PROTOCOL_ERROR_BODY = (
    '{"error": "Invalid action format: expected Thought/Action/Action Input structure"}'
)


# --- tools ---------------------------------------------------------------------


def canonical_call_key(name: str, arguments: dict) -> str:
    """Tool name + sorted, whitespace-normalized argument JSON."""
    args = json.dumps(arguments, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return f"{name}({args})"


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    parameters: dict
    scripted_responses: dict[str, str]
    capability: str = ""

    def capability_tag(self) -> str:
        return self.capability or self.name

    def first_response(self) -> str:
        """The tool's representative normal payload (first scripted response)."""
        for payload in self.scripted_responses.values():
            return payload
        return "{}"

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "parameters": self.parameters,
            "scripted_responses": self.scripted_responses,
            "capability": self.capability,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ToolSpec":
        return cls(
            name=doc["name"],
            description=doc.get("description", ""),
            parameters=doc.get("parameters", {}),
            scripted_responses=doc.get("scripted_responses", {}),
            capability=doc.get("capability", ""),
        )


@dataclass(frozen=True)
class ToolRegistry:
    tools: tuple[ToolSpec, ...]

    def __post_init__(self):
        names = [t.name for t in self.tools]
        if len(names) != len(set(names)):
            raise ConfigError("tool names must be unique within a registry")

    def __len__(self) -> int:
        return len(self.tools)

    def get(self, name: str) -> ToolSpec | None:
        for tool in self.tools:
            if tool.name == name:
                return tool
        return None

    def alternative_for(self, name: str) -> ToolSpec | None:
        """Another registered tool sharing the capability tag, if any."""
        primary = self.get(name)
        if primary is None:
            return None
        for tool in self.tools:
            if tool.name != name and tool.capability_tag() == primary.capability_tag():
                return tool
        return None

    def to_json(self) -> list[dict]:
        return [t.to_json() for t in self.tools]

    @classmethod
    def from_json(cls, docs: list[dict]) -> "ToolRegistry":
        return cls(tools=tuple(ToolSpec.from_json(d) for d in docs))


def wrap_response(payload: str) -> str:
    """Standard function-turn wrapper for successful tool output."""
    return json.dumps(
        {"error": "", "response": payload}, sort_keys=True, separators=(",", ":"),
        ensure_ascii=False,
    )


# --- configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    max_steps: int = 20
    retry_budget_per_error: int = 3
    turn_cost_ms: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_steps < 3:
            raise ConfigError("max_steps must be >= 3")
        if not 1 <= self.retry_budget_per_error <= 4:
            raise ConfigError("retry_budget_per_error must be within [1, 4]")
        if self.turn_cost_ms < 0:
            raise ConfigError("turn_cost_ms must be non-negative")


class SimClock:
    """Simulated millisecond clock; only ever moves forward."""

    def __init__(self, start_ms: int = 0):
        self._now = start_ms

    @property
    def now(self) -> int:
        return self._now

    def advance(self, delta_ms: int) -> int:
        if delta_ms < 0:
            raise ValueError("cannot advance the clock backwards")
        self._now += delta_ms
        return self._now


# --- failure rendering --------------------------------------------------------------


def render_failure(
    kind: FailureKind, manifestation: Manifestation, tool: ToolSpec, seed: int
) -> str:
    """Deterministic failure text for (kind, manifestation, tool, seed)."""
    if manifestation is Manifestation.SILENT_FAILURE:
        return ""
    if manifestation is Manifestation.ERROR_PAYLOAD:
        return kind.example_output
    if manifestation is Manifestation.MALFORMED_OUTPUT:
        base = wrap_response(tool.first_response())
        cut = rng_for(seed, 11).randint(1, len(base) - 1)
        return base[:cut]
    # PartialOutput: first half of the normal payload's top-level fields,
    # delivered under a wrapper that marks the truncation.
    try:
        payload = json.loads(tool.first_response())
    except json.JSONDecodeError:
        payload = {}
    if isinstance(payload, dict):
        keys = list(payload)[: len(payload) // 2]
        partial = {k: payload[k] for k in keys}
    else:
        partial = {}
    return json.dumps(
        {
            "error": "Partial response: transfer interrupted before completion",
            "response": json.dumps(partial, sort_keys=True, separators=(",", ":")),
        },
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )


# --- backoff -----------------------------------------------------------------------


def advance_backoff(
    clock: SimClock,
    attempt_number: int,
    policy: RetryWithBackoff,
    retry_after_ms: int | None,
    seed: int,
) -> int:
    """Advance the clock for one retry wait; returns the new simulated time.

    Honors Retry-After exactly when the policy says to; otherwise draws a
    full-jitter delay uniform over [0, min(cap, base * 2^(attempt-1))].
    """
    if attempt_number < 1:
        raise ValueError("attempt_number must be >= 1")
    if retry_after_ms is not None and policy.respect_retry_after:
        delay = retry_after_ms
    else:
        bound = min(policy.cap_ms, policy.base_delay_ms * 2 ** (attempt_number - 1))
        delay = rng_for(seed, attempt_number).randint(0, bound)
    return clock.advance(delay)


# --- fault world ----------------------------------------------------------------------

# Transient kinds: (min, max) failing retries before the fault clears.
TRANSIENT_PERSISTENCE: dict[str, tuple[int, int]] = {
    "http_429": (0, 1),
    "http_500": (1, 2),
    "http_503": (1, 2),
    "timeout": (0, 2),
    "dns_error": (0, 2),
    "malformed_json": (0, 1),
}

# Structural kinds clear when a recovery action of the fixing family reissues
# the call. Auth and missing-resource kinds have no fixing family: recovery is
# termination or a switched tool.
STRUCTURAL_FIXES: dict[ErrorClass, frozenset[str]] = {
    ErrorClass.ARGUMENT_HALLUCINATION: frozenset(
        {"reformat_arguments", "validate_and_reissue"}
    ),
    ErrorClass.PARTIAL_EXECUTION: frozenset({"validate_and_reissue"}),
    ErrorClass.INVALID_INTERMEDIATE_REASONING: frozenset({"validate_and_reissue"}),
    ErrorClass.OUTPUT_HALLUCINATION: frozenset(
        {"lenient_parse", "validate_and_reissue"}
    ),
}

RETRY_AFTER_KINDS = frozenset({"http_429", "http_503"})


@dataclass
class _ActiveFault:
    kind: FailureKind
    manifestation: Manifestation
    call_key: str
    tool_name: str
    rendered: str
    persist_retries: int
    retry_after_ms: int | None
    fix_actions: frozenset[str]
    transient: bool
    retries: int = 0
    cleared: bool = False

    def on_reissue(self, action_tag: str | None) -> bool:
        """Register one reissue of the faulted call; True if it now succeeds."""
        if self.cleared:
            return True
        self.retries += 1
        if self.transient:
            if self.retries > self.persist_retries:
                self.cleared = True
        elif action_tag is not None and action_tag in self.fix_actions:
            self.cleared = True
        return self.cleared


def _make_fault(
    kind_id: str,
    manifestation: Manifestation,
    call_key: str,
    tool: ToolSpec,
    seed: int,
    ordinal: int,
) -> _ActiveFault:
    kind = CATALOG.get(kind_id)
    if kind is None:
        raise ConfigError(f"cannot inject unknown failure kind {kind_id!r}")
    rendered = render_failure(kind, manifestation, tool, derive_seed(seed, ordinal))
    transient = kind_id in TRANSIENT_PERSISTENCE
    persist = 0
    if transient:
        lo, hi = TRANSIENT_PERSISTENCE[kind_id]
        persist = rng_for(seed, ordinal, 3).randint(lo, hi)
    retry_after = None
    if kind_id in RETRY_AFTER_KINDS:
        retry_after = rng_for(seed, ordinal, 7).randrange(400, 2001)
    return _ActiveFault(
        kind=kind,
        manifestation=manifestation,
        call_key=call_key,
        tool_name=tool.name,
        rendered=rendered,
        persist_retries=persist,
        retry_after_ms=retry_after,
        fix_actions=STRUCTURAL_FIXES.get(kind.error_class, frozenset()),
        transient=transient,
    )


# --- episode execution -------------------------------------------------------------


def run_episode(
    prompt: str,
    tools: ToolRegistry,
    agent,
    plan: InjectionPlan,
    config: SimConfig = SimConfig(),
    bank: ExemplarBank | None = None,
    episode_id: str | None = None,
) -> Trajectory:
    """Drive one episode to a terminal state and return the full trajectory."""
    if len(tools) == 0:
        raise ConfigError("tool registry must not be empty")
    if not plan.is_clean and plan.turn_index > config.max_steps:
        raise ConfigError("plan.turn_index exceeds the step budget")

    traj = Trajectory(
        episode_id=episode_id or f"ep-{plan.seed:016x}",
        plan=plan,
        turns=[
            Turn(role=ROLE_SYSTEM, content=SYSTEM_PROMPT, simulated_time_ms=0),
            Turn(role=ROLE_USER, content=prompt, simulated_time_ms=0),
        ],
    )
    clock = SimClock()
    episode_seed = derive_seed(plan.seed, config.rng_seed)

    call_ordinal = 0
    faults: dict[str, _ActiveFault] = {}
    last_error: ErrorSignature | None = None
    last_failed_key: str | None = None
    consecutive_retries = 0
    malformed_turns = 0
    n_decisions = 0

    def append(role: str, content: str) -> None:
        clock.advance(config.turn_cost_ms)
        traj.turns.append(Turn(role=role, content=content, simulated_time_ms=clock.now))

    def execute_call(call: ToolCall, action_tag: str | None) -> str:
        nonlocal call_ordinal
        tool = tools.get(call.name)
        if tool is None:
            return json.dumps(
                {"error": f"Tool '{call.name}' not found in registry"},
                sort_keys=True,
                separators=(",", ":"),
            )
        call_ordinal += 1
        key = canonical_call_key(call.name, call.arguments)

        fault = faults.get(key)
        if fault is not None and not fault.cleared:
            if fault.on_reissue(action_tag):
                return _scripted(tool, key)
            return fault.rendered

        if not plan.is_clean and call_ordinal == plan.turn_index:
            fault = _make_fault(
                plan.kind, plan.manifestation, key, tool, plan.seed, call_ordinal
            )
            faults[key] = fault
            return fault.rendered
        if plan.cascade is not None and call_ordinal == plan.cascade[1]:
            cascade_kind = plan.cascade[0]
            fault = _make_fault(
                cascade_kind,
                CATALOG[cascade_kind].default_manifestation,
                key,
                tool,
                plan.seed,
                call_ordinal,
            )
            faults[key] = fault
            return fault.rendered
        return _scripted(tool, key)

    def _scripted(tool: ToolSpec, key: str) -> str:
        payload = tool.scripted_responses.get(key)
        if payload is None:
            return json.dumps(
                {"error": "No scripted response for this request", "status": 400},
                sort_keys=True,
                separators=(",", ":"),
            )
        # a payload that is itself a failure body models a permanently
        # failing tool; serve it raw so it stays classifiable
        if detect_failure(payload, tool.name, 0) is not None:
            return payload
        return wrap_response(payload)

    while True:
        if len(traj.assistant_turns) >= config.max_steps:
            traj.terminal = StepBudgetExhausted()
            break

        rng = rng_for(episode_seed, n_decisions)
        n_decisions += 1
        try:
            action = agent.decide(traj, last_error, tools, bank, rng)
        except TransportError as exc:
            traj.terminal = Abandoned(reason=f"transport failure: {exc}")
            break

        if isinstance(action, ProtocolViolation):
            malformed_turns += 1
            append(ROLE_ASSISTANT, action.text)
            if malformed_turns > 1:
                traj.terminal = Abandoned(reason="repeated agent protocol violations")
                break
            append(ROLE_FUNCTION, PROTOCOL_ERROR_BODY)
            last_error = detect_failure(
                PROTOCOL_ERROR_BODY, "", len(traj.turns) - 1
            )
            continue

        if isinstance(action, Finish):
            append(ROLE_ASSISTANT, render_action(action))
            traj.terminal = Finished(answer=action.answer)
            break
        if isinstance(action, GiveUp):
            append(ROLE_ASSISTANT, render_action(action))
            traj.terminal = GracefulFailure(report=action.report)
            break
        if isinstance(action, RecoveryStep) and action.call is None:
            # graceful termination script step
            append(ROLE_ASSISTANT, render_action(action))
            traj.terminal = GracefulFailure(report=action.report)
            break

        if isinstance(action, RecoveryStep):
            call = action.call
            action_tag = _TAG_BY_TYPE[type(action.action)]
        elif isinstance(action, ToolCall):
            call = action
            action_tag = None
        else:
            traj.terminal = Abandoned(reason=f"unsupported agent action {type(action).__name__}")
            break

        key = canonical_call_key(call.name, call.arguments)
        if key == last_failed_key and consecutive_retries >= config.retry_budget_per_error:
            traj.terminal = Abandoned(
                reason=f"retry budget exhausted for call {key}"
            )
            break

        append(ROLE_ASSISTANT, render_action(action))

        # waits happen between the recovery declaration and the reissued call
        if isinstance(action, RecoveryStep):
            retry_after = None
            fault = faults.get(key)
            if fault is not None and not fault.cleared:
                retry_after = fault.retry_after_ms
            if isinstance(action.action, RetryWithBackoff):
                advance_backoff(
                    clock,
                    attempt_number=consecutive_retries + 1,
                    policy=action.action,
                    retry_after_ms=retry_after,
                    seed=derive_seed(episode_seed, 0xB0FF, n_decisions),
                )
            elif isinstance(action.action, WaitUntilHealthy):
                clock.advance(action.action.poll_interval_ms)

        response = execute_call(call, action_tag)
        append(ROLE_FUNCTION, response)

        last_error = detect_failure(response, call.name, len(traj.turns) - 1)
        if last_error is not None:
            if key == last_failed_key:
                consecutive_retries += 1
            else:
                last_failed_key = key
                consecutive_retries = 0
        else:
            last_failed_key = None
            consecutive_retries = 0

    traj.validate_roles()
    return traj
