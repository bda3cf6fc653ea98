"""Agent policies: four scripted baselines, the retrieval-guided policy, and
an adapter for external chat-completion models.

Scripted policies are surrogates: they follow the task's intended call
sequence and differ only in how they react to failures. All are pure
functions of (trajectory so far, last error, seed), so episodes replay
byte-identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .bank import (
    ExemplarBank,
    LenientParse,
    RecoveryAction,
    RecoveryExemplar,
    ReformatArguments,
    RefreshCredentials,
    RetryWithBackoff,
    SwitchTool,
    TerminateGracefully,
    ValidateAndReissue,
    WaitUntilHealthy,
    retrieve_top_k,
)
from .episode import ROLE_FUNCTION, Trajectory, Turn
from .errors import AgentProtocolError, ConfigError, ProtocolError
from .protocol import (
    AgentAction,
    Finish,
    GiveUp,
    ProtocolViolation,
    RecoveryStep,
    ToolCall,
    parse_action,
)
from .remote import ChatEndpoint, EndpointConfig
from .seeds import rng_for
from .simulator import ToolRegistry, canonical_call_key
from .taxonomy import ErrorSignature, detect_failure


@dataclass(frozen=True)
class TaskStep:
    tool: str
    arguments: dict

    def to_json(self) -> dict:
        return {"tool": self.tool, "arguments": self.arguments}

    @classmethod
    def from_json(cls, doc: dict) -> "TaskStep":
        return cls(tool=doc["tool"], arguments=doc["arguments"])


# --- trace inspection helpers ----------------------------------------------------


def _function_turns(traj: Trajectory) -> list[tuple[int, Turn]]:
    return [(i, t) for i, t in enumerate(traj.turns) if t.role == ROLE_FUNCTION]


def _is_failure_turn(traj: Trajectory, index: int) -> bool:
    turn = traj.turns[index]
    return detect_failure(turn.content, "", index) is not None


def completed_steps(traj: Trajectory) -> int:
    """Number of successful tool responses so far (= task steps done)."""
    return sum(
        1 for i, _ in _function_turns(traj) if not _is_failure_turn(traj, i)
    )


def _trailing_failure_run(traj: Trajectory) -> tuple[int, int]:
    """(first turn index of the current failure run, failing turns in it)."""
    run: list[int] = []
    for i, _ in reversed(_function_turns(traj)):
        if _is_failure_turn(traj, i):
            run.append(i)
        else:
            break
    if not run:
        return (-1, 0)
    return (run[-1], len(run))


def _recovery_steps_since(traj: Trajectory, turn_index: int) -> int:
    return sum(
        1
        for i, t in enumerate(traj.turns)
        if i > turn_index and t.is_recovery
    )


def _last_success_payload(traj: Trajectory) -> tuple[str, dict]:
    """(tool hint, payload dict) of the most recent successful response."""
    for i, turn in reversed(_function_turns(traj)):
        if _is_failure_turn(traj, i):
            continue
        try:
            wrapper = json.loads(turn.content)
            payload = json.loads(wrapper.get("response", "{}"))
        except (json.JSONDecodeError, AttributeError):
            continue
        if isinstance(payload, dict):
            return ("", payload)
    return ("", {})


def synthesize_answer(traj: Trajectory) -> str:
    """Final answer quoting the last successful tool output's fields."""
    _, payload = _last_success_payload(traj)
    if not payload:
        return "Task complete."
    parts = [f"{k}={payload[k]}" for k in payload]
    return "Task complete. Final result: " + "; ".join(parts) + "."


# --- base scripted policy -----------------------------------------------------------


class ScriptedPolicy:
    """Follows the task's call plan; subclasses define failure behavior."""

    name = "scripted"

    def __init__(self, steps: tuple[TaskStep, ...], retry_budget: int = 3):
        if not steps:
            raise ConfigError("scripted policies need at least one task step")
        self._steps = steps
        self._budget = retry_budget

    # -- plan following

    def _next_step_call(self, n_done: int) -> ToolCall:
        step = self._steps[n_done]
        return ToolCall(
            name=step.tool,
            arguments=step.arguments,
            thought=f"Proceeding with step {n_done + 1} of {len(self._steps)}: "
            f"call {step.tool}.",
        )

    def _current_step(self, traj: Trajectory) -> TaskStep:
        n_done = completed_steps(traj)
        return self._steps[min(n_done, len(self._steps) - 1)]

    def decide(
        self,
        context: Trajectory,
        last_error: ErrorSignature | None,
        tools: ToolRegistry,
        bank: ExemplarBank | None,
        rng,
    ) -> AgentAction:
        if last_error is not None:
            return self.on_error(context, last_error, tools, bank, rng)
        n_done = completed_steps(context)
        if n_done >= len(self._steps):
            return Finish(
                answer=synthesize_answer(context),
                thought="All steps succeeded; reporting the retrieved data.",
            )
        return self._next_step_call(n_done)

    def on_error(self, context, error, tools, bank, rng) -> AgentAction:
        raise NotImplementedError


# --- baselines ------------------------------------------------------------------------


class VanillaPolicy(ScriptedPolicy):
    """No recovery behavior at all: hallucinate success or give up."""

    name = "vanilla"

    def __init__(
        self,
        steps: tuple[TaskStep, ...],
        retry_budget: int = 3,
        hallucination_probability: float = 0.5,
    ):
        super().__init__(steps, retry_budget)
        self._p_hallucinate = hallucination_probability

    def on_error(self, context, error, tools, bank, rng) -> AgentAction:
        step = self._current_step(context)
        if rng.random() < self._p_hallucinate:
            return Finish(
                answer=(
                    f"Task complete. {step.tool} returned the requested data: "
                    "value=42; status=ok."
                ),
                thought="The tool responded; summarizing the result.",
            )
        return GiveUp(
            report=(
                f"Could not complete the task: {step.tool} failed "
                f"({error.message or error.kind})."
            ),
            thought="The tool call failed; stopping.",
        )


class ToolBenchPolicy(VanillaPolicy):
    """Competent on clean traces, gives up on any error (no hallucination)."""

    name = "toolbench"

    def __init__(self, steps: tuple[TaskStep, ...], retry_budget: int = 3):
        super().__init__(steps, retry_budget, hallucination_probability=0.0)


class ReflectPolicy(ScriptedPolicy):
    """Blind call-level self-correction: retry up to the budget, reformat on
    the final attempt, never switch tools, then give up."""

    name = "reflect"

    def on_error(self, context, error, tools, bank, rng) -> AgentAction:
        step = self._current_step(context)
        _, run_length = _trailing_failure_run(context)
        retries_done = run_length - 1
        if retries_done >= self._budget:
            return GiveUp(
                report=(
                    f"Could not complete the task: {step.tool} still failing "
                    f"after {retries_done} retries ({error.message or error.kind})."
                ),
                thought="Retries exhausted; giving up.",
            )
        call = ToolCall(name=step.tool, arguments=step.arguments)
        if retries_done + 1 == self._budget:
            return RecoveryStep(
                action=ReformatArguments(
                    hint="re-check parameter formatting against the schema"
                ),
                thought=(
                    f"The call to {step.tool} keeps failing; re-checking the "
                    "argument formatting and re-issuing the corrected call."
                ),
                call=call,
            )
        return RecoveryStep(
            action=RetryWithBackoff(
                max_attempts=1, base_delay_ms=0, cap_ms=0, respect_retry_after=False
            ),
            thought=f"The call to {step.tool} failed; retrying the same call.",
            call=call,
        )


# --- script executor (shared by the retrieval-guided policies) -------------------------


@dataclass(frozen=True)
class _PlannedStep:
    action: RecoveryAction
    target: str  # "reissue" | "switch" | "terminate"


def _flatten_script(
    script: tuple[RecoveryAction, ...],
    budget: int,
    has_alternative: bool,
) -> list[_PlannedStep]:
    """Bound a script into an executable step sequence.

    Same-call reissues are capped at the retry budget; scripts that run out
    without success escalate to a tool switch (when possible) then graceful
    termination.
    """
    planned: list[_PlannedStep] = []
    reissues = 0
    switched = False
    terminated = False
    for action in script:
        if isinstance(action, TerminateGracefully):
            planned.append(_PlannedStep(action, "terminate"))
            terminated = True
            break
        if isinstance(action, SwitchTool):
            if has_alternative:
                planned.append(_PlannedStep(action, "switch"))
                switched = True
            continue
        if isinstance(action, RetryWithBackoff):
            for _ in range(action.max_attempts):
                if reissues < budget:
                    planned.append(_PlannedStep(action, "reissue"))
                    reissues += 1
            continue
        if isinstance(
            action,
            (ReformatArguments, ValidateAndReissue, LenientParse, RefreshCredentials,
             WaitUntilHealthy),
        ):
            if reissues < budget:
                planned.append(_PlannedStep(action, "reissue"))
                reissues += 1
            continue
    if not terminated:
        if has_alternative and not switched:
            planned.append(_PlannedStep(SwitchTool(strategy="alternative"), "switch"))
        planned.append(_PlannedStep(TerminateGracefully(), "terminate"))
    return planned


_ACTION_THOUGHTS = {
    RetryWithBackoff: "The failure looks transient; backing off before retrying "
    "the identical call.",
    ReformatArguments: "The request itself was rejected; fixing the argument "
    "formatting and re-issuing.",
    ValidateAndReissue: "Validating the request against the failure details and "
    "re-issuing it.",
    LenientParse: "The response was unusable; re-requesting and parsing it "
    "leniently.",
    RefreshCredentials: "Refreshing credentials before re-issuing the call.",
    WaitUntilHealthy: "Waiting for the upstream service to report healthy before "
    "retrying.",
    SwitchTool: "The tool cannot serve this request; switching to an alternative "
    "tool with the same capability.",
}


def _execute_planned(
    planned: list[_PlannedStep],
    position: int,
    failed_call: ToolCall,
    error: ErrorSignature,
    tools: ToolRegistry,
) -> AgentAction:
    if position >= len(planned):
        # defensive: scripts always end in terminate
        return GiveUp(
            report=f"Could not complete the step using {failed_call.name}: "
            f"{error.message or error.kind}",
            thought="Recovery options exhausted.",
        )
    step = planned[position]
    if step.target == "terminate":
        report_template = getattr(step.action, "report", "") or (
            "Could not complete the step using {tool}: {error}"
        )
        report = report_template.format(
            tool=failed_call.name, error=error.message or error.kind
        )
        return RecoveryStep(
            action=step.action,
            thought=(
                f"The failure on {failed_call.name} is not recoverable here; "
                "stopping with an honest report."
            ),
            report=report,
        )
    if step.target == "switch":
        alternative = tools.alternative_for(failed_call.name)
        if alternative is None:
            return RecoveryStep(
                action=TerminateGracefully(),
                thought="No alternative tool is registered; stopping with an "
                "honest report.",
                report=f"Could not complete the step using {failed_call.name}: "
                f"{error.message or error.kind}",
            )
        return RecoveryStep(
            action=step.action,
            thought=_ACTION_THOUGHTS[SwitchTool]
            + f" ({failed_call.name} -> {alternative.name})",
            call=ToolCall(name=alternative.name, arguments=failed_call.arguments),
        )
    thought = _ACTION_THOUGHTS.get(type(step.action), "Attempting recovery.")
    return RecoveryStep(
        action=step.action,
        thought=f"{thought} (failed call: {failed_call.name}, "
        f"error: {error.kind})",
        call=failed_call,
    )


class PaladinPolicy(ScriptedPolicy):
    """Retrieval-guided recovery: nearest exemplar's script, executed in
    order, with escalation to tool switch then graceful termination. Never
    claims success after an unresolved failure."""

    name = "paladin"

    def on_error(self, context, error, tools, bank, rng) -> AgentAction:
        step = self._current_step(context)
        failed_call = ToolCall(name=step.tool, arguments=step.arguments)
        script = self._script_for(error, bank)
        event_start, _ = _trailing_failure_run(context)
        position = _recovery_steps_since(context, event_start)
        planned = _flatten_script(
            script,
            budget=self._budget,
            has_alternative=tools.alternative_for(step.tool) is not None,
        )
        return _execute_planned(planned, position, failed_call, error, tools)

    def _script_for(
        self, error: ErrorSignature, bank: ExemplarBank | None
    ) -> tuple[RecoveryAction, ...]:
        if bank is not None and len(bank):
            exemplar = retrieve_top_k(bank, error, k=1)[0]
            return exemplar.script
        # retrieval disabled: no exemplar knowledge, blind retry then stop
        return (
            RetryWithBackoff(max_attempts=3, base_delay_ms=500, cap_ms=8000),
            TerminateGracefully(),
        )


def oracle_gate(gate_seed: int, episode_seed: int, event_turn: int, p: float = 0.7) -> bool:
    """Stable per-error-event draw deciding oracle access."""
    return rng_for(gate_seed, 0xC41C, episode_seed, event_turn).random() < p


class CriticPolicy(ScriptedPolicy):
    """Oracle-assisted critic loop: with probability p the recovery oracle
    (top-3 retrieval, best script) is consulted; otherwise behaves like the
    reflect baseline. At most `retry_budget` recovery attempts per error."""

    name = "critic"

    def __init__(
        self,
        steps: tuple[TaskStep, ...],
        retry_budget: int = 3,
        oracle_probability: float = 0.7,
        gate_seed: int = 0,
    ):
        super().__init__(steps, retry_budget)
        self._p = oracle_probability
        self._gate_seed = gate_seed
        self._reflect = ReflectPolicy(steps, retry_budget)
        self._paladin = PaladinPolicy(steps, retry_budget)

    def on_error(self, context, error, tools, bank, rng) -> AgentAction:
        event_turn, _ = _trailing_failure_run(context)
        if bank is not None and oracle_gate(
            self._gate_seed, context.plan.seed, event_turn, self._p
        ):
            step = self._current_step(context)
            failed_call = ToolCall(name=step.tool, arguments=step.arguments)
            exemplar = self._best_of_top3(bank, error)
            planned = _flatten_script(
                exemplar.script,
                budget=self._budget,
                has_alternative=tools.alternative_for(step.tool) is not None,
            )
            position = _recovery_steps_since(context, event_turn)
            return _execute_planned(planned, position, failed_call, error, tools)
        return self._reflect.on_error(context, error, tools, None, rng)

    @staticmethod
    def _best_of_top3(bank: ExemplarBank, error: ErrorSignature) -> RecoveryExemplar:
        return retrieve_top_k(bank, error, k=3)[0]


# --- remote adapter ---------------------------------------------------------------------


class RemoteChatPolicy:
    """Drives an external chat-completion model through the action grammar."""

    name = "remote"

    def __init__(self, endpoint: EndpointConfig):
        self._client = ChatEndpoint(endpoint)

    def decide(
        self,
        context: Trajectory,
        last_error: ErrorSignature | None,
        tools: ToolRegistry,
        bank: ExemplarBank | None,
        rng,
    ) -> AgentAction:
        messages = [{"role": t.role, "content": t.content} for t in context.turns]
        try:
            text = self._client.complete(messages)
        except ProtocolError as exc:
            return ProtocolViolation(text=f"<malformed completion payload: {exc}>")
        try:
            parsed = parse_action(text)
        except AgentProtocolError:
            return ProtocolViolation(text=text)
        if parsed.finish is not None:
            return parsed.finish
        if parsed.give_up is not None:
            if parsed.is_recovery:
                return RecoveryStep(
                    action=TerminateGracefully(),
                    thought=parsed.give_up.thought,
                    report=parsed.give_up.report,
                )
            return parsed.give_up
        call = parsed.call
        if not parsed.is_recovery:
            return call
        return RecoveryStep(
            action=self._infer_action(context, call),
            thought=call.thought,
            call=call,
        )

    @staticmethod
    def _infer_action(context: Trajectory, call: ToolCall) -> RecoveryAction:
        """Map a recovery-tagged model call onto the action vocabulary."""
        failed = _last_failed_call(context)
        if failed is None:
            return ValidateAndReissue(check="payload")
        if failed.name != call.name:
            return SwitchTool(strategy="alternative")
        if canonical_call_key(failed.name, failed.arguments) == canonical_call_key(
            call.name, call.arguments
        ):
            return RetryWithBackoff(
                max_attempts=1, base_delay_ms=0, cap_ms=0, respect_retry_after=False
            )
        return ReformatArguments(hint="model-adjusted arguments")


def _last_failed_call(traj: Trajectory) -> ToolCall | None:
    event_start, run = _trailing_failure_run(traj)
    if run == 0:
        return None
    # the assistant turn immediately before the first failing response
    for i in range(event_start - 1, -1, -1):
        turn = traj.turns[i]
        if turn.role == "assistant":
            try:
                parsed = parse_action(turn.content)
            except AgentProtocolError:
                return None
            return parsed.call
    return None


# --- factory ---------------------------------------------------------------------------

SCRIPTED_AGENTS = ("vanilla", "toolbench", "reflect", "critic", "paladin")


def make_policy(
    name: str,
    steps: tuple[TaskStep, ...],
    retry_budget: int = 3,
    gate_seed: int = 0,
    hallucination_probability: float = 0.5,
    endpoint: EndpointConfig | None = None,
):
    if name == "vanilla":
        return VanillaPolicy(steps, retry_budget, hallucination_probability)
    if name == "toolbench":
        return ToolBenchPolicy(steps, retry_budget)
    if name == "reflect":
        return ReflectPolicy(steps, retry_budget)
    if name == "critic":
        return CriticPolicy(steps, retry_budget, gate_seed=gate_seed)
    if name == "paladin":
        return PaladinPolicy(steps, retry_budget)
    if name == "remote":
        if endpoint is None:
            raise ConfigError("remote agent requires an endpoint config")
        return RemoteChatPolicy(endpoint)
    raise ConfigError(f"unknown agent {name!r}")
