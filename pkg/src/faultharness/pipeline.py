"""Dataset construction: truncate failure traces, repair them into
recovery-annotated trajectories via a pluggable teacher, finalize clean
traces, extract recovery-token spans, and compose seeded corpora.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field

from .agents import synthesize_answer
from .bank import (
    ExemplarBank,
    RecoveryExemplar,
    TerminateGracefully,
    retrieve,
)
from .episode import (
    Finished,
    GracefulFailure,
    RECOVERY_PREFIX,
    ROLE_ASSISTANT,
    ROLE_FUNCTION,
    Trajectory,
    Turn,
    dumps_canonical,
)
from .errors import (
    AgentProtocolError,
    InsufficientTraces,
    MalformedTrace,
    TeacherFailure,
)
from .protocol import (
    Finish,
    GiveUp,
    RecoveryStep,
    ToolCall,
    parse_action,
    render_action,
)
from .remote import ChatEndpoint, EndpointConfig
from .simulator import ToolRegistry, canonical_call_key, wrap_response
from .taxonomy import ErrorSignature, canonical_key, detect_failure


def _tool_of_preceding_assistant(traj: Trajectory, index: int) -> str:
    for i in range(index - 1, -1, -1):
        turn = traj.turns[i]
        if turn.role == ROLE_ASSISTANT:
            try:
                parsed = parse_action(turn.content)
            except AgentProtocolError:
                return ""
            return parsed.call.name if parsed.call else ""
    return ""


def detect_first_failure(trace: Trajectory) -> tuple[int, ErrorSignature] | None:
    """Earliest function turn classifiable as a failure; None when clean."""
    try:
        trace.validate_roles()
    except ValueError as exc:
        raise MalformedTrace(str(exc)) from exc
    for i, turn in enumerate(trace.turns):
        if turn.role != ROLE_FUNCTION:
            continue
        tool = _tool_of_preceding_assistant(trace, i)
        sig = detect_failure(turn.content, tool, i)
        if sig is not None:
            return (i, sig)
    return None


def truncate_at_failure(trace: Trajectory, turn_index: int) -> Trajectory:
    """Prefix ending at (and including) the failing turn."""
    return Trajectory(
        episode_id=trace.episode_id,
        plan=trace.plan,
        turns=list(trace.turns[: turn_index + 1]),
        terminal=None,
    )


# --- repair -----------------------------------------------------------------------------


@dataclass(frozen=True)
class RepairRequest:
    task: str
    toolset: ToolRegistry
    truncated_trace: Trajectory
    error: ErrorSignature

    def __post_init__(self):
        last = self.truncated_trace.turns[-1]
        if last.role != ROLE_FUNCTION:
            raise MalformedTrace("truncated trace must end at the failing turn")


class RuleBasedTeacher:
    """Deterministic repair from the exemplar bank.

    Renders the exemplar's dialogue template when one exists (slot
    substitution only), otherwise synthesizes grammar-valid recovery turns
    from the exemplar's script.
    """

    name = "rule"

    def __init__(self, bank: ExemplarBank):
        if not len(bank):
            raise TeacherFailure("rule-based teacher needs a non-empty bank")
        self._bank = bank

    def continuation(self, request: RepairRequest) -> list[tuple[str, str]]:
        exemplar = retrieve(self._bank, request.error)
        failed_call = self._failed_call(request)
        if failed_call is None:
            raise TeacherFailure("cannot locate the failing call in the trace")
        if exemplar.dialogue_template:
            return self._render_template(exemplar, request, failed_call)
        return self._render_script(exemplar, request, failed_call)

    @staticmethod
    def _failed_call(request: RepairRequest) -> ToolCall | None:
        trace = request.truncated_trace
        for i in range(len(trace.turns) - 2, -1, -1):
            turn = trace.turns[i]
            if turn.role == ROLE_ASSISTANT:
                try:
                    parsed = parse_action(turn.content)
                except AgentProtocolError:
                    return None
                return parsed.call
        return None

    def _success_payload(self, request: RepairRequest, call: ToolCall) -> str:
        tool = request.toolset.get(call.name)
        if tool is not None:
            payload = tool.scripted_responses.get(
                canonical_call_key(call.name, call.arguments)
            )
            if payload is not None:
                return payload
        return '{"status":"ok"}'

    def _render_template(
        self,
        exemplar: RecoveryExemplar,
        request: RepairRequest,
        failed_call: ToolCall,
    ) -> list[tuple[str, str]]:
        alt = request.toolset.alternative_for(failed_call.name)
        giveup_payload = json.dumps(
            {
                "return_type": "give_up_and_report",
                "report": f"Could not complete the step using {failed_call.name}: "
                f"{request.error.message or request.error.kind}",
            },
            ensure_ascii=False,
        )
        slots = {
            "tool": failed_call.name,
            "alt_tool": alt.name if alt else failed_call.name,
            "error": request.error.message or request.error.kind,
            "args": json.dumps(failed_call.arguments, sort_keys=True, ensure_ascii=False),
            "success_response": wrap_response(
                self._success_payload(request, failed_call)
            ),
            "giveup_input": giveup_payload,
        }
        turns: list[tuple[str, str]] = []
        for template_turn in exemplar.dialogue_template:
            role = ROLE_ASSISTANT if template_turn["from"].lower() == "assistant" else ROLE_FUNCTION
            content = template_turn["value"]
            for key, value in slots.items():
                content = content.replace("{" + key + "}", value)
            turns.append((role, content))
        # template dialogues that recover successfully still need the Finish
        if turns and not self._ends_terminal(turns):
            turns.append((ROLE_ASSISTANT, self._finish_text(request, turns)))
        return turns

    @staticmethod
    def _ends_terminal(turns: list[tuple[str, str]]) -> bool:
        for role, content in reversed(turns):
            if role != ROLE_ASSISTANT:
                continue
            try:
                return parse_action(content).is_terminal
            except AgentProtocolError:
                return False
        return False

    def _finish_text(self, request: RepairRequest, appended: list[tuple[str, str]]) -> str:
        probe = Trajectory(
            episode_id=request.truncated_trace.episode_id,
            plan=request.truncated_trace.plan,
            turns=list(request.truncated_trace.turns)
            + [Turn(role=r, content=c, simulated_time_ms=0) for r, c in appended],
        )
        return render_action(
            Finish(
                answer=synthesize_answer(probe),
                thought="The recovered data answers the task.",
            )
        )

    def _render_script(
        self,
        exemplar: RecoveryExemplar,
        request: RepairRequest,
        failed_call: ToolCall,
    ) -> list[tuple[str, str]]:
        error_text = request.error.message or request.error.kind
        turns: list[tuple[str, str]] = []
        for action in exemplar.script:
            if isinstance(action, TerminateGracefully):
                report = (action.report or "Could not complete the step using "
                          "{tool}: {error}").format(
                    tool=failed_call.name, error=error_text
                )
                step = RecoveryStep(
                    action=action,
                    thought=f"The failure on {failed_call.name} is not recoverable; "
                    "stopping with an honest report.",
                    report=report,
                )
                turns.append((ROLE_ASSISTANT, render_action(step)))
                return turns
            step = RecoveryStep(
                action=action,
                thought=f"{exemplar.rationale} Re-issuing the call to "
                f"{failed_call.name}.",
                call=failed_call,
            )
            turns.append((ROLE_ASSISTANT, render_action(step)))
            turns.append(
                (ROLE_FUNCTION, wrap_response(self._success_payload(request, failed_call)))
            )
            break  # teacher writes the successful recovery, one corrective step
        turns.append((ROLE_ASSISTANT, self._finish_text(request, turns)))
        return turns


class RemoteTeacher:
    """Chat-endpoint repair: the model proposes grammar-valid turns, the
    harness simulates tool responses from the toolset scripts."""

    name = "remote"

    def __init__(self, endpoint: EndpointConfig, max_turns: int = 8):
        self._client = ChatEndpoint(endpoint)
        self._max_turns = max_turns

    def continuation(self, request: RepairRequest) -> list[tuple[str, str]]:
        turns: list[tuple[str, str]] = []
        messages = [
            {"role": t.role, "content": t.content}
            for t in request.truncated_trace.turns
        ]
        messages.insert(
            0,
            {
                "role": "system",
                "content": "Repair this failed tool-use trace. Continue with "
                "corrective steps prefixed 'Recovery:' in Thought/Action/Action "
                "Input format, then finish.",
            },
        )
        for _ in range(self._max_turns):
            try:
                text = self._client.complete(messages)
                parsed = parse_action(text)
            except Exception as exc:  # transport, protocol, or grammar failure
                raise TeacherFailure(f"remote teacher failed: {exc}") from exc
            turns.append((ROLE_ASSISTANT, text))
            messages.append({"role": "assistant", "content": text})
            if parsed.is_terminal:
                return turns
            call = parsed.call
            tool = request.toolset.get(call.name)
            payload = None
            if tool is not None:
                payload = tool.scripted_responses.get(
                    canonical_call_key(call.name, call.arguments)
                )
            response = wrap_response(payload if payload is not None else '{"status":"ok"}')
            turns.append((ROLE_FUNCTION, response))
            messages.append({"role": "function", "content": response})
        raise TeacherFailure("remote teacher did not terminate the trace")


def repair(request: RepairRequest, teacher) -> Trajectory:
    """Extend the truncated trace with recovery turns; prefix is preserved
    byte-for-byte and the first appended assistant turn carries the tag."""
    appended = teacher.continuation(request)
    if not appended:
        raise TeacherFailure("teacher produced no continuation")
    first_assistant = next((c for r, c in appended if r == ROLE_ASSISTANT), None)
    if first_assistant is None or not first_assistant.startswith(RECOVERY_PREFIX):
        raise TeacherFailure("first appended assistant turn must be recovery-tagged")

    repaired = Trajectory(
        episode_id=request.truncated_trace.episode_id,
        plan=request.truncated_trace.plan,
        turns=list(request.truncated_trace.turns),
    )
    clock = repaired.turns[-1].simulated_time_ms
    terminal = None
    for role, content in appended:
        clock += 100
        repaired.turns.append(Turn(role=role, content=content, simulated_time_ms=clock))
        if role == ROLE_ASSISTANT:
            try:
                parsed = parse_action(content)
            except AgentProtocolError as exc:
                raise TeacherFailure(f"teacher turn violates the grammar: {exc}") from exc
            if parsed.finish is not None:
                terminal = Finished(answer=parsed.finish.answer)
            elif parsed.give_up is not None:
                terminal = GracefulFailure(report=parsed.give_up.report)
    if terminal is None:
        raise TeacherFailure("repaired trace must end in Finish or graceful failure")
    repaired.terminal = terminal
    return repaired


# --- finalize ----------------------------------------------------------------------------


def finalize(task: str, toolset: ToolRegistry, trace: Trajectory) -> Trajectory:
    """Audit a clean trace: grammar-valid, zero recovery tags, ends with
    Finish (appended from the last successful output when missing)."""
    failure = detect_first_failure(trace)
    if failure is not None:
        raise MalformedTrace(
            f"trace has a failure at turn {failure[0]}; route it to repair"
        )
    for turn in trace.turns:
        if turn.role != ROLE_ASSISTANT:
            continue
        if turn.is_recovery:
            raise MalformedTrace("clean traces must not carry recovery tags")
        try:
            parse_action(turn.content)
        except AgentProtocolError as exc:
            raise MalformedTrace(f"assistant turn violates the grammar: {exc}") from exc

    if trace.turns and trace.turns[-1].role == ROLE_ASSISTANT:
        try:
            if parse_action(trace.turns[-1].content).finish is not None and isinstance(
                trace.terminal, Finished
            ):
                return trace
        except AgentProtocolError:
            pass

    finished = Trajectory(
        episode_id=trace.episode_id,
        plan=trace.plan,
        turns=list(trace.turns),
    )
    finish = Finish(
        answer=synthesize_answer(finished),
        thought="All steps succeeded; reporting the retrieved data.",
    )
    finished.turns.append(
        Turn(
            role=ROLE_ASSISTANT,
            content=render_action(finish),
            simulated_time_ms=finished.turns[-1].simulated_time_ms + 100,
        )
    )
    finished.terminal = Finished(answer=finish.answer)
    return finished


# --- recovery spans ------------------------------------------------------------------------


def extract_recovery_spans(trace: Trajectory) -> list[tuple[int, int, int]]:
    """(turn index, char start, char end) for every recovery-tagged turn;
    the span covers everything after the prefix."""
    spans = []
    for i, turn in enumerate(trace.turns):
        if turn.is_recovery:
            spans.append((i, len(RECOVERY_PREFIX), len(turn.content)))
    return spans


# --- corpus composition ---------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusSpec:
    target_size: int
    recovery_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.recovery_fraction < 1:
            raise ValueError("recovery_fraction must be in (0, 1)")
        if self.target_size < 2:
            raise ValueError("target_size must be at least 2")


@dataclass(frozen=True)
class CorpusTrace:
    trace: Trajectory
    signature: ErrorSignature | None  # injected signature for repaired traces

    def dedup_key(self) -> str:
        task_hash = hashlib.sha256(
            self.trace.turns[1].content.encode("utf-8")
        ).hexdigest()[:16]
        if self.signature is None:
            return f"clean|{task_hash}"
        return f"{canonical_key(self.signature)}|{task_hash}"


@dataclass
class Corpus:
    traces: list[Trajectory]
    spans: dict[str, list[list[int]]]
    manifest: dict

    def lines(self) -> list[str]:
        return [dumps_canonical(t.to_json()) for t in self.traces]


def compose_corpus(
    repaired: list[CorpusTrace],
    clean: list[CorpusTrace],
    spec: CorpusSpec,
    dictionary_version: str = "0",
) -> Corpus:
    """Seeded 80/20-style composition with signature+task dedup."""
    n_recovery = round(spec.target_size * spec.recovery_fraction)
    n_clean = spec.target_size - n_recovery

    def dedup(pool: list[CorpusTrace]) -> list[CorpusTrace]:
        seen: set[str] = set()
        out = []
        for item in pool:
            key = item.dedup_key()
            if key in seen:
                continue
            seen.add(key)
            out.append(item)
        return out

    rec_pool = dedup(sorted(repaired, key=lambda t: t.trace.episode_id))
    clean_pool = dedup(sorted(clean, key=lambda t: t.trace.episode_id))
    if len(rec_pool) < n_recovery:
        raise InsufficientTraces(
            f"need {n_recovery} recovery traces, have {len(rec_pool)} after dedup"
        )
    if len(clean_pool) < n_clean:
        raise InsufficientTraces(
            f"need {n_clean} clean traces, have {len(clean_pool)} after dedup"
        )

    rng = random.Random(spec.seed)
    chosen = rng.sample(rec_pool, n_recovery) + rng.sample(clean_pool, n_clean)
    traces = [c.trace for c in chosen]

    spans = {
        t.episode_id: [list(span) for span in extract_recovery_spans(t)] for t in traces
    }
    manifest = {
        "counts": {"recovery": n_recovery, "clean": n_clean, "total": spec.target_size},
        "fractions": {"recovery": spec.recovery_fraction},
        "seed": spec.seed,
        "dictionary_version": dictionary_version,
    }
    return Corpus(traces=traces, spans=spans, manifest=manifest)
