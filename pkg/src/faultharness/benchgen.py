"""Deterministic evaluation-suite generation.

Suites pin everything: per-class failure coverage, kinds cycled within each
class, seeded task/turn assignment, per-episode seeds split from the master
seed, and dedup over (task, kind, turn). Held-out suites inject kinds that
are stripped from the bank the agents see, leaving injection untouched.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .agents import TaskStep
from .bank import ExemplarBank, load_shipped_bank
from .episode import InjectionPlan, dumps_canonical
from .errors import ConfigError, PoolExhausted
from .seeds import SEED_MIXER, derive_seed
from .simulator import SimConfig, ToolRegistry, canonical_call_key
from .tasks import TaskTemplate, builtin_task_pool
from .taxonomy import CATALOG, CATALOG_VERSION, ErrorClass

PROTOCOLS = ("Paladin", "ToolReflect")

# Recovery family the grader's guideline tags expect per error class.
EXPECTED_RECOVERY_FAMILY = {
    ErrorClass.TOOL_HALLUCINATION: "switch_tool",
    ErrorClass.ARGUMENT_HALLUCINATION: "reformat_arguments",
    ErrorClass.INVALID_TOOL_INVOCATION: "terminate_gracefully",
    ErrorClass.PARTIAL_EXECUTION: "validate_and_reissue",
    ErrorClass.OUTPUT_HALLUCINATION: "lenient_parse",
    ErrorClass.INVALID_INTERMEDIATE_REASONING: "validate_and_reissue",
    ErrorClass.REENTRANT_FAILURE: "retry_with_backoff",
}


@dataclass(frozen=True)
class SuiteSpec:
    n_episodes: int
    master_seed: int = 0
    class_distribution: dict[ErrorClass, float] | None = None
    clean_fraction: float = 0.2
    held_out_kinds: frozenset[str] = frozenset()
    protocol: str = "Paladin"

    def __post_init__(self):
        if self.n_episodes < 1:
            raise ConfigError("n_episodes must be positive")
        if not 0 <= self.clean_fraction < 1:
            raise ConfigError("clean_fraction must be within [0, 1)")
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if self.class_distribution is not None:
            if any(w <= 0 for w in self.class_distribution.values()):
                raise ConfigError("class weights must be positive")
        for kind in self.held_out_kinds:
            if kind not in CATALOG:
                raise ConfigError(f"held-out kind {kind!r} is not in the catalog")

    def to_json(self) -> dict:
        return {
            "n_episodes": self.n_episodes,
            "master_seed": self.master_seed,
            "class_distribution": None
            if self.class_distribution is None
            else {c.value: w for c, w in self.class_distribution.items()},
            "clean_fraction": self.clean_fraction,
            "held_out_kinds": sorted(self.held_out_kinds),
            "protocol": self.protocol,
        }


@dataclass(frozen=True)
class EpisodeCard:
    """Fully self-contained episode: task, tools, plan, grading tags."""

    episode_id: str
    prompt: str
    tools: ToolRegistry
    steps: tuple[TaskStep, ...]
    plan: InjectionPlan
    guidelines: dict = field(default_factory=dict)
    retry_budget: int = 3
    max_steps: int = 20
    task_slug: str = ""

    def sim_config(self, rng_seed: int = 0) -> SimConfig:
        return SimConfig(
            max_steps=self.max_steps,
            retry_budget_per_error=self.retry_budget,
            rng_seed=rng_seed,
        )

    def final_step_payload(self) -> dict:
        step = self.steps[-1]
        tool = self.tools.get(step.tool)
        if tool is None:
            return {}
        text = tool.scripted_responses.get(canonical_call_key(step.tool, step.arguments))
        if text is None:
            return {}
        try:
            payload = json.loads(text)
        except json.JSONDecodeError:
            return {}
        return payload if isinstance(payload, dict) else {}

    def to_json(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "prompt": self.prompt,
            "tools": self.tools.to_json(),
            "steps": [s.to_json() for s in self.steps],
            "plan": self.plan.to_json(),
            "guidelines": self.guidelines,
            "retry_budget": self.retry_budget,
            "max_steps": self.max_steps,
            "task_slug": self.task_slug,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "EpisodeCard":
        return cls(
            episode_id=doc["episode_id"],
            prompt=doc["prompt"],
            tools=ToolRegistry.from_json(doc["tools"]),
            steps=tuple(TaskStep.from_json(s) for s in doc["steps"]),
            plan=InjectionPlan.from_json(doc["plan"]),
            guidelines=doc.get("guidelines", {}),
            retry_budget=doc.get("retry_budget", 3),
            max_steps=doc.get("max_steps", 20),
            task_slug=doc.get("task_slug", ""),
        )


def _apportion(total: int, weights: dict[ErrorClass, float]) -> dict[ErrorClass, int]:
    """Largest-remainder apportionment; counts match weights within +-1."""
    classes = sorted(weights, key=lambda c: c.value)
    weight_sum = sum(weights[c] for c in classes)
    quotas = {c: total * weights[c] / weight_sum for c in classes}
    counts = {c: int(quotas[c]) for c in classes}
    leftover = total - sum(counts.values())
    by_remainder = sorted(classes, key=lambda c: (-(quotas[c] - counts[c]), c.value))
    for c in by_remainder[:leftover]:
        counts[c] += 1
    return counts


def _kind_pool(held_out: frozenset[str]) -> dict[ErrorClass, list[str]]:
    """Injectable kinds per class; held-out suites inject only held-out kinds."""
    pool: dict[ErrorClass, list[str]] = {}
    for kind_id, kind in CATALOG.items():
        if held_out and kind_id not in held_out:
            continue
        pool.setdefault(kind.error_class, []).append(kind_id)
    for kinds in pool.values():
        kinds.sort()
    return pool


def generate_suite(
    tasks: tuple[TaskTemplate, ...],
    spec: SuiteSpec,
) -> list[EpisodeCard]:
    """Deterministic suite with per-class coverage within +-1 of the weights."""
    if not tasks:
        raise PoolExhausted("empty task pool")
    pool = _kind_pool(spec.held_out_kinds)
    weights = spec.class_distribution or {c: 1.0 for c in pool}
    missing = set(weights) - set(pool)
    if missing:
        raise ConfigError(
            "no injectable kinds for class(es): "
            + ", ".join(sorted(c.value for c in missing))
        )

    n_clean = round(spec.n_episodes * spec.clean_fraction)
    n_fail = spec.n_episodes - n_clean
    if n_clean > len(tasks):
        raise PoolExhausted(
            f"{n_clean} clean episodes requested but only {len(tasks)} tasks exist"
        )

    class_counts = _apportion(n_fail, weights)
    slots: list[str | None] = []
    for error_class in sorted(class_counts, key=lambda c: c.value):
        kinds = pool[error_class]
        for j in range(class_counts[error_class]):
            slots.append(kinds[j % len(kinds)])
    slots.extend([None] * n_clean)

    rng = random.Random(derive_seed(spec.master_seed, 0x5EED))
    rng.shuffle(slots)
    task_order = list(tasks)
    rng.shuffle(task_order)

    retry_budget = 3  # both protocols pin the three-attempt budget
    seen: set[tuple[str, str | None, int | None]] = set()
    cards: list[EpisodeCard] = []
    for idx, kind_id in enumerate(slots):
        episode_seed = derive_seed(spec.master_seed, idx)
        placed = False
        for offset in range(len(task_order) * 4):
            task = task_order[(idx + offset) % len(task_order)]
            if kind_id is None:
                turn: int | None = None
            else:
                turn = 1 + random.Random(
                    derive_seed(episode_seed, offset)
                ).randrange(len(task.steps))
            dedup_key = (task.slug, kind_id, turn)
            if dedup_key in seen:
                continue
            seen.add(dedup_key)
            if kind_id is None:
                plan = InjectionPlan(seed=episode_seed)
                guidelines = {
                    "expected_recovery_family": None,
                    "forbidden": ["hallucinated_success"],
                }
            else:
                kind = CATALOG[kind_id]
                plan = InjectionPlan(
                    seed=episode_seed,
                    kind=kind_id,
                    manifestation=kind.default_manifestation,
                    turn_index=turn,
                )
                guidelines = {
                    "expected_recovery_family": EXPECTED_RECOVERY_FAMILY[kind.error_class],
                    "forbidden": ["hallucinated_success"],
                }
            cards.append(
                EpisodeCard(
                    episode_id=f"{idx:04d}-{episode_seed:016x}",
                    prompt=task.prompt,
                    tools=task.tools,
                    steps=task.steps,
                    plan=plan,
                    guidelines=guidelines,
                    retry_budget=retry_budget,
                    task_slug=task.slug,
                )
            )
            placed = True
            break
        if not placed:
            raise PoolExhausted(
                "task pool exhausted after dedup; reduce n_episodes or widen the pool"
            )
    return cards


def generalization_split(
    spec: SuiteSpec,
    tasks: tuple[TaskTemplate, ...] | None = None,
    bank: ExemplarBank | None = None,
) -> tuple[ExemplarBank, list[EpisodeCard]]:
    """(train-visible bank, eval suite injecting the held-out kinds).

    Retrieval against the pruned bank falls back to nearest same-class
    exemplars at distance > 0.
    """
    tasks = tasks or builtin_task_pool()
    bank = bank or load_shipped_bank()
    if not spec.held_out_kinds:
        return bank, generate_suite(tasks, spec)
    pruned = bank.without_kinds(set(spec.held_out_kinds))
    return pruned, generate_suite(tasks, spec)


# --- suite files -------------------------------------------------------------------------


def suite_to_lines(cards: list[EpisodeCard]) -> list[str]:
    return [dumps_canonical(c.to_json()) for c in cards]


def suite_from_lines(lines) -> list[EpisodeCard]:
    return [EpisodeCard.from_json(json.loads(line)) for line in lines if line.strip()]


def write_suite(path, cards: list[EpisodeCard]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in suite_to_lines(cards):
            fh.write(line + "\n")


def read_suite(path) -> list[EpisodeCard]:
    with open(path, encoding="utf-8") as fh:
        return suite_from_lines(fh)


def suite_manifest(spec: SuiteSpec, cards: list[EpisodeCard], bank_version: str) -> dict:
    return {
        "spec": spec.to_json(),
        "n_cards": len(cards),
        "catalog_version": CATALOG_VERSION,
        "bank_version": bank_version,
        "seed_mixer": SEED_MIXER,
    }
