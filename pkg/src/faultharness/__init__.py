"""Deterministic fault-injection simulator and robustness evaluation harness
for tool-calling agents."""

from .bank import (
    ExemplarBank,
    RecoveryExemplar,
    SignaturePattern,
    load_bank,
    load_shipped_bank,
    retrieve,
    retrieve_top_k,
    similarity_distance,
)
from .benchgen import EpisodeCard, SuiteSpec, generalization_split, generate_suite
from .episode import InjectionPlan, Trajectory, Turn
from .metrics import EpisodeGrade, MetricsReport, aggregate, bootstrap_ci, grade_episode
from .simulator import SimConfig, ToolRegistry, ToolSpec, run_episode
from .taxonomy import (
    CATALOG,
    ErrorClass,
    ErrorSignature,
    Manifestation,
    canonical_key,
    classify_raw_failure,
)

__version__ = "0.1.0"

__all__ = [
    "CATALOG",
    "EpisodeCard",
    "EpisodeGrade",
    "ErrorClass",
    "ErrorSignature",
    "ExemplarBank",
    "InjectionPlan",
    "Manifestation",
    "MetricsReport",
    "RecoveryExemplar",
    "SignaturePattern",
    "SimConfig",
    "SuiteSpec",
    "ToolRegistry",
    "ToolSpec",
    "Trajectory",
    "Turn",
    "aggregate",
    "bootstrap_ci",
    "canonical_key",
    "classify_raw_failure",
    "generalization_split",
    "generate_suite",
    "grade_episode",
    "load_bank",
    "load_shipped_bank",
    "retrieve",
    "retrieve_top_k",
    "run_episode",
    "similarity_distance",
]
