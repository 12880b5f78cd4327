"""Multi-agent extraction pipeline."""

from autopkg.pipeline.agents import (
    AgentBackend,
    AgentRequest,
    ChatAgentBackend,
    HeuristicBackend,
    TypeProposal,
    extract_values,
    induce_type,
)
from autopkg.pipeline.config import PRESETS, PipelineConfig, load_config
from autopkg.pipeline.model import (
    EvidenceModality,
    KeyTable,
    KeyTableRow,
    Listing,
    ValueAssertion,
    iter_corpus,
    read_corpus,
    write_corpus,
)
from autopkg.pipeline.orchestrator import ListingReport, Pipeline, PipelineReport, build_pipeline

__all__ = [
    "AgentBackend",
    "AgentRequest",
    "ChatAgentBackend",
    "EvidenceModality",
    "HeuristicBackend",
    "KeyTable",
    "KeyTableRow",
    "Listing",
    "ListingReport",
    "PRESETS",
    "Pipeline",
    "PipelineConfig",
    "PipelineReport",
    "TypeProposal",
    "ValueAssertion",
    "build_pipeline",
    "extract_values",
    "induce_type",
    "iter_corpus",
    "load_config",
    "read_corpus",
    "write_corpus",
]
