"""Product-attribute knowledge graph construction with constrained canonicalization."""

from autopkg.graph import CanonicalNode, Edge, EdgeKind, GraphStore, NodeKind, normalize
from autopkg.kgd import KGD, Candidate, EditAction, EdgeSpec, PolicyVariant, RuleBackend, parse_action
from autopkg.retrieval import VectorIndex, fallback_embed

__version__ = "0.1.0"

__all__ = [
    "CanonicalNode",
    "Candidate",
    "Edge",
    "EdgeKind",
    "EdgeSpec",
    "EditAction",
    "GraphStore",
    "KGD",
    "NodeKind",
    "PolicyVariant",
    "RuleBackend",
    "VectorIndex",
    "fallback_embed",
    "normalize",
    "parse_action",
]
