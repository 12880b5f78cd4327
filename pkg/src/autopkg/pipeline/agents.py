"""Proposal agents: type induction, key discovery and value extraction.

Agents talk to an :class:`AgentBackend` through :class:`AgentRequest`; the
backend sees the rendered prompt plus a structured ``payload`` so offline
backends can answer without parsing prose.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence, TypeVar

from autopkg import prompts
from autopkg.errors import OutputParseError
from autopkg.graph import EdgeKind, NodeKind, normalize
from autopkg.kgd import SELF, Candidate, EdgeSpec
from autopkg.llm import ChatClient
from autopkg.parsers import KeyRow, parse_key_table, parse_type_answer, parse_value_json
from autopkg.pipeline.model import EvidenceModality, KeyTable, Listing, ValueAssertion

logger = logging.getLogger(__name__)

ROLES = ("type", "type_description", "keys", "values")

T = TypeVar("T")


@dataclass
class AgentRequest:
    role: str
    prompt: str
    images: Sequence[str] = ()
    payload: dict[str, Any] = field(default_factory=dict)


class AgentBackend(Protocol):
    backend_id: str

    def complete(self, request: AgentRequest) -> str: ...


class ChatAgentBackend:
    """Routes each role to its chat client (one model per role)."""

    def __init__(self, clients: Mapping[str, ChatClient]) -> None:
        missing = set(ROLES) - set(clients)
        if missing:
            raise ValueError(f"no chat client for roles {sorted(missing)}")
        self.clients = dict(clients)
        self.backend_id = "chat(" + ",".join(f"{r}={clients[r].model}" for r in ROLES) + ")"

    def complete(self, request: AgentRequest) -> str:
        return self.clients[request.role].chat(request.prompt, list(request.images))


_TYPE_SPEC_KEYS = ("product_type", "category")
_SKIP_SPEC_KEYS = {"product_type", "category", "brand"}


def key_label(spec_key: str) -> str:
    """``battery_type`` -> ``Battery Type``."""
    words = spec_key.replace("_", " ").split()
    return " ".join(w[:1].upper() + w[1:] for w in words)


def _spec_lookup(specs: Mapping[str, list[str]]) -> dict[str, list[str]]:
    return {normalize(k.replace("_", " ")): v for k, v in specs.items()}


class HeuristicBackend:
    """Deterministic offline stand-in that reads answers off structured specs.

    type: the ``product_type`` (or ``category``) spec, else ``None``.
    keys: Brand followed by the triggering listing's own spec keys.
    values: spec values whose key matches an attribute name or synonym.
    """

    backend_id = "heuristic-v1"

    def complete(self, request: AgentRequest) -> str:
        handler: Callable[[dict[str, Any]], str] = getattr(self, f"_{request.role}")
        return handler(request.payload)

    def _type(self, payload: dict[str, Any]) -> str:
        specs = payload["listing"]["specifications"]
        for key in _TYPE_SPEC_KEYS:
            if specs.get(key):
                return specs[key][0]
        return "None"

    def _type_description(self, payload: dict[str, Any]) -> str:
        return f"A product type grouping listings sold as {payload['product_type'].strip()}."

    def _keys(self, payload: dict[str, Any]) -> str:
        specs: dict[str, list[str]] = payload["listing"]["specifications"]
        rows = [("Brand", "The manufacturer or company that produces the product", specs.get("brand", []))]
        for k, vals in specs.items():
            if k in _SKIP_SPEC_KEYS:
                continue
            label = key_label(k)
            rows.append((label, f"The {label.lower()} of the product", vals))
        lines = ["| Attribute Name | Description | Examples |", "|---|---|---|"]
        lines += [f"| {n} | {d} | {', '.join(v)} |" for n, d, v in rows]
        return "\n".join(lines)

    def _values(self, payload: dict[str, Any]) -> str:
        specs = _spec_lookup(payload["listing"]["specifications"])
        out: dict[str, Any] = {}
        for row in payload["rows"]:
            names = [row["name"], *row.get("synonyms", [])]
            vals = next((specs[normalize(n)] for n in names if normalize(n) in specs), None)
            if not vals:
                out[str(row["key_id"])] = None
            else:
                out[str(row["key_id"])] = vals[0] if len(vals) == 1 else list(vals)
        return json.dumps(out, ensure_ascii=False)


def _ask(backend: AgentBackend, request: AgentRequest, parse: Callable[[str], T]) -> T:
    """Call the backend and parse; one retry on a parse failure."""
    try:
        return parse(backend.complete(request))
    except OutputParseError as exc:
        logger.info("%s reply rejected (%s); retrying once", request.role, exc)
    return parse(backend.complete(request))


@dataclass
class TypeProposal:
    name: str | None
    description: str | None = None


def propose_type(listing: Listing, backend: AgentBackend) -> TypeProposal:
    """Type answer plus a short description; ``name`` is None on abstention."""
    payload = {"listing": listing.to_dict()}
    prompt = prompts.render(
        "type_induction",
        title=listing.title,
        description=listing.description or "",
        specifications=prompts.format_specifications(listing.specifications),
    )
    name = _ask(backend, AgentRequest("type", prompt, (), payload), parse_type_answer)
    if name is None:
        return TypeProposal(None)
    desc_prompt = prompts.render("type_description", product_type=name, title=listing.title)
    desc = backend.complete(
        AgentRequest("type_description", desc_prompt, (), {**payload, "product_type": name})
    ).strip()
    return TypeProposal(name, desc or None)


def type_candidate(listing: Listing, proposal: TypeProposal, product_id: int) -> Candidate | None:
    if proposal.name is None or not normalize(proposal.name):
        return None
    return Candidate(
        NodeKind.PRODUCT_TYPE,
        proposal.name,
        proposal.description,
        origin={"agent": "type", "listing": listing.id},
        intended_edges=[EdgeSpec(product_id, EdgeKind.OF_TYPE, SELF)],
    )


def induce_type(listing: Listing, backend: AgentBackend, product_id: int) -> Candidate | None:
    return type_candidate(listing, propose_type(listing, backend), product_id)


def propose_keys(
    product_type: str, type_description: str | None, listing: Listing, backend: AgentBackend
) -> list[KeyRow]:
    prompt = prompts.render(
        "key_discovery", product_type=product_type, type_description=type_description or ""
    )
    payload = {"listing": listing.to_dict(), "product_type": product_type}
    return _ask(backend, AgentRequest("keys", prompt, (), payload), parse_key_table)


def key_candidates(type_id: int, rows: Sequence[KeyRow], listing_id: str) -> list[Candidate]:
    return [
        Candidate(
            NodeKind.ATTRIBUTE_KEY,
            r.name,
            r.description or None,
            origin={"agent": "keys", "listing": listing_id, "type": type_id},
            intended_edges=[EdgeSpec(type_id, EdgeKind.HAS_KEY, SELF)],
            examples=list(r.examples),
        )
        for r in rows
        if normalize(r.name)
    ]


def extract_values(
    listing: Listing,
    product_id: int,
    product_type: str,
    type_description: str | None,
    key_table: KeyTable,
    backend: AgentBackend,
    *,
    use_images: bool = True,
    synonyms: Mapping[int, Sequence[str]] | None = None,
) -> list[ValueAssertion]:
    if not key_table.rows:
        return []
    images = list(listing.image_refs) if use_images else []
    prompt = prompts.render(
        "value_extraction",
        product_type=product_type,
        type_description=type_description or "",
        attribute_table=key_table.render(),
        title=listing.title,
        highlights=listing.highlights or "",
        description=listing.description or "",
        specifications=prompts.format_specifications(listing.specifications),
    )
    payload = {
        "listing": listing.to_dict(),
        "rows": [
            {"key_id": r.key_id, "name": r.name, "synonyms": list((synonyms or {}).get(r.key_id, ()))}
            for r in key_table.rows
        ],
    }
    known = [str(i) for i in key_table.ids()]
    pairs = _ask(
        backend,
        AgentRequest("values", prompt, images, payload),
        lambda text: parse_value_json(text, known),
    )
    modality = EvidenceModality.MIXED if images else EvidenceModality.TEXT
    return [ValueAssertion(product_id, int(k), v, modality) for k, v in pairs]


def value_candidate(assertion: ValueAssertion, listing_id: str) -> Candidate:
    return Candidate(
        NodeKind.VALUE,
        assertion.raw_value,
        None,
        origin={"agent": "values", "listing": listing_id, "key": assertion.key},
        intended_edges=[
            EdgeSpec(assertion.key, EdgeKind.HAS_VALUE, SELF),
            EdgeSpec(assertion.product, EdgeKind.HAS_ATTRIBUTE, SELF),
        ],
    )
