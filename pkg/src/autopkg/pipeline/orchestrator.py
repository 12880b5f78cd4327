"""Per-listing workflow: product -> type -> keys (new types only) -> values.

Every proposal goes through the KGD engine.  Type proposals do not depend on
the graph, so they are fetched ahead for up to ``workers`` listings in
parallel; everything that touches the graph runs in listing order.
"""

from __future__ import annotations

import logging
import time
from collections import Counter, deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable, Iterator

from autopkg.errors import AutoPKGError, BackendFailure, OutputParseError
from autopkg.graph import GraphStore, NodeKind
from autopkg.kgd import KGD, ActionKind, ApplyResult, Candidate, DecisionBackend, LLMDecisionBackend, RuleBackend
from autopkg.llm import ChatClient
from autopkg.pipeline import agents
from autopkg.pipeline.agents import AgentBackend, ChatAgentBackend, HeuristicBackend, TypeProposal
from autopkg.pipeline.config import PipelineConfig
from autopkg.pipeline.model import KeyTable, KeyTableRow, Listing
from autopkg.retrieval import FallbackEmbedder, RemoteEmbedder, VectorIndex

logger = logging.getLogger(__name__)

_OUTCOME = {
    ActionKind.ADD: "added",
    ActionKind.MERGE: "merged",
    ActionKind.REPLACE: "replaced",
    ActionKind.DISCARD: "discarded",
}


@dataclass
class ListingReport:
    listing_id: str
    product: int | None = None
    product_type: int | None = None
    type_action: str | None = None
    keys_discovered: bool = False
    proposed: int = 0
    added: int = 0
    merged: int = 0
    replaced: int = 0
    discarded: int = 0
    values_asserted: int = 0
    errors: list[str] = field(default_factory=list)

    @property
    def assigned(self) -> bool:
        return self.product_type is not None

    def count(self, result: ApplyResult) -> None:
        self.proposed += 1
        outcome = _OUTCOME[result.action.kind]
        setattr(self, outcome, getattr(self, outcome) + 1)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class PipelineReport:
    listings: int = 0
    assigned: int = 0
    unassigned: int = 0
    proposed: int = 0
    added: int = 0
    merged: int = 0
    replaced: int = 0
    discarded: int = 0
    values_asserted: int = 0
    key_discoveries: int = 0
    errors: int = 0
    stats: dict[str, dict[str, int]] = field(default_factory=dict)
    per_listing: list[ListingReport] = field(default_factory=list)

    @property
    def coverage(self) -> float:
        return self.assigned / self.listings if self.listings else 0.0

    @property
    def type_compression(self) -> float | None:
        n = self.listings
        if not n or not self.stats:
            return None
        return 1.0 - self.stats["nodes"]["ProductType"] / n

    def add(self, rep: ListingReport) -> None:
        self.per_listing.append(rep)
        self.listings += 1
        self.assigned += rep.assigned
        self.unassigned += not rep.assigned
        for name in ("proposed", "added", "merged", "replaced", "discarded", "values_asserted"):
            setattr(self, name, getattr(self, name) + getattr(rep, name))
        self.key_discoveries += rep.keys_discovered
        self.errors += len(rep.errors)

    def to_dict(self) -> dict[str, Any]:
        out = {k: v for k, v in asdict(self).items() if k != "per_listing"}
        out["coverage"] = self.coverage
        out["type_compression"] = self.type_compression
        out["per_listing"] = [r.to_dict() for r in self.per_listing]
        return out


class Pipeline:
    def __init__(
        self,
        config: PipelineConfig | None = None,
        *,
        store: GraphStore | None = None,
        agent_backend: AgentBackend | None = None,
        kgd_backend: DecisionBackend | None = None,
        index: VectorIndex | None = None,
        clock: Callable[[], float] | None = None,
    ) -> None:
        self.config = config or PipelineConfig()
        self.store = store or GraphStore()
        self.agents = agent_backend or HeuristicBackend()
        if clock is None and self.config.clock == "wall":
            clock = time.time
        self.kgd = KGD(
            self.store,
            kgd_backend or RuleBackend(theta_merge=self.config.theta_merge),
            index=index or VectorIndex(),
            policy=self.config.policy,
            k=self.config.k,
            use_retrieval_context=self.config.use_retrieval_context,
            clock=clock,
        )

    # -- stages ------------------------------------------------------------

    def discover_keys(self, type_id: int, listing: Listing, report: ListingReport) -> KeyTable:
        """Ask for a key table for a new type and route every row through KGD."""
        node = self.store.node(type_id)
        rows = agents.propose_keys(node.name, node.description, listing, self.agents)
        for cand in agents.key_candidates(type_id, rows, listing.id):
            report.count(self.kgd.process(cand))
        report.keys_discovered = True
        return self.key_table(type_id)

    def key_table(self, type_id: int) -> KeyTable:
        rows = []
        for key_id in self.store.keys_of_type(type_id):
            n = self.store.node(key_id)
            rows.append(KeyTableRow(key_id, n.name, n.description, tuple(n.examples)))
        return KeyTable(type_id, rows)

    def process_listing(self, listing: Listing, proposal: TypeProposal | Exception | None = None) -> ListingReport:
        report = ListingReport(listing.id)
        product = Candidate(
            NodeKind.PRODUCT, listing.id, listing.title, origin={"agent": "ingest", "listing": listing.id}
        )
        res = self.kgd.process(product)
        report.count(res)
        if res.node is None:
            report.errors.append("product rejected: " + "; ".join(res.notes))
            return report
        report.product = res.node

        if proposal is None:
            proposal = self._propose_type(listing)
        if isinstance(proposal, Exception):
            report.errors.append(f"type: {type(proposal).__name__}: {proposal}")
            return report
        cand = agents.type_candidate(listing, proposal, res.node)
        if cand is None:
            return report  # abstention: unassigned
        tres = self.kgd.process(cand)
        report.count(tres)
        report.type_action = str(tres.action)
        if tres.node is None:
            return report
        type_id = report.product_type = tres.node

        try:
            if tres.action.kind is ActionKind.ADD or (
                self.config.rediscover_keys and not self.store.keys_of_type(type_id)
            ):
                table = self.discover_keys(type_id, listing, report)
            else:
                table = self.key_table(type_id)
        except (BackendFailure, OutputParseError) as exc:
            report.errors.append(f"keys: {type(exc).__name__}: {exc}")
            table = self.key_table(type_id)
        if not table.rows:
            return report

        type_node = self.store.node(type_id)
        synonyms = {r.key_id: list(self.store.node(r.key_id).synonyms) for r in table.rows}
        try:
            assertions = agents.extract_values(
                listing,
                res.node,
                type_node.name,
                type_node.description,
                table,
                self.agents,
                use_images=self.config.use_images,
                synonyms=synonyms,
            )
        except (BackendFailure, OutputParseError) as exc:
            report.errors.append(f"values: {type(exc).__name__}: {exc}")
            return report
        for a in assertions:
            vres = self.kgd.process(agents.value_candidate(a, listing.id))
            report.count(vres)
            report.values_asserted += vres.node is not None
        return report

    def _propose_type(self, listing: Listing) -> TypeProposal | Exception:
        try:
            return agents.propose_type(listing, self.agents)
        except (BackendFailure, OutputParseError) as exc:
            return exc

    def _prefetched(self, corpus: Iterable[Listing]) -> Iterator[tuple[Listing, TypeProposal | Exception]]:
        workers = self.config.workers
        if workers == 1:
            for listing in corpus:
                yield listing, self._propose_type(listing)
            return
        window: deque[tuple[Listing, Future[TypeProposal | Exception]]] = deque()
        with ThreadPoolExecutor(max_workers=workers) as pool:
            failure: Exception | None = None
            try:
                for listing in corpus:
                    window.append((listing, pool.submit(self._propose_type, listing)))
                    if len(window) >= 2 * workers:
                        head, fut = window.popleft()
                        yield head, fut.result()
            except Exception as exc:
                # listings read before a corpus error are still applied
                failure = exc
            while window:
                head, fut = window.popleft()
                yield head, fut.result()
            if failure is not None:
                raise failure

    def run(self, corpus: Iterable[Listing]) -> PipelineReport:
        report = PipelineReport()
        try:
            for listing, proposal in self._prefetched(corpus):
                report.add(self.process_listing(listing, proposal))
        finally:
            report.stats = self.store.stats()
        return report


def build_pipeline(
    config: PipelineConfig,
    env: dict[str, str] | None = None,
    *,
    clock: Callable[[], float] | None = None,
) -> Pipeline:
    """Wire backends and embedder according to ``config``."""
    if config.embedder == "fallback":
        provider = FallbackEmbedder()
    else:
        remote = RemoteEmbedder.from_env(env)
        if remote is None and config.embedder == "remote":
            raise AutoPKGError("embedder=remote but EMBED_ENDPOINT is not set")
        provider = remote or FallbackEmbedder()

    agent_backend: AgentBackend
    if config.agent_backend == "llm":
        clients = {
            role: ChatClient.from_env(config.models["type" if role == "type_description" else role], env)
            for role in agents.ROLES
        }
        agent_backend = ChatAgentBackend(clients)
    else:
        agent_backend = HeuristicBackend()

    kgd_backend: DecisionBackend
    if config.kgd_backend == "llm":
        client = ChatClient.from_env(config.models["kgd"], env)
        kgd_backend = LLMDecisionBackend(client.chat, client.model)
    else:
        kgd_backend = RuleBackend(theta_merge=config.theta_merge)

    return Pipeline(
        config,
        agent_backend=agent_backend,
        kgd_backend=kgd_backend,
        index=VectorIndex(provider),
        clock=clock,
    )
