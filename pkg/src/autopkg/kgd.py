"""Knowledge-graph decision engine: the only code path that writes the graph.

Each proposal (a :class:`Candidate`) is paired with its top-k retrieval
neighborhood, a backend picks one constrained action, and :meth:`KGD.apply`
executes it inside a store transaction.  Whatever happens, exactly one audit
record is appended per candidate.
"""

from __future__ import annotations

import logging
import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Protocol, Sequence, Union

from autopkg import prompts
from autopkg.errors import (
    ActionError,
    AutoPKGError,
    BackendFailure,
    CrossNodeConflict,
    EmptyName,
    GraphError,
    IllegalAction,
    KindMismatch,
    ProviderFailure,
    UnknownTarget,
    UnparseableAction,
    UntypedValue,
)
from autopkg.graph import EdgeKind, GraphStore, NodeKind, normalize
from autopkg.retrieval import DEFAULT_K, VectorIndex, cosine, fallback_embed

logger = logging.getLogger(__name__)

SELF = "self"
DEFAULT_THETA_MERGE = 0.92
DEFAULT_STOPWORDS = frozenset(
    {"none", "null", "n/a", "na", "nan", "unknown", "other", "others", "misc",
     "miscellaneous", "various", "etc", "tbd", "-", "--"}
)

NODE_TYPE_LABELS = {
    NodeKind.PRODUCT: "Product",
    NodeKind.PRODUCT_TYPE: "Product Type",
    NodeKind.ATTRIBUTE_KEY: "Attribute Key",
    NodeKind.VALUE: "Attribute Value",
}


class PolicyVariant(str, Enum):
    BASIC = "basic"
    STRICT = "strict"
    NO_DISCARD = "no-discard"

    @property
    def template(self) -> str:
        return {"basic": "kgd_basic", "strict": "kgd_strict", "no-discard": "kgd_no_discard"}[self.value]


class ActionKind(str, Enum):
    ADD = "ADD"
    MERGE = "MERGE"
    REPLACE = "REPLACE"
    DISCARD = "DISCARD"


@dataclass(frozen=True)
class EditAction:
    kind: ActionKind
    target: int | None = None

    def __post_init__(self) -> None:
        needs_target = self.kind in (ActionKind.MERGE, ActionKind.REPLACE)
        if needs_target != (self.target is not None):
            raise ValueError(f"{self.kind.value} {'requires' if needs_target else 'takes no'} target")

    @classmethod
    def add(cls) -> EditAction:
        return cls(ActionKind.ADD)

    @classmethod
    def discard(cls) -> EditAction:
        return cls(ActionKind.DISCARD)

    @classmethod
    def merge(cls, target: int) -> EditAction:
        return cls(ActionKind.MERGE, target)

    @classmethod
    def replace(cls, target: int) -> EditAction:
        return cls(ActionKind.REPLACE, target)

    def __str__(self) -> str:
        return self.kind.value if self.target is None else f"{self.kind.value} {self.target}"


NodeRef = Union[int, str]


@dataclass(frozen=True)
class EdgeSpec:
    """An edge to materialize once the candidate is accepted; ``"self"`` is the candidate."""

    src: NodeRef
    kind: EdgeKind
    dst: NodeRef

    def __post_init__(self) -> None:
        for ref in (self.src, self.dst):
            if not (ref == SELF or (isinstance(ref, int) and not isinstance(ref, bool))):
                raise ValueError(f"edge endpoint must be a node id or {SELF!r}, got {ref!r}")

    def bind(self, node_id: int) -> tuple[int, EdgeKind, int]:
        src = node_id if self.src == SELF else self.src
        dst = node_id if self.dst == SELF else self.dst
        return int(src), self.kind, int(dst)

    def to_list(self) -> list[Any]:
        return [self.src, self.kind.value, self.dst]


@dataclass
class Candidate:
    kind: NodeKind
    name: str
    description: str | None = None
    origin: dict[str, Any] = field(default_factory=dict)
    intended_edges: list[EdgeSpec] = field(default_factory=list)
    # example values for AttributeKey proposals, kept as node metadata
    examples: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.kind = NodeKind(self.kind)
        if not normalize(self.name):
            raise EmptyName(f"empty {self.kind.value} candidate name")

    @property
    def parent(self) -> int | None:
        """Typing key of a Value candidate (src of its HasValue edge into self)."""
        for e in self.intended_edges:
            if e.kind is EdgeKind.HAS_VALUE and e.dst == SELF and isinstance(e.src, int):
                return e.src
        return None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "kind": self.kind.value,
            "name": self.name,
            "description": self.description,
            "origin": dict(self.origin),
            "intended_edges": [e.to_list() for e in self.intended_edges],
        }
        if self.examples:
            out["examples"] = list(self.examples)
        return out


@dataclass(frozen=True)
class Neighbor:
    node_id: int
    name: str
    description: str | None = None
    synonyms: tuple[str, ...] = ()
    score: float | None = None

    def pretty(self) -> dict[str, Any]:
        out: dict[str, Any] = {"node_id": self.node_id, "node_name": self.name}
        if self.description:
            out["description"] = self.description
        if self.synonyms:
            out["synonyms"] = list(self.synonyms)
        return out


@dataclass
class DecisionContext:
    candidate: Candidate
    neighbors: list[Neighbor]
    policy: PolicyVariant = PolicyVariant.BASIC

    @property
    def neighbor_ids(self) -> set[int]:
        return {n.node_id for n in self.neighbors}


class DecisionBackend(Protocol):
    backend_id: str

    def decide(self, context: DecisionContext) -> str | EditAction: ...


# ---------------------------------------------------------------- parsing

_ACTION_RE = re.compile(r"(ADD|DISCARD|MERGE|REPLACE)(?:\s+(\d+))?", re.IGNORECASE)
_TRAILING_PUNCT = ".,;:!"


def parse_action(text: str, context: DecisionContext) -> EditAction:
    """Parse a backend reply of the form ``ADD | DISCARD | MERGE <id> | REPLACE <id>``."""
    line = next((ln.strip() for ln in text.splitlines() if ln.strip()), "")
    line = line.rstrip(_TRAILING_PUNCT).strip()
    m = _ACTION_RE.fullmatch(line)
    if m is None:
        raise UnparseableAction(f"cannot parse action from {line[:80]!r}")
    kind = ActionKind(m.group(1).upper())
    target = None if m.group(2) is None else int(m.group(2))
    if (kind in (ActionKind.MERGE, ActionKind.REPLACE)) != (target is not None):
        raise UnparseableAction(f"malformed {kind.value} action {line!r}")
    return check_action(EditAction(kind, target), context)


def check_action(action: EditAction, context: DecisionContext) -> EditAction:
    if action.target is not None and action.target not in context.neighbor_ids:
        raise UnknownTarget(f"{action} targets a node that was not presented")
    if action.kind is ActionKind.DISCARD and context.policy is PolicyVariant.NO_DISCARD:
        raise IllegalAction("DISCARD is not allowed under the no-discard policy")
    return action


# ---------------------------------------------------------------- backends


def _number_variant(a: str, b: str) -> bool:
    if a == b:
        return True
    short, long = sorted((a, b), key=len)
    return (
        long == short + "s"
        or long == short + "es"
        or (short.endswith("y") and long == short[:-1] + "ies")
    )


def same_up_to_number(a: str, b: str) -> bool:
    """Normalized strings that differ only in English singular/plural word forms."""
    ta, tb = normalize(a).split(), normalize(b).split()
    return len(ta) == len(tb) and all(_number_variant(x, y) for x, y in zip(ta, tb))


class RuleBackend:
    """Deterministic reference policy.

    Basic: merge on normalized equality with a neighbor's name or synonym,
    then on singular/plural equality, then when the top-1 cosine reaches
    ``theta_merge``; otherwise add.  Strict only merges on equality.
    Too-short names and stopwords are discarded, except under NoDiscard.
    """

    def __init__(
        self,
        theta_merge: float = DEFAULT_THETA_MERGE,
        stopwords: frozenset[str] = DEFAULT_STOPWORDS,
        embed: Callable[[str], Any] = fallback_embed,
    ) -> None:
        self.theta_merge = theta_merge
        self.stopwords = frozenset(normalize(s) for s in stopwords)
        self.embed = embed
        self.backend_id = f"rule(theta={theta_merge})"

    def decide(self, context: DecisionContext) -> EditAction:
        policy = context.policy
        norm = normalize(context.candidate.name)
        if len(norm) < 2 or norm in self.stopwords:
            return EditAction.add() if policy is PolicyVariant.NO_DISCARD else EditAction.discard()
        for n in context.neighbors:
            if norm in {normalize(f) for f in (n.name, *n.synonyms)}:
                return EditAction.merge(n.node_id)
        if policy is PolicyVariant.STRICT or not context.neighbors:
            return EditAction.add()
        for n in context.neighbors:
            if any(same_up_to_number(norm, f) for f in (n.name, *n.synonyms)):
                return EditAction.merge(n.node_id)
        top = max(context.neighbors, key=lambda n: (self._score(norm, n), -n.node_id))
        if self._score(norm, top) >= self.theta_merge:
            return EditAction.merge(top.node_id)
        return EditAction.add()

    def _score(self, norm: str, n: Neighbor) -> float:
        if n.score is not None:
            return n.score
        return cosine(self.embed(norm), self.embed(n.name))


def pretty_nodes(neighbors: Sequence[Neighbor]) -> str:
    return repr([n.pretty() for n in neighbors])


def pretty_candidate(candidate: Candidate) -> str:
    out: dict[str, Any] = {"node_name": candidate.name}
    if candidate.description:
        out["description"] = candidate.description
    return repr(out)


def render_kgd_prompt(context: DecisionContext) -> str:
    return prompts.render(
        context.policy.template,
        pretty_nodes=pretty_nodes(context.neighbors),
        node_type=NODE_TYPE_LABELS[context.candidate.kind],
        pretty_candidate=pretty_candidate(context.candidate),
    )


class LLMDecisionBackend:
    """Renders the policy's prompt and returns the model's raw reply."""

    def __init__(self, complete: Callable[[str], str], model: str = "llm") -> None:
        self.complete = complete
        self.backend_id = f"llm:{model}"

    def decide(self, context: DecisionContext) -> str:
        return self.complete(render_kgd_prompt(context))


@dataclass
class Decision:
    action: EditAction
    backend_id: str
    # raw backend proposal when it differs from the action finally chosen
    proposed: str | None = None
    notes: list[str] = field(default_factory=list)


def decide(context: DecisionContext, backend: DecisionBackend) -> Decision:
    """Ask ``backend`` for a legal action: one retry, then a safe fallback."""
    backend_id = getattr(backend, "backend_id", type(backend).__name__)
    notes: list[str] = []
    proposed: str | None = None
    failed_transport = False
    for attempt in (1, 2):
        reply: str | EditAction | None = None
        try:
            reply = backend.decide(context)
            if isinstance(reply, EditAction):
                return Decision(check_action(reply, context), backend_id, proposed, notes)
            return Decision(parse_action(reply, context), backend_id, proposed, notes)
        except ActionError as exc:
            proposed = str(reply)[:200]
            notes.append(f"attempt {attempt}: {type(exc).__name__}: {exc}")
            failed_transport = False
        except BackendFailure as exc:
            notes.append(f"attempt {attempt}: BackendFailure: {exc}")
            failed_transport = True
    if failed_transport:
        # backend unreachable: the candidate is dropped whatever the policy
        fallback = EditAction.discard()
    elif context.policy is PolicyVariant.NO_DISCARD:
        fallback = EditAction.add()
    else:
        fallback = EditAction.discard()
    notes.append(f"fell back to {fallback}")
    logger.warning("decision for %r fell back to %s", context.candidate.name, fallback)
    return Decision(fallback, backend_id, proposed, notes)


# ---------------------------------------------------------------- engine


@dataclass
class ApplyResult:
    action: EditAction
    node: int | None
    sequence: int
    notes: list[str]


class KGD:
    """Serialized consolidation queue over one :class:`GraphStore`.

    ``clock`` stamps audit records; the default logical clock (the record's
    own sequence number) keeps snapshots byte-identical across replays.
    """

    def __init__(
        self,
        store: GraphStore,
        backend: DecisionBackend | None = None,
        *,
        index: VectorIndex | None = None,
        policy: PolicyVariant = PolicyVariant.BASIC,
        k: int = DEFAULT_K,
        use_retrieval_context: bool = True,
        clock: Callable[[], float] | None = None,
    ) -> None:
        if k < 1:
            raise ValueError("k must be >= 1")
        self.store = store
        self.backend = backend or RuleBackend()
        self.index = index or VectorIndex()
        self.policy = PolicyVariant(policy)
        self.k = k
        self.use_retrieval_context = use_retrieval_context
        self.clock = clock or (lambda: float(self.store.next_seq))
        self._lock = threading.RLock()
        if len(store):
            self.rebuild_index()

    def rebuild_index(self) -> None:
        self.index.clear()
        for n in self.store.nodes():
            if n.kind is not NodeKind.PRODUCT:
                self.index.index_upsert(n.kind, n.id, n.name, self.store.scope_of(n.id))

    # -- context ---------------------------------------------------------

    def build_context(self, candidate: Candidate, k: int | None = None) -> DecisionContext:
        k = self.k if k is None else k
        if k < 1:
            raise ValueError("k must be >= 1")
        neighbors: list[Neighbor] = []
        if self.use_retrieval_context and candidate.kind is not NodeKind.PRODUCT:
            scope = candidate.parent if candidate.kind is NodeKind.VALUE else None
            for hit in self.index.top_k(candidate.kind, candidate.name, k, scope):
                node = self.store.node(hit.node_id)
                neighbors.append(
                    Neighbor(node.id, node.name, node.description, tuple(node.synonyms), hit.score)
                )
        return DecisionContext(candidate, neighbors, self.policy)

    def decide(self, context: DecisionContext) -> Decision:
        if context.candidate.kind is NodeKind.PRODUCT:
            return Decision(EditAction.add(), "identity")
        return decide(context, self.backend)

    def process(self, candidate: Candidate) -> ApplyResult:
        """build_context -> decide -> apply, atomically with respect to other writers."""
        with self._lock:
            try:
                context = self.build_context(candidate)
            except ProviderFailure as exc:
                return record_failure(self, candidate, exc)
            decision = self.decide(context)
            return self.apply_decision(decision, candidate)

    # -- apply -----------------------------------------------------------

    def apply(self, action: EditAction, candidate: Candidate) -> int | None:
        return self.apply_decision(Decision(action, "direct"), candidate).node

    def apply_decision(self, decision: Decision, candidate: Candidate) -> ApplyResult:
        notes = list(decision.notes)
        proposed = decision.proposed
        action = decision.action
        with self._lock:
            try:
                with self.store.transaction() as tx:
                    applied, node = self._execute(action, candidate, notes)
                    effects = list(tx.effects)
            except GraphError as exc:
                notes.append(f"rolled back {action}: {type(exc).__name__}: {exc}")
                proposed = proposed or str(action)
                applied, node, effects = EditAction.discard(), None, []
            if applied != action and proposed is None:
                proposed = str(action)
            if node is not None and applied.kind in (ActionKind.ADD, ActionKind.REPLACE):
                self._reindex(node, notes)
            record = self.store.append_audit(
                candidate=candidate.to_dict(),
                action=str(applied),
                target=applied.target,
                backend_id=decision.backend_id,
                timestamp=self.clock(),
                node=node,
                proposed=proposed,
                notes=notes,
                effects=effects,
            )
        return ApplyResult(applied, node, record.sequence, notes)

    def _reindex(self, node_id: int, notes: list[str]) -> None:
        node = self.store.node(node_id)
        if node.kind is NodeKind.PRODUCT:
            return
        try:
            self.index.index_upsert(node.kind, node.id, node.name, self.store.scope_of(node.id))
        except ProviderFailure as exc:
            notes.append(f"index not updated: {exc}")
            logger.warning("index upsert failed for node %d: %s", node_id, exc)

    def _execute(
        self, action: EditAction, candidate: Candidate, notes: list[str]
    ) -> tuple[EditAction, int | None]:
        store = self.store
        if action.kind is ActionKind.DISCARD:
            return action, None
        scope = candidate.parent
        if candidate.kind is NodeKind.VALUE and scope is None:
            raise UntypedValue(f"value candidate {candidate.name!r} has no HasValue parent")

        if action.kind is ActionKind.ADD:
            existing = store.resolve(candidate.kind, candidate.name, scope)
            if existing is None:
                node = store.create_node(
                    candidate.kind,
                    candidate.name,
                    candidate.description,
                    parent=scope if candidate.kind is NodeKind.VALUE else None,
                    examples=candidate.examples,
                )
                for spec in candidate.intended_edges:
                    edge = spec.bind(node)
                    if edge[1] is EdgeKind.HAS_VALUE and edge[2] == node:
                        continue  # created with the node
                    store.add_edge(*edge)
                return action, node
            if candidate.kind is NodeKind.PRODUCT:
                raise GraphError(f"product {candidate.name!r} already exists as node {existing}")
            notes.append(f"ADD collided with node {existing}; applied as MERGE")
            action = EditAction.merge(existing)

        target = action.target
        assert target is not None
        if store.node(target).kind is not candidate.kind:
            raise KindMismatch(f"{action} targets a {store.node(target).kind.value} node")

        if action.kind is ActionKind.REPLACE:
            try:
                store.replace_label(target, candidate.name)
            except CrossNodeConflict as exc:
                notes.append(f"REPLACE name claimed by node {exc.owner}; applied as MERGE into it")
                action = target_action = EditAction.merge(exc.owner)  # type: ignore[arg-type]
                target = target_action.target
                assert target is not None
                if store.node(target).kind is not candidate.kind:
                    raise
        else:
            try:
                store.merge_into(target, candidate.name, candidate.description)
            except CrossNodeConflict as exc:
                notes.append(f"synonym {candidate.name!r} kept by node {exc.owner}; not added")

        for spec in candidate.intended_edges:
            edge = spec.bind(target)
            try:
                store.add_edge(*edge)
            except GraphError as exc:
                notes.append(f"skipped edge {edge[0]}-{edge[1].value}->{edge[2]}: {type(exc).__name__}")
        return action, target


def record_failure(engine: KGD, candidate: Candidate, error: AutoPKGError) -> ApplyResult:
    """Audit a candidate that never reached a decision (e.g. retrieval failure)."""
    return engine.apply_decision(
        Decision(EditAction.discard(), "none", notes=[f"{type(error).__name__}: {error}"]),
        candidate,
    )
