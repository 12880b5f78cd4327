"""Evaluation metrics for dynamic product knowledge graphs.

All functions are pure.  Conventions for degenerate inputs are fixed here and
echoed in every :class:`MetricsReport` under ``conventions``.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Hashable, Iterable, Mapping, Sequence, TextIO

from autopkg.errors import DomainError, EmptyInput, LengthMismatch, MissingPrior, ParseError
from autopkg.graph import EdgeKind, GraphStore, NodeKind, normalize

WKE_WEIGHTS = (3.0, 1.0, 1.0)
CONSENSUS_THRESHOLD = 3
ABSTAIN = None

EDGE_CONVENTIONS = {
    "empty_prediction_nonempty_reference": "P=0,R=0",
    "both_empty": "P=1,R=1",
    "nonempty_prediction_empty_reference": "P=0,R=0",
    "macro_over": "intersection of product ids",
    "f1": "from macro P and macro R",
    "value_match": "same normalized key and normalized reference contains normalized prediction",
}


def _check_unit(name: str, x: float) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)) or math.isnan(x) or not 0.0 <= x <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {x!r}")
    return float(x)


# ------------------------------------------------------------------ WKE


def weighted_harmonic_mean(values: Sequence[float], weights: Sequence[float]) -> float:
    """sum(w) / sum(w_i / x_i); 0 when any x_i is 0 (the limit)."""
    if len(values) != len(weights):
        raise LengthMismatch("values and weights differ in length")
    if not values:
        raise EmptyInput("no components")
    if any(w <= 0 for w in weights):
        raise DomainError("weights must be positive")
    if any(x == 0 for x in values):
        return 0.0
    # scale by the smallest component so w * lo / x never overflows on subnormals
    lo = min(values)
    return lo * math.fsum(weights) / math.fsum(w * (lo / x) for x, w in zip(values, weights))


def wke(acc: float, m2: float, m3: float, w: Sequence[float] = WKE_WEIGHTS) -> float:
    """Weighted knowledge efficiency over (acceptance, compression|precision, coverage|recall)."""
    comps = [_check_unit(n, x) for n, x in (("acc", acc), ("m2", m2), ("m3", m3))]
    if len(w) != 3:
        raise DomainError("wke takes exactly three weights")
    out = weighted_harmonic_mean(comps, list(w))
    # keep the mean inside [min, max] despite rounding
    return min(max(out, min(comps)), max(comps)) if out else 0.0


def compression(n: int, v: int) -> float:
    if n <= 0:
        raise DomainError("compression needs N > 0")
    if v < 0 or v > n:
        raise DomainError(f"need 0 <= V <= N, got V={v}, N={n}")
    return float(1 - Fraction(v, n))


# ------------------------------------------------------------------ Noisy-OR keys


@dataclass(frozen=True)
class ReliabilityPrior:
    model_id: str
    p: float

    def __post_init__(self) -> None:
        _check_unit(f"prior of {self.model_id}", self.p)


def noisy_or_gt_prob(priors: Sequence[float]) -> float:
    """1 - prod(1 - p_j), evaluated exactly and rounded once."""
    if not priors:
        raise EmptyInput("noisy-or needs at least one predictor")
    miss = Fraction(1)
    for p in priors:
        miss *= 1 - Fraction(_check_unit("prior", p))
    return float(1 - miss)


@dataclass(frozen=True)
class ProbPR:
    p_prec: float
    p_rec: float
    tp: float
    gt_hat: float
    n_keys: int

    def to_dict(self) -> dict[str, Any]:
        return {"p_prec": self.p_prec, "p_rec": self.p_rec, "tp": self.tp, "gt_hat": self.gt_hat, "n_keys": self.n_keys}


def _prior_value(model: str, priors: Mapping[str, float | ReliabilityPrior]) -> float:
    if model not in priors:
        raise MissingPrior(f"no reliability prior for model {model!r}")
    p = priors[model]
    return _check_unit(f"prior of {model}", p.p if isinstance(p, ReliabilityPrior) else p)


def key_gt_probabilities(
    keysets: Mapping[str, Iterable[str]], priors: Mapping[str, float | ReliabilityPrior]
) -> dict[str, float]:
    """P(k in GT) for every pooled key."""
    predictors: dict[str, list[float]] = {}
    for model in sorted(keysets):
        p = _prior_value(model, priors)
        for key in set(keysets[model]):
            predictors.setdefault(key, []).append(p)
    return {k: noisy_or_gt_prob(ps) for k, ps in sorted(predictors.items())}


def prob_precision_recall(
    keysets: Mapping[str, Iterable[str]], priors: Mapping[str, float | ReliabilityPrior]
) -> dict[str, ProbPR]:
    """Probabilistic precision/recall of each model's key set against the pooled keys."""
    sets = {m: set(ks) for m, ks in keysets.items()}
    probs = key_gt_probabilities(sets, priors)
    gt_hat = math.fsum(probs.values())
    out: dict[str, ProbPR] = {}
    for model, keys in sets.items():
        tp = math.fsum(probs[k] for k in sorted(keys))
        out[model] = ProbPR(
            p_prec=tp / len(keys) if keys else 0.0,
            p_rec=tp / gt_hat if gt_hat > 0 else 0.0,
            tp=tp,
            gt_hat=gt_hat,
            n_keys=len(keys),
        )
    return out


# ------------------------------------------------------------------ edges


class EdgeSet:
    """Per-product sets of (key, value) facts, deduplicated after normalization."""

    def __init__(self, products: Mapping[str, Iterable[tuple[str, str]]] | None = None) -> None:
        self.products: dict[str, set[tuple[str, str]]] = {}
        for pid, pairs in (products or {}).items():
            self.add_product(pid, pairs)

    def add_product(self, product_id: str, pairs: Iterable[tuple[str, str]] = ()) -> None:
        bucket = self.products.setdefault(str(product_id), set())
        for k, v in pairs:
            nk, nv = normalize(k), normalize(v)
            if not nk or not nv:
                raise DomainError(f"empty key or value for product {product_id!r}")
            bucket.add((nk, nv))

    def __len__(self) -> int:
        return len(self.products)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, EdgeSet) and self.products == other.products

    def dumps(self) -> str:
        lines = [
            json.dumps({"product_id": pid, "pairs": [list(p) for p in sorted(pairs)]}, ensure_ascii=False)
            for pid, pairs in sorted(self.products.items())
        ]
        return "".join(line + "\n" for line in lines)

    def write(self, sink: str | Path | TextIO) -> None:
        if isinstance(sink, (str, Path)):
            Path(sink).write_text(self.dumps(), encoding="utf-8")
        else:
            sink.write(self.dumps())

    @classmethod
    def read(cls, source: str | Path | TextIO) -> EdgeSet:
        if isinstance(source, (str, Path)):
            with open(source, encoding="utf-8") as fh:
                return cls.read(fh)
        out = cls()
        for lineno, line in enumerate(source, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(exc.msg, f"line {lineno} col {exc.colno}") from None
            try:
                if not isinstance(row, dict) or not isinstance(row.get("product_id"), str):
                    raise ValueError("expected {\"product_id\": str, \"pairs\": [[key, value], ...]}")
                pairs = row.get("pairs", [])
                if not isinstance(pairs, list) or not all(
                    isinstance(p, list) and len(p) == 2 and all(isinstance(x, str) for x in p) for p in pairs
                ):
                    raise ValueError("pairs must be a list of [key, value] string pairs")
                out.add_product(row["product_id"], [(k, v) for k, v in pairs])
            except (ValueError, DomainError) as exc:
                raise ParseError(str(exc), f"line {lineno}") from None
        return out


def edge_set_from_graph(store: GraphStore) -> EdgeSet:
    """(key, value) facts per product, keyed by the product's canonical name."""
    out = EdgeSet()
    for product in store.nodes(NodeKind.PRODUCT):
        pairs = []
        for e in store.out_edges(product.id, EdgeKind.HAS_ATTRIBUTE):
            key = store.node(store.value_key(e.dst))
            pairs.append((key.name, store.node(e.dst).name))
        out.add_product(product.name, pairs)
    return out


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict[str, float]:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _pr(tp_pred: int, n_pred: int, tp_ref: int, n_ref: int) -> tuple[float, float]:
    if n_pred == 0 and n_ref == 0:
        return 1.0, 1.0
    p = tp_pred / n_pred if n_pred else 0.0
    r = tp_ref / n_ref if n_ref else 0.0
    return p, r


@dataclass
class EdgeReport:
    keys: PRF
    values: PRF
    n_products: int
    per_product: dict[str, dict[str, float]] = field(default_factory=dict)
    # mean of per-product F1, reported alongside for comparison
    key_f1_product_mean: float = 0.0
    value_f1_product_mean: float = 0.0
    value_recall: str = "covered"

    def to_dict(self) -> dict[str, Any]:
        return {
            "keys": self.keys.to_dict(),
            "values": self.values.to_dict(),
            "n_products": self.n_products,
            "key_f1_product_mean": self.key_f1_product_mean,
            "value_f1_product_mean": self.value_f1_product_mean,
            "per_product": self.per_product,
            "conventions": {**EDGE_CONVENTIONS, "value_recall_numerator": self.value_recall},
        }


def _product_scores(
    pred: set[tuple[str, str]], ref: set[tuple[str, str]], value_recall: str
) -> dict[str, float]:
    kp, kr = {k for k, _ in pred}, {k for k, _ in ref}
    k_hit = len(kp & kr)
    key_p, key_r = _pr(k_hit, len(kp), k_hit, len(kr))

    def matched(k: str, v: str, k2: str, v2: str) -> bool:
        return k == k2 and v in v2

    tp_pred = sum(1 for k, v in pred if any(matched(k, v, k2, v2) for k2, v2 in ref))
    if value_recall == "literal":
        tp_ref = tp_pred
    else:
        tp_ref = sum(1 for k2, v2 in ref if any(matched(k, v, k2, v2) for k, v in pred))
    val_p, val_r = _pr(tp_pred, len(pred), tp_ref, len(ref))
    return {"key_p": key_p, "key_r": key_r, "value_p": val_p, "value_r": val_r}


def edge_prf(predicted: EdgeSet, reference: EdgeSet, *, value_recall: str = "covered") -> EdgeReport:
    """Key- and value-level P/R/F1, macro-averaged over shared product ids.

    ``value_recall="covered"`` counts reference facts matched by some
    prediction; ``"literal"`` reuses the matched-prediction count, which can
    exceed the reference size when several predictions hit one fact.
    """
    if value_recall not in ("covered", "literal"):
        raise DomainError(f"unknown value_recall mode {value_recall!r}")
    shared = sorted(set(predicted.products) & set(reference.products))
    per = {
        pid: _product_scores(predicted.products[pid], reference.products[pid], value_recall)
        for pid in shared
    }
    if not per:
        zero = PRF(0.0, 0.0, 0.0)
        return EdgeReport(zero, zero, 0, {}, 0.0, 0.0, value_recall)
    n = len(per)

    def macro(field_: str) -> float:
        return math.fsum(s[field_] for s in per.values()) / n

    kp, kr, vp, vr = macro("key_p"), macro("key_r"), macro("value_p"), macro("value_r")
    return EdgeReport(
        keys=PRF(kp, kr, f1_score(kp, kr)),
        values=PRF(vp, vr, f1_score(vp, vr)),
        n_products=n,
        per_product=per,
        key_f1_product_mean=math.fsum(f1_score(s["key_p"], s["key_r"]) for s in per.values()) / n,
        value_f1_product_mean=math.fsum(f1_score(s["value_p"], s["value_r"]) for s in per.values()) / n,
        value_recall=value_recall,
    )


# ------------------------------------------------------------------ agreement


def cohen_kappa(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    """Cohen's kappa; 1.0 in the degenerate case where both raters use one label."""
    if len(a) != len(b):
        raise LengthMismatch(f"label vectors differ in length ({len(a)} vs {len(b)})")
    n = len(a)
    if n == 0:
        raise EmptyInput("kappa needs at least one instance")
    p_o = Fraction(sum(x == y for x, y in zip(a, b)), n)
    ca, cb = Counter(a), Counter(b)
    p_e = Fraction(sum(ca[label] * cb[label] for label in ca), n * n)
    if p_e == 1:
        return 1.0
    return float((p_o - p_e) / (1 - p_e))


def majority_consensus(
    judge_labels: Mapping[str, Sequence[Hashable]], threshold: int = CONSENSUS_THRESHOLD
) -> list[Hashable]:
    """Per instance, the label given by at least ``threshold`` judges, else ``ABSTAIN``."""
    if threshold < 1:
        raise DomainError("threshold must be >= 1")
    if len(judge_labels) < threshold:
        raise DomainError(f"{len(judge_labels)} judges cannot reach a threshold of {threshold}")
    vectors = list(judge_labels.values())
    n = len(vectors[0])
    if any(len(v) != n for v in vectors):
        raise LengthMismatch("judge label vectors differ in length")
    out: list[Hashable] = []
    for i in range(n):
        counts = Counter(v[i] for v in vectors)
        winners = [label for label, c in counts.items() if c >= threshold]
        out.append(winners[0] if len(winners) == 1 else ABSTAIN)
    return out


def accuracy_vs_consensus(candidate: Sequence[Hashable], consensus: Sequence[Hashable]) -> float:
    if len(candidate) != len(consensus):
        raise LengthMismatch("candidate and consensus differ in length")
    scored = [(c, g) for c, g in zip(candidate, consensus) if g is not ABSTAIN]
    if not scored:
        raise DomainError("every instance abstained; accuracy is undefined")
    return sum(c == g for c, g in scored) / len(scored)


# ------------------------------------------------------------------ reports


@dataclass
class MetricsReport:
    kind: str
    inputs: dict[str, Any]
    metrics: dict[str, Any]
    conventions: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "inputs": self.inputs, "metrics": self.metrics, "conventions": self.conventions}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False, default=str) + "\n"


def type_report(
    acc: float, cov: float, *, comp: float | None = None, n: int | None = None, v: int | None = None,
    weights: Sequence[float] = WKE_WEIGHTS,
) -> MetricsReport:
    if comp is None:
        if n is None or v is None:
            raise DomainError("give either comp or both N and V")
        comp = compression(n, v)
    return MetricsReport(
        "types",
        {"acc": acc, "comp": comp, "cov": cov, "N": n, "V": v, "weights": list(weights)},
        {"wke": wke(acc, comp, cov, weights)},
        {"wke_zero_component": "0"},
    )


def keys_report(
    keysets: Mapping[str, Iterable[str]],
    priors: Mapping[str, float | ReliabilityPrior],
    weights: Sequence[float] = WKE_WEIGHTS,
) -> MetricsReport:
    rows = prob_precision_recall(keysets, priors)
    metrics = {}
    for model, pr in sorted(rows.items()):
        acc = _prior_value(model, priors)
        metrics[model] = {**pr.to_dict(), "acc": acc, "wke": wke(acc, pr.p_prec, pr.p_rec, weights)}
    return MetricsReport(
        "keys",
        {"models": sorted(rows), "priors": {m: _prior_value(m, priors) for m in sorted(rows)}},
        metrics,
        {"acceptance": "reliability prior", "empty_keyset_precision": "0", "empty_pool_recall": "0"},
    )


def edges_report(predicted: EdgeSet, reference: EdgeSet, *, value_recall: str = "covered") -> MetricsReport:
    rep = edge_prf(predicted, reference, value_recall=value_recall)
    body = rep.to_dict()
    conventions = body.pop("conventions")
    return MetricsReport(
        "edges",
        {"predicted_products": len(predicted), "reference_products": len(reference)},
        body,
        conventions,
    )
