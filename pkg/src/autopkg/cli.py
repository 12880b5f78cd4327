"""Command-line interface.

Exit codes: 0 success, 1 domain failure (node not found, metric domain
error), 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Sequence

from autopkg import evaluation as ev
from autopkg import prompts, synthetic
from autopkg.errors import AmbiguousName, AutoPKGError, ConfigError, DomainError, ParseError
from autopkg.graph import GraphStore, NodeKind
from autopkg.manifest import RunManifest, file_sha256
from autopkg.pipeline import build_pipeline, iter_corpus, load_config, write_corpus

logger = logging.getLogger("autopkg")

EXIT_OK, EXIT_DOMAIN, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad user input: missing file, unreadable JSON and the like."""


def demo_corpus_path() -> Path:
    return Path(str(resources.files("autopkg.data").joinpath("demo_corpus.jsonl")))


def _require_file(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} not found: {p}")
    return p


def _read_json(path: str, what: str) -> Any:
    p = _require_file(path, what)
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: line {exc.lineno} col {exc.colno}: {exc.msg}") from None


def _emit(report: ev.MetricsReport, out: str | None) -> None:
    text = report.dumps()
    sys.stdout.write(text)
    if out:
        Path(out).write_text(text, encoding="utf-8")


# ------------------------------------------------------------------ build


def cmd_build(args: argparse.Namespace) -> int:
    corpus = _require_file(args.corpus or demo_corpus_path(), "corpus")
    if args.config:
        _require_file(args.config, "config file")
    overrides: dict[str, Any] = {
        "policy": args.policy,
        "k": args.k,
        "workers": args.workers,
        "seed": args.seed,
        "preset": args.preset,
        "kgd_backend": args.kgd_backend,
        "agent_backend": args.agent_backend,
        "embedder": args.embedder,
        "use_retrieval_context": False if args.no_retrieval_context else None,
        "use_images": False if args.no_images else None,
    }
    config = load_config(args.config, overrides=overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": str(corpus),
        "snapshot": str(out / "snapshot.json"),
        "report": str(out / "report.json"),
        "manifest": str(out / "manifest.json"),
    }

    started = time.time()
    pipeline = build_pipeline(config)
    failure: ParseError | None = None
    try:
        report = pipeline.run(iter_corpus(corpus))
    except ParseError as exc:
        # keep what was built so far
        failure = exc
        report = None
    pipeline.store.snapshot(paths["snapshot"])
    if failure is not None:
        print(f"error: {corpus}: {failure} (partial snapshot written to {paths['snapshot']})", file=sys.stderr)
        return EXIT_INPUT
    assert report is not None
    Path(paths["report"]).write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
    )

    manifest = RunManifest(
        config=config.to_dict(),
        corpus_sha256=file_sha256(corpus),
        template_digests=prompts.template_digests(),
        backends={
            "agents": pipeline.agents.backend_id,
            "kgd": pipeline.kgd.backend.backend_id,
            "embedder": pipeline.kgd.index.provider.provider_id,
        },
        paths=paths,
        output_digests={"snapshot": file_sha256(paths["snapshot"]), "report": file_sha256(paths["report"])},
        started_at=started,
        finished_at=time.time(),
    )
    manifest.write(paths["manifest"])
    stats = report.stats
    print(
        f"listings {report.listings}  assigned {report.assigned}  "
        f"types {stats['nodes']['ProductType']}  keys {stats['nodes']['AttributeKey']}  "
        f"values {stats['nodes']['Value']}"
    )
    print(f"snapshot sha256 {manifest.output_digests['snapshot']}")
    return EXIT_OK


# ------------------------------------------------------------------ eval


def _eval_types(args: argparse.Namespace) -> ev.MetricsReport:
    weights = [float(x) for x in args.weights.split(",")]
    if args.comp is None and (args.n is None or args.v is None):
        raise InputError("give --comp or both --n and --v")
    return ev.type_report(args.acc, args.cov, comp=args.comp, n=args.n, v=args.v, weights=weights)


def _eval_keys(args: argparse.Namespace) -> ev.MetricsReport:
    keysets = _read_json(args.keysets, "keysets file")
    priors = _read_json(args.priors, "priors file")
    if not isinstance(keysets, dict) or not all(isinstance(v, list) for v in keysets.values()):
        raise InputError(f"{args.keysets}: expected {{model: [keys]}}")
    if not isinstance(priors, dict):
        raise InputError(f"{args.priors}: expected {{model: p}}")
    return ev.keys_report(keysets, priors)


def _eval_edges(args: argparse.Namespace) -> ev.MetricsReport:
    try:
        pred = ev.EdgeSet.read(_require_file(args.predicted, "predicted edge set"))
        ref = ev.EdgeSet.read(_require_file(args.reference, "reference edge set"))
    except ParseError as exc:
        raise InputError(str(exc)) from None
    return ev.edges_report(pred, ref, value_recall=args.value_recall)


def _label_vector(path: str) -> list[Any]:
    data = _read_json(path, "label file")
    if not isinstance(data, list):
        raise InputError(f"{path}: expected a JSON array of labels")
    return data


def _hashable(labels: list[Any]) -> list[Any]:
    return [json.dumps(x, sort_keys=True) if isinstance(x, (list, dict)) else x for x in labels]


def _eval_kappa(args: argparse.Namespace) -> ev.MetricsReport:
    a, b = _hashable(_label_vector(args.a)), _hashable(_label_vector(args.b))
    return ev.MetricsReport(
        "kappa", {"a": args.a, "b": args.b, "n": len(a)}, {"kappa": ev.cohen_kappa(a, b)},
        {"single_label_both": "1.0"},
    )


def _eval_consensus(args: argparse.Namespace) -> ev.MetricsReport:
    judges = _read_json(args.judges, "judges file")
    if not isinstance(judges, dict) or not all(isinstance(v, list) for v in judges.values()):
        raise InputError(f"{args.judges}: expected {{judge: [labels]}}")
    judges = {k: _hashable(v) for k, v in judges.items()}
    consensus = ev.majority_consensus(judges, args.threshold)
    metrics: dict[str, Any] = {
        "consensus": consensus,
        "abstained": sum(c is ev.ABSTAIN for c in consensus),
    }
    if args.candidate:
        metrics["accuracy"] = ev.accuracy_vs_consensus(_hashable(_label_vector(args.candidate)), consensus)
    return ev.MetricsReport(
        "consensus",
        {"judges": sorted(judges), "threshold": args.threshold, "candidate": args.candidate},
        metrics,
        {"abstain": "no label reaches the threshold, or several do"},
    )


_EVALS: dict[str, Callable[[argparse.Namespace], ev.MetricsReport]] = {
    "types": _eval_types,
    "keys": _eval_keys,
    "edges": _eval_edges,
    "kappa": _eval_kappa,
    "consensus": _eval_consensus,
}


def cmd_eval(args: argparse.Namespace) -> int:
    _emit(_EVALS[args.kind](args), args.out)
    return EXIT_OK


# ------------------------------------------------------------------ inspect


def format_node(store: GraphStore, node_id: int) -> str:
    def label(i: int) -> str:
        n = store.node(i)
        return f"{i} {n.kind.value} {json.dumps(n.name, ensure_ascii=False)}"

    n = store.node(node_id)
    lines = [f"node {label(node_id)}"]
    if n.description:
        lines.append(f"description: {n.description}")
    lines.append("synonyms: " + (", ".join(n.synonyms) if n.synonyms else "-"))
    if n.examples:
        lines.append("examples: " + ", ".join(n.examples))
    lines.append("out:")
    lines += [f"  {e.kind.value} -> {label(e.dst)}" for e in store.out_edges(node_id)] or ["  -"]
    lines.append("in:")
    lines += [f"  {e.kind.value} <- {label(e.src)}" for e in store.in_edges(node_id)] or ["  -"]
    return "\n".join(lines)


def find_nodes(store: GraphStore, query: str) -> list[int]:
    if query.strip().isdigit() and int(query) in store:
        return [int(query)]
    found: list[int] = []
    for kind in NodeKind:
        try:
            hit = store.resolve(kind, query)
        except AmbiguousName as exc:
            found += exc.matches
            continue
        if hit is not None:
            found.append(hit)
    return sorted(found)


def cmd_inspect(args: argparse.Namespace) -> int:
    path = _require_file(args.snapshot, "snapshot")
    try:
        store = GraphStore.load(str(path))
    except ParseError as exc:
        raise InputError(f"{path}: {exc}") from None
    ids = find_nodes(store, args.node)
    if not ids:
        print(f"not found: {args.node}", file=sys.stderr)
        return EXIT_DOMAIN
    print("\n\n".join(format_node(store, i) for i in ids))
    return EXIT_OK


# ------------------------------------------------------------------ gen-corpus


def cmd_gen_corpus(args: argparse.Namespace) -> int:
    required = list(args.require or [])
    listings, truth = synthetic.generate(
        args.n, args.types, args.seed, noise=args.noise, required_types=required
    )
    write_corpus(listings, args.out)
    if args.truth:
        synthetic.write_truth(truth, args.truth)
    print(f"wrote {len(listings)} listings over {args.types} types to {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autopkg", description="Product-attribute knowledge graph builder")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="run the pipeline over a corpus")
    b.add_argument("corpus", nargs="?", help="JSON-lines corpus (default: bundled demo corpus)")
    b.add_argument("--config")
    b.add_argument("--preset", choices=["minimal", "balanced", "full"])
    b.add_argument("--policy", choices=["basic", "strict", "no-discard"])
    b.add_argument("--k", type=int)
    b.add_argument("--no-retrieval-context", action="store_true")
    b.add_argument("--no-images", action="store_true")
    b.add_argument("--workers", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--kgd-backend", choices=["rule", "llm"])
    b.add_argument("--agent-backend", choices=["heuristic", "llm"])
    b.add_argument("--embedder", choices=["auto", "fallback", "remote"])
    b.add_argument("--out", default="out")
    b.set_defaults(func=cmd_build)

    e = sub.add_parser("eval", help="compute evaluation metrics")
    e.add_argument("--out", help="also write the report here")
    esub = e.add_subparsers(dest="kind", required=True)
    t = esub.add_parser("types")
    t.add_argument("--acc", type=float, required=True)
    t.add_argument("--comp", type=float)
    t.add_argument("--n", type=int)
    t.add_argument("--v", type=int)
    t.add_argument("--cov", type=float, required=True)
    t.add_argument("--weights", default="3,1,1")
    k = esub.add_parser("keys")
    k.add_argument("keysets")
    k.add_argument("priors")
    ed = esub.add_parser("edges")
    ed.add_argument("predicted")
    ed.add_argument("reference")
    ed.add_argument("--value-recall", choices=["covered", "literal"], default="covered")
    ka = esub.add_parser("kappa")
    ka.add_argument("a")
    ka.add_argument("b")
    c = esub.add_parser("consensus")
    c.add_argument("judges")
    c.add_argument("--candidate")
    c.add_argument("--threshold", type=int, default=ev.CONSENSUS_THRESHOLD)
    for p in (t, k, ed, ka, c):
        p.add_argument("--out", default=argparse.SUPPRESS, help="also write the report here")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="show a node and its one-hop neighborhood")
    i.add_argument("snapshot")
    i.add_argument("node", help="node id or name")
    i.set_defaults(func=cmd_inspect)

    g = sub.add_parser("gen-corpus", help="write a seeded synthetic corpus")
    g.add_argument("--n", type=int, default=50)
    g.add_argument("--types", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", type=float, default=0.3)
    g.add_argument("--require", action="append", help="type name that must appear (repeatable)")
    g.add_argument("--out", required=True)
    g.add_argument("--truth")
    g.set_defaults(func=cmd_gen_corpus)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (InputError, ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except AutoPKGError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
