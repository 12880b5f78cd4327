"""Run manifests: what went into a build and digests to check it later."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from autopkg import prompts


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: dict[str, Any]
    corpus_sha256: str
    template_digests: dict[str, str]
    backends: dict[str, str]
    paths: dict[str, str]
    output_digests: dict[str, str] = field(default_factory=dict)
    started_at: float = 0.0
    finished_at: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> RunManifest:
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def verify_manifest(manifest: RunManifest) -> list[str]:
    """Recompute every digest; returns a list of mismatches (empty when intact)."""
    problems: list[str] = []
    corpus = manifest.paths.get("corpus")
    if corpus is None or not Path(corpus).exists():
        problems.append(f"corpus missing: {corpus}")
    elif file_sha256(corpus) != manifest.corpus_sha256:
        problems.append("corpus digest differs")
    current = prompts.template_digests()
    for name, digest in manifest.template_digests.items():
        if current.get(name) != digest:
            problems.append(f"template {name} digest differs")
    for name, digest in manifest.output_digests.items():
        path = manifest.paths.get(name)
        if path is None or not Path(path).exists():
            problems.append(f"{name} missing: {path}")
        elif file_sha256(path) != digest:
            problems.append(f"{name} digest differs")
    return problems
