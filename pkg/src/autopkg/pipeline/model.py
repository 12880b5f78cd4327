"""Listings, key tables, value assertions and corpus IO."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, TextIO

from autopkg.errors import ParseError
from autopkg.llm import MAX_IMAGES

LISTING_FIELDS = ("id", "title", "highlights", "description", "specifications", "image_refs")


@dataclass
class Listing:
    id: str
    title: str
    highlights: str | None = None
    description: str | None = None
    specifications: dict[str, list[str]] = field(default_factory=dict)
    image_refs: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id.strip():
            raise ValueError("listing id must be a nonempty string")
        if not isinstance(self.title, str) or not self.title.strip():
            raise ValueError(f"listing {self.id}: title must be nonempty")
        if len(self.image_refs) > MAX_IMAGES:
            raise ValueError(f"listing {self.id}: {len(self.image_refs)} images, at most {MAX_IMAGES}")

    @classmethod
    def from_dict(cls, data: Any) -> Listing:
        if not isinstance(data, dict):
            raise ValueError("listing must be a JSON object")
        unknown = set(data) - set(LISTING_FIELDS)
        if unknown:
            raise ValueError(f"unknown listing fields {sorted(unknown)}")
        specs_raw = data.get("specifications") or {}
        if not isinstance(specs_raw, dict):
            raise ValueError("specifications must be an object")
        specs: dict[str, list[str]] = {}
        for k, v in specs_raw.items():
            vals = v if isinstance(v, list) else [v]
            specs[str(k)] = [str(x) for x in vals if x is not None]
        images = data.get("image_refs") or []
        if not isinstance(images, list) or not all(isinstance(x, str) for x in images):
            raise ValueError("image_refs must be a list of strings")
        return cls(
            id=data.get("id"),  # type: ignore[arg-type]
            title=data.get("title"),  # type: ignore[arg-type]
            highlights=data.get("highlights"),
            description=data.get("description"),
            specifications=specs,
            image_refs=list(images),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "title": self.title,
            "highlights": self.highlights,
            "description": self.description,
            "specifications": {k: list(v) for k, v in self.specifications.items()},
            "image_refs": list(self.image_refs),
        }


def iter_corpus(source: str | Path | TextIO) -> Iterator[Listing]:
    """Stream listings from JSON lines; errors carry the 1-based line number."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            yield from iter_corpus(fh)
        return
    seen: set[str] = set()
    for lineno, line in enumerate(source, start=1):
        if not line.strip():
            continue
        try:
            listing = Listing.from_dict(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, f"line {lineno} col {exc.colno}") from None
        except ValueError as exc:
            raise ParseError(str(exc), f"line {lineno}") from None
        if listing.id in seen:
            raise ParseError(f"duplicate listing id {listing.id!r}", f"line {lineno}")
        seen.add(listing.id)
        yield listing


def read_corpus(source: str | Path | TextIO) -> list[Listing]:
    return list(iter_corpus(source))


def write_corpus(listings: Iterable[Listing], sink: str | Path | TextIO) -> None:
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8") as fh:
            write_corpus(listings, fh)
        return
    for listing in listings:
        sink.write(json.dumps(listing.to_dict(), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class KeyTableRow:
    key_id: int
    name: str
    description: str | None
    examples: tuple[str, ...] = ()


@dataclass
class KeyTable:
    product_type: int
    rows: list[KeyTableRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def ids(self) -> list[int]:
        return [r.key_id for r in self.rows]

    def render(self) -> str:
        """Markdown table with attribute ids, as shown to the value extractor."""
        lines = [
            "| Attribute ID | Attribute Name | Description | Examples |",
            "|--------------|----------------|-------------|----------|",
        ]
        for r in self.rows:
            lines.append(
                f"| {r.key_id} | {r.name} | {r.description or ''} | {', '.join(r.examples)} |"
            )
        return "\n".join(lines)


class EvidenceModality(str, Enum):
    TEXT = "Text"
    IMAGE = "Image"
    MIXED = "Mixed"


@dataclass(frozen=True)
class ValueAssertion:
    product: int
    key: int
    raw_value: str
    evidence_modality: EvidenceModality = EvidenceModality.TEXT

    def __post_init__(self) -> None:
        if not self.raw_value.strip():
            raise ValueError("empty assertion value")
