"""Parsers for agent replies: type answers, markdown tables, value JSON."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from typing import Any, Iterable

from autopkg.errors import JsonParseError, TableParseError, TypeParseError

logger = logging.getLogger(__name__)

MAX_TYPE_WORDS = 6
_SEPARATOR_CELL = re.compile(r":?-{1,}:?")
_FENCE = re.compile(r"^```[a-zA-Z]*\s*|\s*```$")


def parse_type_answer(text: str) -> str | None:
    """First non-empty line of a type-induction reply; ``None`` on abstention."""
    line = next((ln.strip() for ln in text.splitlines() if ln.strip()), "")
    line = line.strip("`\"'* ").rstrip(".").strip("`\"'* ")
    if not line:
        raise TypeParseError("empty type answer")
    if line.casefold() == "none":
        return None
    if len(line.split()) > MAX_TYPE_WORDS or any(c in line for c in ":;?"):
        raise TypeParseError(f"type answer is not a bare product type: {line[:80]!r}")
    return line


def _cells(line: str) -> list[str]:
    body = line.strip()
    if body.startswith("|"):
        body = body[1:]
    if body.endswith("|"):
        body = body[:-1]
    return [c.strip() for c in body.split("|")]


def _is_separator(cells: list[str]) -> bool:
    return all(_SEPARATOR_CELL.fullmatch(c.replace(" ", "")) for c in cells if c) and any(cells)


def parse_markdown_table(text: str, min_cells: int = 2) -> list[list[str]]:
    """Body rows of the first pipe table in ``text``.

    The header (the row right before a ``|---|`` separator) is dropped, as
    are rows with fewer than ``min_cells`` cells (with a warning).  Lines that
    do not start with a pipe, such as LaTeX ``\\\\`` spacers or trailing prose,
    are ignored.
    """
    rows = [_cells(ln) for ln in text.splitlines() if ln.strip().startswith("|")]
    if not rows:
        raise TableParseError("no markdown table found")
    sep = next((i for i, r in enumerate(rows) if _is_separator(r)), None)
    if sep is not None:
        rows = rows[sep + 1 :]
    body: list[list[str]] = []
    for r in rows:
        if _is_separator(r):
            continue
        if len([c for c in r if c]) < min_cells:
            logger.warning("skipping table row with fewer than %d cells: %r", min_cells, r)
            continue
        body.append(r)
    return body


@dataclass(frozen=True)
class KeyRow:
    name: str
    description: str
    examples: tuple[str, ...]


def split_examples(cell: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in cell.split(",") if x.strip())


def parse_key_table(text: str) -> list[KeyRow]:
    """Rows of ``| Attribute Name | Description | Examples |``; duplicates dropped."""
    out: list[KeyRow] = []
    seen: set[str] = set()
    for r in parse_markdown_table(text, min_cells=3):
        name = r[0].strip("*` ")
        norm = " ".join(name.casefold().split())
        if not norm or norm in seen:
            continue
        seen.add(norm)
        out.append(KeyRow(name, r[1], split_examples(r[2]) if len(r) > 2 else ()))
    if not out:
        raise TableParseError("key table has no usable rows")
    return out


def parse_gt_table(text: str) -> list[tuple[str, str]]:
    """``| Attribute Name | Value |`` rows of a ground-truth construction reply."""
    return [(r[0], r[1]) for r in parse_markdown_table(text, min_cells=2)]


def _stringify(value: Any) -> str | None:
    if value is None:
        return None
    if isinstance(value, bool):
        return "Yes" if value else "No"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return str(int(value)) if value.is_integer() else repr(value)
    if isinstance(value, str):
        return value.strip() or None
    return json.dumps(value, ensure_ascii=False)


def parse_value_json(text: str, known_ids: Iterable[str] | None = None) -> list[tuple[str, str]]:
    """Flatten a ``{attribute_id: value | [values] | null}`` reply into pairs.

    Nulls are skipped, lists yield one pair per element, numbers are rendered
    in decimal (``3`` not ``3.0``), unknown ids are dropped with a warning.
    """
    body = _FENCE.sub("", text.strip())
    try:
        data = json.loads(body)
    except json.JSONDecodeError:
        start, end = body.find("{"), body.rfind("}")
        if start < 0 or end <= start:
            raise JsonParseError("no JSON object in reply") from None
        try:
            data = json.loads(body[start : end + 1])
        except json.JSONDecodeError as exc:
            raise JsonParseError(f"invalid JSON: {exc.msg} at col {exc.colno}") from None
    if not isinstance(data, dict):
        raise JsonParseError(f"expected a JSON object, got {type(data).__name__}")
    allowed = None if known_ids is None else {str(k) for k in known_ids}
    pairs: list[tuple[str, str]] = []
    for key, raw in data.items():
        key = str(key).strip()
        if allowed is not None and key not in allowed:
            logger.warning("dropping unknown attribute id %r", key)
            continue
        items = raw if isinstance(raw, list) else [raw]
        for item in items:
            value = _stringify(item)
            if value is not None:
                pairs.append((key, value))
    return pairs
