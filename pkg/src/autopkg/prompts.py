"""Prompt template assets and rendering.

Templates are plain text files shipped under ``autopkg/templates``.  Slots are
written ``{name}`` and filled by literal replacement, so the JSON braces in
the value-extraction example survive untouched.
"""

from __future__ import annotations

import hashlib
import json
from functools import lru_cache
from importlib import resources
from typing import Any, Mapping

TEMPLATE_NAMES = (
    "kgd_basic",
    "kgd_strict",
    "kgd_no_discard",
    "type_induction",
    "type_description",
    "key_discovery",
    "value_extraction",
    "gt_construction",
)

PLACEHOLDERS: dict[str, tuple[str, ...]] = {
    "kgd_basic": ("pretty_nodes", "node_type", "pretty_candidate"),
    "kgd_strict": ("pretty_nodes", "node_type", "pretty_candidate"),
    "kgd_no_discard": ("pretty_nodes", "node_type", "pretty_candidate"),
    "type_induction": ("title", "description", "specifications"),
    "type_description": ("product_type", "title"),
    "key_discovery": ("product_type", "type_description"),
    "value_extraction": (
        "product_type",
        "type_description",
        "attribute_table",
        "title",
        "highlights",
        "description",
        "specifications",
    ),
    "gt_construction": ("description", "hypotheses"),
}


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    if name not in PLACEHOLDERS:
        raise KeyError(f"unknown template {name!r}")
    return resources.files("autopkg.templates").joinpath(f"{name}.txt").read_text(encoding="utf-8")


def render(name: str, **slots: Any) -> str:
    """Fill every documented slot of ``name``; missing or extra slots raise."""
    expected = set(PLACEHOLDERS[name])
    if set(slots) != expected:
        raise KeyError(f"{name} expects slots {sorted(expected)}, got {sorted(slots)}")
    text = load_template(name)
    for key in PLACEHOLDERS[name]:
        value = slots[key]
        text = text.replace("{" + key + "}", "" if value is None else str(value))
    return text


def template_digests() -> dict[str, str]:
    return {
        name: hashlib.sha256(load_template(name).encode("utf-8")).hexdigest()
        for name in TEMPLATE_NAMES
    }


def format_specifications(specs: Mapping[str, list[str]]) -> str:
    return json.dumps(dict(specs), ensure_ascii=False, separators=(", ", ": "))
