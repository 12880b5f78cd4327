"""Seeded synthetic listing corpora with known ground truth.

Each ground-truth product type has a fixed schema (Brand plus four to six
keys).  Listings state their type in ``specifications["product_type"]`` with
controlled surface noise: plural forms, casing changes and stray whitespace.
The truth sidecar records the clean type and the (key, value) facts.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence, TextIO

from autopkg.evaluation import EdgeSet
from autopkg.pipeline.agents import key_label
from autopkg.pipeline.model import Listing

TYPE_NAMES: tuple[str, ...] = (
    "Pen Mouse", "Wall Anchor", "Battery Holder", "Desktop Computer", "Laptop Stand",
    "Phone Case", "Yoga Mat", "Coffee Grinder", "Water Bottle", "Desk Lamp",
    "Backpack", "Running Shoe", "Wireless Earbud", "Electric Kettle", "Cutting Board",
    "Garden Hose", "Dog Leash", "Litter Box", "Bath Towel", "Shower Curtain",
    "Throw Pillow", "Picture Frame", "Wall Clock", "Ceiling Fan", "Air Purifier",
    "Space Heater", "Tool Chest", "Cordless Drill", "Tape Measure", "Paint Brush",
    "Sketchbook", "Fountain Pen", "Stapler", "Paper Shredder", "Label Maker",
    "Baby Stroller", "Seat Cover", "Bike Helmet", "Tennis Racket", "Fishing Rod",
    "Camping Tent", "Sleeping Bag", "Trekking Pole", "Sun Hat", "Wrist Watch",
    "Hair Dryer", "Electric Toothbrush", "Makeup Mirror", "Nail Clipper", "Guitar Strap",
    "Keyboard Cover", "USB Hub", "HDMI Cable", "Power Bank", "Smart Plug",
    "Door Mat", "Umbrella", "Wine Rack", "Spice Jar", "Ice Tray",
)

KEY_POOL: dict[str, tuple[str, ...]] = {
    "color": ("Black", "White", "Silver", "Red", "Blue", "Green", "Gray"),
    "material": ("ABS Plastic", "Aluminum", "Stainless Steel", "Cotton", "Nylon", "Bamboo", "Silicone"),
    "size": ("Small", "Medium", "Large", "Extra Large"),
    "item_weight": ("100 g", "250 g", "500 g", "1.2 kg", "3 kg"),
    "power_source": ("Battery", "USB", "AC Adapter", "Solar"),
    "connectivity": ("Bluetooth", "Wi-Fi", "Wired", "2.4 GHz Wireless"),
    "capacity": ("500 ml", "1 L", "2 L", "20 L"),
    "style": ("Modern", "Classic", "Minimalist", "Vintage"),
    "warranty": ("No Warranty", "One Year", "Two Years"),
    "battery_type": ("AA", "AAA", "18650", "CR2032"),
    "voltage": ("5 V", "12 V", "110 V", "220 V"),
    "finish": ("Matte", "Glossy", "Brushed", "Satin"),
    "shape": ("Round", "Square", "Rectangular", "Oval"),
    "mount_type": ("Wall Mount", "Freestanding", "Clip-On", "Adhesive"),
    "pattern": ("Solid", "Striped", "Floral", "Geometric"),
}

BRANDS: tuple[str, ...] = (
    "Acme", "Northwind", "Contoso", "Globex", "Initech", "Vandelay", "Hooli", "Soylent", "Tyrell", "Wonka",
)


def pluralize(name: str) -> str:
    head, _, last = name.rpartition(" ")
    lower = last.lower()
    if lower.endswith(("s", "x", "z", "ch", "sh")):
        last = last + "es"
    elif lower.endswith("y") and lower[-2:-1] not in tuple("aeiou"):
        last = last[:-1] + "ies"
    else:
        last = last + "s"
    return f"{head} {last}" if head else last


def surface_variant(name: str, rng: random.Random, noise: float) -> str:
    """Type name as a seller might write it: maybe plural, recased, padded."""
    out = name
    if rng.random() < noise:
        out = pluralize(out)
    if rng.random() < noise:
        out = rng.choice((str.lower, str.upper, str.title))(out)
    if rng.random() < noise:
        out = "  " + out.replace(" ", "   ") + " "
    return out


@dataclass
class TypeSchema:
    name: str
    keys: tuple[str, ...]


@dataclass
class TruthRecord:
    id: str
    type: str
    pairs: list[tuple[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "type": self.type, "pairs": [list(p) for p in self.pairs]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TruthRecord:
        return cls(data["id"], data["type"], [(k, v) for k, v in data["pairs"]])


def make_schemas(n_types: int, rng: random.Random, required: Sequence[str] = ()) -> list[TypeSchema]:
    if n_types > len(TYPE_NAMES):
        raise ValueError(f"at most {len(TYPE_NAMES)} distinct types are available")
    if len(required) > n_types or any(r not in TYPE_NAMES for r in required):
        raise ValueError("required types must be known and fit in n_types")
    rest = [t for t in TYPE_NAMES if t not in required]
    names = list(required) + rng.sample(rest, n_types - len(required))
    pool = sorted(KEY_POOL)
    return [TypeSchema(name, tuple(rng.sample(pool, rng.randint(4, 6)))) for name in names]


def generate(
    n: int,
    n_types: int = 10,
    seed: int = 0,
    *,
    noise: float = 0.3,
    required_types: Sequence[str] = (),
) -> tuple[list[Listing], list[TruthRecord]]:
    """``n`` listings spread over ``n_types`` ground-truth types."""
    if n < 0 or n_types < 1:
        raise ValueError("need n >= 0 and n_types >= 1")
    rng = random.Random(seed)
    schemas = make_schemas(n_types, rng, required_types)
    listings: list[Listing] = []
    truth: list[TruthRecord] = []
    for i in range(n):
        # round-robin first so every type appears, then random
        schema = schemas[i] if i < len(schemas) else rng.choice(schemas)
        lid = f"L{i + 1:05d}"
        brand = rng.choice(BRANDS)
        specs: dict[str, list[str]] = {
            "product_type": [surface_variant(schema.name, rng, noise)],
            "brand": [brand],
        }
        pairs = [("Brand", brand)]
        for key in schema.keys:
            values = KEY_POOL[key]
            picked = rng.sample(values, 2) if key == "color" and rng.random() < 0.25 else [rng.choice(values)]
            specs[key] = picked
            pairs += [(key_label(key), v) for v in picked]
        lead = specs[schema.keys[0]][0]
        listings.append(
            Listing(
                id=lid,
                title=f"{brand} {schema.name} {lead}",
                highlights=f"{lead} {schema.name.lower()} by {brand}.",
                description=f"{brand} {schema.name.lower()} with "
                + ", ".join(f"{key_label(k).lower()} {', '.join(specs[k])}" for k in schema.keys)
                + ".",
                specifications=specs,
                image_refs=[f"https://images.example.com/{lid}/{j}.jpg" for j in range(rng.randint(0, 3))],
            )
        )
        truth.append(TruthRecord(lid, schema.name, pairs))
    return listings, truth


def write_truth(records: Sequence[TruthRecord], sink: str | Path | TextIO) -> None:
    text = "".join(json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in records)
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text, encoding="utf-8")
    else:
        sink.write(text)


def read_truth(source: str | Path) -> list[TruthRecord]:
    with open(source, encoding="utf-8") as fh:
        return [TruthRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def truth_edge_set(records: Sequence[TruthRecord]) -> EdgeSet:
    return EdgeSet({r.id: r.pairs for r in records})
