"""Aspect categories and polarity labels."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass


class Polarity(enum.IntEnum):
    """Sentiment toward a mentioned aspect, valued by its annotation code."""

    NEGATIVE = -1
    NEUTRAL = 0
    POSITIVE = 1

    @property
    def class_index(self) -> int:
        # Negative -> 0, Neutral -> 1, Positive -> 2
        return int(self) + 1

    @classmethod
    def from_class_index(cls, index: int) -> "Polarity":
        if index not in (0, 1, 2):
            raise ValueError(f"class index must be 0, 1 or 2, got {index}")
        return cls(index - 1)

    @property
    def label(self) -> str:
        return self.name.capitalize()


NUM_CLASSES = 3


@dataclass(frozen=True)
class AspectCategory:
    index: int
    coarse: str
    fine: str
    definition: str = ""

    @property
    def name(self) -> str:
        return f"{self.coarse}#{self.fine}"


class AspectTaxonomy:
    """Ordered, immutable list of aspect categories.

    Indices are contiguous from zero and names (``Coarse#Fine``) are unique.
    """

    def __init__(self, entries):
        entries = tuple(entries)
        if not entries:
            raise ValueError("taxonomy needs at least one aspect category")
        for pos, entry in enumerate(entries):
            if entry.index != pos:
                raise ValueError(
                    f"taxonomy indices must be contiguous from 0; entry {entry.name} has index {entry.index}"
                )
        names = [e.name for e in entries]
        if len(set(names)) != len(names):
            raise ValueError("taxonomy names must be unique")
        self._entries = entries
        self._by_name = {name: i for i, name in enumerate(names)}

    @classmethod
    def from_names(cls, names, definitions=None) -> "AspectTaxonomy":
        definitions = definitions or {}
        entries = []
        for i, name in enumerate(names):
            coarse, sep, fine = name.partition("#")
            if not sep or not coarse or not fine:
                raise ValueError(f"aspect name must look like Coarse#Fine, got {name!r}")
            entries.append(AspectCategory(i, coarse, fine, definitions.get(name, "")))
        return cls(entries)

    @property
    def entries(self) -> tuple[AspectCategory, ...]:
        return self._entries

    @property
    def names(self) -> list[str]:
        return [e.name for e in self._entries]

    @property
    def n(self) -> int:
        return len(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __getitem__(self, index: int) -> AspectCategory:
        return self._entries[index]

    def index_of(self, name: str) -> int:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"unknown aspect category {name!r}") from None

    def __contains__(self, name) -> bool:
        return name in self._by_name

    def __eq__(self, other) -> bool:
        if not isinstance(other, AspectTaxonomy):
            return NotImplemented
        return self.names == other.names

    def __hash__(self) -> int:
        return hash(tuple(self.names))

    def __repr__(self) -> str:
        return f"AspectTaxonomy(n={self.n})"

    def fingerprint(self) -> dict:
        """Identity of the taxonomy used to guard checkpoint loading."""
        digest = hashlib.sha256("\n".join(self.names).encode("utf-8")).hexdigest()
        return {"n": self.n, "names_sha256": digest}


_ASAP_CATEGORIES = [
    ("Food", "Taste", "Food taste"),
    ("Food", "Appearance", "Food appearance"),
    ("Food", "Portion", "Food portion"),
    ("Food", "Recommend", "Whether the food is worth being recommended"),
    ("Price", "Level", "Price level"),
    ("Price", "Cost_effective", "Whether the restaurant is cost-effective"),
    ("Price", "Discount", "Discount strength"),
    ("Location", "Downtown", "Whether the restaurant is located near downtown"),
    ("Location", "Transportation", "Convenient public transportation to the restaurant"),
    ("Location", "Easy_to_find", "Whether the restaurant is easy to find"),
    ("Service", "Queue", "Whether the queue time is acceptable"),
    ("Service", "Hospitality", "Waiters/waitresses' attitude/hospitality"),
    ("Service", "Parking", "Parking convenience"),
    ("Service", "Timely", "Order/Serving time"),
    ("Ambience", "Decoration", "Decoration level"),
    ("Ambience", "Noise", "Whether the restaurant is noisy"),
    ("Ambience", "Space", "Dining Space and Seat Size"),
    ("Ambience", "Sanitary", "Sanitary condition"),
]


def default_taxonomy() -> AspectTaxonomy:
    """The 18 restaurant aspect categories."""
    return AspectTaxonomy(AspectCategory(i, c, f, d) for i, (c, f, d) in enumerate(_ASAP_CATEGORIES))
