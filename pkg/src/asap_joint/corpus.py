"""Review data model, CSV I/O, curation filters, splits and corpus statistics.

The canonical file is UTF-8 CSV with the header ``id,review,star`` followed by
one column per aspect category.  Aspect cells hold ``-1``, ``0`` or ``1``; a
not-mentioned aspect is an empty cell, and a numeric sentinel (``-2`` by
default) is accepted on input as well.
"""

from __future__ import annotations

import csv
import json
import math
import re
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    BadRatios,
    DataError,
    DuplicateId,
    EmptyDataset,
    EmptyText,
    MalformedRating,
    MissingColumn,
    UnknownPolarity,
)
from .taxonomy import AspectTaxonomy, Polarity, default_taxonomy

ID_COLUMN = "id"
TEXT_COLUMN = "review"
RATING_COLUMN = "star"
DEFAULT_SENTINEL = -2
SPLITS = ("train", "dev", "test", "unsplit")

# CJK Unified Ideographs plus Extension A
_CJK_RANGES = ((0x4E00, 0x9FFF), (0x3400, 0x4DBF))
_SENTENCE_END = re.compile(r"[。！？.!?]")


def is_chinese_char(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def count_chinese(text: str) -> int:
    return sum(1 for ch in text if is_chinese_char(ch))


def non_chinese_ratio(text: str) -> float:
    """Share of non-whitespace code points that are not Chinese characters."""
    visible = [ch for ch in text if not ch.isspace()]
    if not visible:
        return 1.0
    chinese = sum(1 for ch in visible if is_chinese_char(ch))
    return (len(visible) - chinese) / len(visible)


def count_sentences(text: str) -> int:
    """Number of non-empty segments between sentence terminators."""
    return sum(1 for seg in _SENTENCE_END.split(text) if seg.strip())


@dataclass(frozen=True)
class Review:
    id: str
    text: str
    rating: int
    labels: tuple  # one Optional[Polarity] per aspect category

    def __post_init__(self):
        if not isinstance(self.rating, (int, np.integer)) or isinstance(self.rating, bool) or not 1 <= self.rating <= 5:
            raise MalformedRating(f"review {self.id}: rating must be an integer in 1..5, got {self.rating!r}")
        if not self.text or not self.text.strip():
            raise EmptyText(f"review {self.id}: empty text")
        labels = tuple(None if lab is None else Polarity(lab) for lab in self.labels)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "rating", int(self.rating))

    @property
    def mask(self) -> tuple[int, ...]:
        return tuple(0 if lab is None else 1 for lab in self.labels)

    @property
    def mentioned_count(self) -> int:
        return sum(self.mask)

    def mentioned(self) -> list[tuple[int, Polarity]]:
        return [(i, lab) for i, lab in enumerate(self.labels) if lab is not None]


@dataclass(frozen=True)
class Dataset:
    reviews: tuple
    split: str = "unsplit"
    taxonomy: AspectTaxonomy = field(default_factory=default_taxonomy)

    def __post_init__(self):
        object.__setattr__(self, "reviews", tuple(self.reviews))
        if self.split not in SPLITS:
            raise DataError(f"split must be one of {SPLITS}, got {self.split!r}")
        seen = set()
        for r in self.reviews:
            if r.id in seen:
                raise DuplicateId(f"duplicate review id {r.id!r}")
            seen.add(r.id)
            if len(r.labels) != self.taxonomy.n:
                raise DataError(f"review {r.id} has {len(r.labels)} labels, taxonomy has {self.taxonomy.n}")

    def __len__(self) -> int:
        return len(self.reviews)

    def __iter__(self):
        return iter(self.reviews)

    def __getitem__(self, i):
        return self.reviews[i]

    def with_split(self, split: str) -> "Dataset":
        return Dataset(self.reviews, split, self.taxonomy)


def _parse_number(raw: str):
    try:
        value = float(raw)
    except (TypeError, ValueError):
        return None
    if not math.isfinite(value):
        return None
    return value


def parse_rating(raw) -> int:
    value = _parse_number(str(raw).strip()) if raw is not None else None
    if value is None or value != int(value) or not 1 <= value <= 5:
        raise MalformedRating(f"star rating must be an integer in 1..5, got {raw!r}")
    return int(value)


def parse_polarity(raw, sentinel: Optional[int] = DEFAULT_SENTINEL) -> Optional[Polarity]:
    """Decode one aspect cell; ``None`` means the aspect is not mentioned."""
    if raw is None:
        return None
    text = str(raw).strip()
    if text == "":
        return None
    value = _parse_number(text)
    if value is None or value != int(value):
        raise UnknownPolarity(f"aspect cell {raw!r} is not a polarity code")
    code = int(value)
    if sentinel is not None and code == sentinel:
        return None
    if code not in (-1, 0, 1):
        raise UnknownPolarity(f"aspect cell {raw!r} is not one of -1, 0, 1 or the not-mentioned marker")
    return Polarity(code)


def parse_review(record: Mapping, taxonomy: AspectTaxonomy, sentinel: Optional[int] = DEFAULT_SENTINEL) -> Review:
    """Build a :class:`Review` from one keyed CSV record.

    Raises:
        MissingColumn: ``id``, ``review``, ``star`` or an aspect column is absent.
        MalformedRating: star is not an integer in 1..5.
        UnknownPolarity: an aspect cell holds anything but -1/0/1/empty/sentinel.
    """
    missing = [c for c in (ID_COLUMN, TEXT_COLUMN, RATING_COLUMN, *taxonomy.names) if c not in record]
    if missing:
        raise MissingColumn(f"record lacks column(s): {', '.join(missing)}")
    labels = tuple(parse_polarity(record[name], sentinel) for name in taxonomy.names)
    text = record[TEXT_COLUMN] or ""
    return Review(
        id=str(record[ID_COLUMN]).strip(),
        text=text,
        rating=parse_rating(record[RATING_COLUMN]),
        labels=labels,
    )


def serialize_review(review: Review, taxonomy: AspectTaxonomy) -> dict:
    row = {ID_COLUMN: review.id, TEXT_COLUMN: review.text, RATING_COLUMN: str(review.rating)}
    for name, lab in zip(taxonomy.names, review.labels):
        row[name] = "" if lab is None else str(int(lab))
    return row


def csv_header(taxonomy: AspectTaxonomy) -> list[str]:
    return [ID_COLUMN, TEXT_COLUMN, RATING_COLUMN, *taxonomy.names]


def iter_records(path) -> Iterable[dict]:
    with open(path, newline="", encoding="utf-8-sig") as fh:
        yield from csv.DictReader(fh)


def read_csv(
    path,
    taxonomy: Optional[AspectTaxonomy] = None,
    split: str = "unsplit",
    sentinel: Optional[int] = DEFAULT_SENTINEL,
) -> Dataset:
    taxonomy = taxonomy or default_taxonomy()
    reviews = []
    for lineno, record in enumerate(iter_records(path), start=2):
        try:
            reviews.append(parse_review(record, taxonomy, sentinel))
        except DataError as exc:
            raise type(exc)(f"{path}:{lineno}: {exc}") from None
    return Dataset(tuple(reviews), split, taxonomy)


def write_csv(ds: Dataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=csv_header(ds.taxonomy))
        writer.writeheader()
        for review in ds:
            writer.writerow(serialize_review(review, ds.taxonomy))


# --------------------------------------------------------------------------
# curation

DEFAULT_PRIVACY_FIELDS = (
    "user_id",
    "userid",
    "uid",
    "user_name",
    "username",
    "nickname",
    "avatar",
    "avatar_url",
    "post_time",
    "timestamp",
    "time",
    "date",
)


@dataclass
class CurationConfig:
    """Thresholds for the curation filters.

    Length bounds count Chinese characters and are inclusive.  A review is
    dropped when its non-Chinese ratio is strictly above ``max_non_chinese_ratio``.
    ``quality_filter`` is an optional predicate returning True for reviews to keep.
    """

    min_chinese: int = 50
    max_chinese: int = 1000
    max_non_chinese_ratio: float = 0.70
    strip_fields: tuple = DEFAULT_PRIVACY_FIELDS
    sentinel: Optional[int] = DEFAULT_SENTINEL
    quality_filter: Optional[Callable[[Review], bool]] = None

    def __post_init__(self):
        self.min_chinese = int(self.min_chinese)
        self.max_chinese = int(self.max_chinese)
        self.max_non_chinese_ratio = float(self.max_non_chinese_ratio)
        if isinstance(self.strip_fields, str):
            self.strip_fields = tuple(f.strip() for f in self.strip_fields.split(",") if f.strip())
        self.strip_fields = tuple(self.strip_fields)
        if self.sentinel is not None and self.sentinel != "":
            self.sentinel = int(self.sentinel)
        else:
            self.sentinel = None
        if self.min_chinese < 0 or self.max_chinese < self.min_chinese:
            raise ValueError("need 0 <= min_chinese <= max_chinese")
        if not 0.0 <= self.max_non_chinese_ratio <= 1.0:
            raise ValueError("max_non_chinese_ratio must lie in [0, 1]")

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "quality_filter"}
        out["strip_fields"] = list(self.strip_fields)
        return out

    @classmethod
    def from_mapping(cls, data: Mapping) -> "CurationConfig":
        known = {f.name for f in fields(cls)} - {"quality_filter"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown curation setting(s): {', '.join(sorted(unknown))}")
        return cls(**dict(data))

    @classmethod
    def from_file(cls, path) -> "CurationConfig":
        return cls.from_mapping(load_config_file(path))


def load_config_file(path) -> dict:
    """Read a JSON document or ``key = value`` lines (``#`` starts a comment)."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return json.loads(text)
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        out[key.strip()] = value.strip()
    return out


@dataclass
class CurationReport:
    input_count: int = 0
    kept: int = 0
    dropped_short: int = 0
    dropped_long: int = 0
    dropped_non_chinese: int = 0
    dropped_low_quality: int = 0
    dropped_malformed: int = 0
    dropped_fields: list = field(default_factory=list)
    malformed_reasons: list = field(default_factory=list)

    @property
    def dropped(self) -> int:
        return (
            self.dropped_short
            + self.dropped_long
            + self.dropped_non_chinese
            + self.dropped_low_quality
            + self.dropped_malformed
        )

    def to_dict(self) -> dict:
        return {
            "input_count": self.input_count,
            "kept": self.kept,
            "dropped": self.dropped,
            "dropped_short": self.dropped_short,
            "dropped_long": self.dropped_long,
            "dropped_non_chinese": self.dropped_non_chinese,
            "dropped_low_quality": self.dropped_low_quality,
            "dropped_malformed": self.dropped_malformed,
            "dropped_fields": list(self.dropped_fields),
            "malformed_reasons": list(self.malformed_reasons),
        }


def curation_verdict(text: str, config: CurationConfig) -> Optional[str]:
    """Return the drop reason for ``text`` or None if it passes.

    The non-Chinese ratio is checked before length so that mostly-Latin text
    is reported as such rather than as short.
    """
    if non_chinese_ratio(text) > config.max_non_chinese_ratio:
        return "non_chinese"
    n = count_chinese(text)
    if n < config.min_chinese:
        return "short"
    if n > config.max_chinese:
        return "long"
    return None


def curate(
    raw: Iterable,
    config: Optional[CurationConfig] = None,
    taxonomy: Optional[AspectTaxonomy] = None,
    split: str = "unsplit",
) -> tuple[Dataset, CurationReport]:
    """Filter raw records into a Dataset.

    ``raw`` holds keyed records (CSV rows) or :class:`Review` objects.  Never
    raises on bad records; they are tallied as ``dropped_malformed``.
    """
    config = config or CurationConfig()
    taxonomy = taxonomy or default_taxonomy()
    report = CurationReport()
    stripped = set()
    kept = []
    seen_ids = set()
    for record in raw:
        report.input_count += 1
        if isinstance(record, Review):
            review = record
        else:
            stripped.update(k for k in record if k in config.strip_fields)
            try:
                review = parse_review(record, taxonomy, config.sentinel)
            except DataError as exc:
                report.dropped_malformed += 1
                report.malformed_reasons.append(f"{type(exc).__name__}: {exc}")
                continue
        if len(review.labels) != taxonomy.n:
            report.dropped_malformed += 1
            report.malformed_reasons.append(f"review {review.id}: label count does not match taxonomy")
            continue
        if review.id in seen_ids:
            report.dropped_malformed += 1
            report.malformed_reasons.append(f"DuplicateId: {review.id}")
            continue
        reason = curation_verdict(review.text, config)
        if reason is None and config.quality_filter is not None and not config.quality_filter(review):
            reason = "low_quality"
        if reason is not None:
            setattr(report, f"dropped_{reason}", getattr(report, f"dropped_{reason}") + 1)
            continue
        seen_ids.add(review.id)
        kept.append(review)
    report.kept = len(kept)
    report.dropped_fields = sorted(stripped)
    return Dataset(tuple(kept), split, taxonomy), report


# --------------------------------------------------------------------------
# statistics


@dataclass
class CorpusStats:
    review_count: int
    avg_sentences_per_review: float
    avg_aspects_per_review: float
    avg_length_chars: float
    avg_chinese_chars: float
    polarity_counts: dict
    rating_histogram: tuple

    def to_dict(self) -> dict:
        return {
            "review_count": self.review_count,
            "avg_sentences_per_review": self.avg_sentences_per_review,
            "avg_aspects_per_review": self.avg_aspects_per_review,
            "avg_length_chars": self.avg_length_chars,
            "avg_chinese_chars": self.avg_chinese_chars,
            "polarity_counts": dict(self.polarity_counts),
            "rating_histogram": {f"{s}-star": c for s, c in zip(range(1, 6), self.rating_histogram)},
        }

    def format_table(self, name: str = "") -> str:
        head = ["Split", "Reviews", "Sent/rev", "Asp/rev", "Length", "Positive", "Negative", "Neutral",
                "1-star", "2-star", "3-star", "4-star", "5-star"]
        pc = self.polarity_counts
        row = [name or "-", f"{self.review_count:,}", f"{self.avg_sentences_per_review:.1f}",
               f"{self.avg_aspects_per_review:.1f}", f"{self.avg_length_chars:.1f}",
               f"{pc['positive']:,}", f"{pc['negative']:,}", f"{pc['neutral']:,}",
               *(f"{c:,}" for c in self.rating_histogram)]
        widths = [max(len(h), len(v)) for h, v in zip(head, row)]
        fmt = "  ".join(f"{{:>{w}}}" for w in widths)
        return fmt.format(*head) + "\n" + fmt.format(*row)


def compute_stats(ds: Dataset) -> CorpusStats:
    """Corpus statistics in the layout of the dataset statistics table.

    ``avg_length_chars`` counts non-whitespace characters; ``avg_chinese_chars``
    counts Chinese characters only.
    """
    n = len(ds)
    if n == 0:
        raise EmptyDataset("cannot compute statistics of an empty dataset")
    polarity = {"positive": 0, "negative": 0, "neutral": 0}
    hist = [0] * 5
    sentences = aspects = length = chinese = 0
    for r in ds:
        sentences += count_sentences(r.text)
        aspects += r.mentioned_count
        length += sum(1 for ch in r.text if not ch.isspace())
        chinese += count_chinese(r.text)
        hist[r.rating - 1] += 1
        for _, lab in r.mentioned():
            polarity[lab.name.lower()] += 1
    return CorpusStats(
        review_count=n,
        avg_sentences_per_review=sentences / n,
        avg_aspects_per_review=aspects / n,
        avg_length_chars=length / n,
        avg_chinese_chars=chinese / n,
        polarity_counts=polarity,
        rating_histogram=tuple(hist),
    )


# --------------------------------------------------------------------------
# splitting


def split_sizes(n: int, ratios) -> tuple[int, ...]:
    """Largest-remainder allocation of ``n`` items by ``ratios``."""
    raw = [n * r for r in ratios]
    sizes = [math.floor(x + 1e-9) for x in raw]
    leftover = n - sum(sizes)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:leftover]:
        sizes[i] += 1
    return tuple(sizes)


def split(ds: Dataset, seed: int, ratios=(0.8, 0.1, 0.1)) -> tuple[Dataset, Dataset, Dataset]:
    """Random, seed-deterministic train/dev/test partition.

    Each part keeps the original review order.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be three positive numbers summing to 1, got {ratios}")
    sizes = split_sizes(len(ds), ratios)
    perm = np.random.default_rng(seed).permutation(len(ds))
    bounds = np.cumsum((0,) + sizes)
    parts = []
    for name, lo, hi in zip(("train", "dev", "test"), bounds[:-1], bounds[1:]):
        idx = sorted(perm[lo:hi].tolist())
        parts.append(Dataset(tuple(ds.reviews[i] for i in idx), name, ds.taxonomy))
    return tuple(parts)
