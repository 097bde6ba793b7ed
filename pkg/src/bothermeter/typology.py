"""Error typologies: map raw edit labels to analysis categories and turn
sentences into per-category count features.

A typology is just a label mapping with a stable, lexicographic category
order; the catch-all ``OTHER`` category always exists and absorbs unmapped
labels and, after minimum-support merging, rare categories.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .corpus import Corpus, Sentence

__all__ = [
    "OTHER",
    "Typology",
    "FeatureVector",
    "TypologyError",
    "load_typology",
    "identity_typology",
    "coarsen_errant",
    "errant_coarse_typology",
    "category_counts",
    "apply_min_support",
    "featurize",
    "featurize_corpus",
    "features_to_csv",
]

OTHER = "OTHER"

_ERRANT_PREFIXES = ("R:", "M:", "U:")


class TypologyError(ValueError):
    pass


@dataclass(frozen=True)
class Typology:
    """Named mapping from raw edit labels to analysis categories."""

    name: str
    mapping: Mapping[str, str]
    min_support: int = 100
    categories: tuple[str, ...] = field(init=False)

    def __post_init__(self) -> None:
        cats = tuple(sorted(set(self.mapping.values()) | {OTHER}))
        object.__setattr__(self, "categories", cats)
        object.__setattr__(self, "mapping", dict(self.mapping))

    def category_of(self, raw_label: str) -> str:
        return self.mapping.get(raw_label, OTHER)


@dataclass(frozen=True)
class FeatureVector:
    """Per-sentence edit counts by category; zero counts are omitted."""

    sentence_id: int
    counts: Mapping[str, int]
    total_edits: int

    def as_row(self, categories: Iterable[str]) -> list[int]:
        return [self.counts.get(c, 0) for c in categories]


def load_typology(source: str | io.TextIOBase, name: str, min_support: int = 100) -> Typology:
    """Read a ``raw_label,category`` CSV (header optional) into a Typology.

    Duplicate raw labels are fine when they agree; conflicting targets are
    an error.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    mapping: dict[str, str] = {}
    for row_no, row in enumerate(csv.reader(source), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 2:
            raise TypologyError(f"row {row_no}: expected raw_label,category, got {row!r}")
        raw, cat = row[0].strip(), row[1].strip()
        if row_no == 1 and (raw, cat) == ("raw_label", "category"):
            continue
        if not raw or not cat:
            raise TypologyError(f"row {row_no}: empty label or category")
        if mapping.get(raw, cat) != cat:
            raise TypologyError(
                f"row {row_no}: raw label {raw!r} mapped to both "
                f"{mapping[raw]!r} and {cat!r}"
            )
        mapping[raw] = cat
    if not mapping:
        raise TypologyError("mapping file holds no rows")
    return Typology(name=name, mapping=mapping, min_support=min_support)


def identity_typology(
    corpus: Corpus, name: str = "identity", min_support: int = 0
) -> Typology:
    """Each raw label seen in the corpus becomes its own category."""
    labels = {e.label for s in corpus for e in s.edits}
    return Typology(name=name, mapping={lab: lab for lab in labels}, min_support=min_support)


def coarsen_errant(label: str) -> str:
    """Strip an ERRANT operation prefix (R:/M:/U:); other labels pass through."""
    if label[:2] in _ERRANT_PREFIXES:
        return label[2:]
    return label


def errant_coarse_typology(
    corpus: Corpus, name: str = "errant-coarse", min_support: int = 0
) -> Typology:
    """Identity over ERRANT labels with operation prefixes stripped."""
    labels = {e.label for s in corpus for e in s.edits}
    return Typology(
        name=name, mapping={lab: coarsen_errant(lab) for lab in labels}, min_support=min_support
    )


def category_counts(corpus: Corpus, typology: Typology) -> dict[str, int]:
    """Corpus-wide edit count per category (categories with zero count included)."""
    counts = {c: 0 for c in typology.categories}
    for sentence in corpus:
        for e in sentence.edits:
            counts[typology.category_of(e.label)] += 1
    return counts


def apply_min_support(typology: Typology, counts: Mapping[str, int]) -> Typology:
    """Remap categories whose corpus-wide count falls below ``min_support``
    into OTHER.  At least one non-OTHER category must survive."""
    threshold = typology.min_support
    weak = {
        c
        for c in typology.categories
        if c != OTHER and counts.get(c, 0) < threshold
    }
    mapping = {
        raw: (OTHER if cat in weak else cat) for raw, cat in typology.mapping.items()
    }
    merged = Typology(name=typology.name, mapping=mapping, min_support=threshold)
    if all(c == OTHER for c in merged.categories):
        raise TypologyError(
            f"every category of {typology.name!r} falls below min_support={threshold}"
        )
    return merged


def featurize(sentence: Sentence, typology: Typology) -> FeatureVector:
    """Count the sentence's edits per category; clean sentences are all-zero."""
    counts: dict[str, int] = {}
    for e in sentence.edits:
        cat = typology.category_of(e.label)
        counts[cat] = counts.get(cat, 0) + 1
    return FeatureVector(
        sentence_id=sentence.id, counts=counts, total_edits=len(sentence.edits)
    )


def featurize_corpus(corpus: Corpus, typology: Typology) -> dict[int, FeatureVector]:
    return {s.id: featurize(s, typology) for s in corpus}


def features_to_csv(features: Mapping[int, FeatureVector], typology: Typology) -> str:
    """Dense feature matrix as CSV with header ``sentence_id,<category...>``."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["sentence_id", *typology.categories])
    for sid in sorted(features):
        writer.writerow([sid, *features[sid].as_row(typology.categories)])
    return out.getvalue()
