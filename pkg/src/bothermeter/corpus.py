"""M2 corpus handling: parsing, sentence filtering, and batch composition.

An M2 entry is an ``S`` line holding a pre-tokenized sentence followed by
zero or more ``A`` edit lines, entries separated by blank lines::

    S I likes dogs .
    A 1 2|||Vform|||like|||REQUIRED|||-NONE-|||0

Edit spans are 0-based token indices, end exclusive; ``start == end``
denotes an insertion and the span ``-1 -1`` with label ``noop`` marks an
annotator who proposed no change.  Parsed values are immutable and safe to
share across workers.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import stats

__all__ = [
    "Edit",
    "Sentence",
    "Corpus",
    "FilterRuleSet",
    "SpaceMode",
    "BatchPlan",
    "BatchItem",
    "Batch",
    "BatchComposition",
    "M2ParseError",
    "CapacityError",
    "parse_m2",
    "serialize_m2",
    "normalize_spaces",
    "filter_sentences",
    "split_by_errors",
    "compose_batches",
    "batches_to_json",
]

ROLE_CLEAN = "clean"
ROLE_ERRORFUL = "errorful"
ROLE_REPEAT = "repeat"

# Deletions are serialized with the conventional -NONE- placeholder and read
# back as an empty replacement.
_NONE_FIELD = "-NONE-"
_NOOP_LABEL = "noop"


class M2ParseError(ValueError):
    """Malformed M2 input; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class CapacityError(ValueError):
    """Not enough sentences to compose the requested batches."""

    def __init__(self, message: str, max_batches: int):
        super().__init__(f"{message} (at most {max_batches} batches possible)")
        self.max_batches = max_batches


class SpaceMode(str, enum.Enum):
    """Which side of the bracket characters loses its padding space."""

    VERBATIM_PAPER = "verbatim_paper"
    CONVENTIONAL = "conventional"


# after ")" / before "(" in verbatim mode; the conventional mode swaps the
# parentheses, which is almost certainly the intended typography.
_VERBATIM_AFTER = re.compile(r"\) +")
_VERBATIM_BEFORE = re.compile(r" +(?=[(!%.$/,])")
_CONV_AFTER = re.compile(r"\( +")
_CONV_BEFORE = re.compile(r" +(?=[)!%.$/,])")


def normalize_spaces(raw: str, mode: SpaceMode = SpaceMode.CONVENTIONAL) -> str:
    """Delete padding spaces around punctuation; idempotent in both modes."""
    if mode is SpaceMode.VERBATIM_PAPER:
        out = _VERBATIM_AFTER.sub(")", raw)
        return _VERBATIM_BEFORE.sub("", out)
    out = _CONV_AFTER.sub("(", raw)
    return _CONV_BEFORE.sub("", out)


@dataclass(frozen=True, order=True)
class Edit:
    """One typed correction: replace tokens [start, end) with ``replacement``."""

    start: int
    end: int
    label: str
    replacement: str
    annotator_id: int

    @property
    def is_insertion(self) -> bool:
        return self.start == self.end


@dataclass(frozen=True)
class Sentence:
    id: int
    tokens: tuple[str, ...]
    edits: tuple[Edit, ...]
    display_text: str

    @property
    def is_clean(self) -> bool:
        return not self.edits


Corpus = list[Sentence]


@dataclass(frozen=True)
class FilterRuleSet:
    min_words: int = 7
    forbidden_substrings: tuple[str, ...] = ("http", "&", "[", "]", "*", '"', ";")
    space_mode: SpaceMode = SpaceMode.CONVENTIONAL

    def __post_init__(self) -> None:
        if self.min_words < 1:
            raise ValueError("min_words must be >= 1")


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int = 100
    n_clean: int = 15
    n_errorful: int = 70
    n_repeat: int = 15
    repeat_pool_size: int = 400
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_clean + self.n_errorful + self.n_repeat != self.batch_size:
            raise ValueError("clean + errorful + repeat must equal batch_size")
        if self.repeat_pool_size < self.n_repeat:
            raise ValueError("repeat pool must hold at least n_repeat sentences")


@dataclass(frozen=True)
class BatchItem:
    sentence_id: int
    role: str


@dataclass(frozen=True)
class Batch:
    batch_id: int
    items: tuple[BatchItem, ...]


@dataclass(frozen=True)
class BatchComposition:
    """Composed batches plus the repeat pool and its overlap with the
    unique-errorful stream (overlap is permitted, not an error)."""

    batches: tuple[Batch, ...]
    repeat_pool: tuple[int, ...]
    pool_unique_overlap: tuple[int, ...]


def _iter_numbered_lines(source: str | Iterable[str]) -> Iterable[tuple[int, str]]:
    lines = source.splitlines() if isinstance(source, str) else source
    for i, line in enumerate(lines, start=1):
        yield i, line.rstrip("\n").rstrip("\r")


def parse_m2(
    source: str | Iterable[str], space_mode: SpaceMode = SpaceMode.CONVENTIONAL
) -> Corpus:
    """Parse M2 text (a string or an iterable of lines) into a Corpus.

    Sentence ids are assigned in file order starting at 0.  Malformed
    spans, wrong field counts, edit lines before any sentence line, spans
    out of the token range, and overlapping same-annotator edits all raise
    :class:`M2ParseError` naming the offending line.
    """
    corpus: Corpus = []
    tokens: list[str] | None = None
    edits: list[Edit] = []
    noop_annotators: set[int] = set()
    open_line = 0

    def close_entry() -> None:
        nonlocal tokens, edits, noop_annotators
        if tokens is None:
            return
        for aid in noop_annotators:
            if any(e.annotator_id == aid for e in edits):
                raise M2ParseError(
                    open_line, f"annotator {aid} mixes a noop with other edits"
                )
        ordered = tuple(sorted(edits))
        _check_disjoint(ordered, open_line)
        text = normalize_spaces(" ".join(tokens), space_mode)
        corpus.append(
            Sentence(id=len(corpus), tokens=tuple(tokens), edits=ordered, display_text=text)
        )
        tokens, edits, noop_annotators = None, [], set()

    for line_no, line in _iter_numbered_lines(source):
        if not line.strip():
            close_entry()
            continue
        if line.startswith("S ") or line == "S":
            close_entry()
            tokens = line[2:].split()
            open_line = line_no
            continue
        if line.startswith("A "):
            if tokens is None:
                raise M2ParseError(line_no, "edit line before any sentence line")
            fields = line[2:].split("|||")
            if len(fields) != 6:
                raise M2ParseError(
                    line_no, f"expected 6 |||-separated fields, got {len(fields)}"
                )
            span, label, correction, _required, _comment, annotator = fields
            parts = span.split()
            if len(parts) != 2:
                raise M2ParseError(line_no, f"malformed span {span!r}")
            try:
                start, end = int(parts[0]), int(parts[1])
            except ValueError:
                raise M2ParseError(line_no, f"non-integer span {span!r}") from None
            try:
                annotator_id = int(annotator)
            except ValueError:
                raise M2ParseError(
                    line_no, f"non-integer annotator id {annotator!r}"
                ) from None
            if label == _NOOP_LABEL and start == -1 and end == -1:
                noop_annotators.add(annotator_id)
                continue
            if start < 0 or end < start:
                raise M2ParseError(line_no, f"malformed span {start} {end}")
            if end > len(tokens):
                raise M2ParseError(
                    line_no,
                    f"span {start} {end} exceeds sentence length {len(tokens)}",
                )
            replacement = "" if correction == _NONE_FIELD else correction
            edits.append(
                Edit(
                    start=start,
                    end=end,
                    label=label,
                    replacement=replacement,
                    annotator_id=annotator_id,
                )
            )
            continue
        raise M2ParseError(line_no, f"unrecognized line {line!r}")

    close_entry()
    return corpus


def _check_disjoint(ordered: Sequence[Edit], line_no: int) -> None:
    by_annotator: dict[int, Edit] = {}
    for e in ordered:
        prev = by_annotator.get(e.annotator_id)
        if prev is not None and prev.end > e.start:
            raise M2ParseError(
                line_no,
                f"annotator {e.annotator_id} has overlapping edits "
                f"({prev.start} {prev.end}) and ({e.start} {e.end})",
            )
        by_annotator[e.annotator_id] = e


def serialize_m2(corpus: Corpus) -> str:
    """Render a Corpus back to M2 text; re-parsing yields an equal Corpus."""
    blocks = []
    for sentence in corpus:
        lines = ["S " + " ".join(sentence.tokens)]
        if not sentence.edits:
            lines.append(f"A -1 -1|||{_NOOP_LABEL}|||{_NONE_FIELD}|||REQUIRED|||{_NONE_FIELD}|||0")
        for e in sentence.edits:
            correction = e.replacement if e.replacement else _NONE_FIELD
            lines.append(
                f"A {e.start} {e.end}|||{e.label}|||{correction}|||REQUIRED"
                f"|||{_NONE_FIELD}|||{e.annotator_id}"
            )
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def filter_sentences(
    corpus: Corpus, rules: FilterRuleSet
) -> tuple[Corpus, list[tuple[int, str]]]:
    """Split a corpus into kept sentences and (id, reason) rejections.

    Each rejection carries the first matching rule only: the length rule,
    then the forbidden substrings in list order.
    """
    kept: Corpus = []
    rejected: list[tuple[int, str]] = []
    for sentence in corpus:
        reason = None
        if len(sentence.tokens) < rules.min_words:
            reason = "min_words"
        else:
            for sub in rules.forbidden_substrings:
                if sub in sentence.display_text:
                    reason = f"forbidden:{sub}"
                    break
        if reason is None:
            kept.append(sentence)
        else:
            rejected.append((sentence.id, reason))
    return kept, rejected


def split_by_errors(corpus: Corpus) -> tuple[Corpus, Corpus]:
    """Partition into (errorful, clean); clean means an empty edit list."""
    errorful = [s for s in corpus if s.edits]
    clean = [s for s in corpus if not s.edits]
    return errorful, clean


def max_batches_possible(n_errorful: int, n_clean: int, plan: BatchPlan) -> int:
    """How many full batches the plan admits for the given corpus sizes.

    The repeat pool is pre-sampled from the errorful set, and pool members
    may also be consumed once by the unique-errorful stream, so the
    errorful bound is simply floor(n_errorful / n_errorful_per_batch).
    """
    if n_errorful < plan.repeat_pool_size:
        return 0
    return min(n_clean // plan.n_clean, n_errorful // plan.n_errorful)


def compose_batches(
    errorful: Corpus,
    clean: Corpus,
    plan: BatchPlan,
    n_batches: int | None = None,
) -> BatchComposition:
    """Compose annotation batches of unique clean, unique errorful, and
    repeat-pool sentences, deterministically from ``plan.seed``.

    ``n_batches=None`` produces the maximum number of full batches.  Unique
    sentences never repeat across batches; each batch draws ``n_repeat``
    distinct sentences from a single pre-sampled pool; presentation order
    is a seeded shuffle.
    """
    limit = max_batches_possible(len(errorful), len(clean), plan)
    if n_batches is None:
        n_batches = limit
    if n_batches < 1 or n_batches > limit:
        raise CapacityError(
            f"cannot compose {n_batches} batches from {len(errorful)} errorful "
            f"and {len(clean)} clean sentences",
            max_batches=limit,
        )

    rng = stats.substream(plan.seed, "batching")
    err_ids = [s.id for s in errorful]
    clean_ids = [s.id for s in clean]

    pool = sorted(int(i) for i in rng.permutation(err_ids)[: plan.repeat_pool_size])
    err_stream = [int(i) for i in rng.permutation(err_ids)]
    clean_stream = [int(i) for i in rng.permutation(clean_ids)]

    batches: list[Batch] = []
    for b in range(n_batches):
        c_ids = clean_stream[b * plan.n_clean : (b + 1) * plan.n_clean]
        e_ids = err_stream[b * plan.n_errorful : (b + 1) * plan.n_errorful]
        r_ids = [int(i) for i in rng.choice(pool, size=plan.n_repeat, replace=False)]
        items = (
            [BatchItem(i, ROLE_CLEAN) for i in c_ids]
            + [BatchItem(i, ROLE_ERRORFUL) for i in e_ids]
            + [BatchItem(i, ROLE_REPEAT) for i in r_ids]
        )
        order = rng.permutation(len(items))
        batches.append(Batch(batch_id=b, items=tuple(items[int(k)] for k in order)))

    consumed_unique = set(err_stream[: n_batches * plan.n_errorful])
    overlap = tuple(sorted(set(pool) & consumed_unique))
    return BatchComposition(
        batches=tuple(batches), repeat_pool=tuple(pool), pool_unique_overlap=overlap
    )


def batches_to_json(
    composition: BatchComposition, corpus: Corpus, seed: int
) -> str:
    """Batch file content: one JSON object per batch with item texts."""
    by_id = {s.id: s for s in corpus}
    payload = [
        {
            "batch_id": batch.batch_id,
            "seed": seed,
            "items": [
                {
                    "sentence_id": item.sentence_id,
                    "role": item.role,
                    "text": by_id[item.sentence_id].display_text,
                }
                for item in batch.items
            ],
        }
        for batch in composition.batches
    ]
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
