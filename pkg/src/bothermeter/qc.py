"""Annotator quality control: ingestion, per-annotator Z-normalization, and
the three-stage filtering pipeline (working time, directional t-test,
repeat-sentence agreement), with full audit reasons.

Stage order matters and is fixed: degenerate (constant or single-record)
annotators first, then the time filter, then the t-test, then the repeat
correlation.  Each removed annotator carries exactly one removal stage,
the first one that failed.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from . import stats
from .stats import SampleSummary, TTestResult

__all__ = [
    "AnnotationRecord",
    "ZScoredRecord",
    "QcConfig",
    "AnnotatorProfile",
    "QcSummary",
    "QcResult",
    "IngestError",
    "STAGE_NONE",
    "STAGE_DEGENERATE",
    "STAGE_TIME",
    "STAGE_TTEST",
    "STAGE_CORRELATION",
    "ingest_annotations",
    "records_to_csv",
    "z_normalize",
    "filter_time",
    "filter_ttest",
    "filter_correlation",
    "run_qc",
]

ROLES = ("clean", "errorful", "repeat")

STAGE_NONE = "none"
STAGE_DEGENERATE = "degenerate"
STAGE_TIME = "time"
STAGE_TTEST = "ttest"
STAGE_CORRELATION = "correlation"

_CSV_FIELDS = (
    "annotator_id",
    "batch_id",
    "sentence_id",
    "role",
    "raw_score",
    "batch_seconds",
)


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotationRecord:
    """One annotator's raw 1-100 score for one sentence.

    ``batch_seconds`` is the total working time of the batch the record
    belongs to, shared by every record of one (annotator, batch).
    """

    annotator_id: str
    batch_id: int
    sentence_id: int
    role: str
    raw_score: int
    batch_seconds: float


@dataclass(frozen=True)
class ZScoredRecord:
    annotator_id: str
    batch_id: int
    sentence_id: int
    role: str
    raw_score: int
    batch_seconds: float
    z: float


@dataclass(frozen=True)
class QcConfig:
    min_batch_seconds: float = 350.0  # per 100-sentence batch, scaled for partial ones
    alpha: float = 0.05
    corr_threshold: float = -0.4
    min_responses_per_repeat: int = 15
    min_corr_pairs: int = 5

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if not -1.0 <= self.corr_threshold <= 1.0:
            raise ValueError("corr_threshold must be in [-1, 1]")
        if self.min_responses_per_repeat < 2:
            raise ValueError("min_responses_per_repeat must be >= 2")


@dataclass
class AnnotatorProfile:
    annotator_id: str
    n_records: int
    verdict: str = "kept"  # kept | removed
    removal_stage: str = STAGE_NONE
    t: float | None = None
    df: float | None = None
    p: float | None = None
    repeat_corr: float | None = None

    def remove(self, stage: str) -> None:
        self.verdict = "removed"
        self.removal_stage = stage

    def to_dict(self) -> dict:
        def clean(v: float | None) -> float | None:
            return v if v is not None and math.isfinite(v) else None

        return {
            "annotator_id": self.annotator_id,
            "verdict": self.verdict,
            "removal_stage": self.removal_stage,
            "t": clean(self.t),
            "df": clean(self.df),
            "p": clean(self.p),
            "repeat_corr": clean(self.repeat_corr),
            "n_records": self.n_records,
        }


@dataclass(frozen=True)
class QcSummary:
    n_annotators: int
    n_records: int
    removed: dict[str, int]  # stage -> count
    n_kept: int
    n_surviving_records: int

    def to_dict(self) -> dict:
        total_removed = sum(self.removed.values())
        frac = lambda k: (k / self.n_annotators) if self.n_annotators else 0.0
        return {
            "n_annotators": self.n_annotators,
            "n_records": self.n_records,
            "removed_by_stage": dict(self.removed),
            "removed_fraction_by_stage": {s: frac(c) for s, c in self.removed.items()},
            "n_removed": total_removed,
            "removed_fraction": frac(total_removed),
            "n_kept": self.n_kept,
            "n_surviving_records": self.n_surviving_records,
        }


@dataclass(frozen=True)
class QcResult:
    surviving: list[ZScoredRecord]
    profiles: list[AnnotatorProfile]
    summary: QcSummary

    def profiles_json(self) -> str:
        return json.dumps([p.to_dict() for p in self.profiles], indent=2, sort_keys=True) + "\n"

    def summary_json(self) -> str:
        return json.dumps(self.summary.to_dict(), indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# Ingestion.


def ingest_annotations(
    source: str | io.TextIOBase | Iterable[str], strict: bool = True
) -> tuple[list[AnnotationRecord], list[tuple[int, str]]]:
    """Read the annotations CSV.

    Returns (records, row_errors).  In strict mode the first bad row raises
    :class:`IngestError`; in lenient mode bad rows are collected with their
    line numbers and skipped.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.DictReader(source)
    if reader.fieldnames is None:
        raise IngestError("annotations CSV is empty (no header)")
    missing = [f for f in _CSV_FIELDS if f not in reader.fieldnames]
    if missing:
        raise IngestError(f"annotations CSV lacks columns: {', '.join(missing)}")

    records: list[AnnotationRecord] = []
    errors: list[tuple[int, str]] = []
    seconds_seen: dict[tuple[str, int], float] = {}

    def fail(line_no: int, message: str) -> None:
        if strict:
            raise IngestError(f"line {line_no}: {message}")
        errors.append((line_no, message))

    for row in reader:
        line_no = reader.line_num
        try:
            annotator_id = (row["annotator_id"] or "").strip()
            if not annotator_id:
                raise ValueError("empty annotator_id")
            batch_id = int(row["batch_id"])
            sentence_id = int(row["sentence_id"])
            role = (row["role"] or "").strip().lower()
            if role not in ROLES:
                raise ValueError(f"unknown role {row['role']!r}")
            raw_score = int(row["raw_score"])
            if not 1 <= raw_score <= 100:
                raise ValueError(f"raw_score {raw_score} outside [1, 100]")
            batch_seconds = float(row["batch_seconds"])
            if not batch_seconds > 0:
                raise ValueError(f"batch_seconds {batch_seconds} not positive")
        except (ValueError, TypeError) as exc:
            fail(line_no, str(exc))
            continue

        key = (annotator_id, batch_id)
        prev = seconds_seen.setdefault(key, batch_seconds)
        if prev != batch_seconds:
            fail(
                line_no,
                f"batch_seconds {batch_seconds} disagrees with {prev} for "
                f"annotator {annotator_id!r} batch {batch_id}",
            )
            continue
        records.append(
            AnnotationRecord(
                annotator_id=annotator_id,
                batch_id=batch_id,
                sentence_id=sentence_id,
                role=role,
                raw_score=raw_score,
                batch_seconds=batch_seconds,
            )
        )
    return records, errors


def records_to_csv(records: Sequence[AnnotationRecord | ZScoredRecord]) -> str:
    """Annotations as CSV; Z-scored records gain a trailing ``z`` column."""
    with_z = bool(records) and isinstance(records[0], ZScoredRecord)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(list(_CSV_FIELDS) + (["z"] if with_z else []))
    for r in records:
        row = [r.annotator_id, r.batch_id, r.sentence_id, r.role, r.raw_score,
               repr(r.batch_seconds)]
        if with_z:
            row.append(repr(r.z))
        writer.writerow(row)
    return out.getvalue()


# --------------------------------------------------------------------------
# Normalization and filters.


def _by_annotator(records: Iterable) -> dict[str, list]:
    groups: dict[str, list] = {}
    for r in records:
        groups.setdefault(r.annotator_id, []).append(r)
    return groups


def z_normalize(
    records: Sequence[AnnotationRecord],
) -> tuple[list[ZScoredRecord], list[str]]:
    """Standardize raw scores per annotator to mean 0, sd 1 (sample sd).

    Annotators with a single record or with all-identical scores cannot be
    normalized; their ids come back in the degenerate list and none of
    their records appear in the output.
    """
    zscored: list[ZScoredRecord] = []
    degenerate: list[str] = []
    for annotator_id, group in _by_annotator(records).items():
        scores = [r.raw_score for r in group]
        if len(scores) < 2:
            degenerate.append(annotator_id)
            continue
        mean = sum(scores) / len(scores)
        var = sum((s - mean) ** 2 for s in scores) / (len(scores) - 1)
        if var == 0.0:
            degenerate.append(annotator_id)
            continue
        sd = math.sqrt(var)
        zscored.extend(
            ZScoredRecord(
                annotator_id=r.annotator_id,
                batch_id=r.batch_id,
                sentence_id=r.sentence_id,
                role=r.role,
                raw_score=r.raw_score,
                batch_seconds=r.batch_seconds,
                z=(r.raw_score - mean) / sd,
            )
            for r in group
        )
    return zscored, degenerate


def filter_time(records: Iterable, config: QcConfig) -> set[str]:
    """Annotators with any batch worked faster than the scaled threshold.

    The threshold is ``min_batch_seconds`` for a 100-item batch, scaled
    linearly by actual batch size; the boundary value itself is kept.
    """
    batch_size: dict[tuple[str, int], int] = {}
    batch_seconds: dict[tuple[str, int], float] = {}
    for r in records:
        key = (r.annotator_id, r.batch_id)
        batch_size[key] = batch_size.get(key, 0) + 1
        batch_seconds[key] = r.batch_seconds
    removed = set()
    for key, size in batch_size.items():
        threshold = config.min_batch_seconds * size / 100.0
        if batch_seconds[key] < threshold:
            removed.add(key[0])
    return removed


def filter_ttest(
    zscored: Sequence[ZScoredRecord], config: QcConfig
) -> tuple[set[str], dict[str, TTestResult | None]]:
    """Keep annotators whose errorful Z-scores are significantly higher
    than their clean ones (repeat records count as errorful).

    Annotators without at least two records in each group cannot show the
    effect and are removed; their diagnostic is None.
    """
    removed: set[str] = set()
    diagnostics: dict[str, TTestResult | None] = {}
    for annotator_id, group in _by_annotator(zscored).items():
        errorful = [r.z for r in group if r.role in ("errorful", "repeat")]
        clean = [r.z for r in group if r.role == "clean"]
        if len(errorful) < 2 or len(clean) < 2:
            removed.add(annotator_id)
            diagnostics[annotator_id] = None
            continue
        result = stats.welch_one_tailed(
            SampleSummary.from_values(errorful),
            SampleSummary.from_values(clean),
            config.alpha,
        )
        diagnostics[annotator_id] = result
        if not result.significant:
            removed.add(annotator_id)
    return removed, diagnostics


def filter_correlation(
    zscored: Sequence[ZScoredRecord], config: QcConfig
) -> tuple[set[str], dict[str, float | None]]:
    """Remove annotators whose repeat-sentence Z-scores correlate strongly
    negatively with the mean of the other surviving annotators.

    Only repeat-role records participate, and only repeat sentences with at
    least ``min_responses_per_repeat`` responses.  Annotators with fewer
    than ``min_corr_pairs`` usable pairs, or with zero variance in either
    pair sequence, skip the filter and are kept (correlation None).
    """
    by_sentence: dict[int, list[ZScoredRecord]] = {}
    for r in zscored:
        if r.role == "repeat":
            by_sentence.setdefault(r.sentence_id, []).append(r)
    eligible = {
        sid for sid, rs in by_sentence.items() if len(rs) >= config.min_responses_per_repeat
    }

    removed: set[str] = set()
    correlations: dict[str, float | None] = {}
    for annotator_id in sorted({r.annotator_id for r in zscored}):
        own: list[float] = []
        others: list[float] = []
        own_sids = sorted(
            {
                r.sentence_id
                for r in zscored
                if r.annotator_id == annotator_id and r.role == "repeat"
            }
        )
        for sid in own_sids:
            if sid not in eligible:
                continue
            mine = [r.z for r in by_sentence[sid] if r.annotator_id == annotator_id]
            rest = [r.z for r in by_sentence[sid] if r.annotator_id != annotator_id]
            if not rest:
                continue
            own.append(sum(mine) / len(mine))
            others.append(sum(rest) / len(rest))
        if len(own) < config.min_corr_pairs:
            correlations[annotator_id] = None
            continue
        try:
            r_val = stats.pearson(own, others)
        except stats.UndefinedCorrelationError:
            correlations[annotator_id] = None
            continue
        correlations[annotator_id] = r_val
        if r_val < config.corr_threshold:
            removed.add(annotator_id)
    return removed, correlations


def run_qc(
    records: Sequence[AnnotationRecord],
    config: QcConfig = QcConfig(),
    flip_scores: bool = False,
) -> QcResult:
    """Run the full annotator filtering pipeline.

    ``flip_scores`` negates every Z-score right after normalization, for
    ingesting data whose scale runs in the opposite direction (higher =
    better instead of higher = more bothersome).
    """
    if not records:
        raise ValueError("no annotation records to filter")

    groups = _by_annotator(records)
    profiles = {
        aid: AnnotatorProfile(annotator_id=aid, n_records=len(g))
        for aid, g in sorted(groups.items())
    }

    zscored, degenerate = z_normalize(records)
    if flip_scores:
        zscored = [replace(r, z=-r.z) for r in zscored]
    for aid in degenerate:
        profiles[aid].remove(STAGE_DEGENERATE)

    alive = {aid for aid in groups if aid not in set(degenerate)}

    removed_time = filter_time(
        [r for r in records if r.annotator_id in alive], config
    )
    for aid in sorted(removed_time):
        profiles[aid].remove(STAGE_TIME)
    alive -= removed_time

    stage2_records = [r for r in zscored if r.annotator_id in alive]
    removed_ttest, diagnostics = filter_ttest(stage2_records, config)
    for aid, diag in diagnostics.items():
        if diag is not None:
            profiles[aid].t = diag.t
            profiles[aid].df = diag.df
            profiles[aid].p = diag.p_one_tailed
    for aid in sorted(removed_ttest):
        profiles[aid].remove(STAGE_TTEST)
    alive -= removed_ttest

    stage3_records = [r for r in zscored if r.annotator_id in alive]
    removed_corr, correlations = filter_correlation(stage3_records, config)
    for aid, r_val in correlations.items():
        profiles[aid].repeat_corr = r_val
    for aid in sorted(removed_corr):
        profiles[aid].remove(STAGE_CORRELATION)
    alive -= removed_corr

    surviving = [r for r in zscored if r.annotator_id in alive]
    summary = QcSummary(
        n_annotators=len(groups),
        n_records=len(records),
        removed={
            STAGE_DEGENERATE: len(degenerate),
            STAGE_TIME: len(removed_time),
            STAGE_TTEST: len(removed_ttest),
            STAGE_CORRELATION: len(removed_corr),
        },
        n_kept=len(alive),
        n_surviving_records=len(surviving),
    )
    return QcResult(
        surviving=surviving,
        profiles=[profiles[aid] for aid in sorted(profiles)],
        summary=summary,
    )
