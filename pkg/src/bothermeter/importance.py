"""From surviving annotations to per-type importance: design matrix, OLS
fit, rank extraction, bootstrap uncertainty, and token-level loss weights.

The regression target is the per-annotation Z-score (one row per
annotation, not per sentence), with clean-sentence annotations contributing
all-zero feature rows that anchor the intercept.  Rank 1 is the most
bothersome type.  A negative fitted weight does not mean the type improves
a sentence; weights are offsets against the intercept baseline, so it is
only less severe than the rest.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from . import stats
from .corpus import Corpus
from .qc import ZScoredRecord
from .typology import FeatureVector, Typology

__all__ = [
    "INTERCEPT",
    "DesignMatrix",
    "FitResult",
    "TypeImportance",
    "RankReport",
    "FitError",
    "build_design",
    "fit_ols",
    "rank_types",
    "bootstrap_importance",
    "export_token_weights",
    "token_weights_to_jsonl",
]

INTERCEPT = "(intercept)"

# Relative pivot threshold below which a column is treated as collinear.
_PIVOT_RTOL = 1e-10

WEIGHT_SIGN_NOTE = (
    "A negative weight only means the type is less severe than the others; "
    "all weights are relative to the intercept baseline, not to zero."
)


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class DesignMatrix:
    """Rows are annotations; columns are typology categories plus a trailing
    intercept column of ones.  ``support`` holds corpus-wide edit counts."""

    X: np.ndarray
    y: np.ndarray
    column_labels: tuple[str, ...]
    support: Mapping[str, int]

    @property
    def n_rows(self) -> int:
        return int(self.X.shape[0])

    def resampled(self, indices: np.ndarray) -> "DesignMatrix":
        return DesignMatrix(
            X=self.X[indices],
            y=self.y[indices],
            column_labels=self.column_labels,
            support=self.support,
        )


@dataclass(frozen=True)
class FitResult:
    weights: Mapping[str, float]
    intercept: float
    dropped_columns: tuple[str, ...]
    n_rows: int
    residual_sse: float

    def to_dict(self) -> dict:
        return {
            "weights": {c: self.weights[c] for c in sorted(self.weights)},
            "intercept": self.intercept,
            "dropped_columns": list(self.dropped_columns),
            "n_rows": self.n_rows,
            "residual_sse": self.residual_sse,
            "note": WEIGHT_SIGN_NOTE,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FitResult":
        return cls(
            weights=dict(d["weights"]),
            intercept=float(d["intercept"]),
            dropped_columns=tuple(d["dropped_columns"]),
            n_rows=int(d["n_rows"]),
            residual_sse=float(d["residual_sse"]),
        )


def build_design(
    records: Sequence[ZScoredRecord],
    features: Mapping[int, FeatureVector],
    typology: Typology,
    per_sentence_mean: bool = False,
) -> DesignMatrix:
    """Assemble the regression problem from surviving annotations.

    With ``per_sentence_mean`` the rows collapse to one per sentence and
    the target becomes the mean Z-score of its annotations.
    """
    if not records:
        raise FitError("no surviving annotations to fit")
    for r in records:
        if r.sentence_id not in features:
            raise FitError(f"sentence {r.sentence_id} has no feature vector")

    categories = typology.categories
    if per_sentence_mean:
        z_by_sid: dict[int, list[float]] = {}
        for r in records:
            z_by_sid.setdefault(r.sentence_id, []).append(r.z)
        sids = sorted(z_by_sid)
        rows = [features[sid].as_row(categories) for sid in sids]
        y = [sum(z_by_sid[sid]) / len(z_by_sid[sid]) for sid in sids]
    else:
        rows = [features[r.sentence_id].as_row(categories) for r in records]
        y = [r.z for r in records]

    X = np.hstack(
        [np.asarray(rows, dtype=float), np.ones((len(rows), 1))]
    )
    support = {
        c: sum(fv.counts.get(c, 0) for fv in features.values()) for c in categories
    }
    return DesignMatrix(
        X=X,
        y=np.asarray(y, dtype=float),
        column_labels=tuple(categories),
        support=support,
    )


def fit_ols(design: DesignMatrix) -> FitResult:
    """Least squares via column-pivoted QR.

    Columns whose pivot magnitude falls below 1e-10 times the largest pivot
    are treated as collinear, dropped, and reported; the solution over the
    kept columns is deterministic.
    """
    X, y = design.X, design.y
    n, p = X.shape
    if n == 0 or p == 0:
        raise FitError("empty design matrix")
    labels = list(design.column_labels) + [INTERCEPT]

    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    largest = float(diag.max()) if diag.size else 0.0
    if largest == 0.0:
        raise FitError("design matrix is entirely zero")
    # Pivoting orders the diagonal by decreasing magnitude; truncate at the
    # first pivot below threshold.
    below = np.nonzero(diag < _PIVOT_RTOL * largest)[0]
    rank = int(below[0]) if below.size else int(diag.size)

    kept = piv[:rank]
    dropped = sorted(labels[j] for j in piv[rank:])
    if all(labels[j] == INTERCEPT for j in kept):
        raise FitError("every feature column was dropped as collinear")

    qty = Q.T @ y
    coef = scipy.linalg.solve_triangular(R[:rank, :rank], qty[:rank])
    residual = y - X[:, kept] @ coef
    weights = {}
    intercept = 0.0
    for j, c in zip(kept, coef):
        if labels[j] == INTERCEPT:
            intercept = float(c)
        else:
            weights[labels[j]] = float(c)
    return FitResult(
        weights=weights,
        intercept=intercept,
        dropped_columns=tuple(dropped),
        n_rows=n,
        residual_sse=float(residual @ residual),
    )


def rank_types(fit: FitResult) -> tuple[dict[str, int], list[tuple[str, ...]]]:
    """Rank categories by fitted weight, 1 = largest = most bothersome.

    Ties break lexicographically and come back as the second element, a
    list of tied label groups.  Dropped columns receive no rank.
    """
    ordered = sorted(fit.weights, key=lambda c: (-fit.weights[c], c))
    ranks = {c: i + 1 for i, c in enumerate(ordered)}
    ties: list[tuple[str, ...]] = []
    by_weight: dict[float, list[str]] = {}
    for c, w in fit.weights.items():
        by_weight.setdefault(w, []).append(c)
    for w, group in sorted(by_weight.items()):
        if len(group) > 1:
            ties.append(tuple(sorted(group)))
    return ranks, ties


@dataclass(frozen=True)
class TypeImportance:
    category: str
    mean_rank: float
    rank_std: float
    mean_weight: float
    weight_std: float
    support: int
    n_dropped: int  # resamples in which the category was collinear


@dataclass(frozen=True)
class RankReport:
    rows: tuple[TypeImportance, ...]
    b_resamples: int
    n_failed_resamples: int
    notes: tuple[str, ...] = field(
        default=(
            "Uncertainty is the sample std over row-bootstrap resamples.",
            "Rank 1 is the most bothersome category.",
            WEIGHT_SIGN_NOTE,
        )
    )

    def sorted_by_rank(self) -> list[TypeImportance]:
        return sorted(self.rows, key=lambda r: (r.mean_rank, r.category))

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(
            ["category", "mean_rank", "rank_std", "mean_weight", "weight_std", "support"]
        )
        for row in self.sorted_by_rank():
            writer.writerow(
                [
                    row.category,
                    repr(row.mean_rank),
                    repr(row.rank_std),
                    repr(row.mean_weight),
                    repr(row.weight_std),
                    row.support,
                ]
            )
        return out.getvalue()

    def to_json(self) -> str:
        payload = {
            "b_resamples": self.b_resamples,
            "n_failed_resamples": self.n_failed_resamples,
            "notes": list(self.notes),
            "types": [
                {
                    "category": r.category,
                    "mean_rank": r.mean_rank,
                    "rank_std": r.rank_std,
                    "mean_weight": r.mean_weight,
                    "weight_std": r.weight_std,
                    "support": r.support,
                    "n_dropped": r.n_dropped,
                }
                for r in self.sorted_by_rank()
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def bootstrap_importance(design: DesignMatrix, b: int, seed: int) -> RankReport:
    """Row bootstrap of the fit: resample annotations with replacement,
    refit, re-rank, and aggregate mean and sample std of ranks and weights.

    Categories reported are those kept by the full-data fit (K of them).
    A category dropped as collinear inside one resample takes that
    resample's worst ranks (the bottom of 1..K, lexicographic among
    themselves) so every resample's rank vector is a permutation of 1..K;
    its weight simply does not contribute to the weight statistics for
    that resample.  More than 10% failed resamples aborts.
    """
    if b < 2:
        raise ValueError(f"need at least 2 resamples for a std, got b={b}")
    full = fit_ols(design)
    cats = sorted(full.weights)
    K = len(cats)
    pos = {c: i for i, c in enumerate(cats)}

    indices = stats.bootstrap_indices(design.n_rows, b, seed)
    rank_samples: list[np.ndarray] = []
    weight_samples = [[] for _ in range(K)]
    n_dropped = [0] * K
    failures = 0
    first_failure: Exception | None = None
    for r in range(b):
        try:
            fit = fit_ols(design.resampled(indices[r]))
        except FitError as exc:
            failures += 1
            if first_failure is None:
                first_failure = exc
            continue
        fitted = [c for c in cats if c in fit.weights]
        missing = [c for c in cats if c not in fit.weights]
        ordered = sorted(fitted, key=lambda c: (-fit.weights[c], c)) + missing
        ranks = np.empty(K)
        for rank, c in enumerate(ordered, start=1):
            ranks[pos[c]] = rank
        rank_samples.append(ranks)
        for c in fitted:
            weight_samples[pos[c]].append(fit.weights[c])
        for c in missing:
            n_dropped[pos[c]] += 1

    if failures > 0.1 * b:
        raise FitError(
            f"{failures}/{b} bootstrap resamples failed to fit; last error: {first_failure}"
        )

    rank_arr = np.asarray(rank_samples)
    rows = []
    for c in cats:
        i = pos[c]
        ws = np.asarray(weight_samples[i], dtype=float)
        rows.append(
            TypeImportance(
                category=c,
                mean_rank=float(rank_arr[:, i].mean()),
                rank_std=float(rank_arr[:, i].std(ddof=1)),
                mean_weight=float(ws.mean()) if ws.size else math.nan,
                weight_std=float(ws.std(ddof=1)) if ws.size >= 2 else math.nan,
                support=int(design.support.get(c, 0)),
                n_dropped=n_dropped[i],
            )
        )
    return RankReport(
        rows=tuple(rows), b_resamples=b, n_failed_resamples=failures
    )


# --------------------------------------------------------------------------
# Token-level loss weights.


def export_token_weights(
    corpus: Corpus,
    typology: Typology,
    fit: FitResult,
    w_max: float = 2.0,
) -> list[tuple[int, list[float]]]:
    """Per-token loss weights in [1, w_max].

    Non-error tokens stay at 1.0.  A token covered by an edit receives
    ``1 + (w_max - 1) * (w_c - min_w) / (max_w - min_w)`` for the edit's
    category weight w_c, with min/max ranging over fitted categories;
    insertions weight the token at the insertion point (the last token when
    inserting at the end) and overlapping edits take the maximum.  When all
    fitted weights are equal, error tokens uniformly get w_max.
    """
    if not w_max > 1.0:
        raise ValueError(f"w_max must exceed 1.0, got {w_max}")
    if not fit.weights:
        raise FitError("fit holds no category weights")
    lo = min(fit.weights.values())
    hi = max(fit.weights.values())
    span = hi - lo

    def scaled(w: float) -> float:
        if span == 0.0:
            return w_max
        return 1.0 + (w_max - 1.0) * (w - lo) / span

    out: list[tuple[int, list[float]]] = []
    for sentence in corpus:
        weights = [1.0] * len(sentence.tokens)
        for e in sentence.edits:
            cat = typology.category_of(e.label)
            if cat not in fit.weights or not sentence.tokens:
                continue
            if e.is_insertion:
                span_tokens = [min(e.start, len(sentence.tokens) - 1)]
            else:
                span_tokens = range(e.start, e.end)
            value = scaled(fit.weights[cat])
            for i in span_tokens:
                weights[i] = max(weights[i], value)
        out.append((sentence.id, weights))
    return out


def token_weights_to_jsonl(weights: Sequence[tuple[int, list[float]]]) -> str:
    lines = [
        json.dumps({"sentence_id": sid, "weights": ws}, sort_keys=True)
        for sid, ws in weights
    ]
    return "\n".join(lines) + "\n"
