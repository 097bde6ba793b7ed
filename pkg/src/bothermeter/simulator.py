"""Synthetic corpora and annotator populations with known ground truth.

The generator emits exactly the artifacts the real pipeline ingests (an M2
corpus, an annotations CSV, feature counts), so a simulated run exercises
the production parsing, QC, and fitting paths end to end while the true
type weights, the latent sentence scores, and every annotator's archetype
stay known for verification.

Annotator archetypes:

* honest   - score = clamp(round(gain * (latent + noise) + offset)), with a
             private positive gain and offset per annotator (exactly the
             calibration habits Z-normalization exists to remove).
* speeder  - honest scores, but batch working time below the time filter.
* constant - one fixed raw score for everything.
* anti     - honest scores reflected about the scale midpoint.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import stats
from .corpus import (
    Batch,
    BatchPlan,
    Corpus,
    Edit,
    Sentence,
    compose_batches,
    normalize_spaces,
    split_by_errors,
)
from .qc import AnnotationRecord
from .typology import FeatureVector

__all__ = [
    "ARCHETYPES",
    "SimConfig",
    "GroundTruth",
    "generate_corpus",
    "generate_annotations",
]

ARCHETYPES = ("honest", "speeder", "constant", "anti")

_SCALE_LO = 1
_SCALE_HI = 100
_SCALE_MID = (_SCALE_LO + _SCALE_HI) / 2.0  # 50.5


def _default_weights(n_types: int) -> dict[str, float]:
    values = np.linspace(0.5, 3.0, n_types)
    return {f"T{i:02d}": float(v) for i, v in enumerate(values)}


@dataclass(frozen=True)
class SimConfig:
    n_types: int = 15
    true_weights: Mapping[str, float] | None = None  # default: spread over [0.5, 3]
    true_intercept: float = 15.0
    n_sentences: int = 3000
    max_edits_per_type: int = 2  # per-type count drawn uniformly from 0..max
    clean_fraction: float = 0.2
    annotator_mix: Mapping[str, float] = field(
        default_factory=lambda: {"honest": 1.0, "speeder": 0.0, "constant": 0.0, "anti": 0.0}
    )
    noise_sd: float = 0.5
    scores_per_sentence: int = 18
    seed: int = 0
    batch_plan: BatchPlan | None = None  # defaults to BatchPlan(seed=seed)

    def __post_init__(self) -> None:
        if self.n_types < 1:
            raise ValueError("n_types must be >= 1")
        if not 0.0 < self.clean_fraction < 1.0:
            raise ValueError("clean_fraction must be in (0, 1)")
        if self.max_edits_per_type < 1:
            raise ValueError("max_edits_per_type must be >= 1")
        if self.noise_sd < 0.0:
            raise ValueError("noise_sd must be >= 0")
        if self.scores_per_sentence < 1:
            raise ValueError("scores_per_sentence must be >= 1")
        mix = dict(self.annotator_mix)
        if set(mix) - set(ARCHETYPES):
            raise ValueError(f"unknown archetypes: {sorted(set(mix) - set(ARCHETYPES))}")
        if any(f < 0 for f in mix.values()):
            raise ValueError("annotator mix fractions must be nonnegative")
        if not math.isclose(sum(mix.values()), 1.0, abs_tol=1e-9):
            raise ValueError(f"annotator mix fractions must sum to 1, got {sum(mix.values())}")
        if self.true_weights is not None and len(self.true_weights) != self.n_types:
            raise ValueError("true_weights must hold one weight per type")

    @property
    def weights(self) -> dict[str, float]:
        if self.true_weights is not None:
            return dict(self.true_weights)
        return _default_weights(self.n_types)

    @property
    def plan(self) -> BatchPlan:
        return self.batch_plan if self.batch_plan is not None else BatchPlan(seed=self.seed)


@dataclass(frozen=True)
class GroundTruth:
    true_weights: dict[str, float]
    true_intercept: float
    latent: dict[int, float]  # sentence id -> latent bother score
    true_ranks: dict[str, int]  # 1 = heaviest weight
    annotator_archetype: dict[str, str] = field(default_factory=dict)
    saturation_fraction: float = 0.0

    def to_json(self) -> str:
        payload = {
            "true_weights": self.true_weights,
            "true_intercept": self.true_intercept,
            "true_ranks": self.true_ranks,
            "latent": {str(k): v for k, v in self.latent.items()},
            "annotator_archetype": self.annotator_archetype,
            "saturation_fraction": self.saturation_fraction,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        d = json.loads(text)
        return cls(
            true_weights=dict(d["true_weights"]),
            true_intercept=float(d["true_intercept"]),
            latent={int(k): float(v) for k, v in d["latent"].items()},
            true_ranks={k: int(v) for k, v in d["true_ranks"].items()},
            annotator_archetype=dict(d.get("annotator_archetype", {})),
            saturation_fraction=float(d.get("saturation_fraction", 0.0)),
        )


def _true_ranks(weights: Mapping[str, float]) -> dict[str, int]:
    ordered = sorted(weights, key=lambda c: (-weights[c], c))
    return {c: i + 1 for i, c in enumerate(ordered)}


def generate_corpus(
    config: SimConfig,
) -> tuple[Corpus, dict[int, FeatureVector], GroundTruth]:
    """Build a synthetic corpus with known per-sentence latent scores.

    Errorful sentences draw each type's count uniformly from 0..max (redrawn
    if every count lands on zero); a ``clean_fraction`` of sentences is
    forced edit-free.  Sentences always satisfy the default length and
    substring filters, so the downstream pipeline rejects nothing.
    """
    weights = config.weights
    types = sorted(weights)
    rng_layout = stats.substream(config.seed, "sim-corpus-layout")
    n_clean = int(round(config.clean_fraction * config.n_sentences))
    clean_mask = np.zeros(config.n_sentences, dtype=bool)
    clean_mask[rng_layout.permutation(config.n_sentences)[:n_clean]] = True

    children = stats.substream_seed(config.seed, "sim-corpus").spawn(config.n_sentences)
    corpus: Corpus = []
    features: dict[int, FeatureVector] = {}
    latent: dict[int, float] = {}
    for sid in range(config.n_sentences):
        rng = np.random.default_rng(children[sid])
        if clean_mask[sid]:
            counts = np.zeros(len(types), dtype=int)
        else:
            counts = rng.integers(0, config.max_edits_per_type + 1, size=len(types))
            while not counts.any():
                counts = rng.integers(0, config.max_edits_per_type + 1, size=len(types))
        total = int(counts.sum())
        n_tokens = max(7, total)
        tokens = tuple(f"w{sid}n{j}" for j in range(n_tokens))
        positions = rng.permutation(n_tokens)[:total]
        labels = [t for t, c in zip(types, counts) for _ in range(int(c))]
        edits = tuple(
            sorted(
                Edit(start=int(p), end=int(p) + 1, label=lab, replacement="fix", annotator_id=0)
                for p, lab in zip(positions, labels)
            )
        )
        corpus.append(
            Sentence(
                id=sid,
                tokens=tokens,
                edits=edits,
                display_text=normalize_spaces(" ".join(tokens)),
            )
        )
        features[sid] = FeatureVector(
            sentence_id=sid,
            counts={t: int(c) for t, c in zip(types, counts) if c},
            total_edits=total,
        )
        latent[sid] = config.true_intercept + float(
            np.dot(counts, [weights[t] for t in types])
        )

    truth = GroundTruth(
        true_weights=weights,
        true_intercept=config.true_intercept,
        latent=latent,
        true_ranks=_true_ranks(weights),
    )
    return corpus, features, truth


def _archetype_counts(mix: Mapping[str, float], n: int) -> list[str]:
    """Exact archetype counts by largest remainder, honest taking the slack."""
    shares = {a: mix.get(a, 0.0) * n for a in ARCHETYPES}
    counts = {a: int(math.floor(s)) for a, s in shares.items()}
    leftovers = sorted(
        ARCHETYPES, key=lambda a: (shares[a] - counts[a], a), reverse=True
    )
    for a in leftovers[: n - sum(counts.values())]:
        counts[a] += 1
    return [a for a in ARCHETYPES for _ in range(counts[a])]


def generate_annotations(
    corpus: Corpus,
    truth: GroundTruth,
    config: SimConfig,
) -> tuple[list[AnnotationRecord], GroundTruth]:
    """Simulate the crowd pass over the corpus.

    Batches come from :func:`compose_batches`; every batch is annotated by
    ``scores_per_sentence`` annotators, each annotator working exactly one
    batch.  Returns the records plus the ground truth extended with each
    annotator's archetype and the clamping saturation fraction.
    """
    errorful, clean = split_by_errors(corpus)
    plan = config.plan
    composition = compose_batches(errorful, clean, plan)
    batches: tuple[Batch, ...] = composition.batches

    n_annotators = len(batches) * config.scores_per_sentence
    assign_rng = stats.substream(config.seed, "sim-archetypes")
    pool = _archetype_counts(config.annotator_mix, n_annotators)
    archetypes = [pool[i] for i in assign_rng.permutation(n_annotators)]

    children = stats.substream_seed(config.seed, "sim-annotators").spawn(n_annotators)
    records: list[AnnotationRecord] = []
    archetype_of: dict[str, str] = {}
    n_saturated = 0
    n_honest_scores = 0

    idx = 0
    for batch in batches:
        size = len(batch.items)
        for k in range(config.scores_per_sentence):
            annotator_id = f"a{idx:04d}"
            archetype = archetypes[idx]
            rng = np.random.default_rng(children[idx])
            idx += 1
            archetype_of[annotator_id] = archetype

            gain = rng.uniform(0.9, 1.1)
            offset = rng.uniform(-5.0, 5.0)
            constant_score = int(rng.integers(_SCALE_LO, _SCALE_HI + 1))
            scale = size / 100.0
            if archetype == "speeder":
                batch_seconds = rng.uniform(60.0, 349.0) * scale
            else:
                batch_seconds = rng.uniform(400.0, 1800.0) * scale

            for item in batch.items:
                if archetype == "constant":
                    raw = constant_score
                else:
                    noise = rng.normal(0.0, config.noise_sd) if config.noise_sd else 0.0
                    value = gain * (truth.latent[item.sentence_id] + noise) + offset
                    raw = int(round(value))
                    n_honest_scores += 1
                    if raw < _SCALE_LO or raw > _SCALE_HI:
                        n_saturated += 1
                        raw = min(max(raw, _SCALE_LO), _SCALE_HI)
                    if archetype == "anti":
                        raw = int(2 * _SCALE_MID) - raw  # reflect about 50.5
                records.append(
                    AnnotationRecord(
                        annotator_id=annotator_id,
                        batch_id=batch.batch_id,
                        sentence_id=item.sentence_id,
                        role=item.role,
                        raw_score=raw,
                        batch_seconds=batch_seconds,
                    )
                )

    extended = GroundTruth(
        true_weights=truth.true_weights,
        true_intercept=truth.true_intercept,
        latent=truth.latent,
        true_ranks=truth.true_ranks,
        annotator_archetype=archetype_of,
        saturation_fraction=(n_saturated / n_honest_scores) if n_honest_scores else 0.0,
    )
    return records, extended
