"""Relationship proposals and their evaluation.

Proposals are the top-K weighted off-diagonal entries of a focus-weight
matrix, collapsed to unordered pairs by default. A proposal matches a
ground-truth relation when both of its entities best-match (IoU > threshold)
the two objects of that relation, orientation ignored; recall is the fraction
of unique ground-truth relations covered. Also provides the per-entity
word-importance factor (column mass received under the matrix-wide softmax)
and center-mass reporting across instances.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .attention import AttentionState, EntitySet
from .losses import center_mass, validate_target
from .matrices import ValidationError, as_matrix
from .supervision import NO_MATCH, GroundTruthObject, entity_gt_matching

__all__ = [
    "RelationPair",
    "GroundTruthRelation",
    "CenterMassSummary",
    "top_k_pairs",
    "relation_recall",
    "word_importance",
    "center_mass_report",
    "write_metrics_csv",
    "METRICS_CSV_COLUMNS",
]

METRICS_CSV_COLUMNS = ("instance_id", "k", "recall", "center_mass")


@dataclass(frozen=True)
class RelationPair:
    """A proposed relation between two distinct entities, with its weight."""

    subject: int
    object: int
    weight: float

    def __post_init__(self):
        if self.subject == self.object:
            raise ValidationError("a relation pair needs two distinct entities")

    def unordered(self) -> frozenset[int]:
        return frozenset((self.subject, self.object))


@dataclass(frozen=True)
class GroundTruthRelation:
    """An annotated relation between two gt objects; matched as an unordered pair."""

    subject: int
    object: int

    def unordered(self) -> frozenset[int]:
        return frozenset((self.subject, self.object))


def top_k_pairs(focus_weights, k: int, ordered_pairs: bool = False) -> list[RelationPair]:
    """The k highest-weight off-diagonal entries, sorted descending.

    Ties break by (row, col) lexicographic order, so repeated runs produce
    identical lists. By default (i, j) and (j, i) collapse to one unordered
    proposal keeping the higher-weighted orientation; pass ordered_pairs=True
    to keep both directions as separate candidates. k larger than the number
    of available pairs returns them all.
    """
    w = as_matrix(focus_weights, "focus_weights")
    n = w.shape[0]
    if w.shape[1] != n:
        raise ValidationError(f"focus_weights must be square, got {w.shape}")
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")

    candidates: list[tuple[int, int]] = []
    if ordered_pairs:
        candidates = [(i, j) for i in range(n) for j in range(n) if i != j]
    else:
        for i in range(n):
            for j in range(i + 1, n):
                # keep the stronger orientation; exact tie keeps (i, j), the
                # lexicographically smaller one
                if w[j, i] > w[i, j]:
                    candidates.append((j, i))
                else:
                    candidates.append((i, j))
    candidates.sort(key=lambda ij: (-w[ij[0], ij[1]], ij[0], ij[1]))
    return [
        RelationPair(subject=i, object=j, weight=float(w[i, j]))
        for i, j in candidates[:k]
    ]


def relation_recall(
    pairs: Sequence[RelationPair],
    entities: EntitySet,
    gt_objects: Sequence[GroundTruthObject],
    gt_relations: Sequence[GroundTruthRelation],
    k: int,
    iou_threshold: float = 0.5,
) -> float:
    """Fraction of unique gt relations covered by the first k proposals.

    A proposal covers a relation when its two entities best-match the
    relation's two gt objects (unordered, IoU > threshold via best-match
    assignment). Each gt relation counts at most once. Empty gt_relations
    gives vacuous recall 1.0; report layers flag that case.
    """
    unique_gt = {rel.unordered() for rel in gt_relations}
    if not unique_gt:
        return 1.0
    matches = entity_gt_matching(entities, gt_objects, iou_threshold)
    covered = set()
    for pair in list(pairs)[:k]:
        a = matches[pair.subject]
        b = matches[pair.object]
        if a == NO_MATCH or b == NO_MATCH or a == b:
            continue
        key = frozenset((int(a), int(b)))
        if key in unique_gt:
            covered.add(key)
    return len(covered) / len(unique_gt)


def word_importance(focus_weights) -> np.ndarray:
    """Per-entity importance: the column mass it receives, beta_i = sum_j w[j, i].

    Input must be matrix-normalized (entries sum to 1), so the factors sum to 1.
    """
    w = as_matrix(focus_weights, "focus_weights")
    if w.shape[0] != w.shape[1]:
        raise ValidationError(f"focus_weights must be square, got {w.shape}")
    total = float(w.sum())
    if abs(total - 1.0) > 1e-10:
        raise ValidationError(
            f"focus_weights must sum to 1 within 1e-10, got {total!r}"
        )
    return w.sum(axis=0)


@dataclass(frozen=True)
class CenterMassSummary:
    """Mean center-mass over instances that have labeled relations.

    vacuous is True when no instance had a nonzero target; mean_m is NaN in
    that case.
    """

    mean_m: float
    n_scored: int
    n_vacuous: int

    @property
    def vacuous(self) -> bool:
        return self.n_scored == 0


def center_mass_report(
    states: Sequence[AttentionState], targets: Sequence[np.ndarray]
) -> CenterMassSummary:
    """Mean per-instance center-mass; instances with empty targets are excluded."""
    if len(states) != len(targets):
        raise ValidationError(
            f"states and targets must align, got {len(states)} vs {len(targets)}"
        )
    values = []
    n_vacuous = 0
    for state, target in zip(states, targets):
        t = validate_target(target)
        if not np.any(t):
            n_vacuous += 1
            continue
        values.append(center_mass(state.focus_weights, t))
    if not values:
        return CenterMassSummary(mean_m=float("nan"), n_scored=0, n_vacuous=n_vacuous)
    return CenterMassSummary(
        mean_m=float(np.mean(values)), n_scored=len(values), n_vacuous=n_vacuous
    )


def write_metrics_csv(path, rows: Sequence[tuple]) -> None:
    """Dump per-instance metric rows as CSV: instance_id, k, recall, center_mass.

    Floats use 17 significant digits and a `.` decimal separator regardless
    of locale.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_CSV_COLUMNS)
        for instance_id, k, recall, cm in rows:
            writer.writerow(
                [instance_id, k, format(recall, ".17g"), format(cm, ".17g")]
            )
