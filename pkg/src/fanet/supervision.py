"""Ground-truth relation target construction for vision- and language-style entities.

Vision targets mark entity pairs whose boxes overlap two *different*
ground-truth objects (IoU above a threshold), optionally requiring the two
objects to carry different category labels. Language targets mark word pairs
by lexical-category rules, the strictest being membership of the unordered
category pair in a small semantic pair table.

Every emitted target matrix is symmetric with a zero diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .attention import EntitySet
from .matrices import ValidationError

__all__ = [
    "GroundTruthObject",
    "LexicalPairTable",
    "VISION_MODES",
    "LANGUAGE_MODES",
    "iou",
    "entity_gt_matching",
    "build_vision_target",
    "build_language_target",
]

VISION_MODES = ("different_category", "different_instance")
LANGUAGE_MODES = ("semantic", "different_category", "same_category", "different_word")

NO_MATCH = -1


@dataclass(frozen=True)
class GroundTruthObject:
    """An annotated object: axis-aligned box (x1, y1, x2, y2) and category id."""

    box: tuple[float, float, float, float]
    category: int

    def __post_init__(self):
        x1, y1, x2, y2 = self.box
        if not (x1 < x2 and y1 < y2):
            raise ValidationError(f"box must satisfy x1 < x2 and y1 < y2, got {self.box}")


class LexicalPairTable:
    """Unordered lexical-category pairs considered semantically valid.

    Only explicitly enumerated pairs count; nothing is implied. A pair of a
    category with itself (e.g. noun-noun) is written as the same name twice.
    """

    def __init__(self, pairs: Iterable[tuple[str, str]] = ()):
        self._pairs: set[frozenset[str]] = set()
        for a, b in pairs:
            self.add(a, b)

    def add(self, a: str, b: str) -> None:
        if not a or not b:
            raise ValidationError("lexical category names must be non-empty")
        self._pairs.add(frozenset((a, b)))

    def contains(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self._pairs

    @property
    def categories(self) -> set[str]:
        return {c for pair in self._pairs for c in pair}

    def pairs(self) -> list[tuple[str, str]]:
        """Sorted canonical listing, each pair as (min, max)."""
        return sorted((min(p), max(p)) for p in self._pairs)

    def __len__(self) -> int:
        return len(self._pairs)

    @classmethod
    def default(cls) -> "LexicalPairTable":
        """Grammar pairs encouraged by default: noun-noun, verb-noun,
        noun-adjective, adverb-verb, adverb-adjective."""
        return cls(
            [
                ("noun", "noun"),
                ("verb", "noun"),
                ("noun", "adjective"),
                ("adverb", "verb"),
                ("adverb", "adjective"),
            ]
        )

    @classmethod
    def from_file(cls, path) -> "LexicalPairTable":
        """Parse the plain-text format: one `catA catB` pair per line,
        order-insensitive, `#` starts a comment, blank lines ignored."""
        table = cls()
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValidationError(
                    f"{path}:{lineno}: expected 'catA catB', got {raw!r}"
                )
            table.add(parts[0], parts[1])
        return table

    def to_file(self, path) -> None:
        lines = [f"{a} {b}" for a, b in self.pairs()]
        Path(path).write_text("\n".join(lines) + "\n")


def iou(a, b) -> float:
    """Intersection over union of two well-ordered boxes; 0 when disjoint."""
    ax1, ay1, ax2, ay2 = map(float, a)
    bx1, by1, bx2, by2 = map(float, b)
    if not (ax1 < ax2 and ay1 < ay2 and bx1 < bx2 and by1 < by2):
        raise ValidationError(f"boxes must be well-ordered, got {a} and {b}")
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def entity_gt_matching(
    entities: EntitySet,
    gt: Sequence[GroundTruthObject],
    iou_threshold: float,
) -> np.ndarray:
    """Best-match gt index per entity, or -1 when no IoU exceeds the threshold.

    Each entity matches at most one object: the one with maximal IoU, strictly
    above the threshold, ties broken by lowest gt index.
    """
    if entities.boxes is None:
        raise ValidationError("entities have no boxes; cannot match against gt objects")
    matches = np.full(entities.n, NO_MATCH, dtype=np.int64)
    for i in range(entities.n):
        best_iou = iou_threshold  # strict: must exceed this
        best = NO_MATCH
        for j, obj in enumerate(gt):
            v = iou(entities.boxes[i], obj.box)
            if v > best_iou:  # ties keep the earlier (lower) index
                best_iou = v
                best = j
        matches[i] = best
    return matches


def build_vision_target(
    entities: EntitySet,
    gt: Sequence[GroundTruthObject],
    mode: str = "different_category",
    iou_threshold: float = 0.5,
) -> np.ndarray:
    """Binary (n, n) target for vision-style supervision.

    t[m, n] = 1 iff m and n best-match two *different* gt objects and, in
    different_category mode, those objects carry different category labels.
    Symmetric, zero diagonal.
    """
    if mode not in VISION_MODES:
        raise ValidationError(f"mode must be one of {VISION_MODES}, got {mode!r}")
    matches = entity_gt_matching(entities, gt, iou_threshold)
    n = entities.n
    t = np.zeros((n, n))
    for m in range(n):
        a = matches[m]
        if a == NO_MATCH:
            continue
        for k in range(m + 1, n):
            b = matches[k]
            if b == NO_MATCH or b == a:
                continue
            if mode == "different_category" and gt[a].category == gt[b].category:
                continue
            t[m, k] = t[k, m] = 1.0
    return t


def build_language_target(
    tags: Sequence[str],
    table: LexicalPairTable,
    mode: str = "semantic",
    tokens: Optional[Sequence[str]] = None,
) -> np.ndarray:
    """Binary (n, n) target for language-style supervision. Symmetric, zero diagonal.

    Modes: semantic (unordered tag pair present in the table),
    different_category / same_category (tag comparison), different_word
    (token identity; requires tokens).
    """
    if mode not in LANGUAGE_MODES:
        raise ValidationError(f"mode must be one of {LANGUAGE_MODES}, got {mode!r}")
    n = len(tags)
    if mode == "semantic":
        known = table.categories
        for tag in tags:
            if tag not in known:
                raise ValidationError(f"unknown lexical category id {tag!r}")
    if mode == "different_word":
        if tokens is None:
            raise ValidationError("different_word mode requires token identities")
        if len(tokens) != n:
            raise ValidationError(
                f"tokens length {len(tokens)} does not match tags length {n}"
            )
    t = np.zeros((n, n))
    for m in range(n):
        for k in range(m + 1, n):
            if mode == "semantic":
                hit = table.contains(tags[m], tags[k])
            elif mode == "different_category":
                hit = tags[m] != tags[k]
            elif mode == "same_category":
                hit = tags[m] == tags[k]
            else:
                hit = tokens[m] != tokens[k]
            if hit:
                t[m, k] = t[k, m] = 1.0
    return t
