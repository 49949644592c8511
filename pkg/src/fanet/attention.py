"""Scaled dot-product attention over an entity set.

The pairwise logit between a reference entity m and another entity n is the
scaled dot product of their projected features:

    logit[m, n] = dot(w_k @ f_m, w_q @ f_n) / sqrt(d_k)

Two normalizations of the same logits coexist:

  * aggregation weights -- per-reference softmax (each row sums to 1), used to
    mix features into a contextual descriptor;
  * focus weights -- a single matrix-wide softmax (all entries sum to 1), a
    probability distribution over ordered entity pairs, used for supervision
    and relationship extraction.

All forward quantities are cached so the backward pass is exact (pure chain
rule through the bilinear form); there is no value projection and no bias.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .matrices import (
    ShapeError,
    as_matrix,
    check_same_shape,
    softmax_cols,
    softmax_matrix,
    softmax_rows,
)
from .seeding import STREAM_PARAMS_ATTENTION, stream_rng

__all__ = [
    "EntitySet",
    "AttentionParams",
    "AttentionState",
    "init_params",
    "attention_logits",
    "forward",
    "aggregate",
    "residual_combine",
    "backward",
    "softmax_rows_vjp",
    "softmax_cols_vjp",
    "softmax_matrix_vjp",
]


@dataclass(frozen=True)
class EntitySet:
    """N entities with embedding features and optional boxes/category labels.

    features: (n, d) float64. boxes, when present, are (n, 4) rows of
    (x1, y1, x2, y2) with x1 < x2 and y1 < y2 (pixel units).
    """

    features: np.ndarray
    categories: Optional[np.ndarray] = None
    boxes: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "features", as_matrix(self.features, "features"))
        if self.categories is not None:
            cats = np.asarray(self.categories, dtype=np.int64)
            if cats.shape != (self.n,):
                raise ShapeError(
                    f"categories length {cats.shape} does not match n={self.n}"
                )
            object.__setattr__(self, "categories", cats)
        if self.boxes is not None:
            boxes = np.ascontiguousarray(self.boxes, dtype=np.float64)
            if boxes.shape != (self.n, 4):
                raise ShapeError(
                    f"boxes must be ({self.n}, 4), got {boxes.shape}"
                )
            if np.any(boxes[:, 0] >= boxes[:, 2]) or np.any(boxes[:, 1] >= boxes[:, 3]):
                raise ValueError("boxes must satisfy x1 < x2 and y1 < y2")
            object.__setattr__(self, "boxes", boxes)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class AttentionParams:
    """Key/query projection matrices, both (d_k, d)."""

    w_k: np.ndarray
    w_q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w_k", as_matrix(self.w_k, "w_k"))
        object.__setattr__(self, "w_q", as_matrix(self.w_q, "w_q"))
        check_same_shape(self.w_k, self.w_q, "w_k and w_q")

    @property
    def d_k(self) -> int:
        return self.w_k.shape[0]

    @property
    def d(self) -> int:
        return self.w_k.shape[1]


@dataclass(frozen=True)
class AttentionState:
    """Forward-pass result: logits plus both normalizations and caches.

    agg_weights rows each sum to 1 (or columns, for agg_axis="col");
    focus_weights entries sum to 1 over the whole matrix. proj_keys and
    proj_queries are the (n, d_k) projected features kept for backward.
    """

    logits: np.ndarray
    agg_weights: np.ndarray
    focus_weights: np.ndarray
    proj_keys: np.ndarray
    proj_queries: np.ndarray
    agg_axis: str = "row"


def init_params(d: int, d_k: int, seed: int) -> AttentionParams:
    """Seeded uniform init on [-1/sqrt(d), +1/sqrt(d)] for both projections."""
    if d < 1 or d_k < 1:
        raise ValueError(f"d and d_k must be >= 1, got d={d}, d_k={d_k}")
    rng = stream_rng(STREAM_PARAMS_ATTENTION, seed)
    bound = 1.0 / np.sqrt(d)
    w_k = rng.uniform(-bound, bound, size=(d_k, d))
    w_q = rng.uniform(-bound, bound, size=(d_k, d))
    return AttentionParams(w_k=w_k, w_q=w_q)


def _check_dims(entities: EntitySet, params: AttentionParams) -> None:
    if params.d != entities.d:
        raise ShapeError(
            f"projection expects feature dim {params.d}, entities have {entities.d}"
        )


def attention_logits(entities: EntitySet, params: AttentionParams) -> np.ndarray:
    """Pairwise scaled dot-product logits, (n, n); generally asymmetric."""
    _check_dims(entities, params)
    keys = entities.features @ params.w_k.T        # (n, d_k), row m = w_k @ f_m
    queries = entities.features @ params.w_q.T     # (n, d_k), row n = w_q @ f_n
    return keys @ queries.T / np.sqrt(params.d_k)


def forward(
    entities: EntitySet, params: AttentionParams, agg_axis: str = "row"
) -> AttentionState:
    """Compute logits and both softmax paths, caching projections for backward."""
    if agg_axis not in ("row", "col"):
        raise ValueError(f"agg_axis must be 'row' or 'col', got {agg_axis!r}")
    _check_dims(entities, params)
    keys = entities.features @ params.w_k.T
    queries = entities.features @ params.w_q.T
    logits = keys @ queries.T / np.sqrt(params.d_k)
    agg = softmax_rows(logits) if agg_axis == "row" else softmax_cols(logits)
    return AttentionState(
        logits=logits,
        agg_weights=agg,
        focus_weights=softmax_matrix(logits),
        proj_keys=keys,
        proj_queries=queries,
        agg_axis=agg_axis,
    )


def aggregate(state: AttentionState, features) -> np.ndarray:
    """Attention-weighted feature aggregation: out[m] = sum_n agg[m, n] * f_n."""
    f = as_matrix(features, "features")
    n = state.agg_weights.shape[0]
    if f.shape[0] != n:
        raise ShapeError(
            f"features rows {f.shape[0]} do not match attention size {n}"
        )
    return state.agg_weights @ f


def residual_combine(features, context) -> np.ndarray:
    """Elementwise sum of base features and aggregated context."""
    f = as_matrix(features, "features")
    c = as_matrix(context, "context")
    check_same_shape(f, c, "features and context")
    return f + c


def backward(
    state: AttentionState,
    d_loss_d_logits,
    entities: EntitySet,
    params: AttentionParams,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Chain rule from a logit gradient back to (w_k, w_q, features).

    With keys P = F w_k^T, queries R = F w_q^T and logits W = P R^T / sqrt(d_k):

        dP = G R / sqrt(d_k)      dR = G^T P / sqrt(d_k)
        d_w_k = dP^T F            d_w_q = dR^T F
        dF    = dP w_k + dR w_q

    where G is the upstream gradient w.r.t. the logits.
    """
    g = as_matrix(d_loss_d_logits, "d_loss_d_logits")
    check_same_shape(g, state.logits, "logit gradient and logits")
    _check_dims(entities, params)
    scale = 1.0 / np.sqrt(params.d_k)
    d_keys = g @ state.proj_queries * scale
    d_queries = g.T @ state.proj_keys * scale
    d_w_k = d_keys.T @ entities.features
    d_w_q = d_queries.T @ entities.features
    d_features = d_keys @ params.w_k + d_queries @ params.w_q
    return d_w_k, d_w_q, d_features


def softmax_rows_vjp(softmax_out: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """VJP of the row-wise softmax: a * (g - sum(g * a)) per row."""
    check_same_shape(softmax_out, grad_out, "softmax output and gradient")
    inner = np.sum(grad_out * softmax_out, axis=1, keepdims=True)
    return softmax_out * (grad_out - inner)


def softmax_cols_vjp(softmax_out: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """VJP of the column-wise softmax."""
    check_same_shape(softmax_out, grad_out, "softmax output and gradient")
    inner = np.sum(grad_out * softmax_out, axis=0, keepdims=True)
    return softmax_out * (grad_out - inner)


def softmax_matrix_vjp(softmax_out: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """VJP of the matrix-wise softmax: one distribution over all entries."""
    check_same_shape(softmax_out, grad_out, "softmax output and gradient")
    inner = float(np.sum(grad_out * softmax_out))
    return softmax_out * (grad_out - inner)
