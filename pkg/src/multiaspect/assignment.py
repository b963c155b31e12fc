"""Diversity-constrained inference as weighted bipartite cover.

Segmentation matches every sentence of a review to a column: the first K
columns are pinned one-per-aspect (so each aspect is discussed at least
once) and the remaining columns are unconstrained, scoring each sentence
at its best aspect.  Summarization keeps exactly one column per aspect.
Both are solved exactly with the Kuhn-Munkres algorithm; maximization is
negated into the classic min-cost square assignment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .corpus import Review
from .errors import SummaryTooShortError
from .model import ModelParams, compatibility


@dataclass
class Cover:
    """A maximizing bijection between rows and columns."""

    row_to_col: np.ndarray
    value: float


@dataclass
class CostMatrix:
    """Square weight matrix (maximization convention) for one review.

    Columns 0..n_pinned-1 are pinned to aspects 0..n_pinned-1; the rest are
    unconstrained.  Rows beyond n_real_rows are zero padding introduced by
    relaxation.  ``scores`` keeps the underlying (n_real_rows x K) per-aspect
    scores so relaxation and label recording can be done exactly.
    """

    weights: np.ndarray
    n_pinned: int
    n_real_rows: int
    n_relax: int
    scores: np.ndarray
    fixed: Optional[dict[int, int]] = None


def _lap_min(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shortest-augmenting-path assignment on a square cost matrix.

    Returns (row_to_col, u, v) where u, v are dual potentials satisfying
    u[i] + v[j] <= cost[i, j] with equality on matched edges.
    """
    n = cost.shape[0]
    u = np.zeros(n)
    v = np.zeros(n + 1)  # column n is the virtual start column
    col_row = np.full(n + 1, -1, dtype=np.intp)
    for i in range(n):
        col_row[n] = i
        j0 = n
        minv = np.full(n, np.inf)
        way = np.full(n, -1, dtype=np.intp)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_row[j0]
            free = ~used[:n]
            cur = cost[i0] - u[i0] - v[:n]
            upd = free & (cur < minv)
            minv[upd] = cur[upd]
            way[upd] = j0
            masked = np.where(free, minv, np.inf)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            rows_used = col_row[used]
            u[rows_used] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if col_row[j0] == -1:
                break
        while j0 != n:
            j_prev = way[j0]
            col_row[j0] = col_row[j_prev]
            j0 = j_prev
    row_to_col = np.empty(n, dtype=np.intp)
    row_to_col[col_row[:n]] = np.arange(n)
    return row_to_col, u, v[:n]


def _augment(row: int, cand: list, col_row: np.ndarray, row_col: np.ndarray,
             visited: np.ndarray) -> bool:
    """Try to rematch ``row`` along alternating paths in the tight graph."""
    for j in cand[row]:
        if visited[j]:
            continue
        visited[j] = True
        owner = col_row[j]
        if owner == -1 or _augment(int(owner), cand, col_row, row_col, visited):
            col_row[j] = row
            row_col[row] = j
            return True
    return False


def _lex_refine(cost: np.ndarray, row_to_col: np.ndarray, u: np.ndarray,
                v: np.ndarray) -> np.ndarray:
    """Lexicographically smallest permutation among the optimal assignments.

    Complementary slackness confines optimal assignments to tight edges
    (zero reduced cost); rows then greedily take the smallest tight column
    that still leaves the remaining rows perfectly matchable.
    """
    n = cost.shape[0]
    if n == 0:
        return row_to_col
    slack = cost - u[:, None] - v[None, :]
    tol = 1e-9 * max(1.0, float(np.abs(cost).max()))
    cand = []
    for i in range(n):
        js = np.flatnonzero(slack[i] <= tol)
        if row_to_col[i] not in js:
            js = np.sort(np.append(js, row_to_col[i]))
        cand.append(js)
    row_col = row_to_col.copy()
    col_row = np.empty(n, dtype=np.intp)
    col_row[row_col] = np.arange(n)
    fixed_col = np.zeros(n, dtype=bool)
    for i in range(n):
        cur = int(row_col[i])
        for j in cand[i]:
            j = int(j)
            if j >= cur:
                break
            if fixed_col[j]:
                continue
            rc = row_col.copy()
            cr = col_row.copy()
            displaced = int(cr[j])
            cr[rc[i]] = -1
            rc[i] = j
            cr[j] = i
            visited = fixed_col.copy()
            visited[j] = True
            if _augment(displaced, cand, cr, rc, visited):
                row_col, col_row = rc, cr
                break
        fixed_col[row_col[i]] = True
    return row_col


def kuhn_munkres(weights: np.ndarray) -> Cover:
    """Maximize the sum of selected entries over bijections row -> column.

    Ties between equally optimal covers break toward the lexicographically
    smallest permutation, so results are reproducible.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.ndim != 2 or weights.shape[0] != weights.shape[1]:
        raise ValueError(f"assignment needs a square matrix, got {weights.shape}")
    if not np.isfinite(weights).all():
        raise ValueError("assignment matrix must be finite")
    n = weights.shape[0]
    if n == 0:
        return Cover(np.empty(0, dtype=np.intp), 0.0)
    cost = -weights
    row_to_col, u, v = _lap_min(cost)
    row_to_col = _lex_refine(cost, row_to_col, u, v)
    value = float(weights[np.arange(n), row_to_col].sum())
    return Cover(row_to_col, value)


def _argmax_labels(scores: np.ndarray, fixed: Optional[Mapping[int, int]]) -> np.ndarray:
    labels = scores.argmax(axis=1).astype(np.intp)
    if fixed:
        for s, k in fixed.items():
            labels[s] = k
    return labels


def build_segmentation_matrix(
    scores: np.ndarray,
    relax_by: int = 0,
    fixed: Optional[Mapping[int, int]] = None,
) -> CostMatrix:
    """Cover matrix for segmentation: K pinned columns, the rest unconstrained.

    ``relax_by`` adds that many extra unconstrained columns together with
    zero-weight padding rows, so up to that many pinned aspects may be
    dropped when doing so raises the total score.  ``fixed`` pins given
    rows to known aspect labels (used when conditioning on groundtruth).
    """
    scores = np.asarray(scores, dtype=float)
    n, K = scores.shape
    if n < K:
        raise ValueError("segmentation cover requires at least K sentences")
    if not 0 <= relax_by <= K:
        raise ValueError("relax_by must lie in [0, K]")
    m = n + relax_by
    big = (2.0 * m + 4.0) * (float(np.abs(scores).max(initial=0.0)) + 1.0)
    weights = np.zeros((m, m))
    row_best = scores.max(axis=1)
    weights[:n, :K] = scores
    weights[:n, K:] = row_best[:, None]
    if fixed:
        for s, k in fixed.items():
            weights[s, :K] = -big
            weights[s, k] = scores[s, k]
            weights[s, K:] = scores[s, k]
    return CostMatrix(weights, K, n, relax_by, scores, dict(fixed) if fixed else None)


def relax(matrix: CostMatrix, extra_unconstrained: int) -> CostMatrix:
    """Loosen the cover so up to ``extra_unconstrained`` more aspects may be skipped."""
    return build_segmentation_matrix(
        matrix.scores, matrix.n_relax + extra_unconstrained, matrix.fixed
    )


def solve_segmentation(
    scores: np.ndarray,
    relax_by: int = 0,
    fixed: Optional[Mapping[int, int]] = None,
) -> np.ndarray:
    """Per-sentence aspect labels under the diversity constraint.

    Reviews with fewer sentences than aspects fall back to per-sentence
    argmax (the constraint is discarded).  Rows matched to unconstrained
    columns take their best aspect, ties toward the lowest index.
    """
    scores = np.asarray(scores, dtype=float)
    n, K = scores.shape
    if n < K:
        return _argmax_labels(scores, fixed)
    matrix = build_segmentation_matrix(scores, relax_by, fixed)
    cover = kuhn_munkres(matrix.weights)
    labels = np.empty(n, dtype=np.intp)
    for s in range(n):
        col = int(cover.row_to_col[s])
        if fixed and s in fixed:
            labels[s] = fixed[s]
        elif col < K:
            labels[s] = col
        else:
            labels[s] = int(scores[s].argmax())
    return labels


def segment_review(
    params: ModelParams,
    review: Review,
    relax_by: int = 0,
    fixed: Optional[Mapping[int, int]] = None,
    diversity: bool = True,
) -> np.ndarray:
    """Label every sentence of a review with an aspect.

    Requires complete ratings (sentiment terms are part of the score).
    """
    scores = np.array(
        [compatibility(params, s, review.ratings) for s in review.sentences]
    ).reshape(len(review.sentences), params.schema.n_aspects)
    if not diversity:
        return _argmax_labels(scores, fixed)
    return solve_segmentation(scores, relax_by, fixed)


def solve_summary(scores: np.ndarray) -> np.ndarray:
    """One sentence index per aspect maximizing total compatibility."""
    scores = np.asarray(scores, dtype=float)
    n, K = scores.shape
    if n < K:
        raise SummaryTooShortError(
            f"review has {n} sentences but {K} aspects need summarizing"
        )
    weights = np.zeros((n, n))
    weights[:, :K] = scores
    cover = kuhn_munkres(weights)
    chosen = np.empty(K, dtype=np.intp)
    for s in range(n):
        col = int(cover.row_to_col[s])
        if col < K:
            chosen[col] = s
    return chosen


def summarize_review(params: ModelParams, review: Review) -> np.ndarray:
    """Pick, per aspect, the sentence most compatible with that aspect's rating."""
    scores = np.array(
        [compatibility(params, s, review.ratings) for s in review.sentences]
    ).reshape(len(review.sentences), params.schema.n_aspects)
    return solve_summary(scores)
