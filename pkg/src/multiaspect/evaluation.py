"""Scoring: label accuracy, Cohen's kappa, rating MSE, and sentence ranking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .assignment import kuhn_munkres
from .corpus import AMBIGUOUS, AspectSchema, Corpus
from .model import ModelParams, sentence_aspect_probs


@dataclass
class EvalReport:
    task: str
    metrics: dict[str, float]
    per_aspect: dict[str, float] = field(default_factory=dict)
    excluded: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "metrics": self.metrics,
            "per_aspect": self.per_aspect,
            "excluded": self.excluded,
        }


def accuracy(predicted: Sequence[int], true: Sequence[int]) -> float:
    """Fraction of agreements; positions whose true label is AMBIGUOUS are excluded."""
    if len(predicted) != len(true):
        raise ValueError("predicted and true label sequences must align")
    pairs = [(p, t) for p, t in zip(predicted, true) if t != AMBIGUOUS]
    if not pairs:
        raise ValueError("no non-ambiguous positions to score")
    return sum(1 for p, t in pairs if p == t) / len(pairs)


def cohens_kappa(agreement: float, n_classes: int) -> float:
    """Chance-corrected agreement (p - 1/K) / (1 - 1/K)."""
    if n_classes < 2:
        raise ValueError("kappa needs at least 2 classes")
    if not 0.0 <= agreement <= 1.0:
        raise ValueError("agreement must lie in [0, 1]")
    chance = 1.0 / n_classes
    return (agreement - chance) / (1.0 - chance)


def rating_mse(
    predicted: Sequence[Sequence[Optional[float]]],
    truth: Sequence[Sequence[Optional[float]]],
    schema: AspectSchema,
    include_overall: bool = False,
) -> float:
    """Mean squared error of ratings scaled to [0, 1] per aspect.

    Averages over (review, aspect) pairs with an observed truth; the
    `overall' aspect is excluded unless requested (it is observed at
    prediction time, not predicted).
    """
    if len(predicted) != len(truth):
        raise ValueError("predicted and truth must align")
    overall = schema.overall_index
    total = 0.0
    count = 0
    for pred, tru in zip(predicted, truth):
        for k in range(schema.n_aspects):
            if k == overall and not include_overall:
                continue
            if tru[k] is None or pred[k] is None:
                continue
            lv = schema.rating_levels[k]
            span = lv[-1] - lv[0]
            if span <= 0:
                continue
            d = (pred[k] - tru[k]) / span
            total += d * d
            count += 1
    if count == 0:
        raise ValueError("no observed (review, aspect) pairs to score")
    return total / count


def rank_sentences(
    params: ModelParams, corpus: Corpus, aspect: int | str
) -> list[tuple[int, int, float]]:
    """All sentences sorted by their probability of discussing the aspect.

    Returns (review_index, sentence_index, probability) triples, ties kept
    in corpus order.  Reviews must carry complete ratings.
    """
    k = aspect if isinstance(aspect, int) else params.schema.aspect_index(aspect)
    entries = []
    for ri, review in enumerate(corpus.reviews):
        for si, sent in enumerate(review.sentences):
            p = sentence_aspect_probs(params, sent, review.ratings)[k]
            entries.append((ri, si, float(p)))
    order = np.argsort([-e[2] for e in entries], kind="stable")
    return [entries[i] for i in order]


def pr_curve_and_map(
    positives_in_rank_order: Sequence[bool],
) -> tuple[list[tuple[float, float]], float]:
    """Precision/recall at every rank plus average precision for one ranking.

    AP is the mean of precision at each positive's rank (no interpolation).
    """
    flags = np.asarray(positives_in_rank_order, dtype=bool)
    n_pos = int(flags.sum())
    if n_pos == 0:
        raise ValueError("ranking contains no positives")
    hits = np.cumsum(flags)
    ranks = np.arange(1, len(flags) + 1)
    precision = hits / ranks
    recall = hits / n_pos
    curve = list(zip(recall.tolist(), precision.tolist()))
    ap = float(precision[flags].mean())
    return curve, ap


def ranking_map(
    params: ModelParams,
    corpus: Corpus,
    true_labels: dict[tuple[int, int], int],
) -> tuple[float, dict[str, float]]:
    """Mean average precision of per-aspect sentence rankings.

    ``true_labels`` maps (review_index, sentence_index) to the groundtruth
    aspect; only those sentences are ranked, and a sentence is positive
    for its groundtruth aspect.  Ambiguous labels are excluded.
    """
    labeled = {key: lab for key, lab in true_labels.items() if lab != AMBIGUOUS}
    per_aspect = {}
    aps = []
    for k, name in enumerate(params.schema.aspects):
        ranked = rank_sentences(params, corpus, k)
        flags = [labeled[(ri, si)] == k for ri, si, _ in ranked if (ri, si) in labeled]
        if not any(flags):
            continue
        _, ap = pr_curve_and_map(flags)
        per_aspect[name] = ap
        aps.append(ap)
    if not aps:
        raise ValueError("no labeled positives for any aspect")
    return float(np.mean(aps)), per_aspect


def permutation_matched_accuracy(
    predicted: Sequence[int], true: Sequence[int], n_classes: int
) -> tuple[float, np.ndarray]:
    """Best label accuracy over permutations of predicted classes.

    Unsupervised aspect labels are only identified up to permutation when
    seeds fail to anchor them; the optimal matching of the confusion
    matrix (via the assignment solver) gives the fairest score.
    """
    if len(predicted) != len(true):
        raise ValueError("predicted and true label sequences must align")
    confusion = np.zeros((n_classes, n_classes))
    count = 0
    for p, t in zip(predicted, true):
        if t == AMBIGUOUS:
            continue
        confusion[p, t] += 1.0
        count += 1
    if count == 0:
        raise ValueError("no non-ambiguous positions to score")
    cover = kuhn_munkres(confusion)
    return cover.value / count, cover.row_to_col
