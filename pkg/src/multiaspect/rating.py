"""Recovering missing aspect ratings from review text.

Three predictors of increasing structure: whole-review word scores,
scores restricted to the sentences discussing each aspect, and a joint
predictor that adds pairwise smoothness terms between aspects (solved by
exact enumeration over rating vectors).  All are trained with margin
methods whose loss is the squared difference of [0,1]-scaled ratings.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence, Union

import numpy as np

from .assignment import segment_review
from .corpus import AspectSchema, Corpus, Review, Vocabulary
from .errors import BudgetExceededError, DataError
from .model import ModelParams

RATING_FORMAT_VERSION = 1


@dataclass
class RatingParams:
    """Per-aspect, per-level word weights gamma[k] of shape (L_k, V)."""

    schema: AspectSchema
    vocabulary: Vocabulary
    gamma: list[np.ndarray]

    def __post_init__(self):
        V = len(self.vocabulary)
        if len(self.gamma) != self.schema.n_aspects:
            raise DataError("gamma must have one block per aspect")
        for k, block in enumerate(self.gamma):
            want = (self.schema.n_levels(k), V)
            if block.shape != want:
                raise DataError(f"gamma[{k}] shape {block.shape} != {want}")

    @classmethod
    def zeros(cls, schema: AspectSchema, vocabulary: Vocabulary) -> "RatingParams":
        V = len(vocabulary)
        return cls(schema, vocabulary,
                   [np.zeros((schema.n_levels(k), V)) for k in range(schema.n_aspects)])

    def copy(self) -> "RatingParams":
        return RatingParams(self.schema, self.vocabulary, [b.copy() for b in self.gamma])


@dataclass
class PairwiseParams:
    """Smoothness table over aspect pairs; access is symmetric:
    score(i, j, u, v) == score(j, i, v, u)."""

    schema: AspectSchema
    tables: dict[tuple[int, int], np.ndarray]

    @classmethod
    def zeros(cls, schema: AspectSchema) -> "PairwiseParams":
        tables = {}
        for i in range(schema.n_aspects):
            for j in range(i + 1, schema.n_aspects):
                tables[(i, j)] = np.zeros((schema.n_levels(i), schema.n_levels(j)))
        return cls(schema, tables)

    def score(self, i: int, j: int, u: int, v: int) -> float:
        if i < j:
            return float(self.tables[(i, j)][u, v])
        return float(self.tables[(j, i)][v, u])

    def copy(self) -> "PairwiseParams":
        return PairwiseParams(self.schema, {k: t.copy() for k, t in self.tables.items()})


@dataclass
class RatingPrediction:
    levels: list[float]
    predictor: str


@dataclass
class RatingTrainConfig:
    reg_weight: float = 1e-3
    epochs: int = 40
    step_size: float = 0.5
    rng_seed: int = 0
    joint_budget: int = 10**7
    clamp_observed: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "RatingTrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in known})


def _review_bag(review: Review) -> tuple[np.ndarray, np.ndarray]:
    cnt: Counter = Counter()
    for s in review.sentences:
        cnt.update(s.tokens)
    ws = np.array(sorted(cnt), dtype=np.intp)
    return ws, np.array([cnt[w] for w in ws], dtype=float)


def _aspect_bags(review: Review, labels: Sequence[int], K: int):
    bags = [Counter() for _ in range(K)]
    if len(labels) != len(review.sentences):
        raise DataError("labels must cover every sentence of the review")
    for sent, lab in zip(review.sentences, labels):
        bags[int(lab)].update(sent.tokens)
    out = []
    for cnt in bags:
        ws = np.array(sorted(cnt), dtype=np.intp)
        out.append((ws, np.array([cnt[w] for w in ws], dtype=float)))
    return out


def _level_scores(gamma_k: np.ndarray, bag) -> np.ndarray:
    ws, cs = bag
    if ws.size == 0:
        return np.zeros(gamma_k.shape[0])
    return gamma_k[:, ws] @ cs


def predict_unsegmented(gamma: RatingParams, review: Review) -> RatingPrediction:
    """Independent per-aspect argmax over whole-review word scores."""
    bag = _review_bag(review)
    levels = []
    for k in range(gamma.schema.n_aspects):
        li = int(np.argmax(_level_scores(gamma.gamma[k], bag)))
        levels.append(gamma.schema.rating_levels[k][li])
    return RatingPrediction(levels, "unsegmented")


def predict_segmented(
    gamma: RatingParams, review: Review, labels: Sequence[int]
) -> RatingPrediction:
    """Per-aspect argmax using only the sentences labeled with that aspect.

    An aspect with no sentences scores zero everywhere and falls to the
    lowest level (the tie rule).
    """
    bags = _aspect_bags(review, labels, gamma.schema.n_aspects)
    levels = []
    for k in range(gamma.schema.n_aspects):
        li = int(np.argmax(_level_scores(gamma.gamma[k], bags[k])))
        levels.append(gamma.schema.rating_levels[k][li])
    return RatingPrediction(levels, "segmented")


def _joint_tensor(schema: AspectSchema, text_scores: list[np.ndarray],
                  alpha: PairwiseParams) -> np.ndarray:
    K = schema.n_aspects
    shape = tuple(schema.n_levels(k) for k in range(K))
    T = np.zeros(shape)
    for k in range(K):
        br = [1] * K
        br[k] = shape[k]
        T = T + text_scores[k].reshape(br)
    # sum over ordered pairs (i, j), i != j; with symmetric access this is
    # twice each stored i<j table
    for (i, j), tab in alpha.tables.items():
        br = [1] * K
        br[i] = shape[i]
        br[j] = shape[j]
        T = T + 2.0 * tab.reshape(br)
    return T


def _joint_argmax(schema: AspectSchema, T: np.ndarray,
                  clamped: dict[int, int]) -> list[int]:
    work = T
    for ax in sorted(clamped, reverse=True):
        work = np.take(work, clamped[ax], axis=ax)
    flat = int(np.argmax(work))
    free_axes = [k for k in range(schema.n_aspects) if k not in clamped]
    free_idx = np.unravel_index(flat, work.shape) if free_axes else ()
    out = [0] * schema.n_aspects
    for ax, li in clamped.items():
        out[ax] = li
    for ax, li in zip(free_axes, free_idx):
        out[ax] = int(li)
    return out


def _check_budget(schema: AspectSchema, budget: int) -> None:
    total = 1
    for k in range(schema.n_aspects):
        total *= schema.n_levels(k)
        if total > budget:
            raise BudgetExceededError(
                f"joint inference would enumerate {total}+ rating vectors "
                f"(budget {budget}); reduce the level sets or prune aspects"
            )


def predict_joint(
    gamma: RatingParams,
    alpha: PairwiseParams,
    review: Review,
    labels: Sequence[int],
    budget: int = 10**7,
    clamp_observed: bool = True,
) -> RatingPrediction:
    """Exact argmax over rating vectors of text scores plus pairwise terms.

    Observed ratings on the review (the mandatory `overall' vote, in the
    deployment this models) are clamped to their values.  Ties break
    toward the lexicographically smallest rating vector.
    """
    schema = gamma.schema
    _check_budget(schema, budget)
    bags = _aspect_bags(review, labels, schema.n_aspects)
    text_scores = [_level_scores(gamma.gamma[k], bags[k]) for k in range(schema.n_aspects)]
    clamped: dict[int, int] = {}
    if clamp_observed:
        for k, value in enumerate(review.ratings):
            if value is not None:
                clamped[k] = schema.level_index(k, value)
    T = _joint_tensor(schema, text_scores, alpha)
    idx = _joint_argmax(schema, T, clamped)
    levels = [schema.rating_levels[k][idx[k]] for k in range(schema.n_aspects)]
    return RatingPrediction(levels, "joint")


def _scaled_levels(schema: AspectSchema, k: int) -> np.ndarray:
    lv = np.asarray(schema.rating_levels[k], dtype=float)
    span = lv[-1] - lv[0]
    if span <= 0:
        return np.zeros_like(lv)
    return (lv - lv[0]) / span


def _resolve_labels(
    corpus: Corpus,
    segmentation: Union[None, ModelParams, Sequence[Optional[Sequence[int]]]],
    review_indices: Sequence[int],
) -> Optional[dict[int, np.ndarray]]:
    if segmentation is None:
        return None
    out = {}
    if isinstance(segmentation, ModelParams):
        for ri in review_indices:
            out[ri] = np.asarray(
                segment_review(segmentation, corpus.reviews[ri]), dtype=np.intp
            )
        return out
    for ri in review_indices:
        labels = segmentation[ri]
        if labels is None:
            raise DataError(f"no segmentation labels for review index {ri}")
        out[ri] = np.asarray(labels, dtype=np.intp)
    return out


def train_rating_model(
    corpus: Corpus,
    segmentation: Union[None, ModelParams, Sequence[Optional[Sequence[int]]]],
    mode: str,
    config: RatingTrainConfig,
) -> tuple[RatingParams, Optional[PairwiseParams]]:
    """Margin training of the rating predictors on fully rated reviews.

    ``segmentation`` supplies sentence labels for the segmented and joint
    modes: either per-review label sequences or a trained segmentation
    model (which must not have seen the reviews whose ratings will be
    predicted).  The loss counts non-overall aspects only; the overall
    coordinate, being observed at prediction time, is clamped during
    joint loss-augmented inference.
    """
    if mode not in ("unsegmented", "segmented", "joint"):
        raise DataError(f"unknown rating mode {mode!r}")
    schema = corpus.schema
    K = schema.n_aspects
    train_idx = [i for i, r in enumerate(corpus.reviews) if r.is_fully_rated()]
    if not train_idx:
        raise DataError("no fully rated reviews to train the rating model on")
    if mode != "unsegmented" and segmentation is None:
        raise DataError(f"mode {mode!r} needs a segmentation source")
    labels = _resolve_labels(corpus, segmentation if mode != "unsegmented" else None, train_idx)

    bags = {}
    truth = {}
    for ri in train_idx:
        review = corpus.reviews[ri]
        if mode == "unsegmented":
            bag = _review_bag(review)
            bags[ri] = [bag] * K
        else:
            bags[ri] = _aspect_bags(review, labels[ri], K)
        truth[ri] = np.array(
            [schema.level_index(k, review.ratings[k]) for k in range(K)], dtype=np.intp
        )

    overall = schema.overall_index
    loss_aspects = [k for k in range(K) if k != overall]
    if not loss_aspects:
        loss_aspects = list(range(K))
    scaled = [_scaled_levels(schema, k) for k in range(K)]

    gamma = RatingParams.zeros(schema, corpus.vocabulary)
    alpha = PairwiseParams.zeros(schema) if mode == "joint" else None
    if mode == "joint":
        _check_budget(schema, config.joint_budget)

    sum_gamma = [np.zeros_like(b) for b in gamma.gamma]
    sum_alpha = {key: np.zeros_like(t) for key, t in alpha.tables.items()} if alpha else None
    n_avg = 0
    rng = np.random.default_rng(config.rng_seed)
    lam = config.reg_weight
    total_updates = max(1, config.epochs * len(train_idx))
    t = 0
    for _epoch in range(config.epochs):
        for pos in rng.permutation(len(train_idx)):
            ri = train_idx[int(pos)]
            y = truth[ri]
            eta = config.step_size / (1.0 + 9.0 * t / total_updates)
            t += 1
            shrink = max(0.0, 1.0 - 2.0 * eta * lam)
            for b in gamma.gamma:
                b *= shrink
            if alpha:
                for tab in alpha.tables.values():
                    tab *= shrink

            if mode == "joint":
                text_scores = [
                    _level_scores(gamma.gamma[k], bags[ri][k]) for k in range(K)
                ]
                aug = [ts.copy() for ts in text_scores]
                for k in loss_aspects:
                    aug[k] = aug[k] + (scaled[k] - scaled[k][y[k]]) ** 2
                clamped = {overall: int(y[overall])} if overall is not None else {}
                T = _joint_tensor(schema, aug, alpha)
                v_star = np.array(_joint_argmax(schema, T, clamped), dtype=np.intp)
                for k in range(K):
                    if v_star[k] == y[k]:
                        continue
                    ws, cs = bags[ri][k]
                    if ws.size:
                        gamma.gamma[k][v_star[k], ws] -= eta * cs
                        gamma.gamma[k][y[k], ws] += eta * cs
                for (i, j), tab in alpha.tables.items():
                    if v_star[i] == y[i] and v_star[j] == y[j]:
                        continue
                    tab[v_star[i], v_star[j]] -= 2.0 * eta
                    tab[y[i], y[j]] += 2.0 * eta
            else:
                for k in loss_aspects:
                    scores = _level_scores(gamma.gamma[k], bags[ri][k])
                    aug = scores + (scaled[k] - scaled[k][y[k]]) ** 2
                    v_star = int(np.argmax(aug))
                    if v_star != y[k]:
                        ws, cs = bags[ri][k]
                        if ws.size:
                            gamma.gamma[k][v_star, ws] -= eta * cs
                            gamma.gamma[k][y[k], ws] += eta * cs
            for acc, b in zip(sum_gamma, gamma.gamma):
                acc += b
            if alpha:
                for key, tab in alpha.tables.items():
                    sum_alpha[key] += tab
            n_avg += 1

    avg_gamma = RatingParams(schema, corpus.vocabulary, [b / n_avg for b in sum_gamma])
    avg_alpha = None
    if alpha:
        avg_alpha = PairwiseParams(schema, {k: t / n_avg for k, t in sum_alpha.items()})
    return avg_gamma, avg_alpha


def save_rating_model(
    gamma: RatingParams,
    alpha: Optional[PairwiseParams],
    path,
    config_hash: Optional[str] = None,
) -> None:
    obj = {
        "format_version": RATING_FORMAT_VERSION,
        "kind": "rating-model",
        "config_hash": config_hash,
        "schema": gamma.schema.to_dict(),
        "vocabulary": {
            "words": gamma.vocabulary.words,
            "doc_freqs": gamma.vocabulary.doc_freqs,
        },
        "gamma": [b.tolist() for b in gamma.gamma],
        "alpha": None if alpha is None else [
            {"i": i, "j": j, "table": alpha.tables[(i, j)].tolist()}
            for (i, j) in sorted(alpha.tables)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def load_rating_model(path) -> tuple[RatingParams, Optional[PairwiseParams]]:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"rating model file {path}: {exc}") from None
    if obj.get("format_version") != RATING_FORMAT_VERSION:
        raise DataError(f"rating model file {path}: unsupported format_version")
    if obj.get("kind") != "rating-model":
        raise DataError(f"rating model file {path}: not a rating model")
    schema = AspectSchema.from_dict(obj["schema"])
    vocab = Vocabulary(obj["vocabulary"]["words"], obj["vocabulary"]["doc_freqs"])
    gamma = RatingParams(schema, vocab, [np.asarray(b, dtype=float) for b in obj["gamma"]])
    alpha = None
    if obj.get("alpha") is not None:
        tables = {
            (int(e["i"]), int(e["j"])): np.asarray(e["table"], dtype=float)
            for e in obj["alpha"]
        }
        alpha = PairwiseParams(schema, tables)
    return gamma, alpha
