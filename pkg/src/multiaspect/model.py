"""Log-linear sentence-aspect model.

Parameters are an aspect-weight matrix theta[k][w] and per-aspect,
per-rating-level sentiment weights phi[k][v][w] over a shared vocabulary.
A sentence's affinity for aspect k given the review's ratings is the sum
of both weights over its tokens; softmax over aspects gives probabilities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .corpus import AspectSchema, Corpus, Review, Sentence, Vocabulary
from .errors import DataError, MissingRatingError

MODEL_FORMAT_VERSION = 1


@dataclass
class ModelParams:
    """Aspect weights theta (K x V) and sentiment weights phi[k] (L_k x V)."""

    schema: AspectSchema
    vocabulary: Vocabulary
    theta: np.ndarray
    phi: list[np.ndarray]

    def __post_init__(self):
        K = self.schema.n_aspects
        V = len(self.vocabulary)
        if self.theta.shape != (K, V):
            raise DataError(f"theta shape {self.theta.shape} != ({K}, {V})")
        if len(self.phi) != K:
            raise DataError("phi must have one block per aspect")
        for k, block in enumerate(self.phi):
            want = (self.schema.n_levels(k), V)
            if block.shape != want:
                raise DataError(f"phi[{k}] shape {block.shape} != {want}")

    @classmethod
    def zeros(cls, schema: AspectSchema, vocabulary: Vocabulary) -> "ModelParams":
        V = len(vocabulary)
        theta = np.zeros((schema.n_aspects, V))
        phi = [np.zeros((schema.n_levels(k), V)) for k in range(schema.n_aspects)]
        return cls(schema, vocabulary, theta, phi)

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.schema, self.vocabulary, self.theta.copy(), [b.copy() for b in self.phi]
        )

    def sq_norm(self) -> float:
        return float(np.sum(self.theta**2) + sum(np.sum(b**2) for b in self.phi))


def rating_level_indices(
    schema: AspectSchema, ratings: Sequence[Optional[float]], sentence: Optional[Sentence] = None
) -> np.ndarray:
    """Level index used by each aspect's sentiment block for one sentence.

    In the default mode this is the review's rating for each aspect; in
    per-sentence-rating mode every aspect indexes by the sentence's own
    rating.  Raises MissingRatingError when the needed rating is absent.
    """
    K = schema.n_aspects
    if schema.per_sentence_ratings:
        if sentence is None or sentence.rating is None:
            raise MissingRatingError("sentence rating required in per-sentence-rating mode")
        li = schema.level_index(0, sentence.rating)
        return np.full(K, li, dtype=np.intp)
    out = np.empty(K, dtype=np.intp)
    for k in range(K):
        if ratings[k] is None:
            raise MissingRatingError(
                f"aspect {schema.aspects[k]!r} has no rating; impute it or restrict the corpus"
            )
        out[k] = schema.level_index(k, ratings[k])
    return out


def compatibility(
    params: ModelParams, sentence: Sentence, ratings: Sequence[Optional[float]]
) -> np.ndarray:
    """Per-aspect score: sum over tokens of theta[k][w] + phi[k][v_k][w]."""
    K = params.schema.n_aspects
    levels = rating_level_indices(params.schema, ratings, sentence)
    c = np.zeros(K)
    if not sentence.tokens:
        return c
    tokens = np.asarray(sentence.tokens, dtype=np.intp)
    c += params.theta[:, tokens].sum(axis=1)
    for k in range(K):
        c[k] += params.phi[k][levels[k], tokens].sum()
    return c


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max()
    e = np.exp(shifted)
    return e / e.sum()


def sentence_aspect_probs(
    params: ModelParams, sentence: Sentence, ratings: Sequence[Optional[float]]
) -> np.ndarray:
    """Probability that the sentence discusses each aspect, given the ratings."""
    return softmax(compatibility(params, sentence, ratings))


def corpus_log_likelihood(
    params: ModelParams,
    corpus: Corpus,
    assignments: Sequence[Optional[Sequence[int]]],
) -> float:
    """Sum of log P(assigned aspect | sentence, ratings) over assigned reviews.

    ``assignments`` aligns with ``corpus.reviews``; entries that are None are
    skipped (reviews excluded from training).
    """
    if len(assignments) != len(corpus.reviews):
        raise DataError("assignments must align with corpus.reviews")
    total = 0.0
    for review, labels in zip(corpus.reviews, assignments):
        if labels is None:
            continue
        if len(labels) != len(review.sentences):
            raise DataError(f"assignment length mismatch for review {review.review_id!r}")
        for sent, lab in zip(review.sentences, labels):
            c = compatibility(params, sent, review.ratings)
            shifted = c - c.max()
            total += float(shifted[lab] - np.log(np.exp(shifted).sum()))
    return total


def normalize_phi(params: ModelParams) -> ModelParams:
    """Shift each phi[k][.][w] so its levels sum to 1, moving the shift into theta.

    The per-word shift is split evenly over the levels and subtracted from
    theta[k][w], so every sentence probability computed under complete
    ratings is unchanged.
    """
    out = params.copy()
    for k in range(params.schema.n_aspects):
        L = params.schema.n_levels(k)
        shift = (1.0 - out.phi[k].sum(axis=0)) / L
        out.phi[k] += shift[None, :]
        out.theta[k] -= shift
    return out


def phi_constraint_residual(params: ModelParams) -> float:
    """Largest violation of sum_v phi[k][v][w] = 1 over all (k, w)."""
    worst = 0.0
    for k in range(params.schema.n_aspects):
        worst = max(worst, float(np.abs(params.phi[k].sum(axis=0) - 1.0).max()))
    return worst


def top_words(
    params: ModelParams,
    aspect: int | str,
    rating: Optional[float] = None,
    n: int = 10,
) -> list[tuple[str, float]]:
    """Highest-weighted words for an aspect (theta) or a rating level (phi).

    Ties break lexicographically so lexicon output is reproducible.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    k = aspect if isinstance(aspect, int) else params.schema.aspect_index(aspect)
    if not 0 <= k < params.schema.n_aspects:
        raise DataError(f"aspect index {k} out of range")
    if rating is None:
        weights = params.theta[k]
    else:
        weights = params.phi[k][params.schema.level_index(k, rating)]
    order = sorted(
        range(len(weights)), key=lambda i: (-weights[i], params.vocabulary.word(i))
    )
    return [(params.vocabulary.word(i), float(weights[i])) for i in order[:n]]


def save_model(params: ModelParams, path, config_hash: Optional[str] = None) -> None:
    obj = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "segmentation-model",
        "config_hash": config_hash,
        "schema": params.schema.to_dict(),
        "vocabulary": {
            "words": params.vocabulary.words,
            "doc_freqs": params.vocabulary.doc_freqs,
        },
        "theta": params.theta.tolist(),
        "phi": [b.tolist() for b in params.phi],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def load_model(path, schema: Optional[AspectSchema] = None) -> ModelParams:
    """Load a model container; optionally validate it against an expected schema."""
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"model file {path}: {exc}") from None
    if obj.get("format_version") != MODEL_FORMAT_VERSION:
        raise DataError(f"model file {path}: unsupported format_version")
    if obj.get("kind") != "segmentation-model":
        raise DataError(f"model file {path}: not a segmentation model")
    file_schema = AspectSchema.from_dict(obj["schema"])
    if schema is not None and file_schema != schema:
        raise DataError("model schema does not match the expected schema")
    vocab = Vocabulary(obj["vocabulary"]["words"], obj["vocabulary"]["doc_freqs"])
    theta = np.asarray(obj["theta"], dtype=float)
    phi = [np.asarray(b, dtype=float) for b in obj["phi"]]
    return ModelParams(file_schema, vocab, theta, phi)
