"""Synthetic corpora drawn from planted parameters.

A planted model doubles as a test oracle: ratings come from a Gaussian
copula with configurable inter-aspect correlation, each sentence draws an
aspect and then draws tokens with probability proportional to
exp(theta[k][w] + phi[k][v_k][w]).  The planted sentence aspects are
returned alongside the corpus.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from .corpus import (
    AspectSchema,
    Corpus,
    LabeledSentence,
    Review,
    Sentence,
    Vocabulary,
    make_schema,
)
from .errors import DataError
from .model import ModelParams

_ASPECT_NAMES = ("look", "smell", "taste", "feel", "body", "finish")


def synthetic_schema(
    n_aspects: int,
    levels: Sequence[float] = (1.0, 2.0, 3.0, 4.0, 5.0),
    include_overall: bool = False,
) -> AspectSchema:
    """Beer-flavored schema for synthetic data; `overall' goes last if present."""
    if include_overall:
        names = list(_ASPECT_NAMES[: n_aspects - 1]) + ["overall"]
    else:
        names = list(_ASPECT_NAMES[:n_aspects])
    if len(names) != n_aspects:
        raise DataError(f"synthetic schema supports at most {len(_ASPECT_NAMES) + 1} aspects")
    return make_schema(names, levels)


def make_planted_model(
    schema: AspectSchema,
    vocab_size: int,
    rng_seed: int = 0,
    content_per_aspect: int = 20,
    sentiment_per_aspect: int = 12,
    content_weight: float = 2.0,
    sentiment_scale: float = 1.5,
    content_overlap: float = 0.0,
) -> ModelParams:
    """Planted parameters with block structure.

    Each aspect gets a content block (its name plus generated words) whose
    theta weight is high for that aspect, and a sentiment block whose phi
    weight grows (or shrinks, for odd words) with the rating level.
    ``content_overlap`` shares that fraction of each content block with the
    next aspect, making aspects harder to tell apart.
    """
    K = schema.n_aspects
    words: list[str] = []
    content_blocks = []
    sentiment_blocks = []
    for k, name in enumerate(schema.aspects):
        block = [name.lower()] + [f"{name[:3]}word{j}" for j in range(1, content_per_aspect)]
        content_blocks.append(block)
        words.extend(block)
    for k, name in enumerate(schema.aspects):
        block = [f"{name[:3]}feel{j}" for j in range(sentiment_per_aspect)]
        sentiment_blocks.append(block)
        words.extend(block)
    n_filler = vocab_size - len(words)
    if n_filler < 0:
        raise DataError("vocab_size too small for the requested block sizes")
    words.extend(f"filler{j:04d}" for j in range(n_filler))
    vocab = Vocabulary(sorted(words), [1] * len(words))

    rng = np.random.default_rng(rng_seed)
    theta = np.zeros((K, len(vocab)))
    phi = [np.zeros((schema.n_levels(k), len(vocab))) for k in range(K)]
    n_shared = int(round(content_overlap * content_per_aspect))
    for k in range(K):
        idx = [vocab.index(w) for w in content_blocks[k]]
        theta[k, idx] = content_weight
        if n_shared and K > 1:
            shared = [vocab.index(w) for w in content_blocks[(k + 1) % K][:n_shared]]
            theta[k, shared] = content_weight
    for k in range(K):
        lv = np.asarray(schema.rating_levels[k], dtype=float)
        span = lv[-1] - lv[0] if lv[-1] > lv[0] else 1.0
        signed = 2.0 * (lv - lv[0]) / span - 1.0  # [-1, 1]
        for j, w in enumerate(sentiment_blocks[k]):
            polarity = 1.0 if j % 2 == 0 else -1.0
            phi[k][:, vocab.index(w)] = sentiment_scale * polarity * signed
    return ModelParams(schema, vocab, theta, phi)


def _draw_ratings(
    schema: AspectSchema, rng: np.random.Generator, correlation: float
) -> list[float]:
    K = schema.n_aspects
    shared = rng.standard_normal()
    noise = rng.standard_normal(K)
    rho = float(np.clip(correlation, 0.0, 1.0))
    z = rho * shared + np.sqrt(max(0.0, 1.0 - rho * rho)) * noise
    u = norm.cdf(z)
    out = []
    for k in range(K):
        L = schema.n_levels(k)
        li = min(int(u[k] * L), L - 1)
        out.append(schema.rating_levels[k][li])
    return out


def generate_synthetic(
    schema: AspectSchema,
    planted: ModelParams,
    n_reviews: int,
    rng_seed: int,
    rating_correlation: float = 0.5,
    sentences_range: Optional[tuple[int, int]] = None,
    tokens_range: tuple[int, int] = (4, 9),
    aspect_weights: Optional[Sequence[float]] = None,
    ensure_coverage: bool = False,
) -> tuple[Corpus, list[np.ndarray]]:
    """Sample a corpus from the planted model; returns the true assignments.

    Sentence counts are uniform over ``sentences_range`` (default (K, K+3)
    so the diversity machinery has room to act); token counts per sentence
    are uniform over ``tokens_range``.  With ``ensure_coverage`` every
    review of at least K sentences discusses every aspect at least once,
    matching the assumption the diversity constraint encodes.
    """
    if planted.schema != schema:
        raise DataError("planted model schema does not match")
    K = schema.n_aspects
    if sentences_range is None:
        sentences_range = (K, K + 3)
    rng = np.random.default_rng(rng_seed)
    weights = None
    if aspect_weights is not None:
        weights = np.asarray(aspect_weights, dtype=float)
        weights = weights / weights.sum()
    vocab = planted.vocabulary
    dist_cache: dict[tuple[int, int], np.ndarray] = {}

    def token_dist(k: int, li: int) -> np.ndarray:
        key = (k, li)
        if key not in dist_cache:
            logits = planted.theta[k] + planted.phi[k][li]
            logits = logits - logits.max()
            p = np.exp(logits)
            dist_cache[key] = p / p.sum()
        return dist_cache[key]

    reviews = []
    assignments = []
    for i in range(n_reviews):
        ratings = _draw_ratings(schema, rng, rating_correlation)
        level_idx = [schema.level_index(k, ratings[k]) for k in range(K)]
        n_sent = int(rng.integers(sentences_range[0], sentences_range[1] + 1))
        sentences = []
        aspects = np.array(
            [int(rng.choice(K, p=weights)) for _ in range(n_sent)], dtype=np.intp
        )
        if ensure_coverage and n_sent >= K:
            slots = rng.choice(n_sent, size=K, replace=False)
            aspects[slots] = rng.permutation(K)
        for s in range(n_sent):
            k = int(aspects[s])
            n_tok = int(rng.integers(tokens_range[0], tokens_range[1] + 1))
            toks = rng.choice(len(vocab), size=n_tok, p=token_dist(k, level_idx[k]))
            words = [vocab.word(int(w)) for w in toks]
            sentences.append(Sentence([int(w) for w in toks], " ".join(words)))
        reviews.append(
            Review(f"synth-{i:06d}", f"item-{i % 97:03d}", f"user-{i % 389:04d}",
                   sentences, list(ratings))
        )
        assignments.append(aspects)
    corpus = Corpus(schema, reviews, vocab)
    return corpus, assignments


def assignments_to_labels(
    corpus: Corpus, assignments: Sequence[np.ndarray]
) -> list[LabeledSentence]:
    """Planted assignments as a groundtruth label list."""
    labels = []
    for review, aspects in zip(corpus.reviews, assignments):
        for si, k in enumerate(aspects):
            labels.append(LabeledSentence(review.review_id, si, int(k)))
    return labels
