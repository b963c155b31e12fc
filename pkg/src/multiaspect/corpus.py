"""Data layer for multi-aspect review corpora.

Reviews arrive as JSON lines (one object per line) together with a schema
describing the rated aspects.  This module tokenizes text, builds the
vocabulary, resolves groundtruth sentence labels, and produces review-level
train/test splits.  Synthetic corpora live in :mod:`multiaspect.synth`.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import DataError

#: Sentence label meaning "ambiguous / irrelevant".  Stored but excluded
#: from all training and evaluation.
AMBIGUOUS = -1

AMBIGUOUS_NAME = "ambiguous"

_SENTENCE_BREAK = re.compile(r"[.!?\n]+")
_WORD = re.compile(r"[a-z0-9]+")


class RawSentence(NamedTuple):
    """A sentence before vocabulary indexing: original span plus word strings."""

    text: str
    words: tuple[str, ...]


def tokenize(text: str) -> list[RawSentence]:
    """Split raw review text into sentences of lowercase word tokens.

    Sentences break on '.', '!', '?' and newlines.  Tokens are maximal
    alphanumeric runs of the lowercased text; everything else is a
    separator.  Sentences with no tokens are dropped.
    """
    sentences = []
    for span in _SENTENCE_BREAK.split(text):
        words = tuple(_WORD.findall(span.lower()))
        if words:
            sentences.append(RawSentence(span.strip(), words))
    return sentences


def _tokenize_words(text: str) -> tuple[str, ...]:
    return tuple(_WORD.findall(text.lower()))


@dataclass(frozen=True)
class AspectSchema:
    """The rated aspects of a corpus: names, permitted levels, seed words.

    ``rating_levels[k]`` is the strictly increasing tuple of numeric levels
    aspect ``k`` may take.  ``seed_words[k]`` are vocabulary strings whose
    aspect weight is pinned to 1 at initialization; they default to the
    lowercased aspect name.  ``per_sentence_ratings`` switches sentiment
    indexing from the review's per-aspect rating to each sentence's own
    rating (CitySearch-style data), which requires every aspect to share
    one level set.
    """

    aspects: tuple[str, ...]
    rating_levels: tuple[tuple[float, ...], ...]
    seed_words: tuple[tuple[str, ...], ...]
    per_sentence_ratings: bool = False

    def __post_init__(self):
        if len(self.aspects) < 1:
            raise DataError("schema needs at least one aspect")
        if len(set(self.aspects)) != len(self.aspects):
            raise DataError("aspect names must be unique")
        if len(self.rating_levels) != len(self.aspects):
            raise DataError("rating_levels must cover every aspect")
        if len(self.seed_words) != len(self.aspects):
            raise DataError("seed_words must cover every aspect")
        for name, levels in zip(self.aspects, self.rating_levels):
            if len(levels) < 1:
                raise DataError(f"aspect {name!r} has no rating levels")
            if any(b <= a for a, b in zip(levels, levels[1:])):
                raise DataError(f"rating levels for {name!r} must strictly increase")
        for name, seeds in zip(self.aspects, self.seed_words):
            if any(not w for w in seeds):
                raise DataError(f"aspect {name!r} has an empty seed word")
        if self.per_sentence_ratings:
            if any(lv != self.rating_levels[0] for lv in self.rating_levels):
                raise DataError(
                    "per-sentence-rating schemas need identical levels for all aspects"
                )

    @property
    def n_aspects(self) -> int:
        return len(self.aspects)

    def aspect_index(self, name: str) -> int:
        try:
            return self.aspects.index(name)
        except ValueError:
            raise DataError(f"unknown aspect {name!r}") from None

    @property
    def overall_index(self) -> Optional[int]:
        for i, name in enumerate(self.aspects):
            if name.lower() == "overall":
                return i
        return None

    def n_levels(self, k: int) -> int:
        return len(self.rating_levels[k])

    def level_index(self, k: int, value: float) -> int:
        """Map a rating value to its position in aspect ``k``'s level list."""
        levels = self.rating_levels[k]
        for i, lv in enumerate(levels):
            if abs(lv - value) <= 1e-9:
                return i
        raise DataError(
            f"rating {value} is not a permitted level for aspect {self.aspects[k]!r}"
        )

    def is_level(self, k: int, value: float) -> bool:
        return any(abs(lv - value) <= 1e-9 for lv in self.rating_levels[k])

    def to_dict(self) -> dict:
        return {
            "aspects": list(self.aspects),
            "rating_levels": {a: list(lv) for a, lv in zip(self.aspects, self.rating_levels)},
            "seed_words": {a: list(sw) for a, sw in zip(self.aspects, self.seed_words)},
            "per_sentence_ratings": self.per_sentence_ratings,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "AspectSchema":
        try:
            aspects = tuple(obj["aspects"])
        except KeyError:
            raise DataError("schema file lacks 'aspects'") from None
        levels_map = obj.get("rating_levels", {})
        seeds_map = obj.get("seed_words", {})
        for key in list(levels_map) + list(seeds_map):
            if key not in aspects:
                raise DataError(f"schema references unknown aspect {key!r}")
        rating_levels = tuple(
            tuple(float(v) for v in levels_map.get(a, (1.0, 2.0, 3.0, 4.0, 5.0)))
            for a in aspects
        )
        seed_words = tuple(
            tuple(seeds_map.get(a, [a.lower()])) for a in aspects
        )
        return cls(
            aspects=aspects,
            rating_levels=rating_levels,
            seed_words=seed_words,
            per_sentence_ratings=bool(obj.get("per_sentence_ratings", False)),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "AspectSchema":
        with open(path, encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"schema file {path}: {exc}") from None
        return cls.from_dict(obj)


def make_schema(
    aspects: Sequence[str],
    rating_levels: Sequence[float] | Sequence[Sequence[float]] = (1.0, 2.0, 3.0, 4.0, 5.0),
    seed_words: Optional[dict] = None,
    per_sentence_ratings: bool = False,
) -> AspectSchema:
    """Convenience constructor; a flat level list is shared by all aspects."""
    aspects = tuple(aspects)
    if rating_levels and isinstance(rating_levels[0], (int, float)):
        per_aspect = tuple(tuple(float(v) for v in rating_levels) for _ in aspects)
    else:
        per_aspect = tuple(tuple(float(v) for v in lv) for lv in rating_levels)
    seed_words = seed_words or {}
    seeds = tuple(tuple(seed_words.get(a, [a.lower()])) for a in aspects)
    return AspectSchema(aspects, per_aspect, seeds, per_sentence_ratings)


class Vocabulary:
    """Bijective word <-> index map with document frequencies.

    Indices are contiguous from 0 in lexicographic word order, so two
    ingestions of the same corpus produce identical maps.
    """

    def __init__(self, words: Sequence[str], doc_freqs: Sequence[int]):
        if len(words) != len(doc_freqs):
            raise DataError("vocabulary words and doc_freqs length mismatch")
        self.words: list[str] = list(words)
        self.doc_freqs: list[int] = [int(c) for c in doc_freqs]
        self._index: dict[str, int] = {w: i for i, w in enumerate(self.words)}
        if len(self._index) != len(self.words):
            raise DataError("vocabulary contains duplicate words")

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def index(self, word: str) -> int:
        return self._index[word]

    def get(self, word: str) -> Optional[int]:
        return self._index.get(word)

    def word(self, index: int) -> str:
        return self.words[index]

    def doc_freq(self, word: str) -> int:
        return self.doc_freqs[self._index[word]]

    @classmethod
    def from_tokenized(cls, reviews: Iterable[Sequence[RawSentence]], min_df: int = 5):
        """Build a vocabulary of words appearing in at least ``min_df`` reviews."""
        if min_df < 1:
            raise DataError("min_df must be at least 1")
        df: Counter[str] = Counter()
        for sentences in reviews:
            seen = set()
            for sent in sentences:
                seen.update(sent.words)
            df.update(seen)
        kept = sorted(w for w, c in df.items() if c >= min_df)
        return cls(kept, [df[w] for w in kept])


def build_vocabulary(
    tokenized_reviews: Iterable[Sequence[RawSentence]], min_df: int = 5
) -> Vocabulary:
    return Vocabulary.from_tokenized(tokenized_reviews, min_df)


@dataclass
class Sentence:
    """One sentence: in-vocabulary token indices plus the original text span.

    ``rating`` is only populated for per-sentence-rating corpora.
    """

    tokens: list[int]
    raw_text: str
    rating: Optional[float] = None


@dataclass
class Review:
    review_id: str
    item_id: str
    user_id: str
    sentences: list[Sentence]
    ratings: list[Optional[float]]

    def is_fully_rated(self) -> bool:
        return all(r is not None for r in self.ratings)

    def __len__(self) -> int:
        return len(self.sentences)


@dataclass
class LabeledSentence:
    review_id: str
    sentence_index: int
    label: int  # aspect index, or AMBIGUOUS


@dataclass
class Corpus:
    schema: AspectSchema
    reviews: list[Review]
    vocabulary: Vocabulary
    labels: list[LabeledSentence] = field(default_factory=list)

    def __post_init__(self):
        self._review_index: dict[str, int] = {}
        for i, r in enumerate(self.reviews):
            if r.review_id in self._review_index:
                raise DataError(f"duplicate review_id {r.review_id!r}")
            self._review_index[r.review_id] = i
        for lab in self.labels:
            self._check_label(lab)

    def _check_label(self, lab: LabeledSentence) -> None:
        if lab.review_id not in self._review_index:
            raise DataError(f"label references unknown review {lab.review_id!r}")
        review = self.reviews[self._review_index[lab.review_id]]
        if not 0 <= lab.sentence_index < len(review.sentences):
            raise DataError(
                f"label for review {lab.review_id!r} references sentence "
                f"{lab.sentence_index}, but the review has {len(review.sentences)}"
            )
        if lab.label != AMBIGUOUS and not 0 <= lab.label < self.schema.n_aspects:
            raise DataError(f"label for review {lab.review_id!r} has bad aspect {lab.label}")

    def review_index(self, review_id: str) -> int:
        try:
            return self._review_index[review_id]
        except KeyError:
            raise DataError(f"unknown review_id {review_id!r}") from None

    @property
    def n_sentences(self) -> int:
        return sum(len(r.sentences) for r in self.reviews)

    def with_labels(self, labels: list[LabeledSentence]) -> "Corpus":
        return Corpus(self.schema, self.reviews, self.vocabulary, labels)

    def label_map(self) -> dict[int, dict[int, int]]:
        """Labels grouped by review index: {review -> {sentence -> aspect}}."""
        out: dict[int, dict[int, int]] = {}
        for lab in self.labels:
            ri = self.review_index(lab.review_id)
            out.setdefault(ri, {})[lab.sentence_index] = lab.label
        return out


def _parse_ratings(obj: dict, schema: AspectSchema, line_no: int) -> list[Optional[float]]:
    raw = obj.get("ratings", {})
    if not isinstance(raw, dict):
        raise DataError(f"line {line_no}: 'ratings' must be an object")
    for name in raw:
        if name not in schema.aspects:
            raise DataError(f"line {line_no}: unknown aspect {name!r} in ratings")
    ratings: list[Optional[float]] = []
    for k, name in enumerate(schema.aspects):
        if name not in raw:
            ratings.append(None)
            continue
        value = float(raw[name])
        if not schema.is_level(k, value):
            raise DataError(
                f"line {line_no}: rating {value} not a permitted level for aspect {name!r}"
            )
        ratings.append(value)
    return ratings


def _parse_review_line(
    obj: dict, schema: AspectSchema, line_no: int
) -> tuple[str, str, str, list[RawSentence], list[Optional[float]], Optional[list[float]]]:
    if "review_id" not in obj:
        raise DataError(f"line {line_no}: missing 'review_id'")
    review_id = str(obj["review_id"])
    item_id = str(obj.get("item_id", ""))
    user_id = str(obj.get("user_id", ""))
    if "sentences" in obj:
        spans = obj["sentences"]
        if not isinstance(spans, list):
            raise DataError(f"line {line_no}: 'sentences' must be a list of strings")
        raw_sents = [RawSentence(str(s).strip(), _tokenize_words(str(s))) for s in spans]
    elif "text" in obj:
        raw_sents = tokenize(str(obj["text"]))
    else:
        raise DataError(f"line {line_no}: needs 'text' or 'sentences'")
    ratings = _parse_ratings(obj, schema, line_no)
    sent_ratings = None
    if schema.per_sentence_ratings:
        raw_sr = obj.get("sentence_ratings")
        if raw_sr is not None:
            if len(raw_sr) != len(raw_sents):
                raise DataError(f"line {line_no}: sentence_ratings length mismatch")
            sent_ratings = []
            for v in raw_sr:
                value = float(v)
                if not schema.is_level(0, value):
                    raise DataError(
                        f"line {line_no}: sentence rating {value} not a permitted level"
                    )
                sent_ratings.append(value)
    return review_id, item_id, user_id, raw_sents, ratings, sent_ratings


def load_corpus(
    path, schema: AspectSchema, min_df: int = 5, vocabulary: Optional[Vocabulary] = None
) -> Corpus:
    """Read a JSON-lines review file and index it against a vocabulary.

    A fresh vocabulary is built from the file unless one is supplied (e.g.
    a trained model's, so its parameters line up); out-of-vocabulary
    tokens are skipped either way.
    """
    parsed = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: malformed JSON ({exc.msg})") from None
            parsed.append(_parse_review_line(obj, schema, line_no))
    vocab = vocabulary
    if vocab is None:
        vocab = build_vocabulary((p[3] for p in parsed), min_df=min_df)
    reviews = []
    for review_id, item_id, user_id, raw_sents, ratings, sent_ratings in parsed:
        sentences = []
        for j, rs in enumerate(raw_sents):
            tokens = [vocab.index(w) for w in rs.words if w in vocab]  # OOV skipped
            rating = sent_ratings[j] if sent_ratings is not None else None
            sentences.append(Sentence(tokens, rs.text, rating))
        reviews.append(Review(review_id, item_id, user_id, sentences, ratings))
    return Corpus(schema, reviews, vocab)


def save_corpus(corpus: Corpus, path) -> None:
    """Write reviews back to the JSON-lines format accepted by load_corpus."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in corpus.reviews:
            obj: dict = {
                "review_id": r.review_id,
                "item_id": r.item_id,
                "user_id": r.user_id,
                "sentences": [s.raw_text for s in r.sentences],
                "ratings": {
                    name: value
                    for name, value in zip(corpus.schema.aspects, r.ratings)
                    if value is not None
                },
            }
            if corpus.schema.per_sentence_ratings and any(
                s.rating is not None for s in r.sentences
            ):
                obj["sentence_ratings"] = [s.rating for s in r.sentences]
            fh.write(json.dumps(obj))
            fh.write("\n")


def load_labels(path, corpus: Corpus) -> list[LabeledSentence]:
    """Read a TSV of (review_id, sentence_index, aspect-name-or-'ambiguous')."""
    labels = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"label line {line_no}: expected 3 tab-separated columns")
            review_id, sent_idx, name = parts
            try:
                si = int(sent_idx)
            except ValueError:
                raise DataError(f"label line {line_no}: bad sentence index {sent_idx!r}") from None
            if name == AMBIGUOUS_NAME:
                label = AMBIGUOUS
            else:
                label = corpus.schema.aspect_index(name)
            lab = LabeledSentence(review_id, si, label)
            corpus._check_label(lab)
            labels.append(lab)
    return labels


def save_labels(labels: Sequence[LabeledSentence], path, schema: AspectSchema) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lab in labels:
            name = AMBIGUOUS_NAME if lab.label == AMBIGUOUS else schema.aspects[lab.label]
            fh.write(f"{lab.review_id}\t{lab.sentence_index}\t{name}\n")


def split(corpus: Corpus, train_fraction: float, rng_seed: int) -> tuple[Corpus, Corpus]:
    """Review-level random partition; labels follow their reviews.

    Both halves share the parent vocabulary so model parameters transfer.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError("train_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(rng_seed)
    n = len(corpus.reviews)
    perm = rng.permutation(n)
    n_train = int(n * train_fraction)
    train_idx = sorted(perm[:n_train].tolist())
    test_idx = sorted(perm[n_train:].tolist())
    return subset(corpus, train_idx), subset(corpus, test_idx)


def subset(corpus: Corpus, review_indices: Sequence[int]) -> Corpus:
    """A corpus containing only the given reviews (shared vocabulary)."""
    keep = set(review_indices)
    reviews = [corpus.reviews[i] for i in sorted(keep)]
    kept_ids = {r.review_id for r in reviews}
    labels = [lab for lab in corpus.labels if lab.review_id in kept_ids]
    return Corpus(corpus.schema, reviews, corpus.vocabulary, labels)
