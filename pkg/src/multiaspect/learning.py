"""Training: unsupervised coordinate ascent, semi-supervised conditioning,
and fully supervised structured risk minimization.

The unsupervised objective is the corpus log-likelihood of the current
sentence-aspect labels, normalized by the number of word occurrences,
minus an l2 regularizer.  Label inference (the e-step) and concave
parameter ascent (the m-step) alternate until the labels reach a fixed
point.  Sentiment weights keep their per-word level sums fixed during
ascent (gradients are projected onto that subspace), so the gauge
constraint established at initialization is preserved throughout.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .assignment import segment_review, solve_segmentation
from .corpus import AMBIGUOUS, Corpus, Review, Sentence
from .errors import DataError, NumericalError
from .model import ModelParams, normalize_phi, rating_level_indices

logger = logging.getLogger(__name__)

Monitor = Callable[[dict], None]


@dataclass
class TrainConfig:
    reg_weight: float = 1e-3
    n_restarts: int = 64
    max_outer_iters: int = 50
    grad_tol: float = 1e-6
    max_m_iters: int = 150
    init_step: float = 1.0
    step_growth: float = 2.0
    step_shrink: float = 0.5
    armijo: float = 1e-4
    min_step: float = 1e-12
    diversity: bool = True
    rng_seed: int = 0
    # supervised / margin training
    epochs: int = 30
    step_size: float = 0.5

    def __post_init__(self):
        if self.reg_weight <= 0:
            raise DataError("reg_weight must be positive")
        if self.n_restarts < 1:
            raise DataError("n_restarts must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in known})


@dataclass
class AssignmentState:
    """Per-review sentence labels; observed (clamped) positions never change."""

    labels: list[Optional[np.ndarray]]
    fixed: list[Optional[np.ndarray]] = field(default=None)  # bool masks

    def __post_init__(self):
        if self.fixed is None:
            self.fixed = [
                None if lab is None else np.zeros(len(lab), dtype=bool)
                for lab in self.labels
            ]


class _Dataset:
    """Flattened sentence view of a set of reviews, for vectorized math.

    X is the (sentences x vocab) token-count matrix; level_idx[k][s] is the
    rating-level index aspect k's sentiment block uses for sentence s.
    """

    def __init__(self, X, level_idx, rev_slices=None, review_indices=None):
        self.X = X
        self.level_idx = level_idx
        self.rev_slices = rev_slices
        self.review_indices = review_indices
        self.n_rows = X.shape[0]
        self.W = max(1.0, float(X.sum()))
        K = level_idx.shape[0]
        self.level_rows = [
            [np.flatnonzero(level_idx[k] == l) for l in range(int(level_idx[k].max(initial=0)) + 1)]
            for k in range(K)
        ]
        self._row_cache: dict[tuple[int, int], sp.csr_matrix] = {}

    @classmethod
    def from_corpus(cls, corpus: Corpus, review_indices: Sequence[int]) -> "_Dataset":
        schema = corpus.schema
        V = len(corpus.vocabulary)
        indptr = [0]
        indices: list[int] = []
        data: list[float] = []
        levels = []
        rev_slices = []
        row = 0
        for ri in review_indices:
            review = corpus.reviews[ri]
            lo = row
            for sent in review.sentences:
                counts = Counter(sent.tokens)
                for w in sorted(counts):
                    indices.append(w)
                    data.append(float(counts[w]))
                indptr.append(len(indices))
                levels.append(rating_level_indices(schema, review.ratings, sent))
                row += 1
            rev_slices.append((lo, row))
        X = sp.csr_matrix(
            (np.array(data), np.array(indices, dtype=np.intp), np.array(indptr, dtype=np.intp)),
            shape=(row, V),
        )
        if levels:
            level_idx = np.stack(levels, axis=1)
        else:
            level_idx = np.zeros((schema.n_aspects, 0), dtype=np.intp)
        return cls(X, level_idx, rev_slices, list(review_indices))

    def subset(self, rows: np.ndarray) -> "_Dataset":
        return _Dataset(self.X[rows], self.level_idx[:, rows])

    def _rows_csr(self, k: int, l: int) -> sp.csr_matrix:
        key = (k, l)
        if key not in self._row_cache:
            self._row_cache[key] = self.X[self.level_rows[k][l]]
        return self._row_cache[key]

    def compat(self, params: ModelParams) -> np.ndarray:
        """(sentences x aspects) compatibility scores."""
        C = np.asarray(self.X @ params.theta.T)
        S = self.n_rows
        rr = np.arange(S)
        for k in range(params.schema.n_aspects):
            P = np.asarray(self.X @ params.phi[k].T)
            C[:, k] += P[rr, self.level_idx[k]]
        return C


def _log_softmax(C: np.ndarray) -> np.ndarray:
    m = C.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(C - m).sum(axis=1, keepdims=True))
    return C - lse


def _objective(params: ModelParams, ds: _Dataset, labels: np.ndarray, reg: float) -> float:
    logp = _log_softmax(ds.compat(params))
    ll = float(logp[np.arange(ds.n_rows), labels].sum())
    return ll / ds.W - reg * params.sq_norm()


def _gradient(
    params: ModelParams, ds: _Dataset, labels: np.ndarray, reg: float
) -> tuple[float, np.ndarray, list[np.ndarray]]:
    C = ds.compat(params)
    logp = _log_softmax(C)
    rr = np.arange(ds.n_rows)
    ll = float(logp[rr, labels].sum())
    G = -np.exp(logp)
    G[rr, labels] += 1.0
    G /= ds.W
    grad_theta = np.asarray(ds.X.T @ G).T - 2.0 * reg * params.theta
    grad_phi = []
    for k in range(params.schema.n_aspects):
        gk = np.zeros_like(params.phi[k])
        for l, rows in enumerate(ds.level_rows[k]):
            if rows.size:
                gk[l] = ds._rows_csr(k, l).T @ G[rows, k]
        gk -= 2.0 * reg * params.phi[k]
        grad_phi.append(gk)
    return ll / ds.W - reg * params.sq_norm(), grad_theta, grad_phi


def training_objective(
    params: ModelParams,
    corpus: Corpus,
    assignments: Sequence[Optional[Sequence[int]]],
    reg_weight: float,
) -> float:
    """Regularized, word-occurrence-normalized objective for given labels."""
    ds, labels = _dataset_for(params, corpus, assignments)
    return _objective(params, ds, labels, reg_weight)


def training_gradient(
    params: ModelParams,
    corpus: Corpus,
    assignments: Sequence[Optional[Sequence[int]]],
    reg_weight: float,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Raw analytic gradient of training_objective (no subspace projection)."""
    ds, labels = _dataset_for(params, corpus, assignments)
    _, gt, gp = _gradient(params, ds, labels, reg_weight)
    return gt, gp


def _dataset_for(params, corpus, assignments):
    idx = [i for i, lab in enumerate(assignments) if lab is not None]
    ds = _Dataset.from_corpus(corpus, idx)
    labels = np.concatenate(
        [np.asarray(assignments[i], dtype=np.intp) for i in idx]
    ) if idx else np.zeros(0, dtype=np.intp)
    if labels.size != ds.n_rows:
        raise DataError("assignments do not cover every sentence")
    return ds, labels


def init_params(schema, vocabulary, rng) -> ModelParams:
    """Seed-word initialization: theta[k][seed] = 1, everything else small noise."""
    rng = np.random.default_rng(rng)
    K = schema.n_aspects
    V = len(vocabulary)
    theta = rng.uniform(-0.05, 0.05, size=(K, V))
    phi = [rng.uniform(-0.05, 0.05, size=(schema.n_levels(k), V)) for k in range(K)]
    for k in range(K):
        for seed in schema.seed_words[k]:
            idx = vocabulary.get(seed)
            if idx is None:
                logger.warning(
                    "seed word %r for aspect %r not in vocabulary; skipped",
                    seed, schema.aspects[k],
                )
                continue
            theta[k, idx] = 1.0
    return normalize_phi(ModelParams(schema, vocabulary, theta, phi))


def _m_step(
    params: ModelParams,
    ds: _Dataset,
    labels: np.ndarray,
    config: TrainConfig,
) -> tuple[ModelParams, list[float]]:
    """Backtracking gradient ascent on the concave regularized objective.

    Sentiment gradients are projected so per-word level sums stay constant;
    every accepted step strictly satisfies the Armijo condition, so the
    returned trace of objectives is non-decreasing.
    """
    x = params.copy()
    reg = config.reg_weight
    J, gt, gp = _gradient(x, ds, labels, reg)
    if not np.isfinite(J):
        raise NumericalError(f"objective is not finite at m-step entry (J={J})")
    trace = [J]
    step = config.init_step
    for _ in range(config.max_m_iters):
        pgp = [g - g.mean(axis=0, keepdims=True) for g in gp]
        gsq = float(np.sum(gt**2) + sum(np.sum(g**2) for g in pgp))
        ginf = max(
            float(np.abs(gt).max(initial=0.0)),
            max((float(np.abs(g).max(initial=0.0)) for g in pgp), default=0.0),
        )
        if ginf < config.grad_tol:
            break
        accepted = False
        cand = None
        while step >= config.min_step:
            cand = ModelParams(
                x.schema, x.vocabulary,
                x.theta + step * gt,
                [p + step * g for p, g in zip(x.phi, pgp)],
            )
            Jc = _objective(cand, ds, labels, reg)
            if np.isfinite(Jc) and Jc >= J + config.armijo * step * gsq:
                accepted = True
                break
            step *= config.step_shrink
        if not accepted:
            break
        x = cand
        J = Jc
        trace.append(J)
        step = min(step * config.step_growth, 1e8)
        Jg, gt, gp = _gradient(x, ds, labels, reg)
        if not np.isfinite(Jg):
            raise NumericalError("objective became non-finite during m-step")
    return x, trace


def m_step(
    params: ModelParams,
    corpus: Corpus,
    state: AssignmentState,
    config: TrainConfig,
) -> ModelParams:
    """Public m-step over every review covered by the state."""
    ds, labels = _dataset_for(params, corpus, state.labels)
    out, _ = _m_step(params, ds, labels, config)
    return normalize_phi(out)


def _fixed_dict(mask: Optional[np.ndarray], labels: Optional[np.ndarray]) -> Optional[dict]:
    if mask is None or not mask.any():
        return None
    return {int(s): int(labels[s]) for s in np.flatnonzero(mask)}


def _e_step_flat(
    params: ModelParams,
    ds: _Dataset,
    fixed_mask: Optional[np.ndarray],
    fixed_labels: Optional[np.ndarray],
    diversity: bool,
) -> np.ndarray:
    C = ds.compat(params)
    out = np.empty(ds.n_rows, dtype=np.intp)
    K = params.schema.n_aspects
    for lo, hi in ds.rev_slices:
        scores = C[lo:hi]
        local_fixed = None
        if fixed_mask is not None and fixed_mask[lo:hi].any():
            local_fixed = {
                int(s): int(fixed_labels[lo + s]) for s in np.flatnonzero(fixed_mask[lo:hi])
            }
        if diversity and (hi - lo) >= K:
            out[lo:hi] = solve_segmentation(scores, fixed=local_fixed)
        else:
            labels = scores.argmax(axis=1).astype(np.intp)
            if local_fixed:
                for s, k in local_fixed.items():
                    labels[s] = k
            out[lo:hi] = labels
    return out


def e_step(
    params: ModelParams,
    corpus: Corpus,
    state: AssignmentState,
    diversity: bool = True,
) -> AssignmentState:
    """Relabel unobserved sentences; observed labels are untouched."""
    new_labels: list[Optional[np.ndarray]] = []
    for review, lab, mask in zip(corpus.reviews, state.labels, state.fixed):
        if lab is None:
            new_labels.append(None)
            continue
        fixed = _fixed_dict(mask, lab)
        new_labels.append(segment_review(params, review, fixed=fixed, diversity=diversity))
    return AssignmentState(new_labels, [None if m is None else m.copy() for m in state.fixed])


def _state_from_flat(corpus, ds, flat, fixed_mask=None) -> AssignmentState:
    labels: list[Optional[np.ndarray]] = [None] * len(corpus.reviews)
    fixed: list[Optional[np.ndarray]] = [None] * len(corpus.reviews)
    for (lo, hi), ri in zip(ds.rev_slices, ds.review_indices):
        labels[ri] = flat[lo:hi].copy()
        fixed[ri] = (
            fixed_mask[lo:hi].copy() if fixed_mask is not None else np.zeros(hi - lo, dtype=bool)
        )
    return AssignmentState(labels, fixed)


def _coordinate_ascent(
    params: ModelParams,
    ds: _Dataset,
    config: TrainConfig,
    fixed_mask: Optional[np.ndarray],
    fixed_labels: Optional[np.ndarray],
    monitor: Optional[Monitor],
    restart: int,
) -> tuple[ModelParams, np.ndarray, float]:
    flat = None
    for outer in range(config.max_outer_iters):
        new_flat = _e_step_flat(params, ds, fixed_mask, fixed_labels, config.diversity)
        changed = int((new_flat != flat).sum()) if flat is not None else ds.n_rows
        if monitor:
            monitor({
                "event": "e_step", "restart": restart, "outer": outer, "changed": changed,
            })
        if flat is not None and changed == 0:
            break
        flat = new_flat
        params, trace = _m_step(params, ds, flat, config)
        if monitor:
            monitor({
                "event": "m_step", "restart": restart, "outer": outer,
                "objectives": trace, "objective": trace[-1],
            })
    final = _e_step_flat(params, ds, fixed_mask, fixed_labels, config.diversity)
    J = _objective(params, ds, final, config.reg_weight)
    return params, final, J


def _trainable_indices(corpus: Corpus) -> list[int]:
    return [i for i, r in enumerate(corpus.reviews) if r.is_fully_rated()]


def train_unsupervised(
    corpus: Corpus,
    config: TrainConfig,
    monitor: Optional[Monitor] = None,
) -> tuple[ModelParams, AssignmentState]:
    """Coordinate ascent from seed-word initialization, best of n_restarts."""
    idx = _trainable_indices(corpus)
    if not idx:
        raise DataError("no fully rated reviews to train on")
    ds = _Dataset.from_corpus(corpus, idx)
    return _train_em(corpus, ds, config, None, None, monitor)


def train_semisupervised(
    corpus: Corpus,
    config: TrainConfig,
    monitor: Optional[Monitor] = None,
) -> tuple[ModelParams, AssignmentState]:
    """Coordinate ascent conditioned on observed sentence labels.

    Observed labels are clamped during every e-step, and the random part
    of the initialization is replaced by an m-step over the labeled
    sentences alone.  With no labels this reduces to train_unsupervised.
    """
    idx = _trainable_indices(corpus)
    if not idx:
        raise DataError("no fully rated reviews to train on")
    label_map = corpus.label_map()
    ds = _Dataset.from_corpus(corpus, idx)
    fixed_mask = np.zeros(ds.n_rows, dtype=bool)
    fixed_labels = np.zeros(ds.n_rows, dtype=np.intp)
    for (lo, hi), ri in zip(ds.rev_slices, ds.review_indices):
        for si, lab in label_map.get(ri, {}).items():
            if lab == AMBIGUOUS:
                continue
            fixed_mask[lo + si] = True
            fixed_labels[lo + si] = lab
    if not fixed_mask.any():
        return _train_em(corpus, ds, config, None, None, monitor)
    return _train_em(corpus, ds, config, fixed_mask, fixed_labels, monitor)


def _train_em(corpus, ds, config, fixed_mask, fixed_labels, monitor):
    seeds = np.random.SeedSequence(config.rng_seed).spawn(config.n_restarts)
    best = None
    for r in range(config.n_restarts):
        rng = np.random.default_rng(seeds[r])
        params = init_params(corpus.schema, corpus.vocabulary, rng)
        if fixed_mask is not None:
            rows = np.flatnonzero(fixed_mask)
            params, _ = _m_step(params, ds.subset(rows), fixed_labels[rows], config)
        params, flat, J = _coordinate_ascent(
            params, ds, config, fixed_mask, fixed_labels, monitor, r
        )
        if monitor:
            monitor({"event": "restart_end", "restart": r, "objective": J})
        if best is None or J > best[2]:
            best = (params, flat, J)
    params, flat, _ = best
    state = _state_from_flat(corpus, ds, flat, fixed_mask)
    return normalize_phi(params), state


@dataclass
class _SupReview:
    tokens: list[np.ndarray]   # unique token ids per kept sentence
    counts: list[np.ndarray]
    levels: list[np.ndarray]   # (K,) level index per aspect, per kept sentence
    truth: np.ndarray          # (n,) aspect labels
    relax_by: int


def _supervised_data(corpus: Corpus) -> list[_SupReview]:
    label_map = corpus.label_map()
    K = corpus.schema.n_aspects
    out = []
    for ri, mapping in sorted(label_map.items()):
        review = corpus.reviews[ri]
        if not review.is_fully_rated():
            raise DataError(f"review {review.review_id!r} is labeled but not fully rated")
        kept = [si for si in range(len(review.sentences)) if mapping.get(si, None) != AMBIGUOUS]
        missing = [si for si in kept if si not in mapping]
        if missing:
            raise DataError(
                f"review {review.review_id!r} is only partially labeled "
                f"(sentence {missing[0]} has no label)"
            )
        if not kept:
            continue
        tokens, counts, levels = [], [], []
        for si in kept:
            sent = review.sentences[si]
            cnt = Counter(sent.tokens)
            ws = np.array(sorted(cnt), dtype=np.intp)
            tokens.append(ws)
            counts.append(np.array([cnt[w] for w in ws], dtype=float))
            levels.append(rating_level_indices(corpus.schema, review.ratings, sent))
        truth = np.array([mapping[si] for si in kept], dtype=np.intp)
        relax_by = int(K - np.unique(truth).size)
        out.append(_SupReview(tokens, counts, levels, truth, relax_by))
    if not out:
        raise DataError("no labeled reviews to train on")
    return out


def _sup_scores(params: ModelParams, rev: _SupReview) -> np.ndarray:
    K = params.schema.n_aspects
    n = len(rev.tokens)
    scores = np.zeros((n, K))
    for s in range(n):
        ws, cs = rev.tokens[s], rev.counts[s]
        if ws.size == 0:
            continue
        scores[s] = params.theta[:, ws] @ cs
        for k in range(K):
            scores[s, k] += params.phi[k][rev.levels[s][k], ws] @ cs
    return scores


def _sup_infer(scores: np.ndarray, rev: _SupReview, diversity: bool) -> np.ndarray:
    n, K = scores.shape
    if diversity and n >= K:
        return solve_segmentation(scores, relax_by=rev.relax_by)
    return scores.argmax(axis=1).astype(np.intp)


def structured_hinge(
    params: ModelParams, data: list[_SupReview], diversity: bool
) -> tuple[float, float]:
    """Mean margin-rescaled hinge and mean per-review 0/1 loss of inference."""
    hinge_total = 0.0
    err_total = 0.0
    for rev in data:
        n = len(rev.truth)
        scores = _sup_scores(params, rev)
        bonus = np.full_like(scores, 1.0 / n)
        bonus[np.arange(n), rev.truth] = 0.0
        aug = scores + bonus
        t_star = _sup_infer(aug, rev, diversity)
        aug_value = float(aug[np.arange(n), t_star].sum())
        truth_value = float(scores[np.arange(n), rev.truth].sum())
        hinge_total += max(0.0, aug_value - truth_value)
        pred = _sup_infer(scores, rev, diversity)
        err_total += float((pred != rev.truth).mean())
    return hinge_total / len(data), err_total / len(data)


def train_supervised(
    corpus: Corpus,
    config: TrainConfig,
    monitor: Optional[Monitor] = None,
) -> ModelParams:
    """Averaged subgradient descent on the structured hinge upper bound.

    Loss-augmented inference solves the same cover as prediction, with the
    per-sentence 0/1 loss (scaled by 1/|r|) added to the edge weights.  A
    review whose groundtruth labeling skips some aspects has its cover
    relaxed by that many aspects, keeping the groundtruth feasible so the
    hinge stays an upper bound on the 0/1 loss.
    """
    data = _supervised_data(corpus)
    schema = corpus.schema
    params = ModelParams.zeros(schema, corpus.vocabulary)
    sum_theta = np.zeros_like(params.theta)
    sum_phi = [np.zeros_like(b) for b in params.phi]
    n_avg = 0
    rng = np.random.default_rng(config.rng_seed)
    total_updates = max(1, config.epochs * len(data))
    t = 0
    lam = config.reg_weight
    for epoch in range(config.epochs):
        for ri in rng.permutation(len(data)):
            rev = data[ri]
            n = len(rev.truth)
            scores = _sup_scores(params, rev)
            bonus = np.full_like(scores, 1.0 / n)
            bonus[np.arange(n), rev.truth] = 0.0
            t_star = _sup_infer(scores + bonus, rev, config.diversity)
            eta = config.step_size / (1.0 + 9.0 * t / total_updates)
            t += 1
            shrink = max(0.0, 1.0 - 2.0 * eta * lam)
            params.theta *= shrink
            for b in params.phi:
                b *= shrink
            for s in np.flatnonzero(t_star != rev.truth):
                ws, cs = rev.tokens[s], rev.counts[s]
                if ws.size == 0:
                    continue
                kp, kt = int(t_star[s]), int(rev.truth[s])
                params.theta[kp, ws] -= eta * cs
                params.theta[kt, ws] += eta * cs
                params.phi[kp][rev.levels[s][kp], ws] -= eta * cs
                params.phi[kt][rev.levels[s][kt], ws] += eta * cs
            sum_theta += params.theta
            for acc, b in zip(sum_phi, params.phi):
                acc += b
            n_avg += 1
        if monitor:
            hinge, err = structured_hinge(params, data, config.diversity)
            monitor({
                "event": "epoch", "epoch": epoch, "hinge": hinge, "train_error": err,
            })
    avg = ModelParams(
        schema, corpus.vocabulary, sum_theta / n_avg, [b / n_avg for b in sum_phi]
    )
    return normalize_phi(avg)
