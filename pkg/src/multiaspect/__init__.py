"""Learning aspects, sentiments, and missing ratings from multi-aspect reviews."""

from .corpus import (
    AMBIGUOUS,
    AspectSchema,
    Corpus,
    LabeledSentence,
    Review,
    Sentence,
    Vocabulary,
    build_vocabulary,
    load_corpus,
    load_labels,
    make_schema,
    save_corpus,
    save_labels,
    split,
    tokenize,
)
from .model import (
    ModelParams,
    compatibility,
    corpus_log_likelihood,
    load_model,
    normalize_phi,
    save_model,
    sentence_aspect_probs,
    top_words,
)
from .assignment import (
    Cover,
    kuhn_munkres,
    relax,
    segment_review,
    solve_segmentation,
    summarize_review,
)
from .learning import (
    AssignmentState,
    TrainConfig,
    e_step,
    init_params,
    m_step,
    train_semisupervised,
    train_supervised,
    train_unsupervised,
)
from .rating import (
    PairwiseParams,
    RatingParams,
    RatingPrediction,
    RatingTrainConfig,
    predict_joint,
    predict_segmented,
    predict_unsegmented,
    train_rating_model,
)
from .evaluation import (
    EvalReport,
    accuracy,
    cohens_kappa,
    pr_curve_and_map,
    rank_sentences,
    rating_mse,
)
from .synth import generate_synthetic, make_planted_model, synthetic_schema

__version__ = "0.1.0"
