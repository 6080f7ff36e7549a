"""Model-based quality filtering for multilingual web corpora.

The package covers the full desk-scale loop: building classifier training
sets from curated positives and corpus negatives, training hashed n-gram
and embedding-based scorers, selecting the top-scoring slice of a corpus
under a retention fraction or token budget, n-gram decontamination against
benchmarks, and rank-based comparison of competing filters.
"""

from .corpus_io import (
    CorpusManifest,
    Document,
    read_documents,
    tokenize,
    write_documents,
    ws_token_count,
)
from .errors import (
    ConfigError,
    CorpusFilterError,
    CorpusFormatError,
    DataError,
    EmbeddingFormatError,
    StageError,
    TrainingError,
)
from .scores import ScoreTable
from .selector import (
    SelectionPlan,
    filter_corpus,
    mix_replay,
    plan_selection,
    retention_for_budget,
)
from .trainset import (
    LabeledSample,
    PositiveSource,
    TrainsetSpec,
    build_trainset,
    preprocess_positive,
)
from .ngram_classifier import (
    NgramModel,
    NgramTokenizerConfig,
    TrainConfig,
    featurize,
    prepare_text,
    score_ngram,
    train_ngram,
)
from .ngram_scoring import NgramScorer
from .embeddings import (
    EmbeddingMatrix,
    align,
    iter_embeddings,
    read_embeddings,
    write_embeddings,
)
from .mlp import MlpConfig, MlpModel, mlp_forward, score_mlp, train_mlp
from .cosine import ReferenceSet, build_reference_set, score_cosine
from .decontam import (
    BenchmarkSource,
    DecontReport,
    NgramIndex,
    build_index,
    decontaminate,
    normalize_for_ngrams,
)
from .analytics import (
    LengthStats,
    MetricTable,
    average_rank,
    compare_filters,
    length_stats,
)

__version__ = "0.1.0"
