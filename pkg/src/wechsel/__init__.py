"""Initialize token embeddings for a new language from a source-language model."""

__version__ = "0.1.0"

from .bpe import ByteLevelBpe, encode, load_tokenizer, token_surface
from .errors import (
    ConvergenceError,
    DimensionError,
    FormatError,
    NoUsablePairsError,
    TokenizerError,
    WechselError,
)
from .fasttext import FastTextModel, extract_ngrams, fnv1a_hash, load_model, parse_model
from .procrustes import OrthogonalMap, apply_map, build_dictionary_matrices, fit_procrustes, svd
from .subword import (
    SubwordStaticEmbeddings,
    build_occurrence_index,
    compute_subword_embeddings_ngram,
    compute_subword_embeddings_tfr,
)
from .transfer import (
    SimilarityNeighborhood,
    TransferConfig,
    shuffle_initialize,
    top_k_neighbors,
    transinner_initialize,
    wechsel_initialize,
)
from .vectors_io import (
    BilingualDictionary,
    TokenEmbeddingMatrix,
    TokenizerVocab,
    WordVectors,
    load_dictionary,
    load_word_vectors,
    read_matrix,
    write_matrix,
)

__all__ = [
    "__version__",
    "ByteLevelBpe",
    "encode",
    "load_tokenizer",
    "token_surface",
    "ConvergenceError",
    "DimensionError",
    "FormatError",
    "NoUsablePairsError",
    "TokenizerError",
    "WechselError",
    "FastTextModel",
    "extract_ngrams",
    "fnv1a_hash",
    "load_model",
    "parse_model",
    "OrthogonalMap",
    "apply_map",
    "build_dictionary_matrices",
    "fit_procrustes",
    "svd",
    "SubwordStaticEmbeddings",
    "build_occurrence_index",
    "compute_subword_embeddings_ngram",
    "compute_subword_embeddings_tfr",
    "SimilarityNeighborhood",
    "TransferConfig",
    "shuffle_initialize",
    "top_k_neighbors",
    "transinner_initialize",
    "wechsel_initialize",
    "BilingualDictionary",
    "TokenEmbeddingMatrix",
    "TokenizerVocab",
    "WordVectors",
    "load_dictionary",
    "load_word_vectors",
    "read_matrix",
    "write_matrix",
]
