"""Static embeddings for tokenizer subwords, in the word-vector space.

Two constructions:

* n-gram: sum of the fastText bucket vectors of the token's character n-grams;
* TFR (tokenize, flatten, reduce): frequency-weighted mean of the vectors of
  all words whose tokenization contains the token.

A token with no evidence (no n-grams, or never produced by any word) gets a
zero row and ``zero_flag`` set; such tokens fall back to random init later.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import BinaryIO, Optional

import numpy as np
from scipy import sparse

from .bpe import ByteLevelBpe, encode, token_surface
from .errors import TokenizerError
from .fasttext import FastTextModel, extract_ngrams, ngram_bucket
from .vectors_io import MatrixFile, TokenizerVocab, WordVectors, read_matrix_file, write_matrix_file

__all__ = [
    "SubwordStaticEmbeddings",
    "TokenOccurrenceIndex",
    "normalize_surface",
    "token_embedding_ngram",
    "compute_subword_embeddings_ngram",
    "build_occurrence_index",
    "compute_subword_embeddings_tfr",
    "write_subword_embeddings",
    "read_subword_embeddings",
]


@dataclass(frozen=True, eq=False)
class SubwordStaticEmbeddings:
    vocab: TokenizerVocab
    matrix: np.ndarray
    zero_flag: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float32)
        flags = np.asarray(self.zero_flag, dtype=bool)
        if m.ndim != 2 or m.shape[0] != len(self.vocab) or flags.shape != (len(self.vocab),):
            raise ValueError(f"matrix {m.shape} / flags {flags.shape} do not match vocab size {len(self.vocab)}")
        if not np.all(np.isfinite(m)):
            raise ValueError("subword embeddings contain non-finite values")
        if np.any(m[flags]):
            raise ValueError("flagged tokens must have all-zero rows")
        m = m.view()
        m.setflags(write=False)
        flags = flags.view()
        flags.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "zero_flag", flags)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def scaled(self, c: float) -> "SubwordStaticEmbeddings":
        return SubwordStaticEmbeddings(self.vocab, self.matrix * c, self.zero_flag)

    def rotated(self, R: np.ndarray) -> "SubwordStaticEmbeddings":
        """Apply a (d x d) row-vector map; flagged rows stay exactly zero."""
        out = (np.asarray(self.matrix, dtype=np.float64) @ np.asarray(R, dtype=np.float64)).astype(np.float32)
        out[self.zero_flag] = 0.0
        return SubwordStaticEmbeddings(self.vocab, out, self.zero_flag)


def normalize_surface(surface: str, lowercase: bool = False) -> str:
    """Strip one leading space (the word-start marker) and optionally lowercase."""
    if surface.startswith(" "):
        surface = surface[1:]
    return surface.lower() if lowercase else surface


def token_embedding_ngram(model: FastTextModel, surface: str, minn: Optional[int] = None, maxn: Optional[int] = None):
    """Return ``(vector, is_zero)`` for an already-normalized surface string."""
    minn = model.minn if minn is None else minn
    maxn = model.maxn if maxn is None else maxn
    vec = np.zeros(model.dim, dtype=np.float64)
    if not surface:
        return vec, True
    grams = extract_ngrams(surface, minn, maxn)
    for g in grams:
        vec += model.input_matrix[ngram_bucket(model, g)]
    return vec, not grams


def compute_subword_embeddings_ngram(
    vocab: TokenizerVocab,
    tok: ByteLevelBpe,
    model: FastTextModel,
    lowercase: bool = False,
) -> SubwordStaticEmbeddings:
    """n-gram embeddings for every token in ``vocab``.

    Token text is recovered through the byte table, so n-grams run over real
    characters. Rows are summed in float64 and stored as float32.
    """
    indptr = [0]
    indices = []
    flags = np.zeros(len(vocab), dtype=bool)
    bucket_of = {}
    for i, token in enumerate(vocab.tokens):
        try:
            surface = normalize_surface(token_surface(tok, token), lowercase)
        except TokenizerError as e:
            raise TokenizerError(f"token id {i}: {e}") from None
        grams = extract_ngrams(surface, model.minn, model.maxn) if surface else []
        for g in grams:
            b = bucket_of.get(g)
            if b is None:
                b = bucket_of[g] = ngram_bucket(model, g)
            indices.append(b)
        indptr.append(len(indices))
        flags[i] = not grams

    # duplicate column indices within a row are summed by the sparse product
    counts = sparse.csr_matrix(
        (np.ones(len(indices)), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(len(vocab), model.input_matrix.shape[0]),
    )
    used = np.unique(counts.indices)
    rows = np.asarray(model.input_matrix[used], dtype=np.float64)
    remap = np.zeros(model.input_matrix.shape[0], dtype=np.int64)
    remap[used] = np.arange(len(used))
    compact = sparse.csr_matrix((counts.data, remap[counts.indices], counts.indptr), shape=(len(vocab), len(used)))
    matrix = np.asarray(compact @ rows, dtype=np.float64).astype(np.float32)
    matrix[flags] = 0.0
    return SubwordStaticEmbeddings(vocab, matrix, flags)


@dataclass(frozen=True, eq=False)
class TokenOccurrenceIndex:
    """For each token id, the (word index, frequency) pairs of words containing it."""

    entries: tuple

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, token_id):
        return self.entries[token_id]


def build_occurrence_index(words: WordVectors, tok: ByteLevelBpe, prefix_space: bool = True) -> TokenOccurrenceIndex:
    """Tokenize every word and record it once under each distinct token it produces."""
    if words.counts is None:
        raise ValueError("word frequencies are required; attach counts (or uniform counts) first")
    lists = [[] for _ in range(len(tok.vocab))]
    for w_idx, (word, freq) in enumerate(zip(words.words, words.counts)):
        freq = int(freq)
        for t in dict.fromkeys(encode(tok, word, prefix_space=prefix_space)):
            lists[t].append((w_idx, freq))
    return TokenOccurrenceIndex(tuple(tuple(x) for x in lists))


def uniform_counts(words: WordVectors) -> WordVectors:
    return WordVectors(words.words, words.vectors, np.ones(len(words), dtype=np.int64))


def compute_subword_embeddings_tfr(
    index: TokenOccurrenceIndex, words: WordVectors, vocab: TokenizerVocab
) -> SubwordStaticEmbeddings:
    """Frequency-weighted mean of word vectors per token."""
    if len(index) != len(vocab):
        raise ValueError(f"index covers {len(index)} tokens but vocab has {len(vocab)}")
    indptr = [0]
    cols = []
    weights = []
    for entries in index.entries:
        for w_idx, f in entries:
            if w_idx >= len(words):
                raise ValueError(f"word index {w_idx} out of range")
            cols.append(w_idx)
            weights.append(f)
        indptr.append(len(cols))
    S = sparse.csr_matrix(
        (np.asarray(weights, dtype=np.float64), np.asarray(cols, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(len(vocab), len(words)),
    )
    total = np.asarray(S.sum(axis=1)).ravel()
    flags = total <= 0
    summed = np.asarray(S @ np.asarray(words.vectors, dtype=np.float64))
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = summed / total[:, None]
    mean[flags] = 0.0
    return SubwordStaticEmbeddings(vocab, mean.astype(np.float32), flags)


def write_subword_embeddings(emb: SubwordStaticEmbeddings, stream: BinaryIO) -> None:
    write_matrix_file(stream, emb.vocab.tokens, emb.matrix, kind="subword-static", zero_flags=emb.zero_flag)


def read_subword_embeddings(stream: BinaryIO) -> SubwordStaticEmbeddings:
    mf: MatrixFile = read_matrix_file(stream)
    if mf.kind != "subword-static":
        raise ValueError(f"expected kind 'subword-static', got {mf.kind!r}")
    return SubwordStaticEmbeddings(TokenizerVocab(mf.tokens), mf.matrix, mf.zero_flags)
