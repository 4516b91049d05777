"""Checks that need no language-model training.

* a synthetic two-language fixture with a known token correspondence, used to
  measure how well each initializer recovers the oracle embedding matrix;
* bilingual lexicon induction precision@1 for the word-vector alignment;
* a small random sample of target tokens with their closest source token.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, NoUsablePairsError
from .procrustes import OrthogonalMap, build_dictionary_matrices, fit_procrustes
from .subword import SubwordStaticEmbeddings
from .transfer import (
    SimilarityNeighborhood,
    TransferConfig,
    shuffle_initialize,
    top_k_neighbors,
    transinner_initialize,
    wechsel_initialize,
)
from .vectors_io import BilingualDictionary, TokenEmbeddingMatrix, TokenizerVocab, WordVectors

__all__ = [
    "SyntheticPair",
    "TrialResult",
    "BliResult",
    "generate_synthetic_pair",
    "random_rotation",
    "top1_recovery",
    "bli_precision_at_1",
    "nearest_report",
    "nearest_rows",
    "init_quality",
    "run_synthetic_trial",
    "metric_json",
]


def random_rotation(rng: np.random.Generator, d: int) -> np.ndarray:
    """Haar-distributed d x d rotation (determinant +1) from a QR factorization."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _unit_rows(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class SyntheticPair:
    source: SubwordStaticEmbeddings
    target: SubwordStaticEmbeddings
    permutation: np.ndarray  # target token i corresponds to source token permutation[i]
    E_src: TokenEmbeddingMatrix
    E_oracle: TokenEmbeddingMatrix
    dictionary: BilingualDictionary  # (source token, target token) pairs
    rotation: np.ndarray  # target rows = source rows @ rotation (+ noise)
    noise: float
    seed: int

    def source_words(self) -> WordVectors:
        return WordVectors(self.source.vocab.tokens, self.source.matrix)

    def target_words(self) -> WordVectors:
        return WordVectors(self.target.vocab.tokens, self.target.matrix)


def generate_synthetic_pair(
    seed: int, V: int, d: int, m: int, noise: float, n_dict: int = 200
) -> SyntheticPair:
    if V < 2:
        raise ValueError("need at least two tokens")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    u = _unit_rows(rng.standard_normal((V, d)))
    rotation = random_rotation(rng, d)
    perm = rng.permutation(V)
    eps = rng.standard_normal((V, d)) * noise
    t = _unit_rows(u[perm] @ rotation + eps)
    E_src = rng.standard_normal((V, m)).astype(np.float32)
    dict_ids = rng.choice(V, size=min(n_dict, V), replace=False)

    src_vocab = TokenizerVocab(tuple(f"s{i}" for i in range(V)))
    tgt_vocab = TokenizerVocab(tuple(f"t{i}" for i in range(V)))
    no_flags = np.zeros(V, dtype=bool)
    return SyntheticPair(
        source=SubwordStaticEmbeddings(src_vocab, u.astype(np.float32), no_flags),
        target=SubwordStaticEmbeddings(tgt_vocab, t.astype(np.float32), no_flags),
        permutation=perm,
        E_src=TokenEmbeddingMatrix(src_vocab, E_src),
        E_oracle=TokenEmbeddingMatrix(tgt_vocab, E_src[perm]),
        dictionary=BilingualDictionary(tuple((f"s{perm[i]}", f"t{i}") for i in dict_ids)),
        rotation=rotation,
        noise=float(noise),
        seed=seed,
    )


def top1_recovery(nbh: SimilarityNeighborhood, permutation) -> float:
    """Fraction of target tokens whose best source neighbour is the true counterpart."""
    perm = np.asarray(permutation)
    if len(perm) != len(nbh):
        raise DimensionError(f"permutation has {len(perm)} entries for {len(nbh)} target tokens")
    if len(perm) == 0:
        return 0.0
    hit = (nbh.lengths > 0) & (nbh.ids[:, 0] == perm) if nbh.ids.shape[1] else np.zeros(len(perm), bool)
    return float(np.mean(hit))


def init_quality(E_candidate, E_oracle) -> float:
    """Mean row-wise cosine between two matrices; rows with a zero side score 0."""
    a = np.asarray(getattr(E_candidate, "matrix", E_candidate), dtype=np.float64)
    b = np.asarray(getattr(E_oracle, "matrix", E_oracle), dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.shape[0] == 0:
        return 0.0
    denom = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    dots = np.einsum("ij,ij->i", a, b)
    cos = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
    return float(np.clip(cos, -1.0, 1.0).mean())


@dataclass(frozen=True)
class BliResult:
    value: float
    n: int


def _as_static(wv: WordVectors) -> SubwordStaticEmbeddings:
    flags = ~np.any(wv.vectors != 0, axis=1)
    return SubwordStaticEmbeddings(TokenizerVocab(wv.words), wv.vectors, flags)


def bli_precision_at_1(
    src: WordVectors,
    tgt_aligned: WordVectors,
    heldout: BilingualDictionary,
    threads: Optional[int] = None,
) -> BliResult:
    """Share of held-out (source, target) pairs where the target word's nearest
    source word by cosine is the listed source word.

    Only pairs with both words in vocabulary count; ``n`` is their number.
    """
    s_index, t_index = src.index, tgt_aligned.index
    pairs = [(s_index[s], t_index[t]) for s, t in heldout if s in s_index and t in t_index]
    if not pairs:
        raise NoUsablePairsError("no held-out pair has both words in vocabulary")
    queries = sorted({t for _, t in pairs})
    q_vectors = WordVectors(tuple(tgt_aligned.words[i] for i in queries), tgt_aligned.vectors[queries])
    nbh = top_k_neighbors(_as_static(q_vectors), _as_static(src), 1, threads=threads)
    best = {t: (int(nbh.ids[r, 0]) if nbh.lengths[r] else -1) for r, t in enumerate(queries)}
    hits = sum(best[t] == s for s, t in pairs)
    return BliResult(hits / len(pairs), len(pairs))


def nearest_rows(nbh: SimilarityNeighborhood, n: int = 10, seed: int = 0) -> list:
    """``(target id, best source id or None, score or None)`` for ``n`` sampled target tokens.

    ``n`` is clamped to the vocabulary size; the sample depends only on ``seed``.
    """
    n = max(0, min(int(n), len(nbh)))
    if n == 0:
        return []
    picks = np.random.default_rng(seed).choice(len(nbh), size=n, replace=False)
    rows = []
    for i in picks.tolist():
        if nbh.lengths[i] == 0:
            rows.append((i, None, None))
        else:
            rows.append((i, int(nbh.ids[i, 0]), float(nbh.scores[i, 0])))
    return rows


_CELL_ESCAPES = str.maketrans({"\t": "\\t", "\n": "\\n", "\r": "\\r"})


def nearest_report(
    nbh: SimilarityNeighborhood,
    src_vocab: Optional[TokenizerVocab] = None,
    tgt_vocab: Optional[TokenizerVocab] = None,
    n: int = 10,
    seed: int = 0,
    display: Callable[[str], str] = lambda t: t,
) -> str:
    """Tab-separated lines ``target, closest source, score`` for ``n`` random target tokens.

    Tabs and line breaks inside displayed tokens are written as ``\\t``, ``\\n``, ``\\r``.
    """
    src_vocab = src_vocab or nbh.source_vocab
    tgt_vocab = tgt_vocab or nbh.target_vocab

    def cell(token: str) -> str:
        return display(token).translate(_CELL_ESCAPES)

    lines = []
    for t, s, score in nearest_rows(nbh, n, seed):
        if s is None:
            lines.append(f"{cell(tgt_vocab[t])}\t<random init>\t-")
        else:
            lines.append(f"{cell(tgt_vocab[t])}\t{cell(src_vocab[s])}\t{score:.4f}")
    return "".join(line + "\n" for line in lines)


def metric_json(metric: str, value: float, n: int, **extra) -> str:
    return json.dumps({"metric": metric, "value": value, "n": n, **extra}, sort_keys=False)


@dataclass(frozen=True)
class TrialResult:
    seed: int
    noise: float
    top1_recovery: float
    wechsel: float
    transinner: float
    shuffle: float
    bli_precision_at_1: float
    dictionary_pairs: int

    @property
    def ordering_holds(self) -> bool:
        return self.wechsel > self.transinner and self.wechsel > self.shuffle

    def as_dict(self) -> dict:
        return asdict(self)


def run_synthetic_trial(pair: SyntheticPair, cfg: TransferConfig = TransferConfig(), threads=None) -> TrialResult:
    """Align with Procrustes on the fixture's dictionary, then score all three initializers."""
    src_words, tgt_words = pair.source_words(), pair.target_words()
    dm = build_dictionary_matrices(src_words, tgt_words, pair.dictionary)
    R: OrthogonalMap = fit_procrustes(dm.X, dm.Y)
    aligned = pair.target.rotated(R.matrix)
    nbh = top_k_neighbors(aligned, pair.source, cfg.k, threads=threads)
    e_w = wechsel_initialize(pair.E_src, nbh, cfg, threads=threads)
    e_t = transinner_initialize(pair.target.vocab, pair.E_src, cfg, threads=threads)
    e_s = shuffle_initialize(pair.E_src, pair.target.vocab, cfg)
    aligned_words = WordVectors(aligned.vocab.tokens, aligned.matrix)
    bli = bli_precision_at_1(src_words, aligned_words, pair.dictionary, threads=threads)
    return TrialResult(
        seed=pair.seed,
        noise=pair.noise,
        top1_recovery=top1_recovery(nbh, pair.permutation),
        wechsel=init_quality(e_w, pair.E_oracle),
        transinner=init_quality(e_t, pair.E_oracle),
        shuffle=init_quality(e_s, pair.E_oracle),
        bli_precision_at_1=bli.value,
        dictionary_pairs=dm.used,
    )
