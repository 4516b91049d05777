"""Initialize target-language token embeddings from a source embedding matrix.

``wechsel_initialize`` sets each target token to a softmax-weighted mean of
the source embeddings of its k most similar source tokens. Similarity is the
cosine between static subword embeddings computed in a shared, aligned space.
Target tokens without static evidence draw from a normal distribution
matched to the per-dimension moments of the source matrix.

The ``transinner`` and ``shuffle`` baselines use the same sampling
machinery. Random draws are keyed by (seed, target token id), so results do
not depend on thread count or evaluation order.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Optional

import numpy as np

from .errors import DimensionError, FormatError
from .subword import SubwordStaticEmbeddings
from .vectors_io import TokenEmbeddingMatrix, TokenizerVocab

__all__ = [
    "TransferConfig",
    "SimilarityNeighborhood",
    "resolve_threads",
    "cosine",
    "top_k_neighbors",
    "softmax_weights",
    "moment_matched_normal",
    "wechsel_initialize",
    "transinner_initialize",
    "shuffle_assignment",
    "shuffle_initialize",
    "write_neighborhood_text",
    "read_neighborhood_text",
]

FALLBACKS = ("moment-matched-normal",)
BLOCK_ROWS = 256

# domain tags in the Philox counter keep the per-method random streams disjoint
_DOMAIN_NORMAL = 1
_DOMAIN_SHUFFLE = 2
_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class TransferConfig:
    k: int = 10
    tau: float = 0.1
    seed: int = 42
    fallback: str = "moment-matched-normal"

    def __post_init__(self):
        if isinstance(self.k, bool) or not isinstance(self.k, (int, np.integer)) or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        if not (isinstance(self.tau, (int, float)) and math.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"tau must be a finite positive number, got {self.tau!r}")
        if not 0 <= int(self.seed) <= _U64:
            raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {self.seed!r}")
        if self.fallback not in FALLBACKS:
            raise ValueError(f"unknown fallback {self.fallback!r}; choose from {FALLBACKS}")


def resolve_threads(threads: Optional[int] = None) -> int:
    """Explicit value, else ``WECHSEL_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get("WECHSEL_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError(f"thread count must be >= 1, got {threads}")
    return threads


def _map_blocks(fn, n_rows: int, threads: Optional[int], block_rows: int = BLOCK_ROWS) -> None:
    # block boundaries never depend on the thread count
    starts = range(0, n_rows, block_rows)
    threads = resolve_threads(threads)
    if threads == 1 or len(starts) <= 1:
        for s in starts:
            fn(s, min(s + block_rows, n_rows))
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(lambda s: fn(s, min(s + block_rows, n_rows)), starts))


# --------------------------------------------------------------------------
# similarity


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine is undefined for zero vectors")
    return float(np.clip((u @ v) / (nu * nv), -1.0, 1.0))


@dataclass(frozen=True, eq=False)
class SimilarityNeighborhood:
    """Top-k source neighbours per target token.

    ``ids[i, :lengths[i]]`` are source token ids sorted by descending score
    (ties: lower id first); padding is ``-1`` in ``ids`` and ``nan`` in
    ``scores``. Every row has either 0 entries (no usable static vector) or
    ``min(k, usable source tokens)`` entries.
    """

    ids: np.ndarray
    scores: np.ndarray
    lengths: np.ndarray
    source_vocab: TokenizerVocab
    target_vocab: TokenizerVocab

    def __len__(self):
        return len(self.lengths)

    def row(self, i: int) -> list:
        n = int(self.lengths[i])
        return [(int(j), float(s)) for j, s in zip(self.ids[i, :n], self.scores[i, :n])]

    @property
    def empty(self) -> np.ndarray:
        return self.lengths == 0


def _usable(emb: SubwordStaticEmbeddings):
    m = np.asarray(emb.matrix, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    ok = ~emb.zero_flag & (norms > 0)
    unit = np.zeros_like(m)
    unit[ok] = m[ok] / norms[ok, None]
    return ok, unit


def _sorted_topk(sims: np.ndarray, kk: int):
    """Exact top-``kk`` column positions per row, ordered by (-score, position)."""
    n_rows, n_cols = sims.shape
    if kk == n_cols:
        pos = np.empty((n_rows, kk), dtype=np.int64)
        cols = np.arange(n_cols)
        for r in range(n_rows):
            pos[r] = np.lexsort((cols, -sims[r]))
        return pos
    part = np.argpartition(sims, n_cols - kk, axis=1)[:, n_cols - kk:]
    vals = np.take_along_axis(sims, part, axis=1)
    kth = vals.min(axis=1)
    n_ge = np.count_nonzero(sims >= kth[:, None], axis=1)
    pos = np.empty((n_rows, kk), dtype=np.int64)
    for r in range(n_rows):
        if n_ge[r] > kk:
            # ties straddle the cut: take the lowest positions among tied values
            cand = np.flatnonzero(sims[r] >= kth[r])
            order = np.lexsort((cand, -sims[r, cand]))[:kk]
            pos[r] = cand[order]
        else:
            p = part[r]
            pos[r] = p[np.lexsort((p, -vals[r]))]
    return pos


def top_k_neighbors(
    tgt: SubwordStaticEmbeddings,
    src: SubwordStaticEmbeddings,
    k: int,
    threads: Optional[int] = None,
    block_rows: int = BLOCK_ROWS,
) -> SimilarityNeighborhood:
    """Exact top-k cosine neighbours among source tokens for every target token.

    Flagged or zero-norm source tokens are never candidates; flagged target
    tokens get empty neighbourhoods. Similarities come from blocked float64
    products of unit-normalized rows.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if tgt.dim != src.dim:
        raise DimensionError(f"target static dim {tgt.dim} != source static dim {src.dim}")
    src_ok, src_unit = _usable(src)
    cand = np.flatnonzero(src_ok)
    if cand.size == 0:
        raise ValueError("no source token has a usable static embedding")
    S = np.ascontiguousarray(src_unit[cand])
    del src_unit
    tgt_ok, tgt_unit = _usable(tgt)
    n_tgt = len(tgt.vocab)
    kk = min(k, cand.size)

    ids = np.full((n_tgt, kk), -1, dtype=np.int64)
    scores = np.full((n_tgt, kk), np.nan, dtype=np.float64)
    lengths = np.where(tgt_ok, kk, 0).astype(np.int64)

    def work(start, stop):
        rows = np.flatnonzero(tgt_ok[start:stop]) + start
        if rows.size == 0:
            return
        sims = tgt_unit[rows] @ S.T
        np.clip(sims, -1.0, 1.0, out=sims)
        pos = _sorted_topk(sims, kk)
        ids[rows] = cand[pos]
        scores[rows] = np.take_along_axis(sims, pos, axis=1)

    _map_blocks(work, n_tgt, threads, block_rows)
    return SimilarityNeighborhood(ids, scores, lengths, src.vocab, tgt.vocab)


def softmax_weights(scores, tau: float) -> np.ndarray:
    """``exp(s_i / tau - max(s) / tau)``, normalized to sum to one."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("softmax over an empty score vector")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    e = np.exp(s / tau - s.max() / tau)
    return e / e.sum()


# --------------------------------------------------------------------------
# initializers


def moment_matched_normal(E_src: TokenEmbeddingMatrix):
    """Per-dimension mean and standard deviation of the source rows."""
    E = np.asarray(E_src.matrix, dtype=np.float64)
    if E.shape[0] == 0:
        raise ValueError("source embedding matrix is empty")
    return E.mean(axis=0), E.std(axis=0)


def _row_stream(seed: int, token_id: int, domain: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed) & _U64, int(token_id)], counter=[0, 0, 0, domain]))


def _sample_rows(token_ids: Iterable[int], mu: np.ndarray, sigma: np.ndarray, seed: int) -> np.ndarray:
    token_ids = list(token_ids)
    out = np.empty((len(token_ids), mu.shape[0]), dtype=np.float64)
    for r, t in enumerate(token_ids):
        out[r] = mu + sigma * _row_stream(seed, t, _DOMAIN_NORMAL).standard_normal(mu.shape[0])
    return out


def wechsel_initialize(
    E_src: TokenEmbeddingMatrix,
    nbh: SimilarityNeighborhood,
    cfg: TransferConfig = TransferConfig(),
    threads: Optional[int] = None,
) -> TokenEmbeddingMatrix:
    """Target embeddings as softmax(score / tau)-weighted means of neighbour rows."""
    n_src = len(E_src)
    if len(nbh.source_vocab) != n_src:
        raise DimensionError(f"neighbourhood indexes {len(nbh.source_vocab)} source tokens, matrix has {n_src}")
    valid = nbh.ids[nbh.ids >= 0]
    if valid.size and valid.max() >= n_src:
        raise ValueError(f"neighbour id {int(valid.max())} out of range for {n_src} source rows")
    E = np.asarray(E_src.matrix, dtype=np.float64)
    mu, sigma = moment_matched_normal(E_src)
    n_tgt = len(nbh)
    out = np.empty((n_tgt, E.shape[1]), dtype=np.float32)
    tau = cfg.tau

    def work(start, stop):
        ids = nbh.ids[start:stop]
        lengths = nbh.lengths[start:stop]
        has = lengths > 0
        block = np.zeros((stop - start, E.shape[1]), dtype=np.float64)
        if has.any():
            s = nbh.scores[start:stop][has]
            mask = ~np.isnan(s)
            s_max = np.where(mask, s, -np.inf).max(axis=1, keepdims=True)
            w = np.where(mask, np.exp(np.where(mask, s, 0.0) / tau - s_max / tau), 0.0)
            w /= w.sum(axis=1, keepdims=True)
            sel = ids[has]
            acc = np.zeros((sel.shape[0], E.shape[1]), dtype=np.float64)
            for j in range(sel.shape[1]):
                acc += w[:, j, None] * E[np.maximum(sel[:, j], 0)]
            block[has] = acc
        empty = np.flatnonzero(~has)
        if empty.size:
            block[empty] = _sample_rows(empty + start, mu, sigma, cfg.seed)
        out[start:stop] = block

    _map_blocks(work, n_tgt, threads)
    return TokenEmbeddingMatrix(nbh.target_vocab, out)


def transinner_initialize(
    target_vocab: TokenizerVocab,
    E_src: TokenEmbeddingMatrix,
    cfg: TransferConfig = TransferConfig(),
    threads: Optional[int] = None,
) -> TokenEmbeddingMatrix:
    """Every row drawn from the moment-matched normal of ``E_src``."""
    mu, sigma = moment_matched_normal(E_src)
    out = np.empty((len(target_vocab), E_src.dim), dtype=np.float32)

    def work(start, stop):
        out[start:stop] = _sample_rows(range(start, stop), mu, sigma, cfg.seed)

    _map_blocks(work, len(target_vocab), threads)
    return TokenEmbeddingMatrix(target_vocab, out)


def shuffle_assignment(n_source: int, n_target: int, seed: int) -> np.ndarray:
    """Source row copied into each target row, drawn uniformly with replacement."""
    if n_source < 1:
        raise ValueError("source matrix has no rows")
    return np.fromiter(
        (_row_stream(seed, t, _DOMAIN_SHUFFLE).integers(0, n_source) for t in range(n_target)),
        dtype=np.int64,
        count=n_target,
    )


def shuffle_initialize(
    E_src: TokenEmbeddingMatrix,
    target_vocab: TokenizerVocab,
    cfg: TransferConfig = TransferConfig(),
    threads: Optional[int] = None,
) -> TokenEmbeddingMatrix:
    assignment = shuffle_assignment(len(E_src), len(target_vocab), cfg.seed)
    return TokenEmbeddingMatrix(target_vocab, E_src.matrix[assignment])


# --------------------------------------------------------------------------
# neighbourhood text export

_ESCAPES = {"\\": "\\\\", "\n": "\\n", "\t": "\\t", ",": "\\,", ":": "\\:"}
_UNESCAPES = {"\\": "\\", "n": "\n", "t": "\t", ",": ",", ":": ":"}


def _esc(token: str) -> str:
    return "".join(_ESCAPES.get(c, c) for c in token)


def _split_escaped(text: str, sep: str) -> list:
    """Split on unescaped ``sep`` and unescape each part."""
    parts, cur = [], []
    i = 0
    while i < len(text):
        c = text[i]
        if c == "\\":
            nxt = text[i + 1:i + 2]
            if nxt not in _UNESCAPES:
                raise FormatError(f"invalid escape in {text!r}")
            cur.append("\\" + nxt)
            i += 2
            continue
        if c == sep:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(c)
        i += 1
    parts.append("".join(cur))
    return parts


def _unesc(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        if text[i] == "\\":
            out.append(_UNESCAPES[text[i + 1]])
            i += 2
        else:
            out.append(text[i])
            i += 1
    return "".join(out)


def write_neighborhood_text(nbh: SimilarityNeighborhood, stream: BinaryIO) -> None:
    """One line per target token: ``tgt<TAB>src:score,src:score,...``."""
    src_tokens = nbh.source_vocab.tokens
    for i, tok in enumerate(nbh.target_vocab.tokens):
        entries = ",".join(f"{_esc(src_tokens[j])}:{s!r}" for j, s in nbh.row(i))
        stream.write(f"{_esc(tok)}\t{entries}\n".encode("utf-8"))


def read_neighborhood_text(stream: BinaryIO) -> SimilarityNeighborhood:
    """Parse the text export. The source vocabulary is rebuilt from first appearance."""
    tgt_tokens = []
    rows = []
    src_ids = {}
    for lineno, raw in enumerate(stream, start=1):
        try:
            line = raw.decode("utf-8").rstrip("\n")
        except UnicodeDecodeError:
            raise FormatError(f"line {lineno}: invalid UTF-8") from None
        fields = _split_escaped(line, "\t")
        if len(fields) != 2:
            raise FormatError(f"line {lineno}: expected 'target<TAB>neighbours'")
        tgt_tokens.append(_unesc(fields[0]))
        row = []
        if fields[1]:
            for item in _split_escaped(fields[1], ","):
                parts = _split_escaped(item, ":")
                if len(parts) != 2:
                    raise FormatError(f"line {lineno}: malformed entry {item!r}")
                try:
                    score = float(parts[1])
                except ValueError:
                    raise FormatError(f"line {lineno}: bad score {parts[1]!r}") from None
                tok = _unesc(parts[0])
                row.append((src_ids.setdefault(tok, len(src_ids)), score))
        rows.append(row)
    width = max((len(r) for r in rows), default=0)
    ids = np.full((len(rows), width), -1, dtype=np.int64)
    scores = np.full((len(rows), width), np.nan)
    for i, r in enumerate(rows):
        for j, (sid, s) in enumerate(r):
            ids[i, j], scores[i, j] = sid, s
    lengths = np.array([len(r) for r in rows], dtype=np.int64)
    try:
        tgt_vocab = TokenizerVocab(tuple(tgt_tokens))
    except ValueError as e:
        raise FormatError(str(e)) from None
    return SimilarityNeighborhood(ids, scores, lengths, TokenizerVocab(tuple(src_ids)), tgt_vocab)
