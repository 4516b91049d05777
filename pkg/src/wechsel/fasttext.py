"""Reader for fastText ``.bin`` models and character n-gram lookup.

Only the input matrix is kept: rows ``[0, nwords)`` are word vectors and rows
``[nwords, nwords + bucket)`` are hashed n-gram buckets.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from functools import cached_property
from typing import BinaryIO, Optional

import numpy as np

from .errors import FormatError
from .vectors_io import WordVectors

__all__ = [
    "FASTTEXT_MAGIC",
    "FASTTEXT_VERSION",
    "FastTextArgs",
    "FastTextModel",
    "fnv1a_hash",
    "fasttext_hash",
    "extract_ngrams",
    "ngram_bucket",
    "ngram_vector",
    "parse_model",
    "load_model",
    "model_word_vectors",
]

FASTTEXT_MAGIC = 793712314
FASTTEXT_VERSION = 12

_FNV_OFFSET = 2166136261
_FNV_PRIME = 16777619
_MASK32 = 0xFFFFFFFF

_ARGS_FMT = "<12id"
_ARGS_FIELDS = (
    "dim", "ws", "epoch", "min_count", "neg", "word_ngrams", "loss", "model",
    "bucket", "minn", "maxn", "lr_update_rate", "t",
)


def fnv1a_hash(data: bytes) -> int:
    """32-bit FNV-1a over ``data``."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK32
    return h


def fasttext_hash(data: bytes) -> int:
    """FNV-1a as fastText computes it.

    fastText XORs each byte after widening it as a *signed* char, so bytes
    >= 0x80 contribute ``0xFFFFFF00 | b``. Identical to :func:`fnv1a_hash`
    on ASCII input; only non-ASCII n-grams differ.
    """
    h = _FNV_OFFSET
    for b in data:
        if b & 0x80:
            b |= 0xFFFFFF00
        h = ((h ^ b) * _FNV_PRIME) & _MASK32
    return h


def extract_ngrams(word: str, minn: int, maxn: int) -> list:
    """Character n-grams of ``"<" + word + ">"``.

    Ordered by start position, then by increasing length. Lengths count
    Unicode scalar values. Duplicates are kept.
    """
    wrapped = f"<{word}>"
    n = len(wrapped)
    grams = []
    for i in range(n):
        for length in range(minn, maxn + 1):
            if i + length > n:
                break
            grams.append(wrapped[i:i + length])
    return grams


@dataclass(frozen=True)
class FastTextArgs:
    dim: int
    ws: int
    epoch: int
    min_count: int
    neg: int
    word_ngrams: int
    loss: int
    model: int
    bucket: int
    minn: int
    maxn: int
    lr_update_rate: int
    t: float


@dataclass(frozen=True, eq=False)
class FastTextModel:
    args: FastTextArgs
    version: int
    words: tuple
    counts: np.ndarray
    ntokens: int
    input_matrix: np.ndarray

    def __post_init__(self):
        a = self.args
        if not 0 < a.minn <= a.maxn:
            raise FormatError(f"invalid n-gram bounds minn={a.minn} maxn={a.maxn}")
        if a.bucket <= 0:
            raise FormatError("bucket count must be positive")
        rows, cols = self.input_matrix.shape
        if rows != len(self.words) + a.bucket:
            raise FormatError(f"input matrix has {rows} rows, expected nwords + bucket = {len(self.words) + a.bucket}")
        if cols != a.dim:
            raise FormatError(f"input matrix has {cols} columns but dim = {a.dim}")

    @property
    def dim(self) -> int:
        return self.args.dim

    @property
    def minn(self) -> int:
        return self.args.minn

    @property
    def maxn(self) -> int:
        return self.args.maxn

    @property
    def bucket(self) -> int:
        return self.args.bucket

    @property
    def nwords(self) -> int:
        return len(self.words)

    @cached_property
    def word_index(self) -> dict:
        return {w: i for i, w in enumerate(self.words)}


def ngram_bucket(model: FastTextModel, gram: str) -> int:
    """Row of ``model.input_matrix`` holding the vector for ``gram``."""
    return model.nwords + fasttext_hash(gram.encode("utf-8")) % model.bucket


def ngram_vector(model: FastTextModel, gram: str) -> np.ndarray:
    return model.input_matrix[ngram_bucket(model, gram)]


class _Reader:
    """Buffered little-endian reader that reports truncation as FormatError."""

    def __init__(self, stream: BinaryIO, chunk: int = 1 << 20):
        self.stream = stream
        self.chunk = chunk
        self.buf = b""
        self.pos = 0
        self.offset = 0  # absolute offset of buf[0]

    def _fill(self, need: int) -> None:
        while len(self.buf) - self.pos < need:
            more = self.stream.read(max(self.chunk, need))
            if not more:
                raise FormatError(f"truncated model file at byte {self.offset + len(self.buf)}")
            self.offset += self.pos
            self.buf = self.buf[self.pos:] + more
            self.pos = 0

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        self._fill(size)
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def cstring(self) -> bytes:
        while True:
            end = self.buf.find(b"\0", self.pos)
            if end >= 0:
                s = self.buf[self.pos:end]
                self.pos = end + 1
                return s
            self._fill(len(self.buf) - self.pos + 1)

    def tell(self) -> int:
        return self.offset + self.pos

    def read_into(self, out: np.ndarray) -> None:
        view = memoryview(out).cast("B")
        have = min(len(self.buf) - self.pos, len(view))
        view[:have] = self.buf[self.pos:self.pos + have]
        self.pos += have
        filled = have
        while filled < len(view):
            n = self.stream.readinto(view[filled:])
            if not n:
                raise FormatError(f"truncated input matrix: {filled} of {len(view)} bytes")
            filled += n
            self.offset += n


def _parse_header(r: _Reader):
    magic, version = r.unpack("<ii")
    if magic != FASTTEXT_MAGIC:
        raise FormatError(f"not a fastText model: magic {magic}, expected {FASTTEXT_MAGIC}")
    if version > FASTTEXT_VERSION:
        raise FormatError(f"unsupported fastText version {version} (max {FASTTEXT_VERSION})")
    args = FastTextArgs(**dict(zip(_ARGS_FIELDS, r.unpack(_ARGS_FMT))))
    if args.dim <= 0:
        raise FormatError(f"invalid dim {args.dim}")

    size, nwords, nlabels = r.unpack("<iii")
    ntokens, pruneidx_size = r.unpack("<qq")
    if nlabels > 0:
        raise FormatError("supervised models with labels are not supported")
    if pruneidx_size > 0:
        raise FormatError("pruned fastText dictionaries are not supported")
    if not 0 <= nwords <= size:
        raise FormatError(f"invalid dictionary sizes size={size} nwords={nwords}")
    words = []
    counts = np.empty(size, dtype=np.int64)
    for i in range(size):
        raw = r.cstring()
        count, entry_type = r.unpack("<qb")
        if entry_type != 0:
            raise FormatError(f"dictionary entry {i} has type {entry_type}; only words are supported")
        try:
            words.append(raw.decode("utf-8"))
        except UnicodeDecodeError:
            raise FormatError(f"dictionary entry {i} is not valid UTF-8") from None
        counts[i] = count
    if size != nwords:
        raise FormatError(f"dictionary holds {size} entries but nwords = {nwords}")

    (quantized,) = r.unpack("<B")
    if quantized:
        raise FormatError("quantized models unsupported")
    rows, cols = r.unpack("<qq")
    if rows < 0 or cols != args.dim:
        raise FormatError(f"input matrix shape ({rows}, {cols}) inconsistent with dim {args.dim}")
    return version, args, tuple(words), counts, ntokens, rows, cols


def parse_model(stream: BinaryIO) -> FastTextModel:
    """Parse a fastText ``.bin`` stream, keeping only the input matrix."""
    r = _Reader(stream)
    version, args, words, counts, ntokens, rows, cols = _parse_header(r)
    matrix = np.empty((rows, cols), dtype="<f4")
    r.read_into(matrix)
    matrix.setflags(write=False)
    return FastTextModel(args, version, words, counts, ntokens, matrix)


def load_model(path, mmap: bool = False) -> FastTextModel:
    """Load a ``.bin`` file; ``mmap=True`` maps the input matrix instead of reading it."""
    with open(path, "rb") as f:
        if not mmap:
            return parse_model(f)
        r = _Reader(f, chunk=1 << 16)
        version, args, words, counts, ntokens, rows, cols = _parse_header(r)
        offset = r.tell()
    if os.path.getsize(path) < offset + rows * cols * 4:
        raise FormatError("truncated input matrix")
    matrix = np.memmap(path, dtype="<f4", mode="r", offset=offset, shape=(rows, cols))
    return FastTextModel(args, version, words, counts, ntokens, matrix)


def model_word_vectors(model: FastTextModel, limit: Optional[int] = None) -> WordVectors:
    """fastText-runtime word vectors with the model's word counts attached.

    Each in-vocabulary word vector is the mean of its own row and its n-gram
    bucket rows, which is what fastText reports for known words.
    """
    from scipy import sparse

    n = model.nwords if limit is None else min(limit, model.nwords)
    indptr = [0]
    indices = []
    data = []
    for i in range(n):
        rows = [i] + [ngram_bucket(model, g) for g in extract_ngrams(model.words[i], model.minn, model.maxn)]
        indices.extend(rows)
        data.extend([1.0 / len(rows)] * len(rows))
        indptr.append(len(indices))
    weights = sparse.csr_matrix(
        (np.asarray(data, dtype=np.float32), indices, indptr), shape=(n, model.input_matrix.shape[0])
    )
    # float32 on both sides so the (possibly memory-mapped) matrix is never copied
    vecs = np.asarray(weights @ model.input_matrix, dtype=np.float32)
    return WordVectors(model.words[:n], vecs, model.counts[:n])
