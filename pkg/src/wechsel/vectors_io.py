"""On-disk formats: text word vectors, bilingual dictionaries, token vocabularies
and the binary embedding-matrix format.

All readers take binary streams (``open(path, "rb")`` or ``io.BytesIO``) so the
byte layout is under our control rather than the platform's newline handling.

Binary matrix layout::

    {"vocab_size": V, "dim": d, "dtype": "f32", "order": "row-major"}\\n
    token_0\\n
    ...
    token_{V-1}\\n
    [zero-flag line of V '0'/'1' characters, only when kind == "subword-static"]
    V*d little-endian float32 values

Tokens escape ``\\`` as ``\\\\`` and newline as ``\\n``.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import BinaryIO, Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import FormatError

__all__ = [
    "WordVectors",
    "BilingualDictionary",
    "TokenizerVocab",
    "TokenEmbeddingMatrix",
    "MatrixFile",
    "load_word_vectors",
    "write_word_vectors",
    "load_dictionary",
    "write_dictionary",
    "load_frequencies",
    "write_matrix",
    "read_matrix",
    "write_matrix_file",
    "read_matrix_file",
    "write_matrix_text",
    "escape_token",
    "unescape_token",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    v = a.view()
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class WordVectors:
    """Static word embeddings, one row per word, with optional frequencies."""

    words: tuple
    vectors: np.ndarray
    counts: Optional[np.ndarray] = None

    def __post_init__(self):
        words = tuple(self.words)
        vectors = np.asarray(self.vectors)
        if vectors.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {vectors.shape}")
        if vectors.shape[0] != len(words):
            raise ValueError(f"{len(words)} words but {vectors.shape[0]} vector rows")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("word vectors contain non-finite values")
        if len(set(words)) != len(words):
            seen = set()
            for w in words:
                if w in seen:
                    raise ValueError(f"duplicate word {w!r}")
                seen.add(w)
        counts = self.counts
        if counts is not None:
            counts = np.asarray(counts, dtype=np.int64)
            if counts.shape != (len(words),):
                raise ValueError(f"{len(words)} words but {counts.shape[0]} counts")
            if np.any(counts < 0):
                raise ValueError("word counts must be non-negative")
            counts = _readonly(counts)
        object.__setattr__(self, "words", words)
        object.__setattr__(self, "vectors", _readonly(vectors))
        object.__setattr__(self, "counts", counts)

    def __len__(self):
        return len(self.words)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @cached_property
    def index(self) -> dict:
        return {w: i for i, w in enumerate(self.words)}

    def with_counts(self, freqs: Mapping[str, int], default: int = 0) -> "WordVectors":
        """Attach frequencies by word; words missing from ``freqs`` get ``default``."""
        counts = np.fromiter((freqs.get(w, default) for w in self.words), dtype=np.int64, count=len(self.words))
        return WordVectors(self.words, self.vectors, counts)


@dataclass(frozen=True)
class BilingualDictionary:
    """Ordered (source word, target word) pairs; duplicates kept as read."""

    pairs: tuple

    def __post_init__(self):
        pairs = tuple((str(s), str(t)) for s, t in self.pairs)
        for s, t in pairs:
            if not s or not t:
                raise ValueError("dictionary entries must be non-empty strings")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def reversed(self) -> "BilingualDictionary":
        return BilingualDictionary(tuple((t, s) for s, t in self.pairs))


@dataclass(frozen=True)
class TokenizerVocab:
    tokens: tuple
    id_of: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        id_of = {t: i for i, t in enumerate(tokens)}
        if len(id_of) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "id_of", id_of)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, int]) -> "TokenizerVocab":
        """Build from a token -> id mapping whose ids must be exactly 0..n-1."""
        n = len(mapping)
        tokens: list = [None] * n
        for tok, idx in mapping.items():
            if isinstance(idx, bool) or not isinstance(idx, int) or not 0 <= idx < n or tokens[idx] is not None:
                raise ValueError(f"token ids are not dense 0..{n - 1}: {tok!r} -> {idx!r}")
            tokens[idx] = tok
        return cls(tuple(tokens))

    def __len__(self):
        return len(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]


@dataclass(frozen=True)
class TokenEmbeddingMatrix:
    vocab: TokenizerVocab
    matrix: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(self.matrix, dtype=np.float32)
        if m.ndim != 2 or m.shape[0] != len(self.vocab):
            raise ValueError(f"matrix shape {m.shape} does not match vocab size {len(self.vocab)}")
        if not np.all(np.isfinite(m)):
            raise ValueError("embedding matrix contains non-finite values")
        object.__setattr__(self, "matrix", _readonly(m))

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def __len__(self):
        return len(self.vocab)


# --------------------------------------------------------------------------
# text word vectors


def _decode(raw: bytes, lineno: int) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"line {lineno}: invalid UTF-8 ({e})") from None


def load_word_vectors(stream: BinaryIO, limit: Optional[int] = None) -> WordVectors:
    """Read fastText-style ``.vec`` text vectors.

    The first line is ``"V d"``; each following line is a word and ``d``
    space-separated values. With ``limit`` only the first ``min(limit, V)``
    entries are read and the rest of the stream is left untouched.
    """
    header = stream.readline()
    fields = _decode(header, 1).split()
    if len(fields) != 2 or not all(f.isdigit() for f in fields):
        raise FormatError(f"line 1: expected header 'V d', got {header[:80]!r}")
    n_declared, dim = int(fields[0]), int(fields[1])
    if dim <= 0:
        raise FormatError("line 1: dimension must be positive")
    n = n_declared if limit is None else min(int(limit), n_declared)
    if n < 0:
        raise FormatError("limit must be non-negative")

    words = []
    seen = {}
    matrix = np.empty((n, dim), dtype=np.float32)
    lineno = 1
    while len(words) < n:
        raw = stream.readline()
        lineno += 1
        if not raw:
            raise FormatError(f"header declares {n_declared} vectors but file ends after {len(words)}")
        line = _decode(raw, lineno).rstrip("\r\n").rstrip(" ")
        if not line:
            raise FormatError(f"line {lineno}: empty line inside vector block")
        parts = line.split(" ")
        if len(parts) != dim + 1:
            raise FormatError(f"line {lineno}: expected {dim} values, got {len(parts) - 1}")
        word = parts[0]
        if word in seen:
            raise FormatError(f"line {lineno}: duplicate word {word!r} (first seen on line {seen[word]})")
        try:
            row = np.array(parts[1:], dtype=np.float32)
        except ValueError:
            raise FormatError(f"line {lineno}: non-numeric value") from None
        if not np.all(np.isfinite(row)):
            raise FormatError(f"line {lineno}: non-finite value for word {word!r}")
        seen[word] = lineno
        matrix[len(words)] = row
        words.append(word)

    if limit is None:
        for raw in stream:
            lineno += 1
            if raw.strip():
                raise FormatError(f"line {lineno}: more vectors than the declared {n_declared}")
    return WordVectors(tuple(words), _readonly(matrix))


def write_word_vectors(wv: WordVectors, stream: BinaryIO) -> None:
    """Write ``.vec`` text using ``repr`` of float32 values (exact on reload)."""
    stream.write(f"{len(wv)} {wv.dim}\n".encode())
    for word, row in zip(wv.words, wv.vectors):
        if any(c.isspace() for c in word):
            raise FormatError(f"word {word!r} contains whitespace; not representable in .vec text")
        vals = " ".join(repr(float(x)) for x in row.astype(np.float32))
        stream.write(f"{word} {vals}\n".encode("utf-8"))


# --------------------------------------------------------------------------
# dictionaries and frequencies

_FIELD_SEP = re.compile(r"[ \t]+")


def load_dictionary(stream: BinaryIO, lowercase: bool = False) -> BilingualDictionary:
    """Read MUSE-style ``"source target"`` lines (space or tab separated)."""
    pairs = []
    for lineno, raw in enumerate(stream, start=1):
        line = _decode(raw, lineno).strip(" \t\r\n")
        if not line:
            continue
        parts = _FIELD_SEP.split(line)
        if len(parts) != 2:
            raise FormatError(f"line {lineno}: expected 2 fields, got {len(parts)}")
        if lowercase:
            parts = [p.lower() for p in parts]
        pairs.append((parts[0], parts[1]))
    return BilingualDictionary(tuple(pairs))


def write_dictionary(d: BilingualDictionary, stream: BinaryIO) -> None:
    for s, t in d.pairs:
        stream.write(f"{s} {t}\n".encode("utf-8"))


def load_frequencies(stream: BinaryIO) -> dict:
    """Read ``"word count"`` lines into a dict. Later duplicates are rejected."""
    freqs = {}
    for lineno, raw in enumerate(stream, start=1):
        line = _decode(raw, lineno).rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.rsplit(None, 1)
        if len(parts) != 2:
            raise FormatError(f"line {lineno}: expected 'word count'")
        word, count = parts[0].strip(), parts[1]
        try:
            c = int(count)
        except ValueError:
            raise FormatError(f"line {lineno}: count {count!r} is not an integer") from None
        if c < 0:
            raise FormatError(f"line {lineno}: negative count")
        if word in freqs:
            raise FormatError(f"line {lineno}: duplicate word {word!r}")
        freqs[word] = c
    return freqs


# --------------------------------------------------------------------------
# binary matrix format


def escape_token(token: str) -> str:
    return token.replace("\\", "\\\\").replace("\n", "\\n")


def unescape_token(text: str) -> str:
    if "\\" not in text:
        return text
    out = []
    i = 0
    while i < len(text):
        c = text[i]
        if c == "\\":
            nxt = text[i + 1:i + 2]
            if nxt == "\\":
                out.append("\\")
            elif nxt == "n":
                out.append("\n")
            else:
                raise FormatError(f"invalid escape sequence in token {text!r}")
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


@dataclass(frozen=True)
class MatrixFile:
    """Everything stored in a binary matrix file."""

    tokens: tuple
    matrix: np.ndarray
    kind: Optional[str] = None
    zero_flags: Optional[np.ndarray] = None


_HEADER_KEYS = ("vocab_size", "dim", "dtype", "order")
_FLAGGED_KIND = "subword-static"


def write_matrix_file(
    stream: BinaryIO,
    tokens: Sequence[str],
    matrix: np.ndarray,
    kind: Optional[str] = None,
    zero_flags: Optional[Iterable[bool]] = None,
) -> None:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != len(tokens):
        raise ValueError(f"matrix shape {matrix.shape} does not match {len(tokens)} tokens")
    payload = np.ascontiguousarray(matrix, dtype="<f4")
    if not np.all(np.isfinite(payload)):
        raise ValueError("refusing to write non-finite values")
    header = {"vocab_size": int(matrix.shape[0]), "dim": int(matrix.shape[1]), "dtype": "f32", "order": "row-major"}
    if kind is not None:
        header["kind"] = kind
    if (zero_flags is not None) != (kind == _FLAGGED_KIND):
        raise ValueError(f"zero flags are written exactly when kind == {_FLAGGED_KIND!r}")
    stream.write(json.dumps(header).encode("utf-8") + b"\n")
    stream.write("".join(escape_token(t) + "\n" for t in tokens).encode("utf-8"))
    if zero_flags is not None:
        flags = np.asarray(list(zero_flags), dtype=bool)
        if flags.shape != (len(tokens),):
            raise ValueError("one zero flag per token required")
        stream.write(("".join("1" if f else "0" for f in flags) + "\n").encode("ascii"))
    stream.write(payload.tobytes())


def read_matrix_file(stream: BinaryIO) -> MatrixFile:
    raw = stream.readline()
    if not raw.endswith(b"\n"):
        raise FormatError("missing header line")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"header is not valid JSON: {e}") from None
    if not isinstance(header, dict) or any(k not in header for k in _HEADER_KEYS):
        raise FormatError(f"header must be an object with keys {_HEADER_KEYS}")
    n, dim = header["vocab_size"], header["dim"]
    if not all(isinstance(x, int) and not isinstance(x, bool) and x >= 0 for x in (n, dim)):
        raise FormatError("vocab_size and dim must be non-negative integers")
    if header["dtype"] != "f32" or header["order"] != "row-major":
        raise FormatError(f"unsupported dtype/order {header['dtype']!r}/{header['order']!r}")
    kind = header.get("kind")

    tokens = []
    for i in range(n):
        line = stream.readline()
        if not line.endswith(b"\n"):
            raise FormatError(f"file ends inside token list after {i} of {n} tokens")
        tokens.append(unescape_token(_decode(line[:-1], i + 2)))

    zero_flags = None
    if kind == _FLAGGED_KIND:
        line = stream.readline()
        if not line.endswith(b"\n") or len(line) != n + 1 or line[:-1].strip(b"01"):
            raise FormatError("malformed zero-flag line")
        zero_flags = _readonly(np.frombuffer(line[:-1], dtype=np.uint8) == ord("1"))

    payload = stream.read()
    expected = n * dim * 4
    if len(payload) != expected:
        raise FormatError(f"payload length {len(payload)} bytes, expected {expected}")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(n, dim).astype(np.float32)
    if not np.all(np.isfinite(matrix)):
        raise FormatError("payload contains non-finite values")
    return MatrixFile(tuple(tokens), _readonly(matrix), kind, zero_flags)


def write_matrix(emb: TokenEmbeddingMatrix, stream: BinaryIO) -> None:
    write_matrix_file(stream, emb.vocab.tokens, emb.matrix)


def read_matrix(stream: BinaryIO) -> TokenEmbeddingMatrix:
    mf = read_matrix_file(stream)
    try:
        vocab = TokenizerVocab(mf.tokens)
    except ValueError as e:
        raise FormatError(str(e)) from None
    return TokenEmbeddingMatrix(vocab, mf.matrix)


def write_matrix_text(emb: TokenEmbeddingMatrix, stream: BinaryIO) -> None:
    """Export as ``.vec`` text for interop with word-vector tooling."""
    write_word_vectors(WordVectors(emb.vocab.tokens, emb.matrix), stream)
