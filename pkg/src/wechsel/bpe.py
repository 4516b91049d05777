"""Byte-level BPE encoding over an existing vocab.json / merges.txt pair.

Only single words are tokenized here, so there is no regex pre-tokenization.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import BinaryIO

from .errors import TokenizerError
from .vectors_io import TokenizerVocab

__all__ = ["ByteLevelBpe", "build_byte_table", "load_tokenizer", "encode", "token_surface"]


def build_byte_table() -> dict:
    """Map every byte value to a printable character, GPT-2 style.

    Printable Latin-1 bytes map to themselves; the other 68 bytes map, in
    ascending order, to U+0100, U+0101, ...
    """
    keep = [*range(0x21, 0x7F), *range(0xA1, 0xAD), *range(0xAE, 0x100)]
    table = {b: chr(b) for b in keep}
    extra = 0
    for b in range(256):
        if b not in table:
            table[b] = chr(256 + extra)
            extra += 1
    return table


_BYTE_TABLE = build_byte_table()
_BYTE_INVERSE = {c: b for b, c in _BYTE_TABLE.items()}


@dataclass(frozen=True, eq=False)
class ByteLevelBpe:
    vocab: TokenizerVocab
    merge_rank: dict
    byte_table: dict = field(default_factory=lambda: dict(_BYTE_TABLE))

    def __len__(self):
        return len(self.vocab)


def _parse_merges(stream: BinaryIO) -> list:
    merges = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.decode("utf-8").rstrip("\r\n")
        if lineno == 1 and line.startswith("#"):
            continue
        if not line:
            continue
        parts = line.split(" ")
        if len(parts) != 2 or not all(parts):
            raise TokenizerError(f"merges line {lineno}: expected 'left right', got {line!r}")
        merges.append((parts[0], parts[1], lineno))
    return merges


def load_tokenizer(vocab_stream: BinaryIO, merges_stream: BinaryIO) -> ByteLevelBpe:
    """Load a byte-level BPE tokenizer.

    ``vocab_stream`` is a JSON object ``{token: id}`` with ids exactly
    ``0..n-1``. ``merges_stream`` has one ``"left right"`` pair per line; a
    first line starting with ``#`` is a version comment. Line order is merge
    rank. Both sides of every merge and their concatenation must be in the
    vocabulary.

    Raises ``TokenizerError`` for non-dense ids, duplicate merges or merges
    over symbols the vocabulary cannot produce; ``json.JSONDecodeError`` and
    ``UnicodeDecodeError`` pass through for files that are not JSON/UTF-8.
    """
    mapping = json.loads(vocab_stream.read().decode("utf-8"))
    if not isinstance(mapping, dict):
        raise TokenizerError("vocab file must contain a JSON object")
    try:
        vocab = TokenizerVocab.from_mapping(mapping)
    except ValueError as e:
        raise TokenizerError(str(e)) from None

    merge_rank = {}
    for left, right, lineno in _parse_merges(merges_stream):
        pair = (left, right)
        if pair in merge_rank:
            raise TokenizerError(f"merges line {lineno}: duplicate merge {left!r} {right!r}")
        for sym in (left, right, left + right):
            if sym not in vocab.id_of:
                raise TokenizerError(f"merges line {lineno}: symbol {sym!r} is not in the vocabulary")
        merge_rank[pair] = len(merge_rank)
    return ByteLevelBpe(vocab, merge_rank)


def _bpe(tok: ByteLevelBpe, symbols: list) -> list:
    ranks = tok.merge_rank
    while len(symbols) > 1:
        best = None
        best_rank = None
        for pair in zip(symbols, symbols[1:]):
            r = ranks.get(pair)
            if r is not None and (best_rank is None or r < best_rank):
                best, best_rank = pair, r
        if best is None:
            break
        left, right = best
        merged = []
        i = 0
        while i < len(symbols):
            if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
                merged.append(left + right)
                i += 2
            else:
                merged.append(symbols[i])
                i += 1
        symbols = merged
    return symbols


def encode(tok: ByteLevelBpe, text: str, prefix_space: bool = False) -> list:
    """Token ids for ``text``; with ``prefix_space`` one space byte is prepended."""
    if prefix_space:
        text = " " + text
    symbols = [_BYTE_TABLE[b] for b in text.encode("utf-8")]
    id_of = tok.vocab.id_of
    ids = []
    for sym in _bpe(tok, symbols):
        idx = id_of.get(sym)
        if idx is None:
            raise TokenizerError(f"symbol {sym!r} produced while encoding {text!r} is not in the vocabulary")
        ids.append(idx)
    return ids


def token_surface(tok: ByteLevelBpe, token: str) -> str:
    """Undo the byte mapping of ``token``; invalid UTF-8 becomes U+FFFD."""
    try:
        raw = bytes(_BYTE_INVERSE[c] for c in token)
    except KeyError as e:
        raise TokenizerError(f"token {token!r} contains {e.args[0]!r}, which is outside the byte table") from None
    return raw.decode("utf-8", errors="replace")
