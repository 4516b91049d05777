import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import ACCEPTANCE_RESULTS, train_toy_bpe, write_fasttext_bin  # noqa: E402
from wechsel.vectors_io import TokenEmbeddingMatrix, TokenizerVocab, write_matrix  # noqa: E402

SRC_WORDS = (
    "the cat dog house water tree city river mountain small large green red blue book "
    "table chair window door street child children woman man people friend family school "
    "teacher student music song night morning evening summer winter bread milk cheese apple "
    "garden flower bird horse fish boat train station market money"
).split()
TGT_WORDS = (
    "le chat chien maison eau arbre ville rivière montagne petit grand vert rouge bleu livre "
    "table chaise fenêtre porte rue enfant enfants femme homme gens ami famille école "
    "professeur étudiant musique chanson nuit matin soir été hiver pain lait fromage pomme "
    "jardin fleur oiseau cheval poisson bateau train gare marché argent"
).split()


def _write_tokenizer(directory: Path, prefix: str, words, n_merges):
    vocab, merges = train_toy_bpe(words, n_merges)
    (directory / f"{prefix}-vocab.json").write_text(json.dumps(vocab, ensure_ascii=False), encoding="utf-8")
    (directory / f"{prefix}-merges.txt").write_text(
        "#version: 0.2\n" + "".join(f"{a} {b}\n" for a, b in merges), encoding="utf-8"
    )
    return vocab


def _write_model(path: Path, words, rng, dim, bucket):
    counts = [int(c) for c in rng.integers(1, 1000, len(words))]
    matrix = rng.standard_normal((len(words) + bucket, dim)).astype(np.float32)
    with open(path, "wb") as f:
        write_fasttext_bin(f, words=list(words), counts=counts, matrix=matrix, dim=dim, minn=3, maxn=5, bucket=bucket)
    return counts


def _write_vec(path: Path, words, vectors):
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{len(words)} {vectors.shape[1]}\n")
        for w, v in zip(words, vectors):
            f.write(w + " " + " ".join(repr(float(x)) for x in v) + "\n")


@pytest.fixture(scope="session")
def world(tmp_path_factory):
    """A tiny but complete two-language fixture on disk."""
    d = tmp_path_factory.mktemp("world")
    rng = np.random.default_rng(2024)
    dim, m = 16, 12
    src_vocab = _write_tokenizer(d, "src", SRC_WORDS, 90)
    _write_tokenizer(d, "tgt", TGT_WORDS, 90)
    src_counts = _write_model(d / "src.bin", SRC_WORDS, rng, dim, 2000)
    tgt_counts = _write_model(d / "tgt.bin", TGT_WORDS, rng, dim, 2000)

    # target word vectors are a noisy rotation of the source ones, so alignment is meaningful
    src_vecs = rng.standard_normal((len(SRC_WORDS), dim)).astype(np.float32)
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    tgt_vecs = (src_vecs @ q + 0.01 * rng.standard_normal(src_vecs.shape)).astype(np.float32)
    _write_vec(d / "src.vec", SRC_WORDS, src_vecs)
    _write_vec(d / "tgt.vec", TGT_WORDS, tgt_vecs)
    (d / "dict.txt").write_text("".join(f"{s} {t}\n" for s, t in zip(SRC_WORDS, TGT_WORDS)), encoding="utf-8")
    (d / "src.freq").write_text("".join(f"{w} {c}\n" for w, c in zip(SRC_WORDS, src_counts)), encoding="utf-8")
    (d / "tgt.freq").write_text("".join(f"{w} {c}\n" for w, c in zip(TGT_WORDS, tgt_counts)), encoding="utf-8")

    tokens = tuple(sorted(src_vocab, key=src_vocab.get))
    E = TokenEmbeddingMatrix(TokenizerVocab(tokens), rng.standard_normal((len(tokens), m)).astype(np.float32))
    with open(d / "src-emb.bin", "wb") as f:
        write_matrix(E, f)
    return d


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        title, parts = ACCEPTANCE_RESULTS[num]
        statuses = [s for s, _ in parts]
        status = "FAIL" if "FAIL" in statuses else ("SKIP" if all(s == "SKIP" for s in statuses) else "PASS")
        detail = "; ".join(msg for s, msg in parts if msg and s != "PASS")
        terminalreporter.write_line(f"criterion {num:>2} {status}  {title}" + (f"  ({detail})" if detail else ""))
