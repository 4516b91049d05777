"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary block at
the end of the session lists every criterion. Criterion 11 needs real data and
is skipped unless the ``WECHSEL_REAL_*`` variables point at it.
"""
import io
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from helpers import (
    bpe_oracle,
    criterion,
    fasttext_bytes,
    fnv1a_reference,
    naive_topk,
    prefix_chain_tokenizer,
    random_small_tokenizer,
    tokenizer_streams,
    write_fasttext_bin,
)
from wechsel import cli
from wechsel.bpe import build_byte_table, encode, load_tokenizer
from wechsel.evaluation import generate_synthetic_pair, random_rotation, run_synthetic_trial
from wechsel.fasttext import fnv1a_hash, parse_model
from wechsel.procrustes import OrthogonalMap, fit_procrustes, svd, write_rotation
from wechsel.subword import SubwordStaticEmbeddings
from wechsel.transfer import TransferConfig, softmax_weights, top_k_neighbors, wechsel_initialize
from wechsel.vectors_io import (
    BilingualDictionary,
    TokenEmbeddingMatrix,
    TokenizerVocab,
    WordVectors,
    load_dictionary,
    load_word_vectors,
    read_matrix,
    write_dictionary,
    write_matrix,
    write_word_vectors,
)


def static(matrix, flags=None):
    matrix = np.asarray(matrix, dtype=np.float32)
    if flags is None:
        flags = np.zeros(matrix.shape[0], dtype=bool)
    return SubwordStaticEmbeddings(TokenizerVocab(tuple(map(str, range(matrix.shape[0])))), matrix, flags)


def test_c01_procrustes_exact_recovery():
    with criterion(1, "Procrustes exact recovery (n=500, d=50; max|R-R*| < 1e-6, < 1 s)"):
        rng = np.random.default_rng(101)
        X = rng.standard_normal((500, 50))
        R_star = random_rotation(rng, 50)
        t0 = time.perf_counter()
        R = fit_procrustes(X, X @ R_star)
        elapsed = time.perf_counter() - t0
        err = float(np.max(np.abs(R.matrix - R_star)))
        print(f"max|R-R*| = {err:.2e}, fit time {elapsed:.3f} s")
        assert err < 1e-6
        assert elapsed < 1.0


def test_c02_svd_contract():
    with criterion(2, "SVD contract on random 300x300"):
        A = np.random.default_rng(102).standard_normal((300, 300))
        U, s, V = svd(A)
        resid = np.linalg.norm(A - (U * s) @ V.T) / max(1.0, np.linalg.norm(A))
        u_err = np.max(np.abs(U.T @ U - np.eye(300)))
        v_err = np.max(np.abs(V.T @ V - np.eye(300)))
        print(f"relative residual {resid:.2e}, U err {u_err:.2e}, V err {v_err:.2e}")
        assert resid < 1e-10
        assert np.all(s >= 0) and np.all(np.diff(s) <= 0)
        assert u_err < 1e-10 and v_err < 1e-10


def _random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))  # Haar over O(d), reflections included


@pytest.mark.filterwarnings("ignore:.*(under-determined|rank deficient):RuntimeWarning")
def test_c03_procrustes_optimality():
    with criterion(3, "Procrustes objective <= 100 random orthogonal maps on 20 instances"):
        rng = np.random.default_rng(103)
        for _ in range(20):
            n, d = int(rng.integers(5, 80)), int(rng.integers(2, 20))
            X, Y = rng.standard_normal((n, d)), rng.standard_normal((n, d))
            fitted = np.linalg.norm(X @ fit_procrustes(X, Y).matrix - Y)
            for _ in range(100):
                assert fitted <= np.linalg.norm(X @ _random_orthogonal(rng, d) - Y)


def test_c04_softmax_and_convexity():
    with criterion(4, "softmax weights, k=1 bit-equality, convex envelope"):
        rng = np.random.default_rng(104)
        for _ in range(10_000):
            scores = rng.uniform(-1, 1, int(rng.integers(1, 40)))
            w = softmax_weights(scores, float(10 ** rng.uniform(-3, 1)))
            assert np.all(w >= 0)
            assert abs(w.sum() - 1.0) <= 1e-12

        for trial in range(20):
            tgt = static(rng.standard_normal((300, 16)))
            src = static(rng.standard_normal((120, 16)))
            E = TokenEmbeddingMatrix(src.vocab, rng.standard_normal((120, 24)).astype(np.float32))

            nbh1 = top_k_neighbors(tgt, src, 1)
            out1 = wechsel_initialize(E, nbh1, TransferConfig(k=1)).matrix
            assert out1.tobytes() == E.matrix[nbh1.ids[:, 0]].tobytes()

            nbh = top_k_neighbors(tgt, src, 10)
            out = wechsel_initialize(E, nbh, TransferConfig(k=10, tau=float(rng.uniform(0.01, 2)))).matrix
            rows = E.matrix[nbh.ids]
            assert np.all(out >= rows.min(axis=1)) and np.all(out <= rows.max(axis=1))


def test_c05_topk_exactness():
    with criterion(5, "top-k equals naive double-loop oracle on 50 instances up to 500x300"):
        rng = np.random.default_rng(105)
        for trial in range(50):
            n_tgt = 500 if trial == 0 else int(rng.integers(1, 501))
            n_src = 300 if trial == 0 else int(rng.integers(1, 301))
            d = int(rng.integers(2, 65))
            t = rng.standard_normal((n_tgt, d))
            s = rng.standard_normal((n_src, d))
            t_flags = rng.random(n_tgt) < 0.05
            s_flags = rng.random(n_src) < 0.05
            s_flags[0] = False
            t[t_flags] = 0
            s[s_flags] = 0
            tgt, src = static(t, t_flags), static(s, s_flags)
            k = (1, 7, n_src)[trial % 3]
            nbh = top_k_neighbors(tgt, src, k, block_rows=int(rng.integers(1, 300)))
            for i, row in enumerate(naive_topk(tgt, src, k)):
                got = nbh.row(i)
                assert [j for j, _ in got] == [j for j, _ in row], (trial, i)
                assert np.allclose([x for _, x in got], [x for _, x in row], atol=1e-9, rtol=0), (trial, i)


def test_c06_synthetic_end_to_end():
    with criterion(6, "synthetic recovery (sigma=0.01) and strict ordering (sigma=0.1, 20 seeds)"):
        low = [run_synthetic_trial(generate_synthetic_pair(seed, 1000, 64, 64, 0.01, n_dict=200)) for seed in range(20)]
        print("sigma=0.01 top1_recovery min", min(r.top1_recovery for r in low))
        assert all(r.top1_recovery >= 0.99 for r in low)
        mid = [run_synthetic_trial(generate_synthetic_pair(seed, 1000, 64, 64, 0.1, n_dict=200)) for seed in range(20)]
        print(
            "sigma=0.1 wechsel min %.4f, transinner max %.4f, |shuffle| max %.4f"
            % (min(r.wechsel for r in mid), max(r.transinner for r in mid), max(abs(r.shuffle) for r in mid))
        )
        for r in mid:
            assert r.wechsel > r.transinner and r.wechsel > r.shuffle, r
            assert abs(r.shuffle) < 0.05, r


def test_c07_hash_and_tokenizer_oracles():
    with criterion(7, "FNV-1a, BPE brute-force oracle, byte table"):
        rng = np.random.default_rng(107)
        for _ in range(1000):
            data = rng.integers(0, 256, int(rng.integers(0, 64)), dtype=np.uint8).tobytes()
            assert fnv1a_hash(data) == fnv1a_reference(data)

        for _ in range(200):
            base, vocab, merges = random_small_tokenizer(rng)
            tok = load_tokenizer(*tokenizer_streams(vocab, merges))
            for _ in range(5):
                text = "".join(rng.choice(base, size=int(rng.integers(0, 13))))
                assert encode(tok, text) == [vocab[x] for x in bpe_oracle(list(text), merges)]

        table = build_byte_table()
        assert len(set(table.values())) == 256 and sorted(table) == list(range(256))
        assert table[0x41] == "A" and table[0x20] == "Ġ"


def test_c08_format_roundtrips():
    with criterion(8, "matrix, fastText .bin, dictionary and .vec roundtrips"):
        rng = np.random.default_rng(108)
        tokens = ("Ġthe", "a\nb", "c\\d", "猫", "")
        E = TokenEmbeddingMatrix(TokenizerVocab(tokens), rng.standard_normal((5, 7)).astype(np.float32))
        first = io.BytesIO()
        write_matrix(E, first)
        second = io.BytesIO()
        write_matrix(read_matrix(io.BytesIO(first.getvalue())), second)
        assert first.getvalue() == second.getvalue()

        matrix = rng.standard_normal((12, 4)).astype(np.float32)
        m = parse_model(io.BytesIO(fasttext_bytes(words=["cat", "dög"], counts=[5, 3], matrix=matrix, dim=4, bucket=10, minn=3, maxn=6)))
        assert (m.nwords, m.bucket, m.dim, m.minn, m.maxn) == (2, 10, 4, 3, 6)
        assert m.words == ("cat", "dög") and m.counts.tolist() == [5, 3] and m.ntokens == 8
        assert m.input_matrix.tobytes() == matrix.tobytes()

        d = BilingualDictionary((("chat", "cat"), ("chat", "cat"), ("été", "summer")))
        buf = io.BytesIO()
        write_dictionary(d, buf)
        assert load_dictionary(io.BytesIO(buf.getvalue())) == d

        wv = WordVectors(("the", "été", "猫"), rng.standard_normal((3, 6)).astype(np.float32))
        buf = io.BytesIO()
        write_word_vectors(wv, buf)
        back = load_word_vectors(io.BytesIO(buf.getvalue()))
        assert back.words == wv.words and back.vectors.tobytes() == wv.vectors.tobytes()


# -- criterion 9 -------------------------------------------------------------


def _random_words(rng, n, alphabet):
    words = set()
    while len(words) < n:
        words.add("".join(rng.choice(list(alphabet), size=int(rng.integers(2, 9)))))
    return sorted(words)


@pytest.fixture(scope="module")
def parallel_world(tmp_path_factory):
    """Several thousand tokens per side so transfers span many row blocks."""
    d = tmp_path_factory.mktemp("parallel")
    rng = np.random.default_rng(109)
    dim = 24
    for side, alphabet in (("src", "abcdefghijklmnop"), ("tgt", "abcdefghijklmnopéèà")):
        words = _random_words(rng, 700, alphabet)
        vocab, merges = prefix_chain_tokenizer(words)
        (d / f"{side}-vocab.json").write_text(json.dumps(vocab, ensure_ascii=False), encoding="utf-8")
        (d / f"{side}-merges.txt").write_text("#version: 0.2\n" + "".join(f"{a} {b}\n" for a, b in merges), encoding="utf-8")
        counts = [int(c) for c in rng.integers(1, 500, len(words))]
        with open(d / f"{side}.bin", "wb") as f:
            write_fasttext_bin(f, words=words, counts=counts, matrix=rng.standard_normal((len(words) + 4000, dim)),
                               dim=dim, minn=2, maxn=5, bucket=4000)
        (d / f"{side}.freq").write_text("".join(f"{w} {c}\n" for w, c in zip(words, counts)), encoding="utf-8")
        if side == "src":
            tokens = tuple(sorted(vocab, key=vocab.get))
            E = TokenEmbeddingMatrix(TokenizerVocab(tokens), rng.standard_normal((len(tokens), 32)).astype(np.float32))
            with open(d / "src-emb.bin", "wb") as f:
                write_matrix(E, f)
    with open(d / "R.bin", "wb") as f:
        write_rotation(OrthogonalMap(random_rotation(rng, dim)), f)
    return d


def _cli_args(world, method, out, threads):
    if method in ("transinner", "shuffle"):
        return [str(a) for a in ["baseline", "--method", method, "--src-emb", world / "src-emb.bin",
                                 "--tgt-vocab", world / "tgt-vocab.json", "--seed", 7, "--threads", threads, "--out", out]]
    args = ["transfer", "--method", method, "--seed", "7", "--threads", threads, "--out", out,
            "--src-emb", world / "src-emb.bin",
            "--src-vocab", world / "src-vocab.json", "--src-merges", world / "src-merges.txt",
            "--tgt-vocab", world / "tgt-vocab.json", "--tgt-merges", world / "tgt-merges.txt",
            "--src-ft", world / "src.bin", "--tgt-ft", world / "tgt.bin", "--rotation", world / "R.bin"]
    if method == "tfr":
        args += ["--src-freq", world / "src.freq", "--tgt-freq", world / "tgt.freq"]
    return [str(a) for a in args]


@pytest.mark.parametrize("method", ["wechsel", "tfr", "transinner", "shuffle"])
def test_c09_determinism_under_parallelism(method, parallel_world, tmp_path):
    with criterion(9, "threads 1 vs 8 give byte-identical matrices (wechsel, tfr, transinner, shuffle)"):
        one, eight = tmp_path / "one.bin", tmp_path / "eight.bin"
        assert cli.main(_cli_args(parallel_world, method, one, 1)) == 0
        assert cli.main(_cli_args(parallel_world, method, eight, 8)) == 0
        data = one.read_bytes()
        with open(one, "rb") as f:
            n_rows = len(read_matrix(f))
        assert n_rows > 4 * 256
        assert data == eight.read_bytes(), method
        if method in ("wechsel", "tfr"):
            stats = json.loads(Path(f"{one}.manifest.json").read_text())["stats"]
            assert stats["fallback_initialized"] > 0  # sampled rows are part of the comparison


# -- criterion 10 ------------------------------------------------------------

_SCALE_SCRIPT = r"""
import json, resource, sys, time
import numpy as np
from wechsel.subword import SubwordStaticEmbeddings
from wechsel.transfer import top_k_neighbors
from wechsel.vectors_io import TokenizerVocab

n, d, threads = int(sys.argv[1]), int(sys.argv[2]), int(sys.argv[3])
rng = np.random.default_rng(110)
vocab = TokenizerVocab(tuple(str(i) for i in range(n)))
flags = np.zeros(n, dtype=bool)
tgt = SubwordStaticEmbeddings(vocab, rng.standard_normal((n, d), dtype=np.float32), flags)
src = SubwordStaticEmbeddings(vocab, rng.standard_normal((n, d), dtype=np.float32), flags)
t0 = time.perf_counter()
nbh = top_k_neighbors(tgt, src, 10, threads=threads)
elapsed = time.perf_counter() - t0
probe = rng.choice(n, 20, replace=False)
T = tgt.matrix[probe].astype(np.float64); S = src.matrix.astype(np.float64)
sims = (T / np.linalg.norm(T, axis=1, keepdims=True)) @ (S / np.linalg.norm(S, axis=1, keepdims=True)).T
exact = all(np.array_equal(np.argsort(-sims[r], kind="stable")[:10], nbh.ids[p]) for r, p in enumerate(probe))
print(json.dumps({"seconds": elapsed, "peak_rss_kib": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss,
                  "spot_check_exact": bool(exact)}))
"""


@pytest.mark.slow
def test_c10_scale_and_memory():
    with criterion(10, "exact top-10 for 50k x 50k at dim 300 in < 10 min and < 4 GiB"):
        threads = os.cpu_count() or 1
        proc = subprocess.run(
            [sys.executable, "-c", _SCALE_SCRIPT, "50000", "300", str(threads)],
            capture_output=True, text=True, timeout=900,
        )
        assert proc.returncode == 0, proc.stderr
        result = json.loads(proc.stdout.strip().splitlines()[-1])
        peak_gib = result["peak_rss_kib"] / 2**20
        print(f"top-10 search {result['seconds']:.1f} s on {threads} core(s), peak RSS {peak_gib:.2f} GiB")
        assert result["spot_check_exact"]
        assert result["seconds"] < 600
        assert peak_gib < 4.0


# -- criterion 11 ------------------------------------------------------------

REAL = {
    "src_vec": os.environ.get("WECHSEL_REAL_SRC_VEC"),  # e.g. English fastText .vec
    "tgt_vec": os.environ.get("WECHSEL_REAL_TGT_VEC"),  # e.g. French fastText .vec
    "train_dict": os.environ.get("WECHSEL_REAL_TRAIN_DICT"),  # source-target training pairs
    "test_dict": os.environ.get("WECHSEL_REAL_TEST_DICT"),  # held-out pairs
}


def test_c11_real_data_sanity(tmp_path):
    with criterion(11, "real-data BLI precision@1 >= 0.45 (optional)"):
        if not all(REAL.values()):
            pytest.skip("set WECHSEL_REAL_SRC_VEC, WECHSEL_REAL_TGT_VEC, WECHSEL_REAL_TRAIN_DICT, WECHSEL_REAL_TEST_DICT")
        from wechsel.evaluation import bli_precision_at_1
        from wechsel.procrustes import apply_map, read_rotation

        limit = int(os.environ.get("WECHSEL_REAL_LIMIT", "200000"))
        R_path = tmp_path / "R.bin"
        assert cli.main(["align", "--src-vec", REAL["src_vec"], "--tgt-vec", REAL["tgt_vec"], "--dict", REAL["train_dict"],
                         "--limit", str(limit), "--out", str(R_path)]) == 0
        with open(REAL["src_vec"], "rb") as f:
            src = load_word_vectors(f, limit=limit)
        with open(REAL["tgt_vec"], "rb") as f:
            tgt = load_word_vectors(f, limit=limit)
        with open(R_path, "rb") as f:
            R = read_rotation(f)
        with open(REAL["test_dict"], "rb") as f:
            heldout = load_dictionary(f)
        aligned = apply_map(tgt, R)
        result = bli_precision_at_1(src, aligned, heldout)
        print(f"bli_precision_at_1 = {result.value:.4f} over {result.n} held-out pairs")
        sample = [t for _, t in heldout.pairs[:10] if t in aligned.index]
        q = WordVectors(tuple(sample), aligned.vectors[[aligned.index[t] for t in sample]])
        nbh = top_k_neighbors(static(q.vectors), static(src.vectors), 1)
        for t, row in zip(sample, nbh.ids[:, 0]):
            print(f"  {t} -> {src.words[row]}")
        assert result.value >= 0.45
