"""Command-line interface.

Exit codes:
    0  success
    2  bad arguments or malformed / missing input files
    3  dictionary has no usable pairs
    4  dimension mismatch between inputs
    5  inconsistent tokenizer files
    6  eval-synthetic: wechsel did not beat both baselines

Every command that writes an output file also writes ``<output>.manifest.json``.
Nothing is written when the exit code is nonzero.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .bpe import ByteLevelBpe, load_tokenizer, token_surface
from .errors import DimensionError, FormatError, NoUsablePairsError, TokenizerError
from .evaluation import generate_synthetic_pair, nearest_report, nearest_rows, run_synthetic_trial
from .fasttext import load_model, model_word_vectors
from .procrustes import build_dictionary_matrices, fit_procrustes, read_rotation, write_rotation
from .subword import (
    build_occurrence_index,
    compute_subword_embeddings_ngram,
    compute_subword_embeddings_tfr,
    uniform_counts,
)
from .transfer import (
    TransferConfig,
    resolve_threads,
    shuffle_initialize,
    top_k_neighbors,
    transinner_initialize,
    wechsel_initialize,
    read_neighborhood_text,
    write_neighborhood_text,
)
from .vectors_io import (
    TokenizerVocab,
    WordVectors,
    load_dictionary,
    load_frequencies,
    load_word_vectors,
    read_matrix,
    write_matrix,
)

logger = logging.getLogger("wechsel")

EXIT_OK = 0
EXIT_FORMAT = 2
EXIT_NO_PAIRS = 3
EXIT_DIMENSION = 4
EXIT_TOKENIZER = 5
EXIT_ORDERING = 6


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# manifests and atomic output


def file_digest(path: str) -> str:
    """64-bit BLAKE2b content hash, hex encoded."""
    h = hashlib.blake2b(digest_size=8)
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    options: dict
    inputs: dict
    seed: Optional[int]
    version: str = __version__
    stats: dict = field(default_factory=dict)
    created: float = field(default_factory=time.time)


def _atomic_write(path: str, write) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            write(f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_outputs(outputs: dict, manifest: RunManifest, manifest_for: str) -> None:
    """Render every output in memory first so a failure leaves no partial files."""
    rendered = {}
    for path, write in outputs.items():
        buf = io.BytesIO()
        write(buf)
        rendered[path] = buf.getvalue()
    for path, data in rendered.items():
        _atomic_write(path, lambda f, data=data: f.write(data))
    text = json.dumps(asdict(manifest), indent=2, sort_keys=True, default=_json_default) + "\n"
    _atomic_write(manifest_for + ".manifest.json", lambda f: f.write(text.encode("utf-8")))


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


def _inputs(args, names) -> dict:
    out = {}
    for name in names:
        path = getattr(args, name, None)
        if path:
            out[name] = {"path": path, "digest": file_digest(path)}
    return out


def _options(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}


# --------------------------------------------------------------------------
# loaders


def _open(path: str):
    return open(path, "rb")


def _load_vectors(path: str, limit: Optional[int]) -> WordVectors:
    with _open(path) as f:
        return load_word_vectors(f, limit=limit)


def _load_tokenizer(vocab_path: str, merges_path: str) -> ByteLevelBpe:
    with _open(vocab_path) as v, _open(merges_path) as m:
        return load_tokenizer(v, m)


def _load_vocab_json(path: str) -> TokenizerVocab:
    with _open(path) as f:
        mapping = json.loads(f.read().decode("utf-8"))
    if not isinstance(mapping, dict):
        raise FormatError(f"{path}: expected a JSON object mapping token to id")
    try:
        return TokenizerVocab.from_mapping(mapping)
    except ValueError as e:
        raise TokenizerError(f"{path}: {e}") from None


def _with_frequencies(words: WordVectors, freq_path: Optional[str], uniform: bool, side: str) -> WordVectors:
    if freq_path:
        with _open(freq_path) as f:
            return words.with_counts(load_frequencies(f))
    if uniform:
        return uniform_counts(words)
    raise UsageError(f"method tfr needs --{side}-freq or --uniform-freq")


def _static_embeddings(args, side: str, tok: ByteLevelBpe):
    ft_path = getattr(args, f"{side}_ft")
    if args.method == "wechsel":
        if not ft_path:
            raise UsageError(f"method wechsel requires --{side}-ft")
        model = load_model(ft_path, mmap=True)
        return compute_subword_embeddings_ngram(tok.vocab, tok, model, lowercase=args.lowercase)
    vec_path = getattr(args, f"{side}_vec")
    if vec_path:
        words = _load_vectors(vec_path, args.limit)
    elif ft_path:
        words = model_word_vectors(load_model(ft_path, mmap=True), limit=args.limit)
    else:
        raise UsageError(f"method tfr requires --{side}-vec or --{side}-ft")
    words = _with_frequencies(words, getattr(args, f"{side}_freq"), args.uniform_freq, side)
    index = build_occurrence_index(words, tok, prefix_space=args.prefix_space == "on")
    return compute_subword_embeddings_tfr(index, words, tok.vocab)


def _neighborhood(args, cfg: TransferConfig, threads: int):
    """Shared by transfer and nearest: source matrix, tokenizers, aligned neighbourhood."""
    for name in ("src_emb", "src_vocab", "src_merges", "tgt_vocab", "tgt_merges", "rotation"):
        if not getattr(args, name):
            raise UsageError(f"missing required option --{name.replace('_', '-')}")
    with _open(args.src_emb) as f:
        E_src = read_matrix(f)
    src_tok = _load_tokenizer(args.src_vocab, args.src_merges)
    tgt_tok = _load_tokenizer(args.tgt_vocab, args.tgt_merges)
    if E_src.vocab.tokens != src_tok.vocab.tokens:
        raise TokenizerError("source embedding tokens do not match the source tokenizer vocabulary")
    with _open(args.rotation) as f:
        R = read_rotation(f)

    src_static = _static_embeddings(args, "src", src_tok)
    tgt_static = _static_embeddings(args, "tgt", tgt_tok)
    if src_static.dim != tgt_static.dim:
        raise DimensionError(f"source static dim {src_static.dim} != target static dim {tgt_static.dim}")
    if R.dim != tgt_static.dim:
        raise DimensionError(f"rotation is {R.dim}x{R.dim} but static embeddings have dim {tgt_static.dim}")
    aligned = tgt_static.rotated(R.matrix)
    nbh = top_k_neighbors(aligned, src_static, cfg.k, threads=threads)
    stats = {
        "source_tokens_without_evidence": int(src_static.zero_flag.sum()),
        "target_tokens_without_evidence": int(tgt_static.zero_flag.sum()),
    }
    return E_src, nbh, stats


# --------------------------------------------------------------------------
# commands


def cmd_align(args) -> int:
    for name in ("src_vec", "tgt_vec", "dict", "out"):
        if not getattr(args, name):
            raise UsageError(f"missing required option --{name.replace('_', '-')}")
    src = _load_vectors(args.src_vec, args.limit)
    tgt = _load_vectors(args.tgt_vec, args.limit)
    with _open(args.dict) as f:
        dictionary = load_dictionary(f, lowercase=args.casefold)
    if args.reverse_dict:
        dictionary = dictionary.reversed()
    dm = build_dictionary_matrices(src, tgt, dictionary)
    R = fit_procrustes(dm.X, dm.Y)
    manifest = RunManifest(
        command="align",
        options=_options(args),
        inputs=_inputs(args, ("src_vec", "tgt_vec", "dict")),
        seed=None,
        stats={
            "used_pairs": dm.used,
            "skipped_pairs": dm.skipped,
            "skipped_oov": dm.skipped_oov,
            "skipped_zero_vector": dm.skipped_zero,
            "orthogonality_error": R.orthogonality_error(),
        },
    )
    _write_outputs({args.out: lambda f: write_rotation(R, f)}, manifest, args.out)
    logger.info("rotation fitted on %d pairs (%d skipped) -> %s", dm.used, dm.skipped, args.out)
    return EXIT_OK


def cmd_transfer(args) -> int:
    if not args.out:
        raise UsageError("missing required option --out")
    cfg = TransferConfig(k=args.k, tau=args.tau, seed=args.seed)
    threads = resolve_threads(args.threads)
    E_src, nbh, stats = _neighborhood(args, cfg, threads)
    E_tgt = wechsel_initialize(E_src, nbh, cfg, threads=threads)
    stats["fallback_initialized"] = int(nbh.empty.sum())
    stats["target_vocab_size"] = len(E_tgt)
    outputs = {args.out: lambda f: write_matrix(E_tgt, f)}
    if args.neighborhood_out:
        outputs[args.neighborhood_out] = lambda f: write_neighborhood_text(nbh, f)
    manifest = RunManifest(
        command="transfer",
        options=_options(args),
        inputs=_inputs(args, ("src_emb", "src_vocab", "src_merges", "tgt_vocab", "tgt_merges",
                              "src_ft", "tgt_ft", "src_vec", "tgt_vec", "src_freq", "tgt_freq", "rotation")),
        seed=cfg.seed,
        stats=stats,
    )
    _write_outputs(outputs, manifest, args.out)
    logger.info("wrote %d x %d target embeddings (%d fallback rows) -> %s",
                len(E_tgt), E_tgt.dim, stats["fallback_initialized"], args.out)
    return EXIT_OK


def cmd_baseline(args) -> int:
    for name in ("src_emb", "tgt_vocab", "out"):
        if not getattr(args, name):
            raise UsageError(f"missing required option --{name.replace('_', '-')}")
    cfg = TransferConfig(seed=args.seed)
    threads = resolve_threads(args.threads)
    with _open(args.src_emb) as f:
        E_src = read_matrix(f)
    vocab = _load_vocab_json(args.tgt_vocab)
    if args.method == "transinner":
        E_tgt = transinner_initialize(vocab, E_src, cfg, threads=threads)
    else:
        E_tgt = shuffle_initialize(E_src, vocab, cfg, threads=threads)
    manifest = RunManifest(
        command="baseline",
        options=_options(args),
        inputs=_inputs(args, ("src_emb", "tgt_vocab")),
        seed=cfg.seed,
        stats={"target_vocab_size": len(E_tgt)},
    )
    _write_outputs({args.out: lambda f: write_matrix(E_tgt, f)}, manifest, args.out)
    return EXIT_OK


def _display(token: str) -> str:
    try:
        return token_surface(None, token)
    except TokenizerError:
        return token


def cmd_nearest(args) -> int:
    if args.neighborhood:
        with _open(args.neighborhood) as f:
            nbh = read_neighborhood_text(f)
    else:
        cfg = TransferConfig(k=max(1, args.k), tau=args.tau, seed=args.seed)
        _, nbh, _ = _neighborhood(args, cfg, resolve_threads(args.threads))
    display = _display if args.surface else (lambda t: t)
    if args.json:
        for t, s, score in nearest_rows(nbh, n=args.n, seed=args.seed):
            row = {
                "target": display(nbh.target_vocab[t]),
                "source": "<random init>" if s is None else display(nbh.source_vocab[s]),
                "score": score,
            }
            print(json.dumps(row, ensure_ascii=False))
    else:
        sys.stdout.write(nearest_report(nbh, n=args.n, seed=args.seed, display=display))
    return EXIT_OK


def cmd_eval_synthetic(args) -> int:
    cfg = TransferConfig(k=args.k, tau=args.tau, seed=args.seed)
    threads = resolve_threads(args.threads)
    all_ok = True
    for s in range(args.seeds):
        pair = generate_synthetic_pair(args.seed + s, args.v, args.d, args.m, args.noise, n_dict=args.dict_size)
        r = run_synthetic_trial(pair, cfg, threads=threads)
        all_ok &= r.ordering_holds
        if args.json:
            print(json.dumps({**r.as_dict(), "ordering_holds": r.ordering_holds}))
        else:
            print(
                f"seed={r.seed} noise={r.noise:g} top1_recovery={r.top1_recovery:.4f} "
                f"init_quality: wechsel={r.wechsel:.4f} transinner={r.transinner:.4f} "
                f"shuffle={r.shuffle:.4f} bli@1={r.bli_precision_at_1:.4f}"
            )
    if not all_ok:
        print("error: wechsel did not beat both baselines on every seed", file=sys.stderr)
        return EXIT_ORDERING
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _on_off(value: str) -> str:
    v = value.lower()
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return v


def _bool(value: str) -> bool:
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


def build_parser(suppress_defaults: bool = False) -> argparse.ArgumentParser:
    """With ``suppress_defaults`` the namespace holds only options given explicitly."""

    def add(p, *flags, default=None, **kw):
        if suppress_defaults:
            default = argparse.SUPPRESS
        elif kw.get("action") == "store_true" and default is None:
            default = False
        p.add_argument(*flags, default=default, **kw)

    parser = argparse.ArgumentParser(prog="wechsel", description=__doc__.split("\n")[0], allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        add(p, "--threads", type=int, help="worker threads (default: $WECHSEL_THREADS or 1)")
        add(p, "--config", help="flat key=value file; command-line options take precedence")

    def tokenizer_opts(p):
        add(p, "--src-emb", help="source token-embedding matrix (binary matrix format)")
        add(p, "--src-vocab", help="source tokenizer vocab.json")
        add(p, "--src-merges", help="source tokenizer merges.txt")
        add(p, "--tgt-vocab", help="target tokenizer vocab.json")
        add(p, "--tgt-merges", help="target tokenizer merges.txt")
        add(p, "--src-ft", help="source fastText .bin")
        add(p, "--tgt-ft", help="target fastText .bin")
        add(p, "--src-vec", help="source .vec word vectors (tfr)")
        add(p, "--tgt-vec", help="target .vec word vectors (tfr)")
        add(p, "--src-freq", help="source 'word count' frequency file (tfr)")
        add(p, "--tgt-freq", help="target 'word count' frequency file (tfr)")
        add(p, "--uniform-freq", action="store_true", help="tfr: weight every word equally")
        add(p, "--rotation", help="rotation file written by 'align'")
        add(p, "--k", type=int, default=10)
        add(p, "--tau", type=float, default=0.1)
        add(p, "--seed", type=int, default=42)
        add(p, "--method", choices=("wechsel", "tfr"), default="wechsel")
        add(p, "--prefix-space", type=_on_off, default="on", help="tfr: prepend a space before tokenizing words")
        add(p, "--lowercase", action="store_true", help="lowercase token text before n-gram extraction")
        add(p, "--limit", type=int, help="read at most N word vectors per language")

    p = sub.add_parser("align", allow_abbrev=False, help="fit an orthogonal map from target to source word vectors")
    add(p, "--src-vec")
    add(p, "--tgt-vec")
    add(p, "--dict", help="dictionary of 'source target' lines")
    add(p, "--limit", type=int)
    add(p, "--casefold", action="store_true", help="lowercase dictionary entries")
    add(p, "--reverse-dict", action="store_true", help="dictionary lines are 'target source'")
    add(p, "--out")
    common(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("transfer", allow_abbrev=False, help="initialize target token embeddings")
    tokenizer_opts(p)
    add(p, "--out")
    add(p, "--neighborhood-out", help="also export neighbourhoods as text")
    common(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("baseline", allow_abbrev=False, help="random (transinner) or shuffled source embeddings")
    add(p, "--method", choices=("transinner", "shuffle"), default="transinner")
    add(p, "--src-emb")
    add(p, "--tgt-vocab")
    add(p, "--seed", type=int, default=42)
    add(p, "--out")
    common(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("nearest", allow_abbrev=False, help="closest source token for a sample of target tokens")
    add(p, "--neighborhood", help="neighbourhood text file from 'transfer --neighborhood-out'")
    tokenizer_opts(p)
    add(p, "--n", type=int, default=10)
    add(p, "--surface", action="store_true", help="show decoded token text")
    add(p, "--json", action="store_true")
    common(p)
    p.set_defaults(func=cmd_nearest)

    p = sub.add_parser("eval-synthetic", allow_abbrev=False, help="score initializers on synthetic language pairs")
    add(p, "--v", type=int, default=1000)
    add(p, "--d", type=int, default=64)
    add(p, "--m", type=int, default=64)
    add(p, "--noise", type=float, default=0.05)
    add(p, "--seeds", type=int, default=5)
    add(p, "--seed", type=int, default=0, help="first fixture seed")
    add(p, "--dict-size", type=int, default=200)
    add(p, "--k", type=int, default=10)
    add(p, "--tau", type=float, default=0.1)
    add(p, "--json", action="store_true")
    common(p)
    p.set_defaults(func=cmd_eval_synthetic)
    return parser


def _read_config(path: str) -> dict:
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return values


def _apply_config(args, argv) -> None:
    explicit = vars(build_parser(suppress_defaults=True).parse_args(argv))
    subparser = build_parser()._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in subparser._actions}
    for key, raw in _read_config(args.config).items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise FormatError(f"{args.config}: unknown option {key!r} for '{args.command}'")
        if key in explicit:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            value = _bool(raw)
        else:
            try:
                value = action.type(raw) if action.type else raw
            except (ValueError, argparse.ArgumentTypeError) as e:
                raise FormatError(f"{args.config}: bad value for {key}: {e}") from None
            if action.choices is not None and value not in action.choices:
                raise FormatError(f"{args.config}: {key} must be one of {action.choices}")
        setattr(args, key, value)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.config:
            _apply_config(args, argv)
        return args.func(args)
    except NoUsablePairsError as e:
        code, msg = EXIT_NO_PAIRS, str(e)
    except DimensionError as e:
        code, msg = EXIT_DIMENSION, str(e)
    except TokenizerError as e:
        code, msg = EXIT_TOKENIZER, str(e)
    except (FormatError, UsageError, OSError, UnicodeDecodeError, json.JSONDecodeError, ValueError) as e:
        code, msg = EXIT_FORMAT, str(e)
    print(f"wechsel {args.command}: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
