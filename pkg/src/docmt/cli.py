"""Command-line operator surface.

Subcommands cover the whole pipeline: gen-synthetic, build-vocab,
pretrain-lm, train-stage1, train-stage2, translate, evaluate and
grad-check.  Every run writes a manifest (resolved configuration, seed,
content hashes of the inputs) into its output directory, enough to
reproduce the run byte for byte with --jobs 1.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from dataclasses import asdict

import numpy as np

from . import corpus as corpus_mod
from . import metrics
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (ModelConfig, SearchConfig, TrainConfig, config_from_dict,
                     parse_kv_file)
from .corpus import (SyntheticSpec, Vocabulary, build_vocab, gen_synthetic,
                     load_documents, load_source_documents, write_documents)
from .decoding import bcd_decode
from .exceptions import ConfigError, DataError, NumericsError, ShapeError
from .gradcheck import run_full_check
from .memory import SentenceLm
from .training import (TrainLog, TranslationModel, corpus_perplexity,
                       pretrain_sentence_lm, train_stage1, train_stage2)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir, resolved: dict, inputs: list):
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for key in sorted(resolved):
        lines.append(f"{key} = {resolved[key]}")
    for path in sorted(set(p for p in inputs if p)):
        lines.append(f"input.{os.path.basename(path)}.sha256 = {_sha256(path)}")
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _load_file_config(args) -> dict:
    if getattr(args, "config", None):
        return parse_kv_file(args.config)
    return {}


def _merged(args, file_cfg: dict, extra: dict | None = None) -> dict:
    """Resolved settings: config file first, explicit flags override."""
    resolved = dict(file_cfg)
    for key, val in vars(args).items():
        if key in ("func", "config"):
            continue
        if val is not None:
            resolved[key] = val
    if extra:
        resolved.update(extra)
    return {k: str(v) for k, v in resolved.items()}


def _model_config(file_cfg: dict, src_vocab: int, tgt_vocab: int, **overrides) -> ModelConfig:
    return config_from_dict(ModelConfig, file_cfg, src_vocab_size=src_vocab,
                            tgt_vocab_size=tgt_vocab, **overrides)


def _train_config(file_cfg: dict, **overrides) -> TrainConfig:
    return config_from_dict(TrainConfig, file_cfg, **overrides)


def _encode_docs(docs, src_vocab: Vocabulary, tgt_vocab: Vocabulary | None):
    out = []
    for doc in docs:
        enc = corpus_mod.Document(
            doc_id=doc.doc_id,
            src=[src_vocab.encode(s) for s in doc.src],
            tgt=None if doc.tgt is None or tgt_vocab is None
            else [tgt_vocab.encode(s) for s in doc.tgt],
        )
        out.append(enc)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_synthetic(args):
    file_cfg = _load_file_config(args)
    spec = config_from_dict(SyntheticSpec, file_cfg,
                            n_docs=args.n_docs, sents_per_doc=args.sents_per_doc,
                            len_min=args.len_min, len_max=args.len_max,
                            content_vocab=args.content_vocab,
                            n_ambiguous=args.n_ambiguous, amb_prob=args.amb_prob,
                            seed=args.seed)
    docs = gen_synthetic(spec)
    os.makedirs(args.out, exist_ok=True)
    src_path = os.path.join(args.out, f"{args.prefix}.src")
    tgt_path = os.path.join(args.out, f"{args.prefix}.tgt")
    write_documents(docs, src_path, tgt_path)
    _write_manifest(args.out, _merged(args, file_cfg, asdict(spec)), [])
    print(f"wrote {len(docs)} documents to {src_path} / {tgt_path}")
    return 0


def cmd_build_vocab(args):
    file_cfg = _load_file_config(args)
    docs = load_documents(args.src, args.tgt, min_sentences=1)
    src_vocab = build_vocab((s for d in docs for s in d.src), min_freq=args.min_freq)
    tgt_vocab = build_vocab((s for d in docs for s in d.tgt), min_freq=args.min_freq)
    os.makedirs(args.out, exist_ok=True)
    src_vocab.save(os.path.join(args.out, "src.vocab"))
    tgt_vocab.save(os.path.join(args.out, "tgt.vocab"))
    _write_manifest(args.out, _merged(args, file_cfg), [args.src, args.tgt])
    print(f"src vocab {len(src_vocab)} tokens, tgt vocab {len(tgt_vocab)} tokens")
    return 0


def _load_vocabs(args):
    return Vocabulary.load(args.src_vocab), Vocabulary.load(args.tgt_vocab)


def cmd_pretrain_lm(args):
    from .sentence_model import build_params

    file_cfg = _load_file_config(args)
    src_vocab, tgt_vocab = _load_vocabs(args)
    mcfg = _model_config(file_cfg, len(src_vocab), len(tgt_vocab))
    tcfg = _train_config(file_cfg, seed=args.seed, lm_epochs=args.epochs)
    docs = load_documents(args.train_src, args.train_tgt, min_sentences=1)
    enc = _encode_docs(docs, src_vocab, tgt_vocab)
    sentences = [s for d in enc for s in d.src]
    params = build_params(mcfg, seed=tcfg.seed)
    os.makedirs(args.out, exist_ok=True)
    log = TrainLog(os.path.join(args.out, "train.log"), verbose=args.verbose)
    _, history = pretrain_sentence_lm(sentences, params, mcfg, tcfg, log=log)
    ckpt = os.path.join(args.out, "lm.ckpt")
    save_checkpoint(ckpt, params, _config_echo(mcfg, tcfg))
    _write_manifest(args.out, _merged(args, file_cfg),
                    [args.train_src, args.train_tgt, args.src_vocab, args.tgt_vocab])
    print(f"lm perplexity {history[0]:.3f} -> {history[-1]:.3f}; checkpoint {ckpt}")
    return 0


def _config_echo(mcfg: ModelConfig, tcfg: TrainConfig) -> dict:
    echo = {f"model.{k}": v for k, v in asdict(mcfg).items()}
    echo.update({f"train.{k}": v for k, v in asdict(tcfg).items()})
    return echo


def _restore_configs(config: dict):
    mvals = {k[len("model."):]: v for k, v in config.items() if k.startswith("model.")}
    tvals = {k[len("train."):]: v for k, v in config.items() if k.startswith("train.")}
    return config_from_dict(ModelConfig, mvals), config_from_dict(TrainConfig, tvals)


def cmd_train_stage1(args):
    file_cfg = _load_file_config(args)
    src_vocab, tgt_vocab = _load_vocabs(args)
    params, config = load_checkpoint(args.model)
    mcfg, tcfg_saved = _restore_configs(config)
    tcfg = _train_config(file_cfg, seed=args.seed if args.seed is not None else tcfg_saved.seed,
                         stage1_epochs=args.epochs, batch_size=args.batch_size)
    train = _encode_docs(load_documents(args.train_src, args.train_tgt, min_sentences=1),
                         src_vocab, tgt_vocab)
    dev = _encode_docs(load_documents(args.dev_src, args.dev_tgt, min_sentences=1),
                       src_vocab, tgt_vocab)
    os.makedirs(args.out, exist_ok=True)
    log = TrainLog(os.path.join(args.out, "train.log"), verbose=args.verbose)
    history = train_stage1(train, dev, params, mcfg, tcfg, log=log)
    ckpt = os.path.join(args.out, "stage1.ckpt")
    save_checkpoint(ckpt, params, _config_echo(mcfg, tcfg))
    _write_manifest(args.out, _merged(args, file_cfg),
                    [args.train_src, args.train_tgt, args.dev_src, args.dev_tgt,
                     args.src_vocab, args.tgt_vocab, args.model])
    print(f"stage1 best dev perplexity {min(h[1] for h in history):.4f}; checkpoint {ckpt}")
    return 0


def cmd_train_stage2(args):
    file_cfg = _load_file_config(args)
    src_vocab, tgt_vocab = _load_vocabs(args)
    params, config = load_checkpoint(args.model)
    mcfg, tcfg_saved = _restore_configs(config)
    overrides = {}
    if args.variant is not None:
        overrides["variant"] = args.variant
    if args.memories is not None:
        overrides["memories"] = args.memories
    if overrides:
        mvals = {k: str(v) for k, v in asdict(mcfg).items()}
        mvals.update({k: str(v) for k, v in overrides.items()})
        mcfg = config_from_dict(ModelConfig, mvals)
    tcfg = _train_config(file_cfg, seed=args.seed if args.seed is not None else tcfg_saved.seed,
                         stage2_epochs=args.epochs, target_memory=args.target_memory)
    train = _encode_docs(load_documents(args.train_src, args.train_tgt), src_vocab, tgt_vocab)
    dev = _encode_docs(load_documents(args.dev_src, args.dev_tgt), src_vocab, tgt_vocab)
    search = SearchConfig(beam_size=args.beam if args.beam else 4,
                          max_len=args.max_len if args.max_len else 20)
    lm = SentenceLm(params, mcfg)
    if not lm.frozen:
        raise DataError("checkpoint lacks a pretrained sentence LM (run pretrain-lm first)")
    os.makedirs(args.out, exist_ok=True)
    log = TrainLog(os.path.join(args.out, "train.log"), verbose=args.verbose)
    history = train_stage2(train, dev, params, mcfg, tcfg, lm, search=search, log=log)
    ckpt = os.path.join(args.out, "stage2.ckpt")
    save_checkpoint(ckpt, params, _config_echo(mcfg, tcfg))
    _write_manifest(args.out, _merged(args, file_cfg),
                    [args.train_src, args.train_tgt, args.dev_src, args.dev_tgt,
                     args.src_vocab, args.tgt_vocab, args.model])
    print(f"stage2 dev perplexity {history[0]:.4f} -> {min(history):.4f}; checkpoint {ckpt}")
    return 0


def _translate_one(doc, params, mcfg, search, passes, lm):
    translations, audit, _ = bcd_decode(doc.src, params, mcfg, search,
                                        passes=passes, lm=lm, doc_id=doc.doc_id)
    return translations, audit


def cmd_translate(args):
    file_cfg = _load_file_config(args)
    src_vocab, tgt_vocab = _load_vocabs(args)
    params, config = load_checkpoint(args.model)
    mcfg, _ = _restore_configs(config)
    overrides = {}
    if args.variant is not None:
        overrides["variant"] = args.variant
    if args.memories is not None:
        overrides["memories"] = args.memories
    if overrides:
        mvals = {k: str(v) for k, v in asdict(mcfg).items()}
        mvals.update(overrides)
        mcfg = config_from_dict(ModelConfig, mvals)
    search = SearchConfig(beam_size=args.beam if args.beam else 4,
                          max_len=args.max_len if args.max_len else 20)
    docs = load_source_documents(args.src)
    enc_docs = []
    for doc in docs:
        enc_docs.append(corpus_mod.Document(doc_id=doc.doc_id,
                                            src=[src_vocab.encode(s) for s in doc.src]))
    lm = SentenceLm(params, mcfg) if mcfg.use_src_memory else None
    passes = args.passes
    results = []
    if args.jobs and args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_translate_one, d, params, mcfg, search, passes, lm)
                       for d in enc_docs]
            results = [f.result() for f in futures]
    else:
        results = [_translate_one(d, params, mcfg, search, passes, lm) for d in enc_docs]
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "translations.txt")
    audit_path = os.path.join(args.out, "audit.txt")
    # one line per source sentence, flat: document structure follows the
    # source file, and empty translations stay unambiguous
    with open(out_path, "w", encoding="utf-8") as fh:
        for translations, _ in results:
            for ids in translations:
                fh.write(" ".join(tgt_vocab.decode(ids)) + "\n")
    with open(audit_path, "w", encoding="utf-8") as fh:
        fh.write("doc_id\tpass\tsentence\tchanged\told_score\tnew_score\n")
        for _, audit in results:
            for rec in audit:
                fh.write(rec.line() + "\n")
    _write_manifest(args.out, _merged(args, file_cfg),
                    [args.src, args.src_vocab, args.tgt_vocab, args.model])
    print(f"translated {len(results)} documents -> {out_path}")
    return 0


def _load_corpus_sentences(path):
    """Sentences and document lengths from a blank-line-separated corpus."""
    docs = load_source_documents(path)
    return [s for d in docs for s in d.src], [len(d.src) for d in docs]


def _load_candidate_lines(path):
    """Translations: one sentence per line, empty lines are sentences."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [line.split() for line in lines]


def cmd_evaluate(args):
    file_cfg = _load_file_config(args)
    lines = {}
    if args.metric in ("bleu", "bleu1"):
        cand = _load_candidate_lines(args.cand)
        ref, _ = _load_corpus_sentences(args.ref)
        if len(cand) != len(ref):
            raise DataError(f"{len(cand)} candidate vs {len(ref)} reference sentences")
        fn = metrics.bleu if args.metric == "bleu" else metrics.bleu1
        lines[args.metric] = f"{fn(cand, ref):.6f}"
        lines[f"{args.metric}.smoothing"] = "none"
    elif args.metric == "ppl":
        src_vocab, tgt_vocab = _load_vocabs(args)
        params, config = load_checkpoint(args.model)
        mcfg, _ = _restore_configs(config)
        docs = _encode_docs(load_documents(args.src, args.ref, min_sentences=1),
                            src_vocab, tgt_vocab)
        pairs = [(x, y) for d in docs for x, y in zip(d.src, d.tgt)]
        model = TranslationModel(params, mcfg)
        lines["perplexity"] = f"{metrics.perplexity(model, pairs):.6f}"
    elif args.metric == "consistency":
        cand = _load_candidate_lines(args.cand)
        src, src_lens = _load_corpus_sentences(args.src)
        if len(cand) != len(src):
            raise DataError("candidate and source sentence counts differ")
        score = metrics.consistency_score(cand, src, src_lens)
        lines["consistency"] = "n/a" if score is None else f"{score:.6f}"
    elif args.metric == "significance":
        cand_a = _load_candidate_lines(args.cand_a)
        cand_b = _load_candidate_lines(args.cand_b)
        ref, _ = _load_corpus_sentences(args.ref)
        fn = metrics.bleu if args.base_metric == "bleu" else metrics.bleu1
        p = metrics.bootstrap_significance(fn, cand_a, cand_b, ref,
                                           n_resamples=args.resamples,
                                           seed=args.seed if args.seed is not None else 12345)
        lines["p_value"] = f"{p:.6f}"
        lines["significant_at_0.05"] = "yes" if p < 0.05 else "no"
    else:
        raise UsageError(f"unknown metric '{args.metric}'")
    report = "\n".join(f"{k}\t{v}" for k, v in lines.items())
    print(report)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(report + "\n")
        inputs = [getattr(args, a, None) for a in
                  ("cand", "ref", "src", "cand_a", "cand_b", "model")]
        _write_manifest(args.out, _merged(args, file_cfg), [p for p in inputs if p])
    return 0


def cmd_grad_check(args):
    errors = run_full_check(seed=args.seed if args.seed is not None else 0)
    worst = 0.0
    for name in sorted(errors):
        print(f"{name}\t{errors[name]:.3e}")
        worst = max(worst, errors[name])
    print(f"max_relative_error\t{worst:.3e}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
            for name in sorted(errors):
                fh.write(f"{name}\t{errors[name]:.3e}\n")
            fh.write(f"max_relative_error\t{worst:.3e}\n")
        _write_manifest(args.out, _merged(args, _load_file_config(args)), [])
    if worst > args.tolerance:
        print(f"FAIL: {worst:.3e} exceeds tolerance {args.tolerance:g}", file=sys.stderr)
        return 3
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="docmt", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--config", help="key = value config file; flags override")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=out_default)
        p.add_argument("--verbose", action="store_true", default=None)

    p = sub.add_parser("gen-synthetic", help="generate the seeded synthetic corpus")
    common(p, "synthetic-out")
    p.add_argument("--n-docs", dest="n_docs", type=int, default=None)
    p.add_argument("--sents-per-doc", dest="sents_per_doc", type=int, default=None)
    p.add_argument("--len-min", dest="len_min", type=int, default=None)
    p.add_argument("--len-max", dest="len_max", type=int, default=None)
    p.add_argument("--content-vocab", dest="content_vocab", type=int, default=None)
    p.add_argument("--n-ambiguous", dest="n_ambiguous", type=int, default=None)
    p.add_argument("--amb-prob", dest="amb_prob", type=float, default=None)
    p.add_argument("--prefix", default="corpus")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("build-vocab", help="build source/target vocabularies")
    common(p, "vocab-out")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--min-freq", dest="min_freq", type=int, default=5)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("pretrain-lm", help="pretrain the sentence language model")
    common(p, "lm-out")
    p.add_argument("--train-src", required=True)
    p.add_argument("--train-tgt", required=True)
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_pretrain_lm)

    p = sub.add_parser("train-stage1", help="train the sentence-level model")
    common(p, "stage1-out")
    p.add_argument("--train-src", required=True)
    p.add_argument("--train-tgt", required=True)
    p.add_argument("--dev-src", required=True)
    p.add_argument("--dev-tgt", required=True)
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--model", required=True, help="checkpoint from pretrain-lm")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.set_defaults(func=cmd_train_stage1)

    p = sub.add_parser("train-stage2", help="train the document model")
    common(p, "stage2-out")
    p.add_argument("--train-src", required=True)
    p.add_argument("--train-tgt", required=True)
    p.add_argument("--dev-src", required=True)
    p.add_argument("--dev-tgt", required=True)
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--model", required=True, help="checkpoint from train-stage1")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--variant", choices=("mem-to-context", "mem-to-output"), default=None)
    p.add_argument("--memories", choices=("none", "src", "trg", "both"), default=None)
    p.add_argument("--target-memory", dest="target_memory",
                   choices=("generated", "gold"), default=None)
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--max-len", dest="max_len", type=int, default=None)
    p.set_defaults(func=cmd_train_stage2)

    p = sub.add_parser("translate", help="decode documents with coordinate updates")
    common(p, "translate-out")
    p.add_argument("--model", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--passes", type=int, default=1)
    p.add_argument("--variant", choices=("mem-to-context", "mem-to-output"), default=None)
    p.add_argument("--memories", choices=("none", "src", "trg", "both"), default=None)
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--max-len", dest="max_len", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="score translations")
    common(p, None)
    p.add_argument("metric", choices=("bleu", "bleu1", "ppl", "consistency", "significance"))
    p.add_argument("--cand")
    p.add_argument("--ref")
    p.add_argument("--src")
    p.add_argument("--cand-a", dest="cand_a")
    p.add_argument("--cand-b", dest="cand_b")
    p.add_argument("--model")
    p.add_argument("--src-vocab")
    p.add_argument("--tgt-vocab")
    p.add_argument("--base-metric", dest="base_metric", choices=("bleu", "bleu1"),
                   default="bleu")
    p.add_argument("--resamples", type=int, default=1000)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grad-check", help="finite-difference gradient validation")
    common(p, None)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 1
    except (DataError, ShapeError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericsError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
