"""Stage-wise optimization with plain SGD.

Stage 1 trains the translation parameters with zero memory readings
(equivalently, the sentence-level model).  Stage 2 warm-starts from
stage 1 and trains everything except the frozen sentence LM, one
document per minibatch, with target memories built from translations
generated once by the stage-1 model (or from gold translations for the
ablation).  Minibatch losses are normalized per predicted token and
gradients are clipped at a global norm before each step.

The training log is line-oriented: epoch, split, perplexity, learning
rate, wall-time seconds.  Wall-time is the one deliberately
non-reproducible field; checkpoints and outputs are byte-identical for
a fixed seed.
"""

from __future__ import annotations

import math
import sys
import time

import numpy as np

from .autodiff import ParamSet, Tape, add, backward, scalar_mul
from .config import ModelConfig, SearchConfig, TrainConfig
from .corpus import EOS_ID
from .doc_model import doc_nll, gold_traces_for_document, snmt_traces_for_document
from .exceptions import ConfigError, DataError, NumericsError
from .memory import SentenceLm, sentence_representations
from .sentence_model import DropoutPlan, lm_param_names, nll, score_tokens


def lr_schedule(stage: int, epoch: int, cfg: TrainConfig | None = None) -> float:
    """Learning rate for a 1-indexed epoch of the given stage.

    Stage 1: lr0 * decay^max(0, epoch - 4) with lr0=0.1, decay=0.5.
    Stage 2: lr0 * decay^max(0, epoch - 1) with lr0=0.08, decay=0.9.
    """
    if epoch < 1:
        raise ConfigError(f"epoch must be >= 1, got {epoch}")
    if stage == 1:
        lr0 = cfg.stage1_lr if cfg else 0.1
        decay = cfg.stage1_decay if cfg else 0.5
        after = cfg.stage1_decay_after if cfg else 4
    elif stage == 2:
        lr0 = cfg.stage2_lr if cfg else 0.08
        decay = cfg.stage2_decay if cfg else 0.9
        after = cfg.stage2_decay_after if cfg else 1
    else:
        raise ConfigError(f"unknown training stage {stage}")
    return lr0 * decay ** max(0, epoch - after)


def collect_gradients(gmap, params: ParamSet) -> dict:
    """Gradient arrays for every trainable parameter touched by the tape."""
    grads = {}
    for name, t in params.trainable_items():
        g = gmap.for_tensor(t)
        grads[name] = g
    return grads


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale gradients in place to a global norm cap; returns the norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def sgd_step(params: ParamSet, grads: dict, lr: float):
    """p <- p - lr * g for every trainable tensor; frozen stay untouched.

    A non-finite gradient rejects the whole step before any update.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for '{name}': step rejected")
    for name, g in grads.items():
        if name in params.frozen:
            continue
        t = params[name]
        if t.data.shape != np.shape(g):
            raise DataError(f"gradient shape mismatch for '{name}'")
        t.data -= lr * g
    return params


class TrainLog:
    """Line-oriented training log; also echoes to stderr when verbose."""

    def __init__(self, path=None, verbose=False):
        self.path = path
        self.verbose = verbose
        self.t0 = time.time()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("epoch\tsplit\tperplexity\tlr\twall_time\n")

    def record(self, epoch, split, ppl, lr):
        wall = time.time() - self.t0
        line = f"{epoch}\t{split}\t{ppl:.6f}\t{lr:.6g}\t{wall:.3f}"
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        if self.verbose:
            print(line, file=sys.stderr)

    def event(self, message):
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(f"# {message}\n")
        if self.verbose:
            print(f"# {message}", file=sys.stderr)


def _flatten_pairs(docs):
    pairs = []
    for doc in docs:
        for x, y in zip(doc.src, doc.tgt):
            pairs.append((x, y))
    return pairs


def sentence_nll_value(x, y, params, cfg, ctx=None, variant=None) -> float:
    """Evaluation-mode NLL of one pair (end-of-sentence included)."""
    return -score_tokens(x, list(y), True, params, cfg, ctx=ctx, variant=variant)


def corpus_perplexity(pairs, params, cfg) -> float:
    total = 0.0
    tokens = 0
    for x, y in pairs:
        total += sentence_nll_value(x, y, params, cfg)
        tokens += len(y) + 1
    if tokens == 0:
        raise DataError("perplexity over an empty corpus")
    return math.exp(total / tokens)


class TranslationModel:
    """Minimal scoring interface over a parameter set (for metrics)."""

    def __init__(self, params: ParamSet, cfg: ModelConfig):
        self.params = params
        self.cfg = cfg

    def sentence_nll(self, x, y) -> float:
        return sentence_nll_value(x, y, self.params, self.cfg)


def pretrain_sentence_lm(train_sentences, params: ParamSet, mcfg: ModelConfig,
                         tcfg: TrainConfig, log: TrainLog | None = None):
    """Train the sentence LM on source sentences; freeze it afterwards.

    Returns (SentenceLm, per-epoch training perplexities).  The epoch-0
    entry is the initialization perplexity, which equals the vocabulary
    size thanks to the zero-initialized output heads.
    """
    if len(train_sentences) == 0:
        raise DataError("empty language-model corpus")
    lm = SentenceLm(params, mcfg)
    lm_names = set(lm_param_names(params))
    rng = np.random.default_rng(tcfg.seed * 7919 + 11)
    history = [lm.corpus_perplexity(train_sentences)]
    if log:
        log.record(0, "lm-train", history[0], 0.0)
    for epoch in range(1, tcfg.lm_epochs + 1):
        order = rng.permutation(len(train_sentences))
        for start in range(0, len(order), tcfg.batch_size):
            batch = [train_sentences[i] for i in order[start : start + tcfg.batch_size]]
            with Tape() as tape:
                total = None
                count = 0
                for sent in batch:
                    loss, n = lm.loss(sent)
                    count += n
                    total = loss if total is None else add(total, loss)
                total = scalar_mul(total, 1.0 / count)
                gmap = backward(total, tape)
            grads = {n: gmap.for_tensor(params[n]) for n in lm_names}
            clip_gradients(grads, tcfg.clip_norm)
            try:
                sgd_step(params, grads, tcfg.lm_lr)
            except NumericsError as e:
                if log:
                    log.event(str(e))
        ppl = lm.corpus_perplexity(train_sentences)
        history.append(ppl)
        if log:
            log.record(epoch, "lm-train", ppl, tcfg.lm_lr)
    params.frozen |= lm_names
    return lm, history


def train_stage1(train_docs, dev_docs, params: ParamSet, mcfg: ModelConfig,
                 tcfg: TrainConfig, log: TrainLog | None = None):
    """Sentence-level training (memory readings held at zero).

    Selects the epoch with the best dev perplexity; the parameter set is
    left at that snapshot.  Returns the per-epoch (train_loss_per_token,
    dev_ppl) history.
    """
    pairs = _flatten_pairs(train_docs)
    dev_pairs = _flatten_pairs(dev_docs)
    if not pairs:
        raise DataError("empty training corpus")
    rng = np.random.default_rng(tcfg.seed * 104729 + 1)
    drop_rng = np.random.default_rng(tcfg.seed * 104729 + 2)
    history = []
    best_ppl = math.inf
    best_snap = None
    for epoch in range(1, tcfg.stage1_epochs + 1):
        lr = lr_schedule(1, epoch, tcfg)
        order = rng.permutation(len(pairs))
        epoch_loss = 0.0
        epoch_tokens = 0
        for start in range(0, len(order), tcfg.batch_size):
            batch = [pairs[i] for i in order[start : start + tcfg.batch_size]]
            drop = None
            if mcfg.dropout_enc_dec > 0:
                drop = DropoutPlan(drop_rng, rate_enc_dec=mcfg.dropout_enc_dec)
            with Tape() as tape:
                total = None
                count = 0
                for x, y in batch:
                    loss = nll(x, list(y) + [EOS_ID], params, mcfg, drop=drop)
                    count += len(y) + 1
                    total = loss if total is None else add(total, loss)
                norm_loss = scalar_mul(total, 1.0 / count)
                gmap = backward(norm_loss, tape)
            epoch_loss += norm_loss.item() * count
            epoch_tokens += count
            grads = collect_gradients(gmap, params)
            clip_gradients(grads, tcfg.clip_norm)
            try:
                sgd_step(params, grads, lr)
            except NumericsError as e:
                if log:
                    log.event(str(e))
        dev_ppl = corpus_perplexity(dev_pairs, params, mcfg) if dev_pairs else math.inf
        history.append((epoch_loss / max(epoch_tokens, 1), dev_ppl))
        if log:
            log.record(epoch, "stage1-dev", dev_ppl, lr)
        if dev_ppl < best_ppl:
            best_ppl = dev_ppl
            best_snap = params.snapshot()
    if best_snap is not None:
        params.restore(best_snap)
    return history


def build_trace_cache(docs, params: ParamSet, mcfg: ModelConfig, tcfg: TrainConfig,
                      search: SearchConfig):
    """Per-document translation traces used for the target memory.

    Produced once, before stage 2, with the stage-1 parameters: beam
    decodes for 'generated', teacher-forced gold runs for 'gold'.
    """
    cache = []
    for doc in docs:
        if tcfg.target_memory == "gold":
            cache.append(gold_traces_for_document(doc.src, doc.tgt, params, mcfg))
        else:
            cache.append(snmt_traces_for_document(doc.src, params, mcfg, search))
    return cache


def doc_corpus_perplexity(docs, caches, reps, params, mcfg, lm) -> float:
    total = 0.0
    tokens = 0
    for doc, traces, doc_reps in zip(docs, caches, reps):
        loss, n = doc_nll(doc.src, doc.tgt, traces, params, mcfg, lm=lm, reps=doc_reps)
        total += loss.item()
        tokens += n
    if tokens == 0:
        raise DataError("perplexity over an empty corpus")
    return math.exp(total / tokens)


def train_stage2(train_docs, dev_docs, params: ParamSet, mcfg: ModelConfig,
                 tcfg: TrainConfig, lm: SentenceLm, search: SearchConfig | None = None,
                 log: TrainLog | None = None):
    """Document-model training; one document per minibatch.

    Needs the stage-1 parameters in ``params`` (warm start) and the
    pretrained, frozen sentence LM.  Returns the history of per-epoch
    dev document perplexities (epoch 0 is the warm-start value).
    """
    if not train_docs:
        raise DataError("empty training corpus")
    for doc in train_docs:
        if len(doc.src) == 0:
            raise DataError("document with zero sentences")
    if search is None:
        search = SearchConfig()
    needs_traces = mcfg.use_trg_memory or mcfg.prev_trg
    train_traces = build_trace_cache(train_docs, params, mcfg, tcfg, search) if needs_traces else [None] * len(train_docs)
    dev_traces = build_trace_cache(dev_docs, params, mcfg, tcfg, search) if needs_traces else [None] * len(dev_docs)
    train_reps = [sentence_representations(d.src, lm) if mcfg.use_src_memory else None
                  for d in train_docs]
    dev_reps = [sentence_representations(d.src, lm) if mcfg.use_src_memory else None
                for d in dev_docs]
    rng = np.random.default_rng(tcfg.seed * 92821 + 5)
    drop_rng = np.random.default_rng(tcfg.seed * 92821 + 6)
    history = []
    warm = doc_corpus_perplexity(dev_docs, dev_traces, dev_reps, params, mcfg, lm) if dev_docs else math.inf
    history.append(warm)
    if log:
        log.record(0, "stage2-dev", warm, 0.0)
    best_ppl = warm
    best_snap = params.snapshot()
    for epoch in range(1, tcfg.stage2_epochs + 1):
        lr = lr_schedule(2, epoch, tcfg)
        order = rng.permutation(len(train_docs))
        for di in order:
            doc = train_docs[di]
            drop = None
            if mcfg.dropout_enc_dec > 0 or mcfg.dropout_doc > 0:
                drop = DropoutPlan(drop_rng, rate_enc_dec=mcfg.dropout_enc_dec,
                                   rate_doc=mcfg.dropout_doc)
            with Tape() as tape:
                loss, n = doc_nll(doc.src, doc.tgt, train_traces[di], params, mcfg,
                                  lm=lm, reps=train_reps[di], drop=drop)
                norm_loss = scalar_mul(loss, 1.0 / n)
                gmap = backward(norm_loss, tape)
            grads = collect_gradients(gmap, params)
            clip_gradients(grads, tcfg.clip_norm)
            try:
                sgd_step(params, grads, lr)
            except NumericsError as e:
                if log:
                    log.event(str(e))
        dev_ppl = doc_corpus_perplexity(dev_docs, dev_traces, dev_reps, params, mcfg, lm) if dev_docs else math.inf
        history.append(dev_ppl)
        if log:
            log.record(epoch, "stage2-dev", dev_ppl, lr)
        if dev_ppl < best_ppl:
            best_ppl = dev_ppl
            best_snap = params.snapshot()
    params.restore(best_snap)
    return history
