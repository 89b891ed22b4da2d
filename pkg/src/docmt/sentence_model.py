"""Attentional encoder-decoder translation model.

The encoder is a bidirectional GRU over source embeddings; the decoder
is a tanh recurrence with additive attention and a readout layer.
Document context enters the decoder either inside the state update
("mem-to-context"), in the output layer ("mem-to-output"), or as the
previous sentence's final decoder state ("prev-trg").  With all context
vectors absent or zero, every variant reproduces the plain
sentence-level model bit for bit.

Teacher-forced target sequences must end with the end-of-sentence id;
decoding emits tokens until EOS or a length cap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import layers
from .autodiff import (ParamSet, Tensor, add, concat, embedding, log_softmax,
                       make_dropout_mask, matmul, paused_tape, scalar_mul,
                       slice_, softmax, stack, sum_, tanh)
from .config import ModelConfig, SearchConfig
from .corpus import BOS_ID, EOS_ID
from .exceptions import ConfigError, DataError, ShapeError
from .layers import AffineParams, GruParams, LstmParams, gru_step, init_uniform


@dataclass
class DecodeContext:
    """Per-sentence conditioning vectors, constant across decode steps."""

    src: Optional[Tensor] = None
    trg: Optional[Tensor] = None
    prev: Optional[Tensor] = None

    def is_empty(self) -> bool:
        return self.src is None and self.trg is None and self.prev is None


class DropoutPlan:
    """Draws scaled keep-masks from one generator, in call order."""

    def __init__(self, rng, rate_enc_dec: float = 0.0, rate_doc: float = 0.0):
        self.rng = rng
        self.rate_enc_dec = rate_enc_dec
        self.rate_doc = rate_doc

    def _apply(self, t: Tensor, rate: float) -> Tensor:
        if rate <= 0.0:
            return t
        from .autodiff import dropout

        return dropout(t, make_dropout_mask(self.rng, t.data.shape, rate))

    def enc_dec(self, t: Tensor) -> Tensor:
        return self._apply(t, self.rate_enc_dec)

    def doc(self, t: Tensor) -> Tensor:
        return self._apply(t, self.rate_doc)


def build_params(cfg: ModelConfig, seed: int = 1) -> ParamSet:
    """Create every parameter tensor the pipeline can need.

    Both integration variants' projection matrices are always present so
    one checkpoint layout serves the whole pipeline.  Language-model
    output heads start at zero (untrained predictions are uniform); all
    other tensors are uniform in [-0.08, 0.08] from the seeded generator.
    """
    rng = np.random.default_rng(seed)
    ps = ParamSet()
    h, e, a = cfg.hidden_dim, cfg.embed_dim, cfg.align_dim
    ps.add("src_emb", init_uniform(rng, (cfg.src_vocab_size, e)))
    ps.merge(GruParams.create(rng, e, h).named("enc_fwd"))
    ps.merge(GruParams.create(rng, e, h).named("enc_bwd"))
    ps.merge(AffineParams.create(rng, h, h).named("init"))
    ps.add("att.src_proj", init_uniform(rng, (2 * h, a)))
    ps.add("att.state_proj", init_uniform(rng, (a, h)))
    ps.add("att.score", init_uniform(rng, (a,)))
    ps.add("tgt_emb", init_uniform(rng, (cfg.tgt_vocab_size, e)))
    ps.add("dec.w_state", init_uniform(rng, (h, h)))
    ps.add("dec.w_emb", init_uniform(rng, (h, e)))
    ps.add("dec.w_ctx", init_uniform(rng, (h, 2 * h)))
    if cfg.decoder_layers == 2:
        ps.merge(GruParams.create(rng, h, h).named("dec2"))
    ps.add("read.w_ctx", init_uniform(rng, (h, 2 * h)))
    ps.add("read.w_emb", init_uniform(rng, (h, e)))
    ps.add("out.w", init_uniform(rng, (cfg.tgt_vocab_size, h)))
    ps.add("out.b", init_uniform(rng, (cfg.tgt_vocab_size,)))
    ps.add("mem.state_src", init_uniform(rng, (h, cfg.src_cell_dim)))
    ps.add("mem.state_trg", init_uniform(rng, (h, cfg.trg_cell_dim)))
    ps.add("mem.out_src", init_uniform(rng, (cfg.tgt_vocab_size, cfg.src_cell_dim)))
    ps.add("mem.out_trg", init_uniform(rng, (cfg.tgt_vocab_size, cfg.trg_cell_dim)))
    ps.add("mem.query_trg", init_uniform(rng, (h, 2 * h)))
    if cfg.src_query_dim != cfg.src_cell_dim:
        ps.add("mem.query_src", init_uniform(rng, (cfg.src_cell_dim, cfg.src_query_dim)))
    ps.add("prev.w", init_uniform(rng, (h, h)))
    ps.merge(GruParams.create(rng, 2 * cfg.lm_hidden_dim, cfg.doc_hidden_dim).named("doc_fwd"))
    ps.merge(GruParams.create(rng, 2 * cfg.lm_hidden_dim, cfg.doc_hidden_dim).named("doc_bwd"))
    ps.add("lm.emb", init_uniform(rng, (cfg.src_vocab_size, e)))
    ps.merge(LstmParams.create(rng, e, cfg.lm_hidden_dim).named("lm_fwd"))
    ps.merge(LstmParams.create(rng, e, cfg.lm_hidden_dim).named("lm_bwd"))
    ps.add("lm.out_fwd.w", Tensor(np.zeros((cfg.src_vocab_size, cfg.lm_hidden_dim))))
    ps.add("lm.out_fwd.b", Tensor(np.zeros(cfg.src_vocab_size)))
    ps.add("lm.out_bwd.w", Tensor(np.zeros((cfg.src_vocab_size, cfg.lm_hidden_dim))))
    ps.add("lm.out_bwd.b", Tensor(np.zeros(cfg.src_vocab_size)))
    return ps


LM_PREFIXES = ("lm.", "lm_fwd.", "lm_bwd.")


def lm_param_names(params: ParamSet):
    return [n for n in params.names() if n.startswith(LM_PREFIXES)]


@dataclass
class Annotations:
    """Per-word encoder states plus the sentence representation."""

    rows: Tensor       # (source length, 2*hidden)
    sent_rep: Tensor   # (2*hidden,) final forward and backward states
    bwd_final: Tensor  # (hidden,)
    length: int


def encode(x, params: ParamSet, cfg: ModelConfig, drop: DropoutPlan | None = None) -> Annotations:
    """Run the bidirectional encoder over one source sentence."""
    if len(x) == 0:
        raise DataError("cannot encode an empty sentence")
    table = params["src_emb"]
    embs = [embedding(table, int(i)) for i in x]
    if drop is not None:
        embs = [drop.enc_dec(v) for v in embs]
    fwd = GruParams.from_params(params, "enc_fwd")
    bwd = GruParams.from_params(params, "enc_bwd")
    joined, fwd_final, bwd_final = layers.birnn(embs, fwd, bwd)
    return Annotations(
        rows=stack(joined),
        sent_rep=concat([fwd_final, bwd_final]),
        bwd_final=bwd_final,
        length=len(x),
    )


def init_state(ann: Annotations, params: ParamSet) -> Tensor:
    return tanh(AffineParams.from_params(params, "init")(ann.bwd_final))


def attend(s_prev: Tensor, ann: Annotations, params: ParamSet):
    """Additive attention: returns (weights over source words, context)."""
    proj = matmul(ann.rows, params["att.src_proj"])        # (n, align)
    sp = matmul(params["att.state_proj"], s_prev)          # (align,)
    scores = matmul(tanh(add(proj, stack([sp] * ann.length))), params["att.score"])
    alpha = softmax(scores)
    return alpha, matmul(alpha, ann.rows)


def _validate_ctx(variant: str, cfg: ModelConfig, ctx: DecodeContext | None):
    if variant == "none":
        if ctx is not None and not ctx.is_empty():
            raise ConfigError("variant 'none' does not accept context vectors")
        return
    if ctx is None:
        raise ConfigError(f"variant '{variant}' requires a decode context")
    if variant == "prev-trg":
        if ctx.prev is None or ctx.src is not None or ctx.trg is not None:
            raise ConfigError("variant 'prev-trg' takes exactly the previous-sentence state")
        return
    if variant not in ("mem-to-context", "mem-to-output"):
        raise ConfigError(f"unknown variant '{variant}'")
    if ctx.prev is not None and not cfg.prev_trg:
        raise ConfigError("previous-sentence state given but prev_trg is disabled")
    if ctx.src is None and ctx.trg is None and ctx.prev is None:
        raise ConfigError(f"variant '{variant}' requires at least one context vector")


@dataclass
class StepOut:
    state: Tensor             # layer-1 decoder state
    state2: Optional[Tensor]  # layer-2 state when stacked
    top: Tensor               # state feeding the readout
    logits: Tensor
    alpha: Tensor
    ctx_vec: Tensor
    readout: Tensor


def decode_step(s_prev: Tensor, y_prev: int, ann: Annotations, params: ParamSet,
                cfg: ModelConfig, ctx: DecodeContext | None = None,
                variant: str | None = None, drop: DropoutPlan | None = None,
                s2_prev: Tensor | None = None) -> StepOut:
    """One decoder step conditioned on the previously emitted token."""
    if variant is None:
        variant = "none" if ctx is None or ctx.is_empty() else cfg.variant
    _validate_ctx(variant, cfg, ctx)
    e_prev = embedding(params["tgt_emb"], int(y_prev))
    if drop is not None:
        e_prev = drop.enc_dec(e_prev)
    alpha, c = attend(s_prev, ann, params)
    pre = add(
        add(matmul(params["dec.w_state"], s_prev), matmul(params["dec.w_emb"], e_prev)),
        matmul(params["dec.w_ctx"], c),
    )
    if variant == "mem-to-context":
        if ctx.src is not None:
            pre = add(pre, matmul(params["mem.state_src"], ctx.src))
        if ctx.trg is not None:
            pre = add(pre, matmul(params["mem.state_trg"], ctx.trg))
    if ctx is not None and ctx.prev is not None:
        pre = add(pre, matmul(params["prev.w"], ctx.prev))
    s = tanh(pre)
    s2 = None
    top = s
    if cfg.decoder_layers == 2:
        if s2_prev is None:
            raise ShapeError("stacked decoder requires the layer-2 state")
        s2 = gru_step(s, s2_prev, GruParams.from_params(params, "dec2"))
        top = s2
    r = tanh(add(add(top, matmul(params["read.w_ctx"], c)), matmul(params["read.w_emb"], e_prev)))
    if drop is not None:
        r = drop.enc_dec(r)
    logits = add(matmul(params["out.w"], r), params["out.b"])
    if variant == "mem-to-output":
        if ctx.src is not None:
            logits = add(logits, matmul(params["mem.out_src"], ctx.src))
        if ctx.trg is not None:
            logits = add(logits, matmul(params["mem.out_trg"], ctx.trg))
    return StepOut(state=s, state2=s2, top=top, logits=logits, alpha=alpha,
                   ctx_vec=c, readout=r)


def _start_states(ann: Annotations, params: ParamSet, cfg: ModelConfig):
    s = init_state(ann, params)
    s2 = Tensor(np.zeros(cfg.hidden_dim)) if cfg.decoder_layers == 2 else None
    return s, s2


def nll(x, y, params: ParamSet, cfg: ModelConfig, ctx: DecodeContext | None = None,
        drop: DropoutPlan | None = None, variant: str | None = None,
        ann: Annotations | None = None) -> Tensor:
    """Teacher-forced negative log-likelihood of a target sequence.

    ``y`` must be non-empty and end with the end-of-sentence id; gold
    previous tokens are fed back at every step.  Pass ``ann`` to reuse
    an encoding computed on the same tape.
    """
    if len(y) == 0:
        raise DataError("empty target sequence")
    if y[-1] != EOS_ID:
        raise DataError("target sequence must end with the end-of-sentence id")
    if ann is None:
        ann = encode(x, params, cfg, drop=drop)
    s, s2 = _start_states(ann, params, cfg)
    prev = BOS_ID
    picked = []
    for tok in y:
        out = decode_step(s, prev, ann, params, cfg, ctx=ctx, variant=variant,
                          drop=drop, s2_prev=s2)
        lp = log_softmax(out.logits)
        picked.append(slice_(lp, int(tok), int(tok) + 1))
        s, s2, prev = out.state, out.state2, int(tok)
    return scalar_mul(sum_(concat(picked)), -1.0)


@dataclass
class DecoderTrace:
    """Record of one decoded (or force-scored) sentence.

    ``tokens`` excludes the end-of-sentence id; when the sequence
    terminated via EOS the trace still includes that final emission, so
    all per-step arrays have len(tokens) + 1 rows.  ``final_state`` is
    the top decoder state at the last step, the vector that represents
    this translation in the target memory.
    """

    tokens: list
    ended: bool
    states: np.ndarray
    alphas: np.ndarray
    contexts: np.ndarray
    log_probs: np.ndarray
    final_state: np.ndarray
    score: float
    mem_src: Optional[np.ndarray] = None
    mem_trg: Optional[np.ndarray] = None
    prev_state: Optional[np.ndarray] = None

    @property
    def steps(self) -> int:
        return len(self.log_probs)


def _trace_emissions(x, emissions, params, cfg, ctx, variant=None) -> DecoderTrace:
    """Force-score an emission sequence, recording the full trace.

    Runs detached from any active tape so traces are plain arrays.
    """
    if len(emissions) == 0:
        raise DataError("cannot trace an empty emission sequence")
    with paused_tape():
        ann = encode(x, params, cfg)
        s, s2 = _start_states(ann, params, cfg)
        prev = BOS_ID
        states, alphas, ctxs, lps = [], [], [], []
        top_last = None
        for tok in emissions:
            out = decode_step(s, prev, ann, params, cfg, ctx=ctx, variant=variant,
                              s2_prev=s2)
            lp = log_softmax(out.logits)
            states.append(out.state.data)
            alphas.append(out.alpha.data)
            ctxs.append(out.ctx_vec.data)
            lps.append(float(lp.data[int(tok)]))
            top_last = out.top.data
            s, s2, prev = out.state, out.state2, int(tok)
    ended = len(emissions) > 0 and emissions[-1] == EOS_ID
    tokens = list(emissions[:-1]) if ended else list(emissions)
    return DecoderTrace(
        tokens=[int(t) for t in tokens],
        ended=ended,
        states=np.array(states),
        alphas=np.array(alphas),
        contexts=np.array(ctxs),
        log_probs=np.array(lps),
        final_state=top_last.copy(),
        score=float(sum(lps)),
        mem_src=None if ctx is None or ctx.src is None else ctx.src.data.copy(),
        mem_trg=None if ctx is None or ctx.trg is None else ctx.trg.data.copy(),
        prev_state=None if ctx is None or ctx.prev is None else ctx.prev.data.copy(),
    )


def force_decode(x, y, params: ParamSet, cfg: ModelConfig,
                 ctx: DecodeContext | None = None, variant: str | None = None) -> DecoderTrace:
    """Trace for a gold, end-terminated target sequence."""
    if len(y) == 0:
        raise DataError("empty target sequence")
    if y[-1] != EOS_ID:
        raise DataError("target sequence must end with the end-of-sentence id")
    return _trace_emissions(x, [int(t) for t in y], params, cfg, ctx, variant)


def score_tokens(x, tokens, ended: bool, params: ParamSet, cfg: ModelConfig,
                 ctx: DecodeContext | None = None, variant: str | None = None) -> float:
    """Model score (sum of emission log-probs) of a token sequence."""
    emissions = list(tokens) + ([EOS_ID] if ended else [])
    if not emissions:
        return 0.0
    return _trace_emissions(x, emissions, params, cfg, ctx, variant).score


def _greedy_rollout(ann, params, cfg, search: SearchConfig, ctx, variant):
    """Pure argmax loop; ties resolve to the lowest token id."""
    s, s2 = _start_states(ann, params, cfg)
    prev = BOS_ID
    tokens, score, ended = [], 0.0, False
    for _ in range(search.max_len):
        out = decode_step(s, prev, ann, params, cfg, ctx=ctx, variant=variant, s2_prev=s2)
        lp = log_softmax(out.logits).data.copy()
        lp[BOS_ID] = -np.inf
        tok = int(np.argmax(lp))
        score += float(lp[tok])
        if tok == EOS_ID:
            ended = True
            break
        tokens.append(tok)
        s, s2, prev = out.state, out.state2, tok
    return tokens, ended, score


def greedy_decode(x, params: ParamSet, cfg: ModelConfig, search: SearchConfig,
                  ctx: DecodeContext | None = None, variant: str | None = None):
    with paused_tape():
        ann = encode(x, params, cfg)
        tokens, ended, _ = _greedy_rollout(ann, params, cfg, search, ctx, variant)
    emissions = tokens + ([EOS_ID] if ended else [])
    return tokens, _trace_emissions(x, emissions, params, cfg, ctx, variant)


def beam_decode(x, params: ParamSet, cfg: ModelConfig, search: SearchConfig,
                ctx: DecodeContext | None = None, variant: str | None = None):
    """Beam search by summed token log-probs (no length penalty).

    End-of-sentence competes for beam slots, so beam size 1 is exactly
    the greedy loop.  The greedy rollout is always included among the
    completed hypotheses, making the returned score a superset maximum
    of greedy's.  Completed-hypothesis ties break on the token sequence,
    which keeps wide-beam search aligned with exhaustive enumeration.
    """
    if search.mode == "exhaustive":
        return exhaustive_decode(x, params, cfg, search, ctx=ctx, variant=variant)
    with paused_tape():
        ann = encode(x, params, cfg)
        finished = []  # (score, tokens tuple)
        g_tokens, _, g_score = _greedy_rollout(ann, params, cfg, search, ctx, variant)
        finished.append((g_score, tuple(g_tokens)))
        s0, s20 = _start_states(ann, params, cfg)
        alive = [((), 0.0, s0, s20, BOS_ID)]
        for _ in range(search.max_len):
            candidates = []
            order = 0
            for tokens, score, s, s2, prev in alive:
                out = decode_step(s, prev, ann, params, cfg, ctx=ctx,
                                  variant=variant, s2_prev=s2)
                lp = log_softmax(out.logits).data
                for tok in range(lp.shape[0]):
                    if tok == BOS_ID:
                        continue
                    candidates.append((score + float(lp[tok]), order, tokens, tok,
                                       out.state, out.state2))
                    order += 1
            candidates.sort(key=lambda c: (-c[0], c[1]))
            alive = []
            for score, _, tokens, tok, s, s2 in candidates[: search.beam_size]:
                if tok == EOS_ID:
                    finished.append((score, tokens))
                else:
                    alive.append((tokens + (tok,), score, s, s2, tok))
            if not alive:
                break
        for tokens, score, _, _, _ in alive:
            finished.append((score, tokens))
        _, best_tokens = min(finished, key=lambda f: (-f[0], f[1]))
    # EOS-terminated hypotheses are strictly shorter than the cap
    ended = len(best_tokens) < search.max_len
    emissions = list(best_tokens) + ([EOS_ID] if ended else [])
    trace = _trace_emissions(x, emissions, params, cfg, ctx, variant)
    return list(best_tokens), trace


def exhaustive_decode(x, params: ParamSet, cfg: ModelConfig, search: SearchConfig,
                      ctx: DecodeContext | None = None, variant: str | None = None):
    """Argmax over every token sequence up to the length cap.

    Sequences shorter than the cap are scored with their end-of-sentence
    emission; sequences at the cap are scored as emitted.  Intended for
    tiny vocabularies in tests and audits.
    """
    with paused_tape():
        ann = encode(x, params, cfg)
        content = [t for t in range(cfg.tgt_vocab_size) if t not in (BOS_ID, EOS_ID)]
        s0, s20 = _start_states(ann, params, cfg)
        frontier = [((), 0.0, s0, s20, BOS_ID)]
        finished = []
        for _depth in range(search.max_len):
            next_frontier = []
            for tokens, score, s, s2, prev in frontier:
                out = decode_step(s, prev, ann, params, cfg, ctx=ctx,
                                  variant=variant, s2_prev=s2)
                lp = log_softmax(out.logits).data
                finished.append((score + float(lp[EOS_ID]), tokens))
                for tok in content:
                    next_frontier.append((tokens + (tok,), score + float(lp[tok]),
                                          out.state, out.state2, tok))
            frontier = next_frontier
        for tokens, score, _, _, _ in frontier:
            finished.append((score, tokens))
        _, best_tokens = min(finished, key=lambda f: (-f[0], f[1]))
    ended = len(best_tokens) < search.max_len
    emissions = list(best_tokens) + ([EOS_ID] if ended else [])
    trace = _trace_emissions(x, emissions, params, cfg, ctx, variant)
    return list(best_tokens), trace
