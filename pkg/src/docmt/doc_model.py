"""Document-conditioned translation: wiring memories into the decoder.

Context vectors are computed once per sentence (attention still varies
per step) and stay constant across that sentence's decode steps.  The
cell of the sentence being translated is excluded from every read, so
its own current translation never leaks into its context.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .autodiff import ParamSet, Tensor, add, paused_tape
from .config import ModelConfig, SearchConfig
from .corpus import EOS_ID
from .exceptions import ConfigError, DataError
from .memory import Memory, build_source_memory, build_target_memory, query_source, query_target
from .sentence_model import (Annotations, DecodeContext, beam_decode, encode,
                             exhaustive_decode, nll, score_tokens)


def _source_query_rep(ann: Annotations, lm_rep, cfg: ModelConfig) -> Tensor:
    if cfg.source_query == "encoder":
        return ann.sent_rep
    if lm_rep is None:
        raise ConfigError("source_query 'sentence-lm' needs sentence representations")
    return Tensor(np.asarray(lm_rep, dtype=np.float64))


def compute_contexts(t: int, ann: Annotations, m_src: Optional[Memory],
                     m_trg: Optional[Memory], params: ParamSet, cfg: ModelConfig,
                     lm_rep=None, prev_state=None) -> DecodeContext:
    """Per-sentence context vectors for sentence ``t`` of a document."""
    src_ctx = trg_ctx = prev_ctx = None
    if cfg.use_src_memory:
        if m_src is None:
            raise ConfigError("source memory selected but not provided")
        src_ctx = query_source(m_src, _source_query_rep(ann, lm_rep, cfg), t, params, cfg)
    if cfg.use_trg_memory:
        if m_trg is None:
            raise ConfigError("target memory selected but not provided")
        s_t = m_trg.cells.data[t]
        trg_ctx = query_target(m_trg, s_t, ann.sent_rep, t, params, cfg)
    if cfg.prev_trg:
        if prev_state is None:
            prev_state = np.zeros(cfg.hidden_dim)
        prev_ctx = Tensor(np.asarray(prev_state, dtype=np.float64))
    return DecodeContext(src=src_ctx, trg=trg_ctx, prev=prev_ctx)


def translate_in_context(x_t, t: int, m_src: Optional[Memory], m_trg: Optional[Memory],
                         params: ParamSet, cfg: ModelConfig, search: SearchConfig,
                         lm_rep=None, prev_state=None):
    """Decode sentence ``t`` given the document memories.

    Contexts are computed once and held fixed for all decode steps.
    With memory selection "none" (and no previous-sentence state) this
    is exactly the sentence-level decoder.
    """
    with paused_tape():
        ann = encode(x_t, params, cfg)
        ctx = compute_contexts(t, ann, m_src, m_trg, params, cfg,
                               lm_rep=lm_rep, prev_state=prev_state)
    variant = None if ctx.is_empty() else cfg.variant
    ctx_arg = None if ctx.is_empty() else ctx
    decode = exhaustive_decode if search.mode == "exhaustive" else beam_decode
    return decode(x_t, params, cfg, search, ctx=ctx_arg, variant=variant)


def score_in_context(x_t, tokens, ended: bool, t: int, m_src, m_trg,
                     params: ParamSet, cfg: ModelConfig,
                     lm_rep=None, prev_state=None) -> float:
    """Conditional model score of an existing translation of sentence t."""
    with paused_tape():
        ann = encode(x_t, params, cfg)
        ctx = compute_contexts(t, ann, m_src, m_trg, params, cfg,
                               lm_rep=lm_rep, prev_state=prev_state)
    variant = None if ctx.is_empty() else cfg.variant
    ctx_arg = None if ctx.is_empty() else ctx
    return score_tokens(x_t, tokens, ended, params, cfg, ctx=ctx_arg, variant=variant)


def doc_nll(src_doc, tgt_doc, traces, params: ParamSet, cfg: ModelConfig, lm=None,
            reps=None, drop=None):
    """Summed conditional NLL of a document's gold translations.

    ``traces`` hold the document's current translations (one per
    sentence); their final decoder states form the target memory and,
    when enabled, the previous-sentence conditioning.  Returns the loss
    tensor and the number of predicted tokens.
    """
    if len(src_doc) == 0:
        raise DataError("empty document")
    if len(src_doc) != len(tgt_doc):
        raise DataError("source/target sentence counts differ")
    m_src = None
    if cfg.use_src_memory:
        m_src = build_source_memory(src_doc, lm, params, cfg, reps=reps, drop=drop)
    m_trg = None
    if cfg.use_trg_memory:
        if traces is None:
            raise ConfigError("target memory selected but no translations provided")
        m_trg = build_target_memory(traces)
    total = None
    n_tokens = 0
    for t, (x_t, y_t) in enumerate(zip(src_doc, tgt_doc)):
        ann = encode(x_t, params, cfg, drop=drop)
        prev_state = None
        if cfg.prev_trg and t > 0:
            prev_state = traces[t - 1].final_state
        ctx = compute_contexts(t, ann, m_src, m_trg, params, cfg,
                               lm_rep=None if reps is None else reps[t],
                               prev_state=prev_state)
        variant = None if ctx.is_empty() else cfg.variant
        y_full = list(y_t) + [EOS_ID]
        loss_t = nll(x_t, y_full, params, cfg,
                     ctx=None if ctx.is_empty() else ctx,
                     drop=drop, variant=variant, ann=ann)
        n_tokens += len(y_full)
        total = loss_t if total is None else add(total, loss_t)
    return total, n_tokens


def snmt_traces_for_document(src_doc, params: ParamSet, cfg: ModelConfig,
                             search: SearchConfig) -> list:
    """Initial translations of each sentence by the plain sentence model."""
    traces = []
    for x_t in src_doc:
        _, trace = beam_decode(x_t, params, cfg, search, ctx=None, variant="none")
        traces.append(trace)
    return traces


def gold_traces_for_document(src_doc, tgt_doc, params: ParamSet, cfg: ModelConfig) -> list:
    """Teacher-forced traces of the gold translations (ablation path)."""
    from .sentence_model import force_decode

    traces = []
    for x_t, y_t in zip(src_doc, tgt_doc):
        traces.append(force_decode(x_t, list(y_t) + [EOS_ID], params, cfg))
    return traces
