"""Document-level inference by block coordinate updates.

Pass 0 translates every sentence with the plain sentence-level model.
Each further pass visits sentences in ascending order, rebuilds the
target memory from the current translations, re-translates the visited
sentence with the document-conditioned model, and replaces its
translation.  The audit records every visit with the old and new
conditional scores; with exhaustive search the new score can never be
below the old one, while beam search may occasionally regress (the
audit is how you see it).
"""

from __future__ import annotations

from dataclasses import dataclass

from .autodiff import ParamSet, paused_tape
from .config import ModelConfig, SearchConfig
from .doc_model import (score_in_context, snmt_traces_for_document,
                        translate_in_context)
from .exceptions import ConfigError
from .memory import SentenceLm, build_source_memory, build_target_memory, sentence_representations


@dataclass
class AuditRecord:
    doc_id: str
    bcd_pass: int
    sentence: int
    changed: bool
    old_score: float
    new_score: float

    def line(self) -> str:
        flag = "1" if self.changed else "0"
        return (f"{self.doc_id}\t{self.bcd_pass}\t{self.sentence}\t{flag}"
                f"\t{self.old_score:.12g}\t{self.new_score:.12g}")


def bcd_decode(src_doc, params: ParamSet, cfg: ModelConfig, search: SearchConfig,
               passes: int = 1, lm: SentenceLm | None = None, doc_id: str = "doc"):
    """Iteratively refine one document's translations.

    Returns (translations as token-id lists, audit records, final traces).
    ``passes`` = 0 yields the sentence-level initialization unchanged.
    """
    if passes < 0:
        raise ConfigError(f"passes must be >= 0, got {passes}")
    if cfg.use_src_memory and lm is None:
        raise ConfigError("source memory selected but no sentence LM provided")
    traces = snmt_traces_for_document(src_doc, params, cfg, search)
    audit = []
    m_src = None
    reps = None
    if cfg.use_src_memory:
        # depends only on the source document: built once, reused across passes
        reps = sentence_representations(src_doc, lm)
        with paused_tape():
            m_src = build_source_memory(src_doc, lm, params, cfg, reps=reps)
    for p in range(1, passes + 1):
        for t in range(len(src_doc)):
            m_trg = build_target_memory(traces) if cfg.use_trg_memory else None
            prev_state = None
            if cfg.prev_trg and t > 0:
                prev_state = traces[t - 1].final_state
            lm_rep = reps[t] if reps is not None else None
            old = traces[t]
            old_score = score_in_context(src_doc[t], old.tokens, old.ended, t,
                                         m_src, m_trg, params, cfg,
                                         lm_rep=lm_rep, prev_state=prev_state)
            tokens, trace = translate_in_context(src_doc[t], t, m_src, m_trg,
                                                 params, cfg, search,
                                                 lm_rep=lm_rep, prev_state=prev_state)
            changed = tokens != old.tokens
            audit.append(AuditRecord(doc_id=doc_id, bcd_pass=p, sentence=t,
                                     changed=changed, old_score=old_score,
                                     new_score=trace.score))
            traces[t] = trace
    translations = [tr.tokens for tr in traces]
    return translations, audit, traces
