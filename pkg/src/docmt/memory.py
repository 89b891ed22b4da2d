"""External memories over document sentences.

The read primitive is a softmax-weighted convex combination of memory
cells.  Excluding a cell masks its score out of the normalization, so
its probability is exactly zero and no infinities are ever stored.

The source memory is hierarchical: a frozen sentence-level bidirectional
LSTM produces one representation per sentence, and a document-level
bidirectional GRU (trained end to end) turns those into cells.  The
target memory's cells are simply the final decoder states of the
document's current translations.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import layers
from .autodiff import ParamSet, Tensor, add, concat, matmul, paused_tape, softmax, stack
from .config import ModelConfig
from .corpus import BOS_ID, EOS_ID
from .exceptions import ConfigError, DataError, ShapeError
from .layers import LstmParams, lstm_step


@dataclass
class Memory:
    """K memory cells with an optional excluded index."""

    cells: Tensor  # (K, cell dim)
    origin: str    # "source" | "target"
    excluded: Optional[int] = None

    @property
    def k(self) -> int:
        return self.cells.data.shape[0]

    @property
    def dim(self) -> int:
        return self.cells.data.shape[1]

    def with_excluded(self, t: int) -> "Memory":
        if not (0 <= t < self.k):
            raise ShapeError(f"excluded index {t} outside {self.k} cells")
        return replace(self, excluded=t)


def mem_read(mem: Memory, query: Tensor):
    """Read from memory: relevance distribution and blended output.

    Returns (p, out) with p a probability vector over cells, the
    excluded cell's probability exactly zero, and out = sum_i p_i m_i.
    """
    if query.data.ndim != 1 or query.data.shape[0] != mem.dim:
        raise ShapeError(f"query shape {query.data.shape} does not match cell dim {mem.dim}")
    if mem.excluded is not None and mem.k == 1:
        raise ConfigError("cannot read a single-cell memory with its only cell excluded")
    scores = matmul(mem.cells, query)
    mask = None
    if mem.excluded is not None:
        mask = np.zeros(mem.k, dtype=bool)
        mask[mem.excluded] = True
    p = softmax(scores, mask=mask)
    return p, matmul(p, mem.cells)


class SentenceLm:
    """Sentence-level bidirectional LSTM with language-model heads.

    Pre-trained on the source side, then frozen: representation passes
    run detached from any tape, so document-model training never touches
    these parameters.
    """

    def __init__(self, params: ParamSet, cfg: ModelConfig):
        self.params = params
        self.cfg = cfg
        self.emb = params["lm.emb"]
        self.fwd = LstmParams.from_params(params, "lm_fwd")
        self.bwd = LstmParams.from_params(params, "lm_bwd")

    @property
    def frozen(self) -> bool:
        return "lm.emb" in self.params.frozen

    def _embed(self, ids):
        table = self.emb.data
        vocab = table.shape[0]
        rows = []
        for i in ids:
            i = int(i)
            if not (0 <= i < vocab):
                i = 0  # out-of-vocabulary ids fall back to unk
            rows.append(Tensor(table[i].copy()))
        return rows

    def representation(self, ids) -> np.ndarray:
        """Concatenation of the final forward and backward LSTM states."""
        if len(ids) == 0:
            raise DataError("cannot represent an empty sentence")
        with paused_tape():
            seq = self._embed(ids)
            _, fwd_final, bwd_final = layers.birnn(seq, self.fwd, self.bwd)
            rep = concat([fwd_final, bwd_final])
        return rep.data

    def loss(self, ids):
        """Language-model objective for one sentence.

        The forward LSTM predicts each next token (and end-of-sentence);
        the backward LSTM predicts each previous token (and start). The
        two negative log-likelihoods are summed.  Returns (loss tensor,
        number of predictions).
        """
        from .autodiff import embedding, log_softmax, scalar_mul, slice_, sum_

        if len(ids) == 0:
            raise DataError("cannot score an empty sentence")
        picked = []

        def direction(inputs, targets, cell, head_w, head_b):
            state = (Tensor(np.zeros(cell.hidden_dim)), Tensor(np.zeros(cell.hidden_dim)))
            for x, t in zip(inputs, targets):
                state = lstm_step(embedding(self.params["lm.emb"], int(x)), state, cell)
                logits = add(matmul(self.params[head_w], state[0]), self.params[head_b])
                lp = log_softmax(logits)
                picked.append(slice_(lp, int(t), int(t) + 1))

        fwd_in = [BOS_ID] + list(ids)
        fwd_tgt = list(ids) + [EOS_ID]
        direction(fwd_in, fwd_tgt, self.fwd, "lm.out_fwd.w", "lm.out_fwd.b")
        rev = list(reversed(ids))
        bwd_in = [EOS_ID] + rev
        bwd_tgt = rev + [BOS_ID]
        direction(bwd_in, bwd_tgt, self.bwd, "lm.out_bwd.w", "lm.out_bwd.b")
        loss = scalar_mul(sum_(concat(picked)), -1.0)
        return loss, len(picked)

    def corpus_perplexity(self, sentences) -> float:
        total, count = 0.0, 0
        with paused_tape():
            for ids in sentences:
                loss, n = self.loss(ids)
                total += loss.item()
                count += n
        if count == 0:
            raise DataError("perplexity over an empty corpus")
        return float(np.exp(total / count))


def sentence_representations(src_doc, lm: SentenceLm) -> list:
    """Frozen sentence representations for one document (plain arrays)."""
    return [lm.representation(sent) for sent in src_doc]


def build_source_memory(src_doc, lm: SentenceLm, params: ParamSet, cfg: ModelConfig,
                        reps=None, drop=None) -> Memory:
    """Hierarchical source memory: document GRU over sentence reps.

    Built once per document.  The document-level GRU participates in the
    active tape (it trains end to end); the sentence representations are
    constants from the frozen sentence model.
    """
    if len(src_doc) == 0:
        raise DataError("cannot build memory for an empty document")
    if reps is None:
        reps = sentence_representations(src_doc, lm)
    seq = [Tensor(r) for r in reps]
    fwd = layers.GruParams.from_params(params, "doc_fwd")
    bwd = layers.GruParams.from_params(params, "doc_bwd")
    joined, _, _ = layers.birnn(seq, fwd, bwd)
    if drop is not None:
        joined = [drop.doc(c) for c in joined]
    return Memory(cells=stack(joined), origin="source")


def query_source(mem: Memory, query_rep: Tensor, exclude: int, params: ParamSet,
                 cfg: ModelConfig) -> Tensor:
    """Context vector read from the source memory for sentence ``exclude``.

    Single-sentence documents have no other cells to read; the context
    degrades to a zero vector so the model reduces to the plain
    sentence-level one.
    """
    if mem.k == 1:
        return Tensor(np.zeros(mem.dim))
    q = query_rep
    if "mem.query_src" in params:
        q = matmul(params["mem.query_src"], q)
    elif q.data.shape[0] != mem.dim:
        raise ShapeError(f"source query dim {q.data.shape[0]} != cell dim {mem.dim}")
    _, out = mem_read(mem.with_excluded(exclude), q)
    return out


def build_target_memory(traces) -> Memory:
    """Target memory whose cell t is sentence t's final decoder state."""
    if len(traces) == 0:
        raise DataError("cannot build memory for an empty document")
    cells = []
    for t, trace in enumerate(traces):
        if trace is None:
            raise DataError(f"missing decoder trace for sentence {t}")
        cells.append(np.asarray(trace.final_state, dtype=np.float64))
    return Memory(cells=Tensor(np.stack(cells)), origin="target")


def query_target(mem: Memory, s_t, h_rep: Tensor, exclude: int, params: ParamSet,
                 cfg: ModelConfig) -> Tensor:
    """Context read from the target memory with a noise-robust query.

    The query is the sentence's current final decoder state plus a
    learned projection of the source representation, which keeps the
    read usable even when the current translation is poor.
    """
    if mem.k == 1:
        return Tensor(np.zeros(mem.dim))
    s_q = s_t if isinstance(s_t, Tensor) else Tensor(np.asarray(s_t, dtype=np.float64))
    q = add(s_q, matmul(params["mem.query_trg"], h_rep))
    _, out = mem_read(mem.with_excluded(exclude), q)
    return out
