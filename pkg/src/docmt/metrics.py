"""Corpus BLEU, perplexity, consistency scoring and paired bootstrap.

BLEU is corpus-level with clipped n-gram precisions and the standard
brevity penalty, without smoothing: any zero precision yields score 0.
All functions are pure and deterministic given their seeds.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Optional

import numpy as np

from .exceptions import DataError


def _ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates, references, max_n: int = 4) -> float:
    """Corpus BLEU over token lists, in [0, 1]; single reference each."""
    if len(candidates) != len(references):
        raise DataError(f"{len(candidates)} candidates vs {len(references)} references")
    for ref in references:
        if len(ref) == 0:
            raise DataError("empty reference sentence")
    cand_len = sum(len(c) for c in candidates)
    ref_len = sum(len(r) for r in references)
    if cand_len == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        matched = total = 0
        for cand, ref in zip(candidates, references):
            counts = _ngram_counts(cand, n)
            if not counts:
                continue
            ref_counts = _ngram_counts(ref, n)
            total += sum(counts.values())
            matched += sum(min(c, ref_counts[g]) for g, c in counts.items())
        if matched == 0:
            return 0.0
        log_sum += math.log(matched / total)
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_sum / max_n)


def bleu1(candidates, references) -> float:
    """Unigram BLEU (clipped unigram precision with brevity penalty)."""
    return bleu(candidates, references, max_n=1)


def perplexity(model, corpus) -> float:
    """exp(total NLL / total target tokens); end tokens are counted.

    ``model`` must expose sentence_nll(src_tokens, tgt_tokens) returning
    the summed negative log-likelihood including the end-of-sentence
    prediction; ``corpus`` is an iterable of (src, tgt) token lists.
    """
    total_nll = 0.0
    total_tokens = 0
    for src, tgt in corpus:
        total_nll += model.sentence_nll(src, tgt)
        total_tokens += len(tgt) + 1
    if total_tokens == 0:
        raise DataError("perplexity over an empty corpus")
    return math.exp(total_nll / total_tokens)


def consistency_score(candidates, sources, doc_lengths) -> Optional[float]:
    """Within-document translation consistency of repeated source types.

    For every source token type occurring at least twice inside one
    document, the renderings are the candidate tokens at the same
    positions (a positional alignment heuristic; exact for corpora with
    a length-preserving token-level correspondence).  Returns the
    fraction of (document, type) cases whose renderings all agree, or
    None when no type repeats.
    """
    if len(candidates) != len(sources):
        raise DataError("candidate/source sentence counts differ")
    if sum(doc_lengths) != len(sources):
        raise DataError("document lengths do not cover the corpus")
    cases = consistent = 0
    offset = 0
    for length in doc_lengths:
        renderings = {}
        for s in range(offset, offset + length):
            src_sent = sources[s]
            cand_sent = candidates[s]
            for i, tok in enumerate(src_sent):
                word = cand_sent[i] if i < len(cand_sent) else "<missing>"
                renderings.setdefault(tok, []).append(word)
        for tok, words in renderings.items():
            if len(words) < 2:
                continue
            cases += 1
            if all(w == words[0] for w in words[1:]):
                consistent += 1
        offset += length
    if cases == 0:
        return None
    return consistent / cases


def bootstrap_significance(metric, system_a, system_b, references,
                           n_resamples: int = 1000, seed: int = 0) -> float:
    """Paired bootstrap p-value for "system_b beats system_a".

    Resamples sentence indices with replacement and reports the fraction
    of resamples on which system_b does not outscore system_a under the
    given corpus-level metric.
    """
    if n_resamples < 1:
        raise DataError(f"n_resamples must be >= 1, got {n_resamples}")
    if not (len(system_a) == len(system_b) == len(references)):
        raise DataError("system outputs and references are not aligned")
    n = len(references)
    rng = np.random.default_rng(seed)
    not_better = 0
    for _ in range(n_resamples):
        idx = rng.integers(0, n, size=n)
        sa = [system_a[i] for i in idx]
        sb = [system_b[i] for i in idx]
        rr = [references[i] for i in idx]
        if metric(sb, rr) <= metric(sa, rr):
            not_better += 1
    return not_better / n_resamples
