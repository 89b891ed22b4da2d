"""Document-aware corpus loading, vocabularies and the synthetic benchmark.

On-disk corpus format: UTF-8 text, one sentence per line, documents
separated by a single blank line; source and target files must have
their blank lines at the same line numbers.  A trailing blank line is
tolerated and never produces an empty final document.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import ConfigError, DataError

UNK_ID = 0
BOS_ID = 1
EOS_ID = 2
RESERVED = ("<unk>", "<s>", "</s>")


class Vocabulary:
    """Token ids with reserved entries 0=<unk>, 1=<s>, 2=</s>.

    Ids are deterministic: reserved first, then tokens by descending
    count with lexicographic tie-break.
    """

    def __init__(self, tokens_with_counts):
        self.id_to_token = list(RESERVED)
        self.counts = {}
        self.token_to_id = {tok: i for i, tok in enumerate(RESERVED)}
        for tok, count in tokens_with_counts:
            if tok in self.token_to_id:
                raise DataError(f"duplicate or reserved token '{tok}'")
            self.token_to_id[tok] = len(self.id_to_token)
            self.id_to_token.append(tok)
            self.counts[tok] = count

    def __len__(self):
        return len(self.id_to_token)

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.id_to_token[idx]

    def encode(self, tokens) -> list:
        return [self.id(t) for t in tokens]

    def decode(self, ids) -> list:
        return [self.id_to_token[i] for i in ids]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token[len(RESERVED):]:
                fh.write(f"{tok}\t{self.counts[tok]}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        pairs = []
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise DataError(f"{path}:{lineno}: expected 'token<TAB>count'")
                try:
                    pairs.append((parts[0], int(parts[1])))
                except ValueError as e:
                    raise DataError(f"{path}:{lineno}: bad count '{parts[1]}'") from e
        return cls(pairs)


def build_vocab(sentences, min_freq: int = 5) -> Vocabulary:
    """Count whitespace tokens and keep those with count >= min_freq."""
    counts = {}
    empty = True
    for sent in sentences:
        for tok in sent:
            empty = False
            counts[tok] = counts.get(tok, 0) + 1
    if empty:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = [(t, c) for t, c in counts.items() if c >= min_freq and t not in RESERVED]
    kept.sort(key=lambda tc: (-tc[1], tc[0]))
    return Vocabulary(kept)


@dataclass
class Document:
    """Ordered aligned sentence pairs; target side absent for raw input."""

    doc_id: str
    src: list
    tgt: Optional[list] = None

    def __len__(self):
        return len(self.src)


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    # a final newline yields one trailing empty element; drop it
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def _split_blocks(lines):
    blocks, current = [], []
    for line in lines:
        if line.strip() == "":
            if current:
                blocks.append(current)
                current = []
        else:
            current.append(line)
    if current:
        blocks.append(current)
    return blocks


def load_documents(src_path, tgt_path, lowercase: bool = False,
                   min_sentences: int = 2) -> list:
    """Load an aligned document corpus from parallel files.

    Blank lines must match between the two files; a mismatch is
    rejected naming the first offending line number.  Documents with
    fewer than ``min_sentences`` sentences are dropped.
    """
    src_lines = _read_lines(src_path)
    tgt_lines = _read_lines(tgt_path)
    n = max(len(src_lines), len(tgt_lines))
    for i in range(n):
        s = src_lines[i].strip() == "" if i < len(src_lines) else None
        t = tgt_lines[i].strip() == "" if i < len(tgt_lines) else None
        if s != t:
            raise DataError(f"blank-line mismatch between {src_path} and {tgt_path} at line {i + 1}")
    src_blocks = _split_blocks(src_lines)
    tgt_blocks = _split_blocks(tgt_lines)
    if len(src_blocks) != len(tgt_blocks):
        raise DataError("differing document counts between source and target files")
    docs = []
    for d, (sb, tb) in enumerate(zip(src_blocks, tgt_blocks)):
        if len(sb) != len(tb):
            raise DataError(f"document {d} has {len(sb)} source but {len(tb)} target sentences")
        if len(sb) < min_sentences:
            continue
        src = [_tokenize(line, lowercase) for line in sb]
        tgt = [_tokenize(line, lowercase) for line in tb]
        docs.append(Document(doc_id=f"doc{d}", src=src, tgt=tgt))
    return docs


def load_source_documents(src_path, lowercase: bool = False,
                          min_sentences: int = 1) -> list:
    blocks = _split_blocks(_read_lines(src_path))
    docs = []
    for d, sb in enumerate(blocks):
        if len(sb) < min_sentences:
            continue
        docs.append(Document(doc_id=f"doc{d}", src=[_tokenize(l, lowercase) for l in sb]))
    return docs


def _tokenize(line: str, lowercase: bool) -> list:
    if lowercase:
        line = line.lower()
    return line.split()


def write_documents(docs, src_path, tgt_path=None):
    """Write documents back in the blank-line-separated format."""
    with open(src_path, "w", encoding="utf-8") as fh:
        for d, doc in enumerate(docs):
            if d:
                fh.write("\n")
            for sent in doc.src:
                fh.write(" ".join(sent) + "\n")
    if tgt_path is not None:
        with open(tgt_path, "w", encoding="utf-8") as fh:
            for d, doc in enumerate(docs):
                if d:
                    fh.write("\n")
                for sent in doc.tgt:
                    fh.write(" ".join(sent) + "\n")


def write_sentences(sentences, path):
    """Write plain sentences preserving a known document structure."""
    with open(path, "w", encoding="utf-8") as fh:
        for d, doc_sents in enumerate(sentences):
            if d:
                fh.write("\n")
            for sent in doc_sents:
                fh.write(" ".join(sent) + "\n")


# ---------------------------------------------------------------------------
# synthetic document-consistency corpus


TOPIC_MARKERS = {"a": "topic_a", "b": "topic_b"}


@dataclass
class SyntheticSpec:
    """Knobs for the seeded ambiguous-token benchmark corpus.

    Each document draws a topic (a or b); sentence 1 carries the topic
    marker, translated to itself.  Content tokens translate by a fixed
    bijection.  Later sentences contain, with probability ``amb_prob``,
    one ambiguous token whose only correct translation depends on the
    document topic.  Generation is a pure function of the seed.
    """

    n_docs: int = 200
    sents_per_doc: int = 8
    len_min: int = 3
    len_max: int = 6
    content_vocab: int = 40
    n_ambiguous: int = 6
    amb_prob: float = 0.6
    seed: int = 1

    def __post_init__(self):
        for name in ("n_docs", "sents_per_doc", "len_min", "len_max",
                     "content_vocab", "n_ambiguous"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.len_min > self.len_max:
            raise ConfigError("len_min must not exceed len_max")
        if not (0.0 < self.amb_prob <= 1.0):
            raise ConfigError("amb_prob must lie in (0, 1]")
        if self.n_ambiguous > self.content_vocab:
            raise ConfigError("more ambiguous types than content vocabulary")


def _src_content(i: int) -> str:
    return f"w{i:02d}"


def _tgt_content(i: int) -> str:
    return f"v{i:02d}"


def gen_synthetic(spec: SyntheticSpec) -> list:
    """Generate a parallel document corpus exercising document context."""
    rng = np.random.default_rng(spec.seed)
    docs = []
    for d in range(spec.n_docs):
        topic = "a" if rng.random() < 0.5 else "b"
        marker = TOPIC_MARKERS[topic]
        src_sents, tgt_sents = [], []
        for s in range(spec.sents_per_doc):
            length = int(rng.integers(spec.len_min, spec.len_max + 1))
            ids = rng.integers(0, spec.content_vocab, size=length)
            src = [_src_content(i) for i in ids]
            tgt = [_tgt_content(i) for i in ids]
            if s == 0:
                src = [marker] + src
                tgt = [marker] + tgt
            elif rng.random() < spec.amb_prob:
                pos = int(rng.integers(0, length))
                k = int(rng.integers(0, spec.n_ambiguous))
                src[pos] = f"amb{k}"
                tgt[pos] = f"amb{k}_{topic}"
            src_sents.append(src)
            tgt_sents.append(tgt)
        docs.append(Document(doc_id=f"doc{d}", src=src_sents, tgt=tgt_sents))
    return docs


def document_topic(doc: Document) -> Optional[str]:
    """Read the topic of a synthetic document from its marker token."""
    for tok in doc.src[0]:
        for topic, marker in TOPIC_MARKERS.items():
            if tok == marker:
                return topic
    return None


def ambiguous_accuracy(src_docs, candidate_docs) -> Optional[float]:
    """Fraction of ambiguous source tokens rendered with the translation
    that matches the document topic; positions are aligned one-to-one.

    ``candidate_docs`` holds one list of token lists per document.
    Returns None when the corpus contains no ambiguous tokens.
    """
    total = correct = 0
    for doc, cand in zip(src_docs, candidate_docs):
        topic = document_topic(doc)
        if topic is None:
            continue
        for s, src_sent in enumerate(doc.src):
            cand_sent = cand[s] if s < len(cand) else []
            for i, tok in enumerate(src_sent):
                if not tok.startswith("amb"):
                    continue
                total += 1
                gold = f"{tok}_{topic}"
                if i < len(cand_sent) and cand_sent[i] == gold:
                    correct += 1
    if total == 0:
        return None
    return correct / total
