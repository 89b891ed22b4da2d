import numpy as np
import pytest

from docmt.config import ModelConfig, SearchConfig, TrainConfig
from docmt.corpus import Document, SyntheticSpec, build_vocab, gen_synthetic
from docmt.sentence_model import build_params


def tiny_config(**kw) -> ModelConfig:
    base = dict(src_vocab_size=11, tgt_vocab_size=12, embed_dim=5, hidden_dim=6,
                align_dim=4, lm_hidden_dim=5, doc_hidden_dim=6,
                variant="mem-to-context", memories="both")
    base.update(kw)
    return ModelConfig(**base)


def tiny_params(cfg=None, seed=1):
    cfg = cfg or tiny_config()
    return cfg, build_params(cfg, seed=seed)


def random_sentence(rng, cfg, side="src", lo=3, length=None):
    vocab = cfg.src_vocab_size if side == "src" else cfg.tgt_vocab_size
    n = length if length is not None else int(rng.integers(2, 5))
    return [int(t) for t in rng.integers(lo, vocab, size=n)]


def encode_documents(docs, src_vocab, tgt_vocab):
    return [Document(doc_id=d.doc_id,
                     src=[src_vocab.encode(s) for s in d.src],
                     tgt=[tgt_vocab.encode(s) for s in d.tgt])
            for d in docs]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def micro_corpus():
    """A small trained-through corpus setup shared by slower tests."""
    spec = SyntheticSpec(n_docs=14, sents_per_doc=4, len_min=2, len_max=3,
                         content_vocab=8, n_ambiguous=2, amb_prob=0.6, seed=3)
    docs = gen_synthetic(spec)
    sv = build_vocab((s for d in docs for s in d.src), min_freq=1)
    tv = build_vocab((s for d in docs for s in d.tgt), min_freq=1)
    enc = encode_documents(docs, sv, tv)
    return dict(docs=docs, src_vocab=sv, tgt_vocab=tv,
                train=enc[:10], dev=enc[10:], spec=spec)
