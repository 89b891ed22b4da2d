"""Finite-difference validation of analytic gradients.

Each check builds a deterministic scalar loss, runs the tape backward
pass, and compares against central differences.  Returns relative
errors keyed by check name so the CLI and tests can report per-layer
results.
"""

from __future__ import annotations

import numpy as np

from . import layers
from .autodiff import (ParamSet, Tensor, apply, grad_check, mul, sum_)
from .config import ModelConfig, SearchConfig
from .corpus import EOS_ID
from .doc_model import doc_nll, snmt_traces_for_document
from .memory import Memory, SentenceLm, mem_read, sentence_representations
from .sentence_model import (Annotations, DecodeContext, attend, build_params,
                             decode_step, lm_param_names, nll)


def _weighted(out: Tensor, rng) -> Tensor:
    w = Tensor(rng.normal(size=out.data.shape))
    return sum_(mul(out, w))


def check_op_gradients(seed: int = 0) -> dict:
    """One finite-difference check per op kind on random small inputs."""
    rng = np.random.default_rng(seed)
    errors = {}

    def run(name, point, f):
        errors[name] = grad_check(f, point, eps=1e-6)

    a = Tensor(rng.normal(size=(3, 2)))
    b = Tensor(rng.normal(size=(2, 4)))
    run("matmul(2d,2d)", {"a": a, "b": b},
        lambda: _weighted(apply("matmul", [a, b]), np.random.default_rng(1)))
    v = Tensor(rng.normal(size=2))
    run("matmul(2d,1d)", {"a": a, "v": v},
        lambda: _weighted(apply("matmul", [a, v]), np.random.default_rng(2)))
    run("matmul(1d,2d)", {"v": v, "b": b},
        lambda: _weighted(apply("matmul", [v, b]), np.random.default_rng(3)))
    u = Tensor(rng.normal(size=2))
    run("matmul(1d,1d)", {"v": v, "u": u}, lambda: apply("matmul", [v, u]))

    x = Tensor(rng.normal(size=5))
    y = Tensor(rng.normal(size=5))
    run("add", {"x": x, "y": y},
        lambda: _weighted(apply("add", [x, y]), np.random.default_rng(4)))
    run("elementwise-mul", {"x": x, "y": y},
        lambda: _weighted(apply("elementwise-mul", [x, y]), np.random.default_rng(5)))
    run("tanh", {"x": x}, lambda: _weighted(apply("tanh", [x]), np.random.default_rng(6)))
    run("sigmoid", {"x": x}, lambda: _weighted(apply("sigmoid", [x]), np.random.default_rng(7)))
    run("softmax", {"x": x}, lambda: _weighted(apply("softmax", [x]), np.random.default_rng(8)))
    mask = np.array([False, True, False, False, True])
    run("softmax(masked)", {"x": x},
        lambda: _weighted(apply("softmax", [x], mask=mask), np.random.default_rng(9)))
    run("log-softmax", {"x": x},
        lambda: _weighted(apply("log-softmax", [x]), np.random.default_rng(10)))
    run("concat", {"x": x, "y": y},
        lambda: _weighted(apply("concat", [x, y]), np.random.default_rng(11)))
    run("stack", {"x": x, "y": y},
        lambda: _weighted(apply("stack", [x, y]), np.random.default_rng(12)))
    run("slice", {"x": x},
        lambda: _weighted(apply("slice", [x], start=1, stop=4), np.random.default_rng(13)))
    table = Tensor(rng.normal(size=(4, 3)))
    run("embedding-lookup", {"table": table},
        lambda: _weighted(apply("embedding-lookup", [table], index=2), np.random.default_rng(14)))
    run("sum", {"x": x}, lambda: apply("sum", [x]))
    run("scalar-mul", {"x": x},
        lambda: _weighted(apply("scalar-mul", [x], scalar=1.7), np.random.default_rng(15)))
    dmask = np.array([2.0, 0.0, 2.0, 2.0, 0.0])
    run("dropout-mask", {"x": x},
        lambda: _weighted(apply("dropout-mask", [x], mask=dmask), np.random.default_rng(16)))
    return errors


def _tiny_config(variant="mem-to-context", memories="both", **kw) -> ModelConfig:
    base = dict(src_vocab_size=11, tgt_vocab_size=12, embed_dim=5, hidden_dim=6,
                align_dim=4, lm_hidden_dim=5, doc_hidden_dim=6,
                variant=variant, memories=memories)
    base.update(kw)
    return ModelConfig(**base)


def check_layer_gradients(seed: int = 0) -> dict:
    """Cell-level and model-layer checks at tiny dimensions."""
    rng = np.random.default_rng(seed)
    errors = {}

    gru = layers.GruParams.create(rng, 3, 4)
    x = Tensor(rng.normal(size=3))
    h = Tensor(rng.normal(size=4))
    point = dict(gru.named("gru"))
    point.update({"x": x, "h": h})
    errors["gru_step"] = grad_check(
        lambda: _weighted(layers.gru_step(x, h, gru), np.random.default_rng(20)), point)

    lstm = layers.LstmParams.create(rng, 3, 4)
    c = Tensor(rng.normal(size=4))
    point = dict(lstm.named("lstm"))
    point.update({"x": x, "h": h, "c": c})

    def lstm_loss():
        hh, cc = layers.lstm_step(x, (h, c), lstm)
        g = np.random.default_rng(21)
        return sum_(mul(apply("concat", [hh, cc]), Tensor(g.normal(size=8))))

    errors["lstm_step"] = grad_check(lstm_loss, point)

    seq = [Tensor(rng.normal(size=3)) for _ in range(3)]
    fwd = layers.GruParams.create(rng, 3, 4)
    bwd = layers.GruParams.create(rng, 3, 4)
    point = dict(fwd.named("fwd"))
    point.update(bwd.named("bwd"))
    for i, s in enumerate(seq):
        point[f"seq{i}"] = s

    def birnn_loss():
        joined, f_fin, b_fin = layers.birnn(seq, fwd, bwd)
        g = np.random.default_rng(22)
        total = _weighted(apply("stack", joined), g)
        return apply("add", [total, _weighted(apply("concat", [f_fin, b_fin]), g)])

    errors["birnn"] = grad_check(birnn_loss, point)

    aff = layers.AffineParams.create(rng, 3, 4)
    point = dict(aff.named("aff"))
    point["x"] = x
    errors["affine"] = grad_check(
        lambda: _weighted(aff(x), np.random.default_rng(23)), point)

    cells = Tensor(rng.normal(size=(4, 5)))
    q = Tensor(rng.normal(size=5))
    mem = Memory(cells=cells, origin="source", excluded=2)

    def mem_loss():
        p, out = mem_read(mem, q)
        g = np.random.default_rng(24)
        return apply("add", [_weighted(p, g), _weighted(out, g)])

    errors["mem_read(excluded)"] = grad_check(mem_loss, {"cells": cells, "q": q})

    cfg = _tiny_config()
    params = build_params(cfg, seed=seed + 1)
    ann_rows = Tensor(rng.normal(size=(3, 2 * cfg.hidden_dim)))
    ann = Annotations(rows=ann_rows, sent_rep=Tensor(rng.normal(size=2 * cfg.hidden_dim)),
                      bwd_final=Tensor(rng.normal(size=cfg.hidden_dim)), length=3)
    s_prev = Tensor(rng.normal(size=cfg.hidden_dim))
    point = {n: params[n] for n in ("att.src_proj", "att.state_proj", "att.score")}
    point.update({"rows": ann_rows, "s_prev": s_prev})

    def attend_loss():
        alpha, ctx = attend(s_prev, ann, params)
        g = np.random.default_rng(25)
        return apply("add", [_weighted(alpha, g), _weighted(ctx, g)])

    errors["attend"] = grad_check(attend_loss, point)

    for variant, ctx in (
        ("none", None),
        ("mem-to-context", DecodeContext(src=Tensor(rng.normal(size=cfg.src_cell_dim)),
                                         trg=Tensor(rng.normal(size=cfg.trg_cell_dim)))),
        ("mem-to-output", DecodeContext(src=Tensor(rng.normal(size=cfg.src_cell_dim)),
                                        trg=Tensor(rng.normal(size=cfg.trg_cell_dim)))),
    ):
        point = {n: params[n] for n in
                 ("dec.w_state", "dec.w_emb", "dec.w_ctx", "read.w_ctx", "read.w_emb",
                  "out.w", "out.b", "mem.state_src", "mem.state_trg",
                  "mem.out_src", "mem.out_trg", "tgt_emb")}
        point["s_prev"] = s_prev
        if ctx is not None:
            point["ctx_src"] = ctx.src
            point["ctx_trg"] = ctx.trg

        def step_loss(variant=variant, ctx=ctx):
            out = decode_step(s_prev, 3, ann, params, cfg, ctx=ctx, variant=variant)
            g = np.random.default_rng(26)
            return apply("add", [_weighted(out.logits, g), _weighted(out.state, g)])

        errors[f"decode_step({variant})"] = grad_check(step_loss, point)

    x_ids = [3, 4, 5]
    y_ids = [4, 6, EOS_ID]
    snmt_names = [n for n in params.names()
                  if n.split(".")[0] in ("src_emb", "tgt_emb", "init", "att", "dec",
                                         "read", "out") or n.startswith(("enc_fwd", "enc_bwd"))]
    point = {n: params[n] for n in snmt_names}
    errors["snmt_nll"] = grad_check(lambda: nll(x_ids, y_ids, params, cfg), point)

    lm = SentenceLm(params, cfg)
    point = {n: params[n] for n in lm_param_names(params)}
    errors["sentence_lm_loss"] = grad_check(lambda: lm.loss(x_ids)[0], point)
    return errors


def check_stage2_loss(seed: int = 0, variant: str = "mem-to-context") -> float:
    """Gradient fidelity of the full dual-memory document loss."""
    cfg = _tiny_config(variant=variant, memories="both")
    params = build_params(cfg, seed=seed + 2)
    params.frozen |= set(lm_param_names(params))
    lm = SentenceLm(params, cfg)
    rng = np.random.default_rng(seed + 3)
    src_doc = [list(rng.integers(3, cfg.src_vocab_size, size=3)) for _ in range(2)]
    tgt_doc = [list(rng.integers(3, cfg.tgt_vocab_size, size=3)) for _ in range(2)]
    search = SearchConfig(beam_size=2, max_len=4)
    traces = snmt_traces_for_document(src_doc, params, cfg, search)
    reps = sentence_representations(src_doc, lm)

    def loss():
        total, _ = doc_nll(src_doc, tgt_doc, traces, params, cfg, lm=lm, reps=reps)
        return total

    return grad_check(loss, params)


def run_full_check(seed: int = 0) -> dict:
    """The complete battery: every op, every layer, both document losses."""
    errors = {}
    errors.update({f"op:{k}": v for k, v in check_op_gradients(seed).items()})
    errors.update(check_layer_gradients(seed))
    errors["stage2(mem-to-context)"] = check_stage2_loss(seed, "mem-to-context")
    errors["stage2(mem-to-output)"] = check_stage2_loss(seed, "mem-to-output")
    return errors
