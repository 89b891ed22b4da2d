"""Recurrent cells, embeddings and affine layers built on the autodiff ops.

All cells are pure functions over immutable parameter objects; initial
hidden states are zero vectors.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, add, concat, matmul, mul, scalar_mul, sigmoid, tanh
from .exceptions import ShapeError

INIT_SCALE = 0.08


def init_uniform(rng, shape, scale: float = INIT_SCALE) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape))


class GruParams:
    """Gated recurrent unit weights: update gate z, reset gate r, candidate n."""

    FIELDS = (
        "w_update", "u_update", "b_update",
        "w_reset", "u_reset", "b_reset",
        "w_cand", "u_cand", "b_cand",
    )

    def __init__(self, **tensors):
        for f in self.FIELDS:
            setattr(self, f, tensors[f])

    @classmethod
    def create(cls, rng, input_dim: int, hidden_dim: int) -> "GruParams":
        t = {}
        for gate in ("update", "reset", "cand"):
            t[f"w_{gate}"] = init_uniform(rng, (hidden_dim, input_dim))
            t[f"u_{gate}"] = init_uniform(rng, (hidden_dim, hidden_dim))
            t[f"b_{gate}"] = init_uniform(rng, (hidden_dim,))
        return cls(**t)

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "GruParams":
        t = {}
        for gate in ("update", "reset", "cand"):
            t[f"w_{gate}"] = Tensor(np.zeros((hidden_dim, input_dim)))
            t[f"u_{gate}"] = Tensor(np.zeros((hidden_dim, hidden_dim)))
            t[f"b_{gate}"] = Tensor(np.zeros(hidden_dim))
        return cls(**t)

    def named(self, prefix: str) -> dict:
        return {f"{prefix}.{f}": getattr(self, f) for f in self.FIELDS}

    @classmethod
    def from_params(cls, params, prefix: str) -> "GruParams":
        return cls(**{f: params[f"{prefix}.{f}"] for f in cls.FIELDS})

    @property
    def hidden_dim(self) -> int:
        return self.b_update.data.shape[0]


class LstmParams:
    """LSTM weights: input i, forget f, output o gates and cell candidate g."""

    FIELDS = (
        "w_in", "u_in", "b_in",
        "w_forget", "u_forget", "b_forget",
        "w_out", "u_out", "b_out",
        "w_cell", "u_cell", "b_cell",
    )

    def __init__(self, **tensors):
        for f in self.FIELDS:
            setattr(self, f, tensors[f])

    @classmethod
    def create(cls, rng, input_dim: int, hidden_dim: int) -> "LstmParams":
        t = {}
        for gate in ("in", "forget", "out", "cell"):
            t[f"w_{gate}"] = init_uniform(rng, (hidden_dim, input_dim))
            t[f"u_{gate}"] = init_uniform(rng, (hidden_dim, hidden_dim))
            t[f"b_{gate}"] = init_uniform(rng, (hidden_dim,))
        return cls(**t)

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmParams":
        t = {}
        for gate in ("in", "forget", "out", "cell"):
            t[f"w_{gate}"] = Tensor(np.zeros((hidden_dim, input_dim)))
            t[f"u_{gate}"] = Tensor(np.zeros((hidden_dim, hidden_dim)))
            t[f"b_{gate}"] = Tensor(np.zeros(hidden_dim))
        return cls(**t)

    def named(self, prefix: str) -> dict:
        return {f"{prefix}.{f}": getattr(self, f) for f in self.FIELDS}

    @classmethod
    def from_params(cls, params, prefix: str) -> "LstmParams":
        return cls(**{f: params[f"{prefix}.{f}"] for f in cls.FIELDS})

    @property
    def hidden_dim(self) -> int:
        return self.b_in.data.shape[0]


class AffineParams:
    def __init__(self, w: Tensor, b: Tensor):
        self.w = w
        self.b = b

    @classmethod
    def create(cls, rng, input_dim: int, output_dim: int) -> "AffineParams":
        return cls(init_uniform(rng, (output_dim, input_dim)), init_uniform(rng, (output_dim,)))

    def named(self, prefix: str) -> dict:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}

    @classmethod
    def from_params(cls, params, prefix: str) -> "AffineParams":
        return cls(params[f"{prefix}.w"], params[f"{prefix}.b"])

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(self.w, x), self.b)


def _gate(w, u, b, x, h):
    return add(add(matmul(w, x), matmul(u, h)), b)


def gru_step(x: Tensor, h_prev: Tensor, p: GruParams) -> Tensor:
    """One GRU step: h' = (1-z) * h_prev + z * n."""
    z = sigmoid(_gate(p.w_update, p.u_update, p.b_update, x, h_prev))
    r = sigmoid(_gate(p.w_reset, p.u_reset, p.b_reset, x, h_prev))
    n = tanh(add(add(matmul(p.w_cand, x), matmul(p.u_cand, mul(r, h_prev))), p.b_cand))
    # h + z*(n - h) == (1-z)*h + z*n without needing a ones constant
    return add(h_prev, mul(z, add(n, scalar_mul(h_prev, -1.0))))


def lstm_step(x: Tensor, state, p: LstmParams):
    """One LSTM step over state (h, c): c' = f*c + i*g, h' = o*tanh(c')."""
    h_prev, c_prev = state
    i = sigmoid(_gate(p.w_in, p.u_in, p.b_in, x, h_prev))
    f = sigmoid(_gate(p.w_forget, p.u_forget, p.b_forget, x, h_prev))
    o = sigmoid(_gate(p.w_out, p.u_out, p.b_out, x, h_prev))
    g = tanh(_gate(p.w_cell, p.u_cell, p.b_cell, x, h_prev))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


def _zero_state(cell_params):
    h = Tensor(np.zeros(cell_params.hidden_dim))
    if isinstance(cell_params, LstmParams):
        return h, Tensor(np.zeros(cell_params.hidden_dim))
    return h


def _run_direction(seq, cell_params):
    """Unidirectional unroll; returns per-position hidden vectors."""
    state = _zero_state(cell_params)
    outs = []
    if isinstance(cell_params, LstmParams):
        for x in seq:
            state = lstm_step(x, state, cell_params)
            outs.append(state[0])
    else:
        for x in seq:
            state = gru_step(x, state, cell_params)
            outs.append(state)
    return outs


def birnn(seq, fwd_params, bwd_params, cell_kind: str | None = None):
    """Bidirectional unroll over a sequence of input vectors.

    Returns (per-position [fwd_i ; bwd_i] vectors, final forward state,
    final backward state).  The forward half is exactly a left-to-right
    unroll and the backward half exactly a right-to-left unroll.
    """
    seq = list(seq)
    if not seq:
        raise ShapeError("birnn: empty sequence")
    if cell_kind is not None:
        expected = LstmParams if cell_kind == "lstm" else GruParams
        if not isinstance(fwd_params, expected):
            raise ShapeError(f"birnn: params do not match cell kind '{cell_kind}'")
    fwd = _run_direction(seq, fwd_params)
    bwd_rev = _run_direction(list(reversed(seq)), bwd_params)
    bwd = list(reversed(bwd_rev))
    joined = [concat([f, b]) for f, b in zip(fwd, bwd)]
    return joined, fwd[-1], bwd[0]
