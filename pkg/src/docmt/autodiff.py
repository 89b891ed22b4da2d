"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every arithmetic step of the models runs through the ops in this module.
While a :class:`Tape` is active, each op appends one record (op kind,
input node ids, output node id, a backward closure over the cached
forward values); a single reverse sweep over the records then yields
gradients for every node.  With no active tape the same functions are
plain numpy computations.

A tape is single-threaded. Distinct tapes may run concurrently as long
as they do not share parameter tensors, because registering a leaf
stores the (tape, node) handle on the tensor itself.

Every op validates that its output is finite; NaN or Inf anywhere is an
error state, reported as :class:`NumericsError` naming the op.
"""

from __future__ import annotations

import numpy as np

from .exceptions import NumericsError, ShapeError

_ACTIVE_TAPE = None


def active_tape():
    return _ACTIVE_TAPE


class Tensor:
    """A dense float64 array, optionally tied to a node of the active tape.

    Detached tensors (no tape) are treated as immutable values; the
    optimizer mutates parameter data in place only between tapes.
    """

    __slots__ = ("data", "tape", "node")

    def __init__(self, values, _tape=None, _node=None):
        self.data = np.asarray(values, dtype=np.float64)
        self.tape = _tape
        self.node = _node

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detached(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, node={self.node})"


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64))


class Tape:
    """Ordered record of operations for one forward pass.

    Records are appended in execution order, which is by construction a
    topological order: every input node id precedes its consumer.  The
    backward pass visits records strictly in reverse.
    """

    def __init__(self):
        self._shapes = []
        self._records = []  # (kind, input node ids, output node id, backward fn)

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active in this thread")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    @property
    def num_nodes(self) -> int:
        return len(self._shapes)

    @property
    def num_records(self) -> int:
        return len(self._records)

    def watch(self, t: Tensor) -> int:
        """Register a tensor as a leaf of this tape, returning its node id."""
        if t.tape is self and t.node is not None:
            return t.node
        nid = len(self._shapes)
        self._shapes.append(t.data.shape)
        t.tape = self
        t.node = nid
        return nid

    def _record(self, kind, inputs, out_data, backward):
        in_ids = tuple(self.watch(t) for t in inputs)
        out_id = len(self._shapes)
        self._shapes.append(out_data.shape)
        self._records.append((kind, in_ids, out_id, backward))
        return Tensor(out_data, _tape=self, _node=out_id)


class _PausedTape:
    """Context manager that hides the active tape (for frozen submodels)."""

    def __enter__(self):
        global _ACTIVE_TAPE
        self._saved = _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._saved
        return False


def paused_tape():
    return _PausedTape()


class GradientMap:
    """Node id -> gradient, with zeros for nodes the loss never reached."""

    def __init__(self, tape: Tape, grads: dict):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, node: int) -> np.ndarray:
        g = self._grads.get(node)
        if g is None:
            return np.zeros(self._tape._shapes[node])
        return g

    def tensor(self, node: int) -> Tensor:
        return Tensor(self[node])

    def for_tensor(self, t: Tensor) -> np.ndarray:
        if t.tape is not self._tape or t.node is None:
            return np.zeros(t.data.shape)
        return self[t.node]


def backward(loss: Tensor, tape: Tape) -> GradientMap:
    """Reverse sweep from a scalar loss over the tape's records."""
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    if loss.tape is not tape or loss.node is None:
        raise ShapeError("loss was not produced on this tape")
    grads = {loss.node: np.ones_like(loss.data)}
    for kind, in_ids, out_id, bwd in reversed(tape._records):
        g = grads.get(out_id)
        if g is None:
            continue
        for nid, gi in zip(in_ids, bwd(g)):
            if gi is None:
                continue
            acc = grads.get(nid)
            if acc is None:
                grads[nid] = gi.copy() if gi.base is not None or gi is g else gi
            else:
                acc += gi
    return GradientMap(tape, grads)


def _check_finite(kind, data):
    if not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite output from op '{kind}'")


def _emit(kind, inputs, out_data, backward_fn):
    _check_finite(kind, out_data)
    if _ACTIVE_TAPE is None:
        return Tensor(out_data)
    return _ACTIVE_TAPE._record(kind, inputs, out_data, backward_fn)


def _require_same_shape(kind, a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{kind}: shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# op kinds


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise ShapeError(f"matmul: unsupported ranks {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[0]:
        raise ShapeError(f"matmul: inner dims of {ad.shape} and {bd.shape} differ")
    out = ad @ bd

    def bwd(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return bd @ g, np.outer(ad, g)
        return g * bd, g * ad

    return _emit("matmul", (a, b), out, bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("elementwise-mul", a, b)
    ad, bd = a.data, b.data
    return _emit("elementwise-mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _emit("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _emit("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def softmax(a: Tensor, mask=None) -> Tensor:
    """Probability vector along the last axis, with max-subtraction.

    ``mask`` marks excluded entries (True = excluded); their probability
    is exactly zero.  The excluded scores never enter the normalization,
    so no infinities are materialized.
    """
    x = a.data
    if x.ndim not in (1, 2):
        raise ShapeError(f"softmax: unsupported rank {x.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"softmax: mask shape {mask.shape} != {x.shape}")
        if np.all(mask):
            raise ShapeError("softmax: every entry is masked out")
        x = np.where(mask, -np.inf, x)
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    if mask is not None:
        e = np.where(mask, 0.0, e)
    out = e / np.sum(e, axis=-1, keepdims=True)

    def bwd(g):
        s = np.sum(g * out, axis=-1, keepdims=True)
        return (out * (g - s),)

    return _emit("softmax", (a,), out, bwd)


def log_softmax(a: Tensor) -> Tensor:
    x = a.data
    if x.ndim != 1:
        raise ShapeError(f"log-softmax: expected a vector, got {x.shape}")
    m = np.max(x)
    z = x - m
    lse = np.log(np.sum(np.exp(z)))
    out = z - lse
    p = np.exp(out)
    return _emit("log-softmax", (a,), out, lambda g: (g - p * np.sum(g),))


def concat(parts) -> Tensor:
    """Join vectors (or scalars, promoted to length-1) along axis 0."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat: no inputs")
    datas = [p.data.reshape(1) if p.data.ndim == 0 else p.data for p in parts]
    for d in datas:
        if d.ndim != 1:
            raise ShapeError(f"concat: expected vectors, got shape {d.shape}")
    out = np.concatenate(datas)
    sizes = [d.shape[0] for d in datas]
    offsets = np.cumsum([0] + sizes)
    scalar = [p.data.ndim == 0 for p in parts]

    def bwd(g):
        outs = []
        for i in range(len(sizes)):
            gi = g[offsets[i] : offsets[i + 1]]
            outs.append(gi.reshape(()) if scalar[i] else gi)
        return outs

    return _emit("concat", tuple(parts), out, bwd)


def stack(rows) -> Tensor:
    """Stack equal-length vectors into a matrix, one vector per row."""
    rows = list(rows)
    if not rows:
        raise ShapeError("stack: no inputs")
    for r in rows:
        if r.data.ndim != 1 or r.data.shape != rows[0].data.shape:
            raise ShapeError("stack: inputs must be vectors of one length")
    out = np.stack([r.data for r in rows])

    def bwd(g):
        return [g[i] for i in range(len(rows))]

    return _emit("stack", tuple(rows), out, bwd)


def slice_(a: Tensor, start: int, stop: int) -> Tensor:
    x = a.data
    if x.ndim != 1:
        raise ShapeError(f"slice: expected a vector, got {x.shape}")
    if not (0 <= start < stop <= x.shape[0]):
        raise ShapeError(f"slice: bounds [{start}:{stop}] outside length {x.shape[0]}")
    out = x[start:stop].copy()

    def bwd(g):
        gi = np.zeros_like(x)
        gi[start:stop] = g
        return (gi,)

    return _emit("slice", (a,), out, bwd)


def embedding(table: Tensor, index: int) -> Tensor:
    t = table.data
    if t.ndim != 2:
        raise ShapeError(f"embedding-lookup: table must be a matrix, got {t.shape}")
    if not (0 <= index < t.shape[0]):
        raise ShapeError(f"embedding-lookup: out-of-range token id {index} for table {t.shape}")
    out = t[index].copy()

    def bwd(g):
        gt = np.zeros_like(t)
        gt[index] = g
        return (gt,)

    return _emit("embedding-lookup", (table,), out, bwd)


def sum_(a: Tensor) -> Tensor:
    x = a.data
    out = np.asarray(np.sum(x))
    return _emit("sum", (a,), out, lambda g: (np.full_like(x, float(g)),))


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("scalar-mul", (a,), a.data * c, lambda g: (g * c,))


def dropout(a: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by a fixed, pre-scaled binary mask (inverted dropout)."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != a.data.shape:
        raise ShapeError(f"dropout-mask: mask shape {mask.shape} != {a.data.shape}")
    return _emit("dropout-mask", (a,), a.data * mask, lambda g: (g * mask,))


def make_dropout_mask(rng, shape, rate: float) -> np.ndarray:
    """Sample a keep mask scaled by 1/(1-rate); identity when rate is 0."""
    if not (0.0 <= rate < 1.0):
        raise ShapeError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep.astype(np.float64) / (1.0 - rate)


_OPS = {
    "matmul": lambda ins, kw: matmul(*ins),
    "add": lambda ins, kw: add(*ins),
    "elementwise-mul": lambda ins, kw: mul(*ins),
    "tanh": lambda ins, kw: tanh(*ins),
    "sigmoid": lambda ins, kw: sigmoid(*ins),
    "softmax": lambda ins, kw: softmax(ins[0], mask=kw.get("mask")),
    "log-softmax": lambda ins, kw: log_softmax(*ins),
    "concat": lambda ins, kw: concat(ins),
    "stack": lambda ins, kw: stack(ins),
    "slice": lambda ins, kw: slice_(ins[0], kw["start"], kw["stop"]),
    "embedding-lookup": lambda ins, kw: embedding(ins[0], kw["index"]),
    "sum": lambda ins, kw: sum_(*ins),
    "scalar-mul": lambda ins, kw: scalar_mul(ins[0], kw["scalar"]),
    "dropout-mask": lambda ins, kw: dropout(ins[0], kw["mask"]),
}


def apply(op_kind: str, inputs, **kwargs) -> Tensor:
    """Dispatch an operation by kind name; the single entry point used
    by callers that treat the engine as a black box."""
    fn = _OPS.get(op_kind)
    if fn is None:
        raise ShapeError(f"unknown op kind '{op_kind}'")
    return fn(list(inputs), kwargs)


OP_KINDS = tuple(sorted(_OPS))


# ---------------------------------------------------------------------------
# parameters and gradient checking


class ParamSet:
    """Named collection of trainable tensors, with an optional frozen subset.

    Frozen tensors stay in the set (they are saved in checkpoints and can
    be used in forward passes) but optimizers must not update them.
    """

    def __init__(self, tensors=None, frozen=()):
        self._tensors = dict(tensors or {})
        self.frozen = set(frozen)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __setitem__(self, name: str, t: Tensor):
        self._tensors[name] = t

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return sorted(self._tensors)

    def items(self):
        return [(n, self._tensors[n]) for n in self.names()]

    def trainable_items(self):
        return [(n, t) for n, t in self.items() if n not in self.frozen]

    def add(self, name: str, t: Tensor):
        if name in self._tensors:
            raise ShapeError(f"duplicate parameter name '{name}'")
        self._tensors[name] = t

    def merge(self, tensors: dict):
        for n, t in tensors.items():
            self.add(n, t)

    def subset(self, prefix: str) -> dict:
        return {n: t for n, t in self._tensors.items() if n.startswith(prefix)}

    def snapshot(self) -> dict:
        return {n: t.data.copy() for n, t in self._tensors.items()}

    def restore(self, snap: dict):
        for n, d in snap.items():
            self._tensors[n].data[...] = d

    def num_values(self) -> int:
        return sum(t.data.size for t in self._tensors.values())


def grad_check(f, params, eps: float = 1e-5) -> float:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` must be a deterministic closure over the given parameters that
    returns a scalar Tensor.  Returns the maximum over all parameter
    entries of |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if eps <= 0:
        raise ShapeError(f"eps must be positive, got {eps}")
    if isinstance(params, ParamSet):
        items = params.trainable_items()
    else:
        items = sorted(params.items())

    with Tape() as tape:
        loss = f()
    again = f()
    if again.data.tobytes() != loss.data.tobytes():
        raise NumericsError("grad_check: f is not deterministic (two passes disagree)")
    gmap = backward(loss, tape)

    worst = 0.0
    for _, t in items:
        analytic = gmap.for_tensor(t)
        flat = t.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f().item()
            flat[i] = orig - eps
            lo = f().item()
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            a = aflat[i]
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if rel > worst:
                worst = rel
    return worst
