"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything runs on numpy arrays in double precision. Each differentiable
operation appends a node to a thread-local tape (the Graph); backward()
replays the tape in reverse append order. The tape is rebuilt on every
forward pass, so call reset_graph() between training steps to release it.
"""

from __future__ import annotations

import struct
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

CHECKPOINT_MAGIC = b"PCCFORGE1"

_local = threading.local()


class Tensor:
    """A dense float64 array plus gradient bookkeeping.

    Leaf tensors are created directly; op tensors are created by the
    functions in this module and remember their tape position. Only leaf
    tensors with requires_grad=True accumulate into .grad.
    """

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _scalar_err(t: Tensor):
    raise ValueError(f"expected scalar tensor, got shape {t.shape}")


class _Node:
    """One tape entry: output tensor, its inputs, and the local backward."""

    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Graph:
    """Append-only operation tape; append order is a topological order."""

    def __init__(self):
        self.nodes: list[_Node] = []


def active_graph() -> Graph:
    """The calling thread's current tape, created on first use."""
    g = getattr(_local, "graph", None)
    if g is None:
        g = Graph()
        _local.graph = g
    return g


def reset_graph() -> None:
    """Drop the calling thread's tape (start a fresh forward pass)."""
    _local.graph = Graph()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(
    out_data: np.ndarray,
    inputs: Sequence[Tensor],
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Wrap out_data as an op tensor, recording it on the tape if needed.

    backward receives the gradient w.r.t. the output and must return one
    gradient array (or None) per input, each matching that input's shape.
    Modules use this to define fused kernels with hand-written adjoints.
    """
    out = Tensor(out_data)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        g = active_graph()
        out.node = len(g.nodes)
        g.nodes.append(_Node(out, tuple(inputs), backward))
    return out


# ---------------------------------------------------------------------------
# core ops

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul expects [M,K] @ [K,N], got {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return make_op(ad @ bd, (a, b), backward)


def _binary_shapes(a: Tensor, b: Tensor, opname: str):
    """Allow equal shapes or a size-1 operand on either side; reject the rest."""
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ValueError(f"{opname}: shapes {a.shape} and {b.shape} are neither equal nor scalar")


def _unbroadcast(g: np.ndarray, t: Tensor) -> np.ndarray:
    if t.size == 1 and g.shape != t.shape:
        return np.asarray(g.sum()).reshape(t.shape)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a), _unbroadcast(g, b)

    return make_op(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a), _unbroadcast(-g, b)

    return make_op(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, a), _unbroadcast(g * ad, b)

    return make_op(ad * bd, (a, b), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data

    def backward(g):
        return (g * (xd > 0),)

    return make_op(np.maximum(xd, 0.0), (x,), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def silu(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    xd = x.data

    def backward(g):
        return (g * s * (1.0 + xd * (1.0 - s)),)

    return make_op(xd * s, (x,), backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data)

    def backward(g):
        return (g * e,)

    return make_op(e, (x,), backward)


def softplus(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data

    def backward(g):
        return (g * _sigmoid(xd),)

    return make_op(np.logaddexp(0.0, xd), (x,), backward)


def _check_axis(t: Tensor, axis: int, opname: str):
    if not -t.ndim <= axis < t.ndim:
        raise ValueError(f"{opname}: axis {axis} out of range for rank {t.ndim}")
    if t.shape[axis] == 0:
        raise ValueError(f"{opname}: cannot reduce over empty axis {axis}")


def tsum(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        def backward(g):
            return (np.full_like(x.data, float(g)),)

        return make_op(np.asarray(x.data.sum()), (x,), backward)
    _check_axis(x, axis, "sum")

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return make_op(x.data.sum(axis=axis), (x,), backward)


def tmean(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.size

        def backward(g):
            return (np.full_like(x.data, float(g) / n),)

        return make_op(np.asarray(x.data.mean()), (x,), backward)
    _check_axis(x, axis, "mean")
    n = x.shape[axis]

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy() / n,)

    return make_op(x.data.mean(axis=axis), (x,), backward)


def max_over_axis(x, axis: int) -> Tensor:
    """Max along one axis; gradient routes to the first argmax on ties."""
    x = as_tensor(x)
    _check_axis(x, axis, "max_over_axis")
    idx = np.argmax(x.data, axis=axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (gx,)

    return make_op(np.max(x.data, axis=axis), (x,), backward)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape

    def backward(g):
        return (g.reshape(old),)

    return make_op(x.data.reshape(shape), (x,), backward)


def narrow(x, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start, stop) along one axis."""
    x = as_tensor(x)
    _check_axis(x, axis, "narrow")
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[sl] = g
        return (gx,)

    return make_op(x.data[sl].copy(), (x,), backward)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    widths = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        out = []
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * p.ndim
            sl[axis] = slice(lo, hi)
            out.append(g[tuple(sl)])
        return tuple(out)

    return make_op(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward)


def add_bias(x, b) -> Tensor:
    """x[..., N] + b[N]; the bias gradient sums over the leading axes."""
    x, b = as_tensor(x), as_tensor(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ValueError(f"add_bias: incompatible shapes {x.shape} and {b.shape}")
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        return g, g.sum(axis=lead) if lead else g

    return make_op(x.data + b.data, (x, b), backward)


def linear(x, w, b=None) -> Tensor:
    """x @ w (+ b): the everyday affine layer."""
    y = matmul(x, w)
    return add_bias(y, b) if b is not None else y


def detach(x: Tensor) -> Tensor:
    """Value-equal copy with no graph history and requires_grad=False."""
    return Tensor(x.data.copy())


# ---------------------------------------------------------------------------
# backward pass

def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad leaf reachable from loss.

    Repeated calls accumulate; zero the leaf grads between steps. The tape
    is walked once, in reverse append order.
    """
    if loss.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        raise ValueError("backward expects a loss on the computation graph")
    g = active_graph()
    pending: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
    for i in range(loss.node, -1, -1):
        gout = pending.pop(i, None)
        if gout is None:
            continue
        node = g.nodes[i]
        grads = node.backward(gout)
        for inp, gin in zip(node.inputs, grads):
            if gin is None or not inp.requires_grad:
                continue
            if inp.node is not None:
                if inp.node in pending:
                    pending[inp.node] += gin
                else:
                    pending[inp.node] = np.array(gin, dtype=np.float64, copy=True)
            else:
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += gin


# ---------------------------------------------------------------------------
# parameter checkpoints

def save_checkpoint(path, named_params: Iterable[tuple[str, Tensor]]) -> None:
    """Write parameters as: magic, then per entry name/rank/dims/float64 payload."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        for name, t in named_params:
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", t.ndim))
            f.write(struct.pack(f"<{t.ndim}I", *t.shape))
            f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into name -> float64 array, bit-exact."""
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a parameter checkpoint (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    out: dict[str, np.ndarray] = {}
    while pos < len(blob):
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos)
        pos += 8 * count
        out[name] = arr.reshape(dims).astype(np.float64)
    return out
