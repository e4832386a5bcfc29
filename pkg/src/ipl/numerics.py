"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Values live in numpy arrays.  Every public operation validates its inputs,
checks the result for non-finite values, and -- when a ComputeGraph is active
and at least one input is tracked -- records a node carrying the backward
rule.  ``backward`` walks the tape in reverse creation order exactly once;
creation order is a topological order by construction, so this is a valid
reverse sweep.  Gradients accumulate additively across paths.

Outside of a ``with ComputeGraph():`` block all operations run as plain
numpy computations with no recording, which is the evaluation mode used for
inference-time prototype updates and metric computation.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ParameterError, ShapeError, StateError

__all__ = [
    "Tensor",
    "ComputeGraph",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "relu",
    "sum_all",
    "group_mean",
    "concat_rows",
    "take_rows",
    "l2_normalize",
    "softmax",
    "cross_entropy",
    "backward",
    "sgd_step",
    "grad_check",
]


class Tensor:
    """A dense float64 array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Convenience operators; all defer to the module-level ops so that
    # recording and validation live in one place.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    """One recorded operation: inputs, output, and its backward/replay rules."""

    __slots__ = ("op", "inputs", "output", "backward_fn", "forward_fn")

    def __init__(self, op, inputs, output, backward_fn, forward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn
        self.forward_fn = forward_fn


class ComputeGraph:
    """Ordered tape of tracked operations; acts as a context manager."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "ComputeGraph":
        _GRAPH_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _GRAPH_STACK.pop()
        return False

    def replay_matches(self) -> bool:
        """Recompute every node from current leaf values; True if all values match bitwise.

        Only meaningful while the leaves still hold the values they had when
        the tape was recorded (i.e. before any optimizer step).
        """
        return all(np.array_equal(node.forward_fn(), node.output.data) for node in self.nodes)


_GRAPH_STACK: list[ComputeGraph] = []


def _active_graph() -> ComputeGraph | None:
    return _GRAPH_STACK[-1] if _GRAPH_STACK else None


def _check_finite(op: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op} produced a non-finite value")


def _make(op, inputs: Sequence[Tensor], out_data, backward_fn, forward_fn) -> Tensor:
    """Wrap a computed array, recording a tape node when tracking applies."""
    _check_finite(op, out_data)
    graph = _active_graph()
    tracked = graph is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=tracked)
    if tracked:
        graph.nodes.append(_Node(op, tuple(inputs), out, backward_fn, forward_fn))
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# --- elementwise arithmetic -----------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make("add", (a, b), out, backward_fn, lambda: a.data + b.data)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make("sub", (a, b), out, backward_fn, lambda: a.data - b.data)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make("mul", (a, b), out, backward_fn, lambda: a.data * b.data)


def neg(a: Tensor) -> Tensor:
    return _make("neg", (a,), -a.data, lambda g: _accumulate(a, -g), lambda: -a.data)


# --- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def backward_fn(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make("matmul", (a, b), out, backward_fn, lambda: a.data @ b.data)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got shape {a.shape}")
    out = a.data.T.copy()

    def backward_fn(g):
        _accumulate(a, g.T)

    return _make("transpose", (a,), out, backward_fn, lambda: a.data.T.copy())


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)

    def backward_fn(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _make("reshape", (a,), out.copy(), backward_fn, lambda: a.data.reshape(shape).copy())


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def backward_fn(g):
        # Subgradient at exactly zero is zero.
        _accumulate(a, g * (a.data > 0.0))

    return _make("relu", (a,), out, backward_fn, lambda: np.maximum(a.data, 0.0))


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())

    def backward_fn(g):
        _accumulate(a, np.full_like(a.data, float(g)))

    return _make("sum_all", (a,), out, backward_fn, lambda: np.asarray(a.data.sum()))


def group_mean(a: Tensor) -> Tensor:
    """Mean over the middle axis of an [n, k, d] tensor, yielding [n, d].

    Summands are sorted per coordinate before adding, so the value is
    independent of the order of the k group members (bitwise).  The gradient
    is uniform 1/k regardless of order.
    """
    if a.ndim != 3:
        raise ShapeError(f"group_mean needs an [n, k, d] tensor, got shape {a.shape}")
    k = a.shape[1]

    def forward_fn():
        return np.sort(a.data, axis=1).sum(axis=1) / k

    out = forward_fn()

    def backward_fn(g):
        _accumulate(a, np.broadcast_to(g[:, None, :] / k, a.data.shape).copy())

    return _make("group_mean", (a,), out, backward_fn, forward_fn)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat_rows needs at least one tensor")
    widths = {t.shape[1:] for t in tensors}
    if len(widths) != 1:
        raise ShapeError(f"concat_rows needs matching trailing dimensions, got {sorted(widths)}")
    out = np.concatenate([t.data for t in tensors], axis=0)
    counts = [t.shape[0] for t in tensors]

    def backward_fn(g):
        offset = 0
        for t, n in zip(tensors, counts):
            _accumulate(t, g[offset : offset + n])
            offset += n

    return _make(
        "concat_rows",
        tuple(tensors),
        out,
        backward_fn,
        lambda: np.concatenate([t.data for t in tensors], axis=0),
    )


def take_rows(a: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("take_rows needs a 1-D index list")
    if a.ndim < 1:
        raise ShapeError("take_rows needs at least a 1-D tensor")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"row index out of range for {a.shape[0]} rows")
    out = a.data[idx]

    def backward_fn(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, idx, g)

    return _make("take_rows", (a,), out, backward_fn, lambda: a.data[idx])


# --- normalization and classification losses -------------------------------


def l2_normalize(a: Tensor, epsilon: float = 1e-12) -> Tensor:
    """Divide each row (last axis) by max(L2 norm, epsilon).

    The epsilon guard maps the zero vector to zero instead of raising.
    """
    if epsilon <= 0.0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if a.ndim < 1 or a.shape[-1] < 1:
        raise ShapeError(f"l2_normalize needs a non-empty last axis, got shape {a.shape}")

    def forward_fn():
        norms = np.sqrt(np.sum(a.data * a.data, axis=-1, keepdims=True))
        return a.data / np.maximum(norms, epsilon)

    norms = np.sqrt(np.sum(a.data * a.data, axis=-1, keepdims=True))
    denom = np.maximum(norms, epsilon)
    out = a.data / denom

    def backward_fn(g):
        inner = np.sum(g * out, axis=-1, keepdims=True)
        grad = np.where(norms > epsilon, (g - out * inner) / denom, g / epsilon)
        _accumulate(a, grad)

    return _make("l2_normalize", (a,), out, backward_fn, forward_fn)


def softmax(a: Tensor, temperature: float = 1.0) -> Tensor:
    """Row-wise softmax of a/temperature, computed with max subtraction."""
    if temperature <= 0.0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    if a.ndim < 1 or a.shape[-1] < 1:
        raise ShapeError(f"softmax needs a non-empty last axis, got shape {a.shape}")

    def forward_fn():
        z = a.data / temperature
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    out = forward_fn()

    def backward_fn(g):
        inner = np.sum(g * out, axis=-1, keepdims=True)
        _accumulate(a, out * (g - inner) / temperature)

    return _make("softmax", (a,), out, backward_fn, forward_fn)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-softmax probability of the target classes.

    Fused with the softmax for stability; the gradient is the classic
    (softmax - one_hot) / batch.
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy needs [batch, classes] logits, got shape {logits.shape}")
    t = np.asarray(targets)
    if t.ndim != 1 or t.shape[0] != logits.shape[0]:
        raise ShapeError(f"targets must be a vector of length {logits.shape[0]}")
    t = t.astype(np.intp)
    k = logits.shape[1]
    if t.size and (t.min() < 0 or t.max() >= k):
        raise IndexError(f"target class out of range [0, {k})")
    b = logits.shape[0]
    rows = np.arange(b)

    def log_probs():
        z = logits.data - logits.data.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def forward_fn():
        return np.asarray(-log_probs()[rows, t].sum() / b)

    logp = log_probs()
    out = np.asarray(-logp[rows, t].sum() / b)

    def backward_fn(g):
        grad = np.exp(logp)
        grad[rows, t] -= 1.0
        _accumulate(logits, grad * (float(g) / b))

    return _make("cross_entropy", (logits,), out, backward_fn, forward_fn)


# --- backward pass, optimizer, gradient checking ----------------------------


def backward(loss: Tensor, graph: ComputeGraph) -> None:
    """Propagate d(loss)/d(leaf) to every tracked leaf of the graph.

    Visits nodes in reverse creation order exactly once; nodes whose output
    did not receive a gradient (not on a path to the loss) are skipped.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise StateError("loss is not tracked by any compute graph")
    _accumulate(loss, np.ones_like(loss.data))
    for node in reversed(graph.nodes):
        if node.output.grad is not None:
            node.backward_fn(node.output.grad)


def sgd_step(params: Sequence[Tensor], lr: float, weight_decay: float = 0.0) -> None:
    """p <- p - lr * (grad + weight_decay * p) for every parameter; clears grads.

    lr == 0 is a bitwise no-op on the values (gradients are still cleared).
    """
    if lr < 0.0:
        raise ParameterError(f"learning rate must be >= 0, got {lr}")
    if weight_decay < 0.0:
        raise ParameterError(f"weight decay must be >= 0, got {weight_decay}")
    params = list(params)
    for i, p in enumerate(params):
        if p.grad is None:
            raise StateError(f"parameter {i} (shape {p.shape}) has no gradient")
    for p in params:
        if lr != 0.0:
            p.data -= lr * (p.grad + weight_decay * p.data)
            _check_finite("sgd_step", p.data)
        p.grad = None


def grad_check(
    f: Callable[[Tensor], Tensor],
    point: Tensor,
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic gradient and central differences.

    `f` maps a tensor to a scalar Tensor.  The relative error per coordinate
    is |analytic - numeric| / max(1, |analytic|, |numeric|), i.e. absolute for
    small gradients and relative for large ones, which keeps the measure
    stable when a coordinate's true gradient is zero.
    """
    point.requires_grad = True
    point.grad = None
    with ComputeGraph() as graph:
        loss = f(point)
        backward(loss, graph)
    if point.grad is None:
        raise StateError("function output does not depend on the point")
    analytic = point.grad.copy()
    point.grad = None

    numeric = np.zeros_like(point.data)
    flat = point.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(point).item()
        flat[i] = orig - step
        lo = f(point).item()
        flat[i] = orig
        num_flat[i] = (hi - lo) / (2.0 * step)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
