"""Tape-style reverse-mode autodiff over float64 numpy arrays.

Backward rules are written with the same differentiable ops as the forward
pass, so gradients can themselves be differentiated (needed by the R1
penalty, which back-propagates through an input gradient).
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

_grad_enabled = True


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def enable_grad():
    with _grad_mode(True):
        yield


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, enabled
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A graph node: forward value plus the recipe for its input gradients."""

    __slots__ = ("data", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, data={self.data!r})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    """A named, optionally trainable leaf."""

    __slots__ = ("name",)

    def __init__(self, name: str, data, trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.name = name

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ----------------------------------------------------------------- elementwise


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    axes = list(range(lead))
    for i, n in enumerate(shape):
        if n == 1 and g.shape[lead + i] != 1:
            axes.append(lead + i)
    out = tensor_sum(g, axis=tuple(axes), keepdims=False) if axes else g
    return reshape(out, shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data + b.data, (a, b), backward, "add")


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (neg(g),), "neg")


def scale(a: Tensor, k: float) -> Tensor:
    return _node(a.data * k, (a,), lambda g: (scale(g, k),), "scale")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        ga = _unbroadcast(mul(g, b), a.shape) if a.requires_grad else None
        gb = _unbroadcast(mul(g, a), b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("div", a, b)

    def backward(g):
        ga = _unbroadcast(div(g, b), a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    return _node(a.data / b.data, (a, b), backward, "div")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(a.data > 0, 1.0, slope)
    return _node(a.data * factor, (a,), lambda g: (mul(g, Tensor(factor)),), "leaky_relu")


def relu(a: Tensor) -> Tensor:
    return leaky_relu(a, 0.0)


def maximum(a: Tensor, c: float) -> Tensor:
    """max(a, c) against a constant; the tie a == c takes zero gradient."""
    mask = (a.data > c).astype(np.float64)
    return _node(np.maximum(a.data, c), (a,), lambda g: (mul(g, Tensor(mask)),), "max_const")


def tanh(a: Tensor) -> Tensor:
    def backward(g):
        y = tanh(a)
        return (mul(g, add(1.0, neg(mul(y, y)))),)

    return _node(np.tanh(a.data), (a,), backward, "tanh")


def exp(a: Tensor) -> Tensor:
    return _node(np.exp(a.data), (a,), lambda g: (mul(g, exp(a)),), "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError(f"log: non-positive input (min {a.data.min()!r})")
    return _node(np.log(a.data), (a,), lambda g: (div(g, a),), "log")


# ------------------------------------------------------------------ structural


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return _node(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got {a.shape}")
    return _node(a.data.T, (a,), lambda g: (transpose(g),), "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}")
    src = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (reshape(g, src),), "reshape")


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    src = a.shape
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {src} to {shape}") from None
    return _node(np.array(data), (a,), lambda g: (_unbroadcast(g, src),), "broadcast")


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape
    axes = tuple(range(a.ndim)) if axis is None else (axis if isinstance(axis, tuple) else (axis,))
    axes = tuple(ax % a.ndim for ax in axes) if a.ndim else ()
    kept = tuple(1 if i in axes else n for i, n in enumerate(src))

    def backward(g):
        return (broadcast_to(reshape(g, kept), src),)

    return _node(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    if n == 0:
        raise ShapeError(f"mean: empty reduction over shape {a.shape}")
    return scale(tensor_sum(a, axis, keepdims), 1.0 / n)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: mismatched shapes {[t.shape for t in tensors]} on axis {axis}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        out = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * nd
            idx[ax] = slice(int(lo), int(hi))
            out.append(take(g, tuple(idx)) if t.requires_grad else None)
        return tuple(out)

    return _node(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def take(a: Tensor, index) -> Tensor:
    """Basic-slice view a[index]; backward embeds into zeros."""
    src = a.shape
    return _node(a.data[index], (a,), lambda g: (embed(g, index, src),), "slice")


def embed(g: Tensor, index, shape) -> Tensor:
    data = np.zeros(shape)
    data[index] = g.data
    return _node(data, (g,), lambda h: (take(h, index),), "embed")


def gather_rows(a: Tensor, idx) -> Tensor:
    """out[i] = a[i, idx[i]] for a 2-D input."""
    idx = np.asarray(idx, dtype=np.int64)
    if a.ndim != 2 or idx.shape != (a.shape[0],):
        raise ShapeError(f"gather_rows: input {a.shape} with index shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise IndexError(f"gather_rows: index out of range [0, {a.shape[1]})")
    rows = np.arange(a.shape[0])
    ncols = a.shape[1]
    return _node(a.data[rows, idx], (a,), lambda g: (scatter_rows(g, idx, ncols),), "gather")


def scatter_rows(g: Tensor, idx: np.ndarray, ncols: int) -> Tensor:
    data = np.zeros((g.shape[0], ncols))
    data[np.arange(g.shape[0]), idx] = g.data
    return _node(data, (g,), lambda h: (gather_rows(h, idx),), "scatter")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        y = softmax(a, axis)
        inner = tensor_sum(mul(g, y), axis=axis, keepdims=True)
        return (mul(y, add(g, neg(inner))),)

    return _node(y_data, (a,), backward, "softmax")


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    """Stable log-sum-exp; the shift is a constant so gradients are exact."""
    m = a.data.max(axis=axis, keepdims=True)
    shifted = add(a, Tensor(-m))
    out = log(tensor_sum(exp(shifted), axis=axis, keepdims=True))
    return reshape(add(out, Tensor(m)), np.delete(np.array(a.shape), axis % a.ndim).tolist())


# -------------------------------------------------------------------- backward


def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(
    output: Tensor,
    inputs: Sequence[Tensor],
    grad_output: Tensor | None = None,
    create_graph: bool = False,
) -> list[Tensor]:
    """Vector-Jacobian product of ``output`` with respect to ``inputs``.

    Inputs the output does not depend on get zero gradients. With
    ``create_graph`` the returned gradients are themselves differentiable.
    """
    if grad_output is None:
        if output.data.size != 1:
            raise ShapeError(f"grad: output must be scalar, got shape {output.shape}")
        grad_output = Tensor(np.ones(output.shape))
    grads: dict[int, Tensor] = {id(output): grad_output}
    if output.requires_grad:
        with _grad_mode(create_graph):
            for node in reversed(_topo(output)):
                g = grads.get(id(node))
                if g is None or node._backward is None:
                    continue
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    prev = grads.get(id(parent))
                    grads[id(parent)] = pg if prev is None else add(prev, pg)
    result = []
    for t in inputs:
        g = grads.get(id(t))
        result.append(g if g is not None else Tensor(np.zeros(t.shape)))
    return result


def backward(loss: Tensor, params: Mapping[str, Parameter] | Iterable[Parameter]) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss keyed by parameter name (zeros if unreachable)."""
    plist = list(params.values()) if isinstance(params, Mapping) else list(params)
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    trainable = [p for p in plist if p.trainable]
    gs = grad(loss, trainable)
    return {p.name: g.data for p, g in zip(trainable, gs)}


# ------------------------------------------------------------ init and checks


def xavier_uniform_init(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"xavier_uniform_init: fan sizes must be >= 1, got {fan_in}, {fan_out}")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def finite_difference_check(
    f: Callable[[Mapping[str, Parameter]], Tensor],
    params: Mapping[str, Parameter],
    eps: float = 1e-5,
) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    Returns inf if ``f`` produces a non-finite value anywhere.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    loss = f(params)
    if not np.isfinite(loss.data).all():
        return float("inf")
    analytic = backward(loss, params)
    worst = 0.0
    for name, p in params.items():
        if not p.trainable:
            continue
        base = p.data
        flat = base.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            bumped = flat.copy()
            bumped[i] += eps
            p.data = bumped.reshape(base.shape)
            up = f(params).item()
            bumped[i] = flat[i] - eps
            p.data = bumped.reshape(base.shape)
            down = f(params).item()
            p.data = base
            numeric = (up - down) / (2 * eps)
            if not (np.isfinite(up) and np.isfinite(down)):
                return float("inf")
            worst = max(worst, abs(ga[i] - numeric) / max(1.0, abs(ga[i])))
    return worst
