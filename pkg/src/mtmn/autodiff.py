"""Dense float64 tensors with reverse-mode gradient accumulation.

Every model computation in this package is expressed with the operations
below.  A :class:`Tensor` wraps a numpy array and, when gradients are being
recorded, remembers the operation that produced it so that :func:`backward`
can walk the graph in reverse topological order.

Leaf tensors created with ``requires_grad=True`` (normally :class:`Param`)
accumulate into ``.grad`` across calls to :func:`backward`; intermediate
gradients are scratch values local to a single backward pass.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64
LOG_CLAMP = 1e-12

_GRAD_ENABLED = True


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """An operation was called outside its documented preconditions."""


@contextlib.contextmanager
def no_grad():
    """Build values only; no graph edges are recorded inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A node in the computation graph.

    ``data`` is never modified in place by the library; ``grad`` is a buffer
    of the same shape that only leaves write to.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)


class Param(Tensor):
    """A named leaf tensor owned by a model."""

    __slots__ = ("name", "trainable")

    def __init__(self, name: str, data, trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.name = name
        self.trainable = trainable
        self.op = "param"

    def assign(self, value) -> None:
        value = np.asarray(value, dtype=DTYPE)
        if value.shape != self.data.shape:
            raise DimensionError(
                f"cannot assign shape {value.shape} to {self.name} {self.data.shape}"
            )
        self.data = value.copy()

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - y * y),)

    return _make(y, (x,), backward, "tanh")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g):
        return (g * y * (1.0 - y),)

    return _make(y, (x,), backward, "sigmoid")


# aliases under the names used in the model description
tanh_elem = tanh
sigmoid_elem = sigmoid


# ---------------------------------------------------------------------------
# shape manipulation


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ContractError("concat needs at least one tensor")
    try:
        y = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise DimensionError(
            f"cannot concat shapes {[x.shape for x in xs]} on axis {axis}"
        ) from exc
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(y, xs, backward, "concat")


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        y = np.stack([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"cannot stack shapes {[x.shape for x in xs]}") from exc

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(y, xs, backward, "stack")


def getitem(x: Tensor, idx) -> Tensor:
    x = as_tensor(x)
    y = x.data[idx]

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(np.array(y, dtype=DTYPE), (x,), backward, "getitem")


def take_rows(x: Tensor, rows: Sequence[int]) -> Tensor:
    """Gather rows of a 2-D tensor (embedding lookup)."""
    rows = np.asarray(rows, dtype=np.intp)
    return getitem(x, rows)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (g.reshape(x.shape),)

    return _make(x.data.reshape(shape), (x,), backward, "reshape")


def transpose(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    x = as_tensor(x)
    inv = None if axes is None else tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inv),)

    return _make(np.transpose(x.data, axes), (x,), backward, "transpose")


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    x = as_tensor(x)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(x.data.sum(axis=axis), (x,), backward, "sum")


# ---------------------------------------------------------------------------
# products


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a p x q and a q x r tensor."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def _parse_subscripts(spec: str, n: int) -> tuple[list[str], str]:
    if "->" not in spec:
        raise ContractError(f"einsum spec needs an explicit output: {spec!r}")
    lhs, out = spec.replace(" ", "").split("->")
    ins = lhs.split(",")
    if len(ins) != n:
        raise ContractError(f"einsum spec {spec!r} expects {len(ins)} operands, got {n}")
    for s in ins:
        if len(set(s)) != len(s):
            raise ContractError(f"repeated index within one operand: {s!r}")
    return ins, out


def einsum(spec: str, *operands) -> Tensor:
    """Differentiable ``np.einsum`` with an explicit output.

    Every index of an operand has to appear in the output or in another
    operand; that keeps each gradient expressible as another einsum.
    """
    ops = [as_tensor(o) for o in operands]
    ins, out = _parse_subscripts(spec, len(ops))
    for i, s in enumerate(ins):
        others = set(out).union(*(ins[j] for j in range(len(ins)) if j != i))
        if not set(s) <= others:
            raise ContractError(f"index of operand {i} in {spec!r} is summed locally")
    try:
        y = np.einsum(spec, *(o.data for o in ops), optimize=len(ops) > 2)
    except ValueError as exc:
        raise DimensionError(
            f"einsum {spec!r} shape mismatch: {[o.shape for o in ops]}"
        ) from exc

    def backward(g):
        grads = []
        for i, s in enumerate(ins):
            if not ops[i].requires_grad:
                grads.append(None)
                continue
            rest = [ins[j] for j in range(len(ins)) if j != i]
            sub_spec = ",".join([out, *rest]) + "->" + s
            others = [ops[j].data for j in range(len(ops)) if j != i]
            grads.append(np.einsum(sub_spec, g, *others, optimize=len(ops) > 2))
        return tuple(grads)

    return _make(y, ops, backward, "einsum")


def bilinear(h: Tensor, T: Tensor, u: Tensor) -> Tensor:
    """``out[k] = h^T T[k] u`` for a K x d x d tensor ``T``.

    ``h`` may also be a d x n matrix, giving a K x n result (one column per
    column of ``h``).
    """
    h, T, u = as_tensor(h), as_tensor(T), as_tensor(u)
    if T.ndim != 3 or u.ndim != 1 or h.ndim not in (1, 2):
        raise DimensionError(f"bilinear expects h[d], T[K,d,d], u[d]; got {h.shape}, {T.shape}, {u.shape}")
    if T.shape[1] != h.shape[0] or T.shape[2] != u.shape[0]:
        raise DimensionError(f"bilinear dimension mismatch: h{h.shape} T{T.shape} u{u.shape}")
    if h.ndim == 1:
        return einsum("i,kij,j->k", h, T, u)
    return einsum("in,kij,j->kn", h, T, u)


# ---------------------------------------------------------------------------
# normalisation and loss


def softmax(x, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    x = as_tensor(x)
    if x.data.size == 0 or x.shape[axis] == 0:
        raise ContractError("softmax of an empty tensor")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    y = ez / ez.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), backward, "softmax")


def _check_onehot(target: np.ndarray, axis: int) -> None:
    ok = np.isin(target, (0.0, 1.0)).all() and np.all(target.sum(axis=axis) == 1.0)
    if not ok:
        raise ContractError("cross-entropy target is not one-hot along the class axis")


def cross_entropy(p, target, axis: int = 0) -> Tensor:
    """Summed ``-log p[true]`` over every position, classes along ``axis``.

    ``p`` is clamped below at 1e-12 before the log; the clamp has zero
    derivative where it is active.
    """
    p = as_tensor(p)
    t = np.asarray(target, dtype=DTYPE)
    if t.shape != p.shape:
        raise DimensionError(f"cross_entropy shape mismatch: {p.shape} vs {t.shape}")
    _check_onehot(t, axis)
    clamped = np.maximum(p.data, LOG_CLAMP)
    loss = -(t * np.log(clamped)).sum()

    def backward(g):
        return (np.where(p.data > LOG_CLAMP, -g * t / clamped, 0.0),)

    return _make(loss, (p,), backward, "cross_entropy")


# ---------------------------------------------------------------------------
# reverse pass


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into the ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# finite differences


@dataclass
class GradEntry:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    abs_err: float
    rel_err: float
    ok: bool


@dataclass
class GradCheckReport:
    entries: list[GradEntry] = field(default_factory=list)
    rel_tol: float = 1e-4
    abs_floor: float = 1e-7

    @property
    def passed(self) -> bool:
        return all(e.ok for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((e.rel_err for e in self.entries), default=0.0)

    def worst(self, n: int = 10) -> list[GradEntry]:
        return sorted(self.entries, key=lambda e: (e.ok, -e.rel_err))[:n]

    def per_param(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for e in self.entries:
            out[e.name] = max(out.get(e.name, 0.0), e.rel_err)
        return out


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params: Iterable[Param],
    epsilon: float = 1e-5,
    rel_tol: float = 1e-4,
    abs_floor: float = 1e-7,
    max_per_param: int | None = None,
    rng: np.random.Generator | None = None,
    grad_hook: Callable[[Param, np.ndarray], np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare accumulated gradients with central differences.

    ``loss_fn`` must rebuild the graph from the current parameter values and
    be deterministic.  Relative errors use ``max(|analytic|, |numeric|)``
    floored at ``abs_floor / rel_tol`` as denominator, so an entry passes
    when it is within ``rel_tol`` relatively or ``abs_floor`` absolutely.
    ``max_per_param`` samples that many scalars per parameter.
    """
    if epsilon <= 0:
        raise ContractError("epsilon must be positive")
    params = [p for p in params if p.trainable]
    for p in params:
        p.zero_grad()
    backward(loss_fn())
    report = GradCheckReport(rel_tol=rel_tol, abs_floor=abs_floor)
    rng = rng or np.random.default_rng(0)
    for p in params:
        analytic = p.grad.copy()
        if grad_hook is not None:
            analytic = grad_hook(p, analytic)
        indices = list(np.ndindex(p.shape))
        if max_per_param is not None and len(indices) > max_per_param:
            pick = rng.choice(len(indices), size=max_per_param, replace=False)
            indices = [indices[i] for i in sorted(pick)]
        base = p.data
        with no_grad():
            for idx in indices:
                bumped = base.copy()
                bumped[idx] = base[idx] + epsilon
                p.data = bumped
                up = loss_fn().item()
                bumped = base.copy()
                bumped[idx] = base[idx] - epsilon
                p.data = bumped
                down = loss_fn().item()
                p.data = base
                num = (up - down) / (2.0 * epsilon)
                ana = float(analytic[idx])
                abs_err = abs(ana - num)
                rel_err = abs_err / max(abs(ana), abs(num), abs_floor / rel_tol)
                ok = abs_err <= abs_floor or rel_err < rel_tol
                report.entries.append(GradEntry(p.name, idx, ana, num, abs_err, rel_err, ok))
    return report
