"""Tape-based reverse-mode differentiation over dense float64 matrices, and Adam.

Only the handful of primitives the value network needs are provided. Every
value is a 2-D array. Operands that are not on a tape (plain arrays, scipy
sparse matrices, or :class:`Tensor` constants) are treated as constants, and
an op whose operands are all constants records nothing.

Example::

    tape = Tape()
    W = tape.watch(np.ones((3, 2)))
    loss = sum_all(relu(matmul(x, W)))
    grads = backward(tape, loss)
    grads[W.id]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("value", "tape", "id")

    def __init__(self, value, tape: "Tape | None" = None, id: int | None = None):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {value.shape}")
        self.value = value
        self.tape = tape
        self.id = id

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def is_constant(self) -> bool:
        return self.id is None

    def __repr__(self):
        tag = "const" if self.id is None else f"node {self.id}"
        return f"Tensor({self.shape}, {tag})"


@dataclass
class _Node:
    parents: tuple[int, ...]
    vjp: object  # g -> tuple of parent grads (None to skip)
    shape: tuple[int, int]


class Tape:
    """Append-only record of primitive ops; parents always precede children."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self):
        return len(self.nodes)

    def watch(self, value) -> Tensor:
        """Register a leaf (e.g. a parameter) whose gradient is wanted."""
        t = Tensor(value)
        t.tape, t.id = self, len(self.nodes)
        self.nodes.append(_Node((), None, t.shape))
        return t

    def _record(self, value, parents, vjp) -> Tensor:
        t = Tensor(value, self, len(self.nodes))
        self.nodes.append(_Node(tuple(parents), vjp, t.shape))
        return t


def _value(x):
    if isinstance(x, Tensor):
        return x.value
    if sp.issparse(x):
        return x
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"operands must be 2-D, got shape {x.shape}")
    return x


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Tensor) and x.id is not None:
            if tape is not None and x.tape is not tape:
                raise ValueError("operands recorded on different tapes")
            tape = x.tape
    return tape


def _tracked(x) -> bool:
    return isinstance(x, Tensor) and x.id is not None


def _make(value, operands, vjps):
    """Record ``value`` with one vjp per tracked operand."""
    tape = _tape_of(*operands)
    if tape is None:
        return Tensor(value)
    parents, fns = [], []
    for x, fn in zip(operands, vjps):
        if _tracked(x):
            parents.append(x.id)
            fns.append(fn)

    def vjp(g):
        return tuple(fn(g) for fn in fns)

    return tape._record(value, parents, vjp)


def matmul(a, b) -> Tensor:
    A, B = _value(a), _value(b)
    if A.shape[1] != B.shape[0]:
        raise ShapeError(f"matmul: {A.shape} @ {B.shape}")
    out = A @ B
    if sp.issparse(out):
        out = out.toarray()
    return _make(np.asarray(out), (a, b), (
        lambda g: np.asarray(g @ B.T),
        lambda g: np.asarray(A.T @ g),
    ))


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may also be a single row broadcast over ``a``'s rows."""
    A, B = _value(a), _value(b)
    if A.shape == B.shape:
        return _make(A + B, (a, b), (lambda g: g, lambda g: g))
    if B.shape == (1, A.shape[1]):
        return _make(A + B, (a, b), (lambda g: g, lambda g: g.sum(axis=0, keepdims=True)))
    raise ShapeError(f"add: {A.shape} + {B.shape}")


def sub(a, b) -> Tensor:
    A, B = _value(a), _value(b)
    if A.shape != B.shape:
        raise ShapeError(f"sub: {A.shape} - {B.shape}")
    return _make(A - B, (a, b), (lambda g: g, lambda g: -g))


def affine(x, W, b) -> Tensor:
    """``x @ W + b`` with ``b`` a (1, out) row."""
    X, Wv, bv = _value(x), _value(W), _value(b)
    if X.shape[1] != Wv.shape[0] or bv.shape != (1, Wv.shape[1]):
        raise ShapeError(f"affine: {X.shape} @ {Wv.shape} + {bv.shape}")
    out = X @ Wv + bv
    return _make(out, (x, W, b), (
        lambda g: g @ Wv.T,
        lambda g: X.T @ g,
        lambda g: g.sum(axis=0, keepdims=True),
    ))


def relu(x) -> Tensor:
    X = _value(x)
    # Subgradient 0 at 0; the mask is only built if backward reaches here.
    return _make(np.maximum(X, 0.0), (x,), (lambda g: g * (X > 0),))


def scale(x, c: float) -> Tensor:
    X = _value(x)
    return _make(X * c, (x,), (lambda g: g * c,))


def square(x) -> Tensor:
    X = _value(x)
    return _make(X * X, (x,), (lambda g: 2.0 * X * g,))


def sum_rows(x) -> Tensor:
    """Column-wise sum over rows, giving a (1, cols) row."""
    X = _value(x)
    n = X.shape[0]
    return _make(X.sum(axis=0, keepdims=True), (x,), (lambda g: np.repeat(g, n, axis=0),))


def sum_all(x) -> Tensor:
    X = _value(x)
    shape = X.shape
    return _make(np.array([[X.sum()]]), (x,), (lambda g: np.full(shape, g[0, 0]),))


def mean_all(x) -> Tensor:
    X = _value(x)
    return scale(sum_all(x), 1.0 / X.size)


def take_rows(x, start: int, stop: int) -> Tensor:
    X = _value(x)
    shape = X.shape

    def vjp(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return out

    return _make(X[start:stop], (x,), (vjp,))


def concat(xs, axis: int = 0) -> Tensor:
    vals = [_value(x) for x in xs]
    if not vals:
        raise ShapeError("concat of nothing")
    other = 1 - axis
    if len({v.shape[other] for v in vals}) != 1:
        raise ShapeError(f"concat axis {axis}: {[v.shape for v in vals]}")
    out = np.concatenate(vals, axis=axis)
    edges = np.cumsum([0] + [v.shape[axis] for v in vals])

    def piece(i):
        lo, hi = edges[i], edges[i + 1]
        return (lambda g: g[lo:hi]) if axis == 0 else (lambda g: g[:, lo:hi])

    return _make(out, xs, [piece(i) for i in range(len(xs))])


def relational_mix(Q, QT, xws, ks) -> Tensor:
    """Route feature blocks through one sparse operator.

    Each ``xws[t]`` is (n_t, k_t * d): ``k_t`` side-by-side blocks of width
    ``d``. Row-major flattening of all of them gives a (sum n_t * k_t, d)
    stack, where row ``offset_t + v * k_t + j`` is block ``j`` of row ``v``
    of input ``t``. Returns ``Q @ stack``; ``QT`` is the transpose of ``Q``.
    """
    vals = [_value(x) for x in xws]
    ks = tuple(ks)
    if len(vals) != len(ks) or not vals:
        raise ShapeError("relational_mix needs one block count per input")
    d = vals[0].shape[1] // ks[0]
    sizes = []
    for X, k in zip(vals, ks):
        if X.shape[1] != k * d:
            raise ShapeError(f"relational_mix: input {X.shape} is not {k} blocks of width {d}")
        sizes.append(X.shape[0] * k)
    if Q.shape[1] != sum(sizes):
        raise ShapeError(f"relational_mix: operator {Q.shape} for {sum(sizes)} stacked rows")
    stack = np.concatenate([X.reshape(-1, d) for X in vals], axis=0) if len(vals) > 1 else vals[0].reshape(-1, d)
    out = np.asarray(Q @ stack)
    edges = np.cumsum([0] + sizes)

    def piece(i):
        lo, hi, shape = edges[i], edges[i + 1], vals[i].shape
        return lambda g: np.asarray(QT[lo:hi] @ g).reshape(shape)

    return _make(out, xws, [piece(i) for i in range(len(vals))])


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse accumulation from a 1x1 ``loss``; returns node id -> gradient."""
    if loss.shape != (1, 1):
        raise ShapeError(f"loss must be 1x1, got {loss.shape}")
    if loss.id is None or loss.tape is not tape:
        raise ValueError("loss is not recorded on this tape")
    grads: dict[int, np.ndarray] = {loss.id: np.ones((1, 1))}
    for i in range(loss.id, -1, -1):
        g = grads.get(i)
        node = tape.nodes[i]
        if g is None or node.vjp is None:
            continue
        for pid, pg in zip(node.parents, node.vjp(g)):
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
    return grads


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = None  # flat first moment
    v: np.ndarray | None = None  # flat second moment


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update. Returns new params and a new state;
    inputs are left untouched.

    Moments are kept as one flat vector over all parameters, in the
    iteration order of ``params``.
    """
    names = list(params)
    sizes = [params[n].size for n in names]
    flat_p = np.concatenate([params[n].ravel() for n in names])
    parts = []
    for n in names:
        g = grads.get(n)
        if g is None:
            g = np.zeros_like(params[n])
        elif g.shape != params[n].shape:
            raise ShapeError(f"{n}: grad {g.shape} vs param {params[n].shape}")
        parts.append(g.ravel())
    g = np.concatenate(parts)
    m_prev = state.m if state.m is not None and len(state.m) == len(g) else np.zeros_like(g)
    v_prev = state.v if state.v is not None and len(state.v) == len(g) else np.zeros_like(g)
    t = state.t + 1
    # In-place arithmetic on fresh buffers only; the incoming state is not touched.
    m = m_prev * state.beta1
    m += (1.0 - state.beta1) * g
    v = g * g
    v *= 1.0 - state.beta2
    v += state.beta2 * v_prev
    denom = v * (1.0 / (1.0 - state.beta2 ** t))
    np.sqrt(denom, out=denom)
    denom += state.eps
    step = m * (state.lr / (1.0 - state.beta1 ** t))
    step /= denom
    flat_p -= step
    out, lo = {}, 0
    for n, size in zip(names, sizes):
        out[n] = flat_p[lo:lo + size].reshape(params[n].shape)
        lo += size
    return out, AdamState(state.lr, state.beta1, state.beta2, state.eps, t, m, v)
