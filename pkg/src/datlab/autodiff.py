"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Node` holds a value and an accumulated gradient. Operations build a
DAG of nodes; :func:`backward` walks it in reverse topological order. The
gradient-reversal operation :func:`grad_reverse` is a first-class node so a
single loss graph can express adversarial updates.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

LOG_FLOOR = 1e-300


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class AutodiffValidationError(ValueError):
    """Invalid argument to a graph operation."""


class Node:
    """A value in the computation graph.

    ``grad`` has the same shape as ``value`` and starts at zero. Gradients
    from every consumer are summed into it by :func:`backward`.
    """

    __slots__ = ("value", "grad", "op", "parents", "_backward")

    def __init__(
        self,
        value,
        op: str = "leaf",
        parents: Sequence["Node"] = (),
        backward_fn: Callable[[np.ndarray], Sequence[np.ndarray]] | None = None,
    ):
        value = np.array(value, dtype=np.float64)
        self.value = value
        self.grad = np.zeros_like(value)
        self.op = op
        self.parents = tuple(parents)
        self._backward = backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={self.shape})"


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x, op="const")


def _check_2d(a: Node, name: str) -> None:
    if a.value.ndim != 2:
        raise ShapeError(f"{name} expects a 2-D operand, got shape {a.shape}")


# --------------------------------------------------------------------------
# Operations


def matmul(a: Node, b: Node) -> Node:
    a, b = as_node(a), as_node(b)
    _check_2d(a, "matmul")
    _check_2d(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def back(g):
        return g @ bv.T, av.T @ g

    return Node(av @ bv, "matmul", (a, b), back)


def add(a: Node, b: Node) -> Node:
    a, b = as_node(a), as_node(b)
    if a.shape != b.shape:
        raise ShapeError(f"add requires equal shapes: {a.shape} vs {b.shape}")
    return Node(a.value + b.value, "add", (a, b), lambda g: (g, g))


def mul(a: Node, b: Node) -> Node:
    """Elementwise product of equally shaped nodes."""
    a, b = as_node(a), as_node(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul requires equal shapes: {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    return Node(av * bv, "mul", (a, b), lambda g: (g * bv, g * av))


def bias_add(x: Node, b: Node) -> Node:
    """Add a length-n bias vector to every row of an [m x n] matrix."""
    x, b = as_node(x), as_node(b)
    _check_2d(x, "bias_add")
    if b.value.ndim != 1 or b.shape[0] != x.shape[1]:
        raise ShapeError(f"bias_add: bias shape {b.shape} does not fit {x.shape}")
    return Node(x.value + b.value, "bias_add", (x, b), lambda g: (g, g.sum(axis=0)))


def scale(x: Node, c: float) -> Node:
    x = as_node(x)
    c = float(c)
    return Node(c * x.value, "scale", (x,), lambda g: (c * g,))


def tanh(x: Node) -> Node:
    x = as_node(x)
    out = np.tanh(x.value)
    return Node(out, "tanh", (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Node) -> Node:
    x = as_node(x)
    mask = x.value > 0
    return Node(np.where(mask, x.value, 0.0), "relu", (x,), lambda g: (g * mask,))


def log(x: Node) -> Node:
    """Natural log with a floor of ``LOG_FLOOR`` so exact zeros stay finite."""
    x = as_node(x)
    safe = np.maximum(x.value, LOG_FLOOR)
    return Node(np.log(safe), "log", (x,), lambda g: (g / safe,))


def concat_cols(a: Node, b: Node) -> Node:
    a, b = as_node(a), as_node(b)
    _check_2d(a, "concat_cols")
    _check_2d(b, "concat_cols")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols row counts differ: {a.shape} vs {b.shape}")
    k = a.shape[1]
    return Node(
        np.concatenate([a.value, b.value], axis=1),
        "concat_cols",
        (a, b),
        lambda g: (g[:, :k], g[:, k:]),
    )


def sum_all(x: Node) -> Node:
    x = as_node(x)
    shape = x.shape
    return Node(np.sum(x.value), "sum", (x,), lambda g: (np.full(shape, g),))


def mean(x: Node) -> Node:
    x = as_node(x)
    shape, n = x.shape, x.value.size
    return Node(np.mean(x.value), "mean", (x,), lambda g: (np.full(shape, g / n),))


def softmax_rows(logits: Node) -> Node:
    logits = as_node(logits)
    _check_2d(logits, "softmax_rows")
    shifted = logits.value - logits.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (p * (g - np.sum(g * p, axis=1, keepdims=True)),)

    return Node(p, "softmax_rows", (logits,), back)


def _check_prob_rows(targets: np.ndarray, tol: float = 1e-9) -> None:
    if np.any(targets < 0) or np.any(np.abs(targets.sum(axis=1) - 1.0) > tol):
        raise AutodiffValidationError("target rows must be nonnegative and sum to 1")


def cross_entropy_soft(pred_probs: Node, targets) -> Node:
    """Mean over rows of ``-sum_i t_i log p_i`` for probability targets."""
    pred_probs = as_node(pred_probs)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != pred_probs.shape:
        raise ShapeError(f"targets {t.shape} do not match predictions {pred_probs.shape}")
    _check_prob_rows(t)
    m = t.shape[0]
    safe = np.maximum(pred_probs.value, LOG_FLOOR)
    value = -np.sum(np.sum(t * np.log(safe), axis=1)) / m
    return Node(value, "cross_entropy_soft", (pred_probs,), lambda g: (-g * t / safe / m,))


def cross_entropy_hard(pred_probs: Node, labels) -> Node:
    """Mean negative log-probability of integer class labels."""
    pred_probs = as_node(pred_probs)
    _check_2d(pred_probs, "cross_entropy_hard")
    y = np.asarray(labels)
    m, n = pred_probs.shape
    if y.shape != (m,):
        raise ShapeError(f"labels shape {y.shape} does not match {m} rows")
    if y.size and (y.min() < 0 or y.max() >= n):
        raise AutodiffValidationError(f"labels must lie in [0, {n})")
    rows = np.arange(m)
    safe = np.maximum(pred_probs.value, LOG_FLOOR)
    value = -np.sum(np.log(safe[rows, y])) / m

    def back(g):
        out = np.zeros_like(safe)
        out[rows, y] = -g / safe[rows, y] / m
        return (out,)

    return Node(value, "cross_entropy_hard", (pred_probs,), back)


def hits_log_floor(pred_probs: Node, targets) -> bool:
    """True when a target class has probability below ``LOG_FLOOR``.

    The cross-entropy value is then finite only because of the floor; the
    exact loss is infinite. ``targets`` may be integer labels or soft rows.
    """
    p = as_node(pred_probs).value
    t = np.asarray(targets)
    if t.ndim == 2:
        return bool(np.any((t > 0) & (p < LOG_FLOOR)))
    return bool(np.any(p[np.arange(len(t)), t] < LOG_FLOOR))


def grad_reverse(x: Node, lam: float) -> Node:
    """Identity forward; multiplies the upstream gradient by ``-lam`` backward."""
    x = as_node(x)
    if lam < 0:
        raise AutodiffValidationError(f"gradient-reversal scale must be >= 0, got {lam}")
    lam = float(lam)
    return Node(x.value.copy(), "grad_reverse", (x,), lambda g: (-lam * g,))


# --------------------------------------------------------------------------
# Graph traversal and parameter updates


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(node) into ``node.grad`` for every reachable node.

    Gradients of one pass are gathered separately and only then added to the
    stored ``grad`` fields, so calling twice without :func:`zero_grad`
    doubles every gradient.
    """
    if root.value.size != 1:
        raise AutodiffValidationError(f"backward needs a scalar root, got shape {root.shape}")
    order = _topo_order(root)
    pending = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = pending.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
    for node in order:
        g = pending.get(id(node))
        if g is not None:
            node.grad += g


def zero_grad(params: Iterable[Node]) -> None:
    for p in params:
        p.grad = np.zeros_like(p.value)


def sgd_step(params: Iterable[Node], alpha: float) -> None:
    for p in params:
        p.value -= alpha * p.grad
