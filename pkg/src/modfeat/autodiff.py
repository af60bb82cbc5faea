"""Minimal dense-matrix reverse-mode autodiff engine.

Values are 2-D float64 numpy arrays (row-major). Graphs are built
define-by-run: every op returns a fresh ``Node`` holding the result value
and a vector-Jacobian closure. Leaf nodes (parameters, constants) persist
across steps; interior nodes are rebuilt each step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class ParameterError(ValueError):
    """An op argument is outside its valid range."""


class ContractError(ValueError):
    """An op was called in a way that violates its contract."""


class DeterminismError(RuntimeError):
    """A loss builder produced different values on repeated evaluation."""


def as_matrix(values) -> np.ndarray:
    """Coerce to a C-contiguous 2-D float64 array, validating finiteness."""
    a = np.ascontiguousarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D array, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ParameterError("matrix contains non-finite entries")
    return a


class Node:
    """One vertex of the computation graph.

    ``grad`` is allocated lazily so no-gradient evaluation passes pay
    nothing for it. ``_vjp(g)`` returns one adjoint array per parent.
    """

    __slots__ = ("value", "parents", "_vjp", "_grad")

    def __init__(
        self,
        value: np.ndarray,
        parents: Sequence["Node"] = (),
        vjp: Optional[Callable[[np.ndarray], tuple]] = None,
    ):
        self.value = value
        self.parents = tuple(parents)
        self._vjp = vjp
        self._grad: Optional[np.ndarray] = None

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g: np.ndarray) -> None:
        if g.shape != self.value.shape:
            raise DimensionError("grad shape must match value shape")
        self._grad = g

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def zero_grad(self) -> None:
        self._grad = None

    def __repr__(self) -> str:
        return f"Node(shape={self.value.shape}, leaf={not self.parents})"


def constant(values) -> Node:
    """Leaf node that never receives gradient updates from the optimizer."""
    return Node(as_matrix(values))


def leaf(values) -> Node:
    return Node(as_matrix(values))


@dataclass
class DualParam:
    """A named learnable parameter: persistent value plus accumulated grad."""

    name: str
    node: Node
    learnable: bool = True

    @classmethod
    def create(cls, name: str, values, learnable: bool = True) -> "DualParam":
        return cls(name=name, node=leaf(values), learnable=learnable)

    @property
    def value(self) -> np.ndarray:
        return self.node.value

    @property
    def grad(self) -> np.ndarray:
        return self.node.grad


def _binary_shapes(a: Node, b: Node, op: str) -> None:
    if a.value.shape != b.value.shape:
        raise DimensionError(
            f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}"
        )


def matmul(a: Node, b: Node) -> Node:
    if a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(
            f"matmul: inner dims differ {a.value.shape} x {b.value.shape}"
        )
    av, bv = a.value, b.value

    def vjp(g):
        return g @ bv.T, av.T @ g

    return Node(av @ bv, (a, b), vjp)


def add(a: Node, b: Node) -> Node:
    _binary_shapes(a, b, "add")

    def vjp(g):
        return g, g

    return Node(a.value + b.value, (a, b), vjp)


def sub(a: Node, b: Node) -> Node:
    _binary_shapes(a, b, "sub")

    def vjp(g):
        return g, -g

    return Node(a.value - b.value, (a, b), vjp)


def mul(a: Node, b: Node) -> Node:
    _binary_shapes(a, b, "mul")
    av, bv = a.value, b.value

    def vjp(g):
        return g * bv, g * av

    return Node(av * bv, (a, b), vjp)


def scale(a: Node, c: float) -> Node:
    c = float(c)

    def vjp(g):
        return (g * c,)

    return Node(a.value * c, (a,), vjp)


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    if not np.all(np.isfinite(out)):
        raise ParameterError("exp overflow: input too large")

    def vjp(g):
        return (g * out,)

    return Node(out, (a,), vjp)


def relu(a: Node) -> Node:
    mask = a.value > 0.0

    def vjp(g):
        return (g * mask,)

    return Node(np.where(mask, a.value, 0.0), (a,), vjp)


def sum_all(a: Node) -> Node:
    """Reduce all entries to a 1x1 scalar node."""
    rows, cols = a.value.shape

    def vjp(g):
        return (np.full((rows, cols), g[0, 0]),)

    return Node(np.array([[a.value.sum()]]), (a,), vjp)


def row_log_softmax(a: Node) -> Node:
    """Per-row log-softmax, stabilized by subtracting the row max."""
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - log_z
    probs = np.exp(out)

    def vjp(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return Node(out, (a,), vjp)


def row_softmax(a: np.ndarray) -> np.ndarray:
    """No-gradient per-row softmax on a plain array, stabilized."""
    a = as_matrix(a)
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def dropout(a: Node, p: float, rng: np.random.Generator, enabled: bool = True) -> Node:
    """Inverted dropout: zero entries w.p. ``p``, scale survivors by 1/(1-p).

    Disabled mode is the exact identity (the input node is returned).
    The mask is captured by the vjp closure for the backward pass.
    """
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not enabled:
        return a
    keep = rng.random(a.value.shape) >= p
    factor = keep / (1.0 - p)

    def vjp(g):
        return (g * factor,)

    return Node(a.value * factor, (a,), vjp)


def _topo_order(root: Node) -> list:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> None:
    """Reverse sweep from a 1x1 loss node, accumulating into ``.grad``.

    Adjoints are collected in a per-call map and added to each node's
    grad at the end, so repeated calls accumulate (callers reset grads
    between optimizer steps).
    """
    if loss.value.shape != (1, 1):
        raise ContractError(
            f"backward requires a 1x1 loss node, got shape {loss.value.shape}"
        )
    order = _topo_order(loss)
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(order):
        g = adjoint.get(id(node))
        if g is None or node._vjp is None:
            continue
        for parent, contrib in zip(node.parents, node._vjp(g)):
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + contrib
            else:
                adjoint[key] = contrib
    for node in order:
        g = adjoint.get(id(node))
        if g is not None:
            node.grad = node.grad + g


@dataclass
class GradCheckReport:
    """Comparison of analytic gradients against central differences."""

    max_rel_error: float
    worst_param: str
    per_param: dict = field(default_factory=dict)
    passed: bool = True
    tolerance: float = 1e-4


def grad_check(
    build_fn: Callable[[], Node],
    params: Sequence[DualParam],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    rel_floor: float = 1e-6,
) -> GradCheckReport:
    """Check every parameter entry of a deterministic scalar loss.

    ``build_fn`` must rebuild the same loss from the current parameter
    values on every call (dropout disabled, or its masks frozen by
    reseeding inside the builder). Relative error per entry is
    |analytic - numeric| / max(|analytic|, |numeric|, rel_floor).
    """
    params = [p for p in params if p.learnable]
    base = build_fn().value[0, 0]
    recheck = build_fn().value[0, 0]
    if base != recheck:
        raise DeterminismError(
            f"build_fn is not deterministic: {base!r} != {recheck!r}"
        )
    if not params:
        return GradCheckReport(0.0, "", {}, True, tolerance)

    for p in params:
        p.node.zero_grad()
    backward(build_fn())
    analytic = {p.name: p.node.grad.copy() for p in params}

    per_param: dict[str, float] = {}
    worst = (0.0, params[0].name)
    for p in params:
        theta = p.node.value
        worst_here = 0.0
        it = np.nditer(theta, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            saved = theta[idx]
            theta[idx] = saved + step
            f_plus = build_fn().value[0, 0]
            theta[idx] = saved - step
            f_minus = build_fn().value[0, 0]
            theta[idx] = saved
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = analytic[p.name][idx]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), rel_floor)
            if rel > worst_here:
                worst_here = rel
        per_param[p.name] = worst_here
        if worst_here > worst[0]:
            worst = (worst_here, p.name)
    return GradCheckReport(
        max_rel_error=worst[0],
        worst_param=worst[1],
        per_param=per_param,
        passed=worst[0] < tolerance,
        tolerance=tolerance,
    )
