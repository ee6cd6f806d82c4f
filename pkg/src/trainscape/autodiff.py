"""Reverse-mode automatic differentiation over dense matrices.

A ComputationTape records matrix-level primitive ops (matmul, broadcast
add/mul, relu, reductions, ...) in execution order; `backward` walks the
record in reverse and accumulates an adjoint matrix per node. Everything
operates on plain numpy arrays; float32 is the production dtype, but ops
preserve whatever dtype the leaves carry (float64 is handy for
finite-difference verification).
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError


class Node:
    """One value in the computation graph. Holds the forward result only."""

    __slots__ = ("id", "value", "op")

    def __init__(self, node_id: int, value: np.ndarray, op: str):
        self.id = node_id
        self.value = value
        self.op = op

    @property
    def shape(self):
        return self.value.shape


def _unbroadcast(adj: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum an adjoint back down to `shape` after numpy broadcasting."""
    while adj.ndim > len(shape):
        adj = adj.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and adj.shape[axis] != 1:
            adj = adj.sum(axis=axis, keepdims=True)
    return adj


class ComputationTape:
    """Ordered op record supporting a single reverse pass to adjoints."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._backward_fns: list = []  # node id -> callable(adjoint) -> [(parent_id, contribution)]

    def _push(self, value, op, backward_fn) -> Node:
        value = np.asarray(value)
        node = Node(len(self.nodes), value, op)
        self.nodes.append(node)
        self._backward_fns.append(backward_fn)
        return node

    # -- leaves ---------------------------------------------------------

    def leaf(self, value, op="leaf") -> Node:
        value = np.asarray(value)
        if value.ndim != 2:
            raise DimensionError(f"tape works on 2-D matrices, got shape {value.shape}")
        return self._push(value, op, None)

    # -- primitive ops --------------------------------------------------

    def matmul(self, a: Node, b: Node) -> Node:
        if a.value.shape[1] != b.value.shape[0]:
            raise DimensionError(
                f"matmul {a.value.shape} @ {b.value.shape}: inner dimensions differ")

        def backward(adj):
            return [(a.id, adj @ b.value.T), (b.id, a.value.T @ adj)]

        return self._push(a.value @ b.value, "matmul", backward)

    def add(self, a: Node, b: Node) -> Node:
        def backward(adj):
            return [(a.id, _unbroadcast(adj, a.value.shape)),
                    (b.id, _unbroadcast(adj, b.value.shape))]

        return self._push(a.value + b.value, "add", backward)

    def sub(self, a: Node, b: Node) -> Node:
        def backward(adj):
            return [(a.id, _unbroadcast(adj, a.value.shape)),
                    (b.id, _unbroadcast(-adj, b.value.shape))]

        return self._push(a.value - b.value, "sub", backward)

    def mul(self, a: Node, b: Node) -> Node:
        def backward(adj):
            return [(a.id, _unbroadcast(adj * b.value, a.value.shape)),
                    (b.id, _unbroadcast(adj * a.value, b.value.shape))]

        return self._push(a.value * b.value, "mul", backward)

    def scale(self, a: Node, s: float) -> Node:
        s = a.value.dtype.type(s)

        def backward(adj):
            return [(a.id, adj * s)]

        return self._push(a.value * s, "scale", backward)

    def add_scalar(self, a: Node, s: float) -> Node:
        s = a.value.dtype.type(s)

        def backward(adj):
            return [(a.id, adj)]

        return self._push(a.value + s, "add_scalar", backward)

    def relu(self, a: Node) -> Node:
        mask = a.value > 0

        def backward(adj):
            return [(a.id, adj * mask)]

        return self._push(np.where(mask, a.value, a.value.dtype.type(0)), "relu", backward)

    def pow_const(self, a: Node, p: float) -> Node:
        """Elementwise a**p for constant p. Caller keeps the base positive
        when p is fractional (add an epsilon upstream)."""
        out = a.value ** a.value.dtype.type(p)

        def backward(adj):
            return [(a.id, adj * a.value.dtype.type(p) * a.value ** a.value.dtype.type(p - 1))]

        return self._push(out, "pow", backward)

    def log(self, a: Node) -> Node:
        def backward(adj):
            return [(a.id, adj / a.value)]

        return self._push(np.log(a.value), "log", backward)

    def reciprocal(self, a: Node) -> Node:
        out = 1.0 / a.value

        def backward(adj):
            return [(a.id, -adj * out * out)]

        return self._push(out.astype(a.value.dtype), "reciprocal", backward)

    def row_sum(self, a: Node) -> Node:
        """Sum over columns -> (N, 1)."""
        def backward(adj):
            return [(a.id, np.broadcast_to(adj, a.value.shape).copy())]

        return self._push(a.value.sum(axis=1, keepdims=True), "row_sum", backward)

    def sum_all(self, a: Node) -> Node:
        def backward(adj):
            return [(a.id, np.full_like(a.value, adj[0, 0]))]

        return self._push(a.value.sum(dtype=a.value.dtype).reshape(1, 1), "sum", backward)

    def mean_all(self, a: Node) -> Node:
        n = a.value.size

        def backward(adj):
            return [(a.id, np.full_like(a.value, adj[0, 0] / a.value.dtype.type(n)))]

        return self._push((a.value.sum(dtype=a.value.dtype) / a.value.dtype.type(n)).reshape(1, 1),
                          "mean", backward)

    def take_per_row(self, a: Node, cols: np.ndarray) -> Node:
        """Pick one column per row -> (N, 1). `cols` is a constant index vector."""
        cols = np.asarray(cols, dtype=np.int64)
        rows = np.arange(a.value.shape[0])
        out = a.value[rows, cols].reshape(-1, 1)

        def backward(adj):
            g = np.zeros_like(a.value)
            np.add.at(g, (rows, cols), adj[:, 0])
            return [(a.id, g)]

        return self._push(out, "take_per_row", backward)

    def softmax_cross_entropy(self, logits: Node, labels: np.ndarray) -> Node:
        """Mean cross-entropy of row-softmax vs integer labels. Fused op with
        the standard (softmax - onehot)/N backward."""
        labels = np.asarray(labels, dtype=np.int64)
        z = logits.value
        shifted = z - z.max(axis=1, keepdims=True)
        expz = np.exp(shifted)
        probs = expz / expz.sum(axis=1, keepdims=True)
        n = z.shape[0]
        rows = np.arange(n)
        losses = -(shifted[rows, labels] - np.log(expz.sum(axis=1)))
        out = (losses.sum(dtype=z.dtype) / z.dtype.type(n)).reshape(1, 1)

        def backward(adj):
            g = probs.copy()
            g[rows, labels] -= 1
            return [(logits.id, (adj[0, 0] / z.dtype.type(n)) * g.astype(z.dtype))]

        return self._push(out, "softmax_xent", backward)

    # -- reverse pass -----------------------------------------------------

    def backward(self, loss: Node) -> dict[int, np.ndarray]:
        """Adjoints for every node reachable from `loss`, keyed by node id."""
        if loss.value.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
        adjoints: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
        for node in reversed(self.nodes[: loss.id + 1]):
            adj = adjoints.get(node.id)
            if adj is None:
                continue
            fn = self._backward_fns[node.id]
            if fn is None:
                continue
            for parent_id, contribution in fn(adj):
                if parent_id in adjoints:
                    adjoints[parent_id] = adjoints[parent_id] + contribution
                else:
                    adjoints[parent_id] = contribution
        return adjoints

    def grad(self, adjoints: dict[int, np.ndarray], node: Node) -> np.ndarray:
        """Adjoint of `node`, or zeros when the loss did not reach it."""
        adj = adjoints.get(node.id)
        if adj is None:
            return np.zeros_like(node.value)
        return adj
