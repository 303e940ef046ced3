"""Dense float64 arithmetic with a record-and-replay gradient tape.

Values are plain ``numpy.float64`` arrays.  When at least one operand of an
op is a :class:`Node`, the op is recorded on that node's :class:`Graph` and
its vector-Jacobian product is kept for the reverse pass.  With only array
operands the same functions evaluate eagerly, so model code can be written
once and run either way.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit


class NumericError(ArithmeticError):
    """A value became NaN or infinite."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A caller broke an operation's precondition."""


def as_tensor(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64, order="C")  # keeps 0-d shapes


def _check_finite(value: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite value produced by {what}")


class ParameterSet:
    """Named trainable arrays, each with a gradient slot of the same shape.

    Names listed in ``frozen`` travel with the set (and into checkpoints) but
    are skipped by the optimizer.
    """

    def __init__(self, arrays: Mapping[str, np.ndarray], frozen: Iterable[str] = ()):
        self.arrays: dict[str, np.ndarray] = {k: as_tensor(v).copy() for k, v in arrays.items()}
        self.frozen = frozenset(frozen)
        self.grads: dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __setitem__(self, name: str, value) -> None:
        value = as_tensor(value)
        if name in self.arrays and value.shape != self.arrays[name].shape:
            raise DimensionError(f"{name}: shape {value.shape} != {self.arrays[name].shape}")
        self.arrays[name] = value.copy()
        self.grads.setdefault(name, np.zeros_like(value))

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self) -> int:
        return len(self.arrays)

    def names(self) -> list[str]:
        return list(self.arrays)

    def trainable(self) -> list[str]:
        return [k for k in self.arrays if k not in self.frozen]

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.arrays.items()}

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParameterSet":
        out = ParameterSet(self.arrays, self.frozen)
        for k, g in self.grads.items():
            out.grads[k][...] = g
        return out

    def size(self) -> int:
        return sum(v.size for k, v in self.arrays.items() if k not in self.frozen)

    def equal(self, other: "ParameterSet") -> bool:
        """Bitwise equality of names, shapes and values."""
        if self.names() != other.names():
            return False
        return all(
            self.arrays[k].shape == other.arrays[k].shape
            and self.arrays[k].tobytes() == other.arrays[k].tobytes()
            for k in self.arrays
        )


class Node:
    """One recorded value on a :class:`Graph`."""

    __slots__ = ("graph", "index", "value", "grad", "parents", "vjp", "param")

    def __init__(self, graph, index, value, parents=(), vjp=None, param=None):
        self.graph = graph
        self.index = index
        self.value = value
        self.grad: np.ndarray | None = None
        self.parents: tuple[Node, ...] = tuple(parents)
        self.vjp = vjp
        self.param = param

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(#{self.index}, shape={self.value.shape})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Graph:
    """Append-only tape.  Append order is a topological order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._leaves: dict[tuple[int, str], Node] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, value, parents=(), vjp=None, *, what: str = "op", param=None) -> Node:
        value = as_tensor(value)
        _check_finite(value, what)
        node = Node(self, len(self.nodes), value, parents, vjp, param)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return self.record(value, what="constant")

    def param(self, params: ParameterSet, name: str) -> Node:
        """Leaf node for ``params[name]``; one leaf per (set, name) per graph."""
        key = (id(params), name)
        leaf = self._leaves.get(key)
        if leaf is None:
            leaf = self.record(params[name], what=name, param=(params, name))
            self._leaves[key] = leaf
        return leaf

    def bind(self, params: ParameterSet) -> "BoundParams":
        return BoundParams(self, params)


class BoundParams(Mapping):
    """Mapping view that hands out graph leaves for a parameter set."""

    def __init__(self, graph: Graph, params: ParameterSet):
        self.graph = graph
        self.params = params

    def __getitem__(self, name: str) -> Node:
        return self.graph.param(self.params, name)

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)


def _graph_of(args) -> Graph | None:
    graph = None
    for a in args:
        if isinstance(a, Node):
            if graph is None:
                graph = a.graph
            elif a.graph is not graph:
                raise ContractError("operands belong to different graphs")
    return graph


def _lift(graph: Graph, a) -> Node:
    return a if isinstance(a, Node) else graph.constant(a)


def _val(a):
    return a.value if isinstance(a, Node) else a


def _same_shape(op: str, a, b) -> None:
    sa, sb = np.shape(_val(a)), np.shape(_val(b))
    # Python scalars broadcast; arrays must agree exactly.
    if np.ndim(_val(a)) and np.ndim(_val(b)) and sa != sb:
        raise DimensionError(f"{op}: shapes {sa} and {sb} differ")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.full(shape, grad.sum()) if shape == () else grad.reshape(shape)


# ----------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    _same_shape("add", a, b)
    graph = _graph_of((a, b))
    out = np.add(_val(a), _val(b))
    if graph is None:
        return out
    a, b = _lift(graph, a), _lift(graph, b)
    return graph.record(
        out, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        what="add",
    )


def sub(a, b):
    _same_shape("sub", a, b)
    graph = _graph_of((a, b))
    out = np.subtract(_val(a), _val(b))
    if graph is None:
        return out
    a, b = _lift(graph, a), _lift(graph, b)
    return graph.record(
        out, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        what="sub",
    )


def mul(a, b):
    _same_shape("mul", a, b)
    graph = _graph_of((a, b))
    av, bv = _val(a), _val(b)
    out = np.multiply(av, bv)
    if graph is None:
        return out
    a, b = _lift(graph, a), _lift(graph, b)
    return graph.record(
        out, (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
        what="mul",
    )


def scale(a, factor: float):
    graph = _graph_of((a,))
    out = _val(a) * float(factor)
    if graph is None:
        return out
    return graph.record(out, (a,), lambda g: (g * float(factor),), what="scale")


def sigmoid(a):
    graph = _graph_of((a,))
    out = expit(_val(a))
    if graph is None:
        return out
    return graph.record(out, (a,), lambda g: (g * out * (1.0 - out),), what="sigmoid")


def tanh(a):
    graph = _graph_of((a,))
    out = np.tanh(_val(a))
    if graph is None:
        return out
    return graph.record(out, (a,), lambda g: (g * (1.0 - out * out),), what="tanh")


def log(a):
    graph = _graph_of((a,))
    av = _val(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(av)
    if graph is None:
        _check_finite(out, "log")
        return out
    return graph.record(out, (a,), lambda g: (g / a.value,), what="log")


def clip(a, lo: float, hi: float):
    """Clamp into [lo, hi]; the gradient is zero where clamping is active."""
    graph = _graph_of((a,))
    av = _val(a)
    out = np.clip(av, lo, hi)
    if graph is None:
        return out
    inside = (av >= lo) & (av <= hi)
    return graph.record(out, (a,), lambda g: (g * inside,), what="clip")


# ----------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a, b):
    av, bv = _val(a), _val(b)
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2) or av.shape[-1] != bv.shape[0]:
        raise DimensionError(f"matmul: shapes {av.shape} and {bv.shape} are not aligned")
    graph = _graph_of((a, b))
    out = av @ bv
    if graph is None:
        return out
    a, b = _lift(graph, a), _lift(graph, b)

    def vjp(g):
        A, B = a.value, b.value
        G = np.atleast_1d(g)
        if A.ndim == 2 and B.ndim == 2:
            return G @ B.T, A.T @ G
        if A.ndim == 2:  # matrix @ vector
            return np.outer(G, B), A.T @ G
        if B.ndim == 2:  # vector @ matrix
            return B @ G, np.outer(A, G)
        return g * B, g * A  # dot product

    return graph.record(out, (a, b), vjp, what="matmul")


def column(a, j: int):
    """Column ``j`` of a matrix; the gradient lands in that column only."""
    av = _val(a)
    if av.ndim != 2:
        raise DimensionError(f"column: expected a matrix, got shape {av.shape}")
    if not 0 <= j < av.shape[1]:
        raise IndexError(f"column {j} out of range for shape {av.shape}")
    graph = _graph_of((a,))
    out = av[:, j].copy()
    if graph is None:
        return out

    def vjp(g):
        full = np.zeros_like(a.value)
        full[:, j] = g
        return (full,)

    return graph.record(out, (a,), vjp, what="column")


def total(a):
    """Sum of all elements as a 0-d value."""
    graph = _graph_of((a,))
    av = _val(a)
    out = np.asarray(av.sum())
    if graph is None:
        return out
    return graph.record(out, (a,), lambda g: (np.full(a.shape, float(g)),), what="sum")


def mean(a):
    graph = _graph_of((a,))
    av = _val(a)
    n = av.size
    out = np.asarray(av.sum() / n)
    if graph is None:
        return out
    return graph.record(out, (a,), lambda g: (np.full(a.shape, float(g) / n),), what="mean")


def custom(value, inputs: Sequence, vjp: Callable, what: str = "custom"):
    """Record an op whose value and VJP the caller computed.

    ``vjp(g)`` returns one gradient per entry of ``inputs``; ``None`` marks a
    non-differentiable input.
    """
    graph = _graph_of(inputs)
    if graph is None:
        return as_tensor(value)
    inputs = tuple(_lift(graph, x) for x in inputs)
    return graph.record(value, inputs, vjp, what=what)


# ----------------------------------------------------------------------------
# reverse pass


def backward(graph: Graph, loss: Node) -> None:
    """Propagate d(loss)/d(node) in reverse append order.

    Gradients reaching parameter leaves are *added* to the owning
    :class:`ParameterSet`'s grad slots, so calling this twice without
    ``zero_grad`` doubles them.
    """
    if loss.graph is not graph:
        raise ContractError("loss node does not belong to this graph")
    if loss.value.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
    for node in graph.nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(graph.nodes[: loss.index + 1]):
        if node.grad is None or node.vjp is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            if g is None:
                continue
            g = np.asarray(g, dtype=np.float64).reshape(parent.shape)
            parent.grad = g.copy() if parent.grad is None else parent.grad + g
    for node in graph.nodes:
        if node.param is not None and node.grad is not None:
            params, name = node.param
            params.grads[name] += node.grad


# ----------------------------------------------------------------------------
# finite-difference oracle


@dataclass
class GradCheckReport:
    max_error: float
    worst: tuple[str, tuple[int, ...]] | None
    per_param: dict[str, float] = field(default_factory=dict)
    checked: int = 0
    skipped: int = 0


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), floor)


def difference_floor(value: float, epsilon: float, tolerance: float) -> float:
    """Gradient scale below which central differences cannot reach ``tolerance``.

    Rounding in ``f`` limits a central difference to about
    ``eps64 * |f| / epsilon`` absolute accuracy; dividing by the tolerance gives
    the smallest gradient whose relative error is still measurable.
    """
    return np.finfo(np.float64).eps * max(1.0, abs(value)) / epsilon / tolerance


def _evaluate(f, params) -> float:
    out = f(params)
    value = float(np.asarray(out.value if isinstance(out, Node) else out))
    if not np.isfinite(value):
        raise NumericError("objective is not finite")
    return value


def analytic_gradient(f, params: ParameterSet) -> dict[str, np.ndarray]:
    """Gradient of a tape-recorded objective ``f(params) -> Node``."""
    params.zero_grad()
    loss = f(params)
    if not isinstance(loss, Node):
        return {k: np.zeros_like(v) for k, v in params.arrays.items()}
    backward(loss.graph, loss)
    return {k: g.copy() for k, g in params.grads.items()}


def grad_check_report(
    f: Callable,
    params: ParameterSet,
    epsilon: float = 1e-5,
    *,
    gradient: Callable | None = None,
    names: Iterable[str] | None = None,
    regime: Callable | None = None,
    floor: float = 1e-8,
) -> GradCheckReport:
    """Compare an analytic gradient against central differences.

    ``f(params)`` returns a float or a tape :class:`Node`.  The analytic
    gradient comes from ``gradient(params)`` when given, else from running
    :func:`backward` on the tape.  When ``regime(params)`` is given, elements
    whose +/- perturbations land in different regimes (a piecewise branch
    change) are skipped.  ``floor`` bounds the relative-error denominator.
    """
    if not epsilon > 0:
        raise ContractError("epsilon must be positive")
    work = params.copy()
    analytic = gradient(work) if gradient is not None else analytic_gradient(f, work)
    _evaluate(f, work)
    names = list(names) if names is not None else work.trainable()

    report = GradCheckReport(max_error=0.0, worst=None)
    for name in names:
        arr = work.arrays[name]
        worst_here = 0.0
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + epsilon
            f_plus = _evaluate(f, work)
            key_plus = regime(work) if regime is not None else None
            arr[idx] = orig - epsilon
            f_minus = _evaluate(f, work)
            key_minus = regime(work) if regime is not None else None
            arr[idx] = orig
            if regime is not None and key_plus != key_minus:
                report.skipped += 1
                continue
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            err = relative_error(float(analytic[name][idx]), numeric, floor)
            report.checked += 1
            worst_here = max(worst_here, err)
            if err > report.max_error:
                report.max_error = err
                report.worst = (name, idx)
        report.per_param[name] = worst_here
    return report


def grad_check(f: Callable, params: ParameterSet, epsilon: float = 1e-5, **kwargs) -> float:
    """Max relative error between analytic and central-difference gradients."""
    return grad_check_report(f, params, epsilon, **kwargs).max_error
