"""
Dense float64 tensors with reverse-mode automatic differentiation.

Operations record themselves on the active ``Graph`` (entered with a ``with``
block). Outside a graph every operation is a plain numpy evaluation and the
result is detached.
"""

import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..config.settings import GRAD_CHECK_FLOOR, GRAD_CHECK_STEP

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
Operand = Union["Tensor", float, int]


class ShapeMismatchError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class GraphError(RuntimeError):
    """Raised when backward is asked for something the graph cannot give."""


class Tensor:
    """A dense N-D float64 array that can take part in a differentiation graph."""

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        """
        Initialize the tensor.

        Args:
            data: Array-like values; copied into a contiguous float64 array
            requires_grad: Mark the tensor as a parameter leaf
            name: Optional label used in gradient maps and checkpoints
        """
        self.data = np.array(data, dtype=np.float64, order="C", copy=True)
        if any(extent < 0 for extent in self.data.shape):
            raise ShapeMismatchError(f"Invalid shape {self.data.shape}")
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None
        self._graph: Optional["Graph"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_tracked(self) -> bool:
        """True when gradients can flow into or through this tensor."""
        return self.requires_grad or self.node_id is not None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def backward(self) -> "Gradients":
        """Backpropagate from this scalar through the graph that produced it."""
        if self._graph is None:
            raise GraphError("Tensor is detached from any graph")
        return backward(self._graph, self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # Identity hashing so tensors can key gradient maps.
    __hash__ = object.__hash__

    def __add__(self, other: Operand) -> "Tensor":
        return elementwise("add", self, other)

    def __radd__(self, other: Operand) -> "Tensor":
        return elementwise("add", self, other)

    def __sub__(self, other: Operand) -> "Tensor":
        return elementwise("sub", self, other)

    def __mul__(self, other: Operand) -> "Tensor":
        if isinstance(other, Tensor):
            return elementwise("mul", self, other)
        return elementwise("scale", self, other)

    def __rmul__(self, other: Operand) -> "Tensor":
        return self.__mul__(other)

    def __truediv__(self, other: Operand) -> "Tensor":
        return elementwise("div", self, other)

    def __neg__(self) -> "Tensor":
        return elementwise("scale", self, -1.0)


@dataclass
class Node:
    """One recorded operation."""

    node_id: int
    op: str
    parents: Tuple[Tensor, ...]
    backward_fn: BackwardFn
    shape: Tuple[int, ...]


@dataclass
class Graph:
    """
    Ordered record of the operations of one forward pass.

    The record order is the forward execution order. The graph is freed by
    ``backward``; a fresh graph is used for every forward pass.
    """

    nodes: List[Node] = field(default_factory=list)
    leaves: Dict[int, Tensor] = field(default_factory=dict)
    freed: bool = False

    def __enter__(self) -> "Graph":
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _graph_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(
        self,
        op: str,
        out_data: np.ndarray,
        parents: Sequence[Tensor],
        backward_fn: BackwardFn,
    ) -> Tensor:
        if self.freed:
            raise GraphError("Cannot record on a graph that was already backpropagated")
        out = Tensor.__new__(Tensor)
        out.data = np.ascontiguousarray(out_data, dtype=np.float64)
        out.requires_grad = False
        out.name = None
        out.grad = None
        out.node_id = len(self.nodes)
        out._graph = self
        for parent in parents:
            if parent.requires_grad and parent.node_id is None:
                self.leaves[id(parent)] = parent
        self.nodes.append(Node(out.node_id, op, tuple(parents), backward_fn, out.data.shape))
        return out

    def free(self) -> None:
        self.nodes.clear()
        self.leaves.clear()
        self.freed = True


_local = threading.local()


def _graph_stack() -> List[Graph]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def current_graph() -> Optional[Graph]:
    stack = _graph_stack()
    return stack[-1] if stack else None


def as_tensor(value: Operand) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def record(op: str, out_data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """
    Wrap a computed value as the output of an operation.

    The operation is recorded only when a graph is active and at least one
    parent is tracked; otherwise the result is a detached tensor.

    Args:
        op: Operation name
        out_data: Forward value
        parents: Input tensors, in the order ``backward_fn`` returns gradients
        backward_fn: Maps the upstream gradient to one gradient per parent

    Returns:
        Tensor: The output tensor
    """
    graph = current_graph()
    tracked = [p for p in parents if p.is_tracked and (p.node_id is None or p._graph is graph)]
    if graph is None or not tracked:
        return Tensor(out_data)
    for parent in parents:
        if parent.node_id is not None and parent._graph is not graph:
            raise GraphError(f"Operand of '{op}' belongs to a different graph")
    return graph.record(op, out_data, parents, backward_fn)


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def elementwise(op_kind: str, a: Tensor, b: Operand) -> Tensor:
    """
    Elementwise binary operation.

    Args:
        op_kind: One of 'add', 'sub', 'mul', 'div', 'scale'
        a: Left operand
        b: Right operand; a tensor of identical shape or a scalar constant

    Returns:
        Tensor: Elementwise result
    """
    if op_kind == "scale":
        if isinstance(b, Tensor):
            raise TypeError("scale expects a constant factor")
        factor = float(b)
        return record("scale", a.data * factor, (a,), lambda g: (g * factor,))

    if not isinstance(b, Tensor):
        constant = float(b)
        if op_kind == "add":
            return record("add_const", a.data + constant, (a,), lambda g: (g,))
        if op_kind == "sub":
            return record("sub_const", a.data - constant, (a,), lambda g: (g,))
        if op_kind == "mul":
            return elementwise("scale", a, constant)
        if op_kind == "div":
            return elementwise("scale", a, 1.0 / constant)
        raise ValueError(f"Unknown elementwise op '{op_kind}'")

    _check_same_shape(op_kind, a, b)
    if op_kind == "add":
        return record("add", a.data + b.data, (a, b), lambda g: (g, g))
    if op_kind == "sub":
        return record("sub", a.data - b.data, (a, b), lambda g: (g, -g))
    if op_kind == "mul":
        a_data, b_data = a.data, b.data
        return record("mul", a_data * b_data, (a, b), lambda g: (g * b_data, g * a_data))
    if op_kind == "div":
        a_data, b_data = a.data, b.data
        return record(
            "div",
            a_data / b_data,
            (a, b),
            lambda g: (g / b_data, -g * a_data / (b_data * b_data)),
        )
    raise ValueError(f"Unknown elementwise op '{op_kind}'")


def add(a: Tensor, b: Operand) -> Tensor:
    return elementwise("add", a, b)


def sub(a: Tensor, b: Operand) -> Tensor:
    return elementwise("sub", a, b)


def mul(a: Tensor, b: Operand) -> Tensor:
    return elementwise("mul", a, b)


def div(a: Tensor, b: Operand) -> Tensor:
    return elementwise("div", a, b)


def scale(a: Tensor, factor: float) -> Tensor:
    return elementwise("scale", a, factor)


def activation(kind: str, x: Tensor) -> Tensor:
    """
    Pointwise activation.

    relu' is 0 at exactly 0; sigmoid' = s(1 - s).
    """
    if kind == "relu":
        mask = x.data > 0
        return record("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))
    if kind == "sigmoid":
        s = _stable_sigmoid(x.data)
        return record("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))
    raise ValueError(f"Unknown activation '{kind}'")


def relu(x: Tensor) -> Tensor:
    return activation("relu", x)


def sigmoid(x: Tensor) -> Tensor:
    return activation("sigmoid", x)


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    positive = z >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-z[positive]))
    ez = np.exp(z[~positive])
    out[~positive] = ez / (1.0 + ez)
    return out


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map W x + b for x [n_in], W [n_out, n_in], b [n_out]."""
    if x.data.ndim != 1 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise ShapeMismatchError(
            f"linear expects x [n_in], W [n_out, n_in], b [n_out]; got {x.shape}, {weight.shape}, {bias.shape}"
        )
    if weight.shape[1] != x.shape[0] or weight.shape[0] != bias.shape[0]:
        raise ShapeMismatchError(
            f"linear: dimension mismatch x {x.shape}, W {weight.shape}, b {bias.shape}"
        )
    x_data, w_data = x.data, weight.data

    def _backward(g: np.ndarray):
        return w_data.T @ g, np.outer(g, x_data), g

    return record("linear", w_data @ x_data + bias.data, (x, weight, bias), _backward)


def _normalize_axes(x: Tensor, axes) -> Tuple[int, ...]:
    if axes is None:
        return tuple(range(x.data.ndim))
    if isinstance(axes, int):
        axes = (axes,)
    normalized = []
    for axis in axes:
        if not -x.data.ndim <= axis < x.data.ndim:
            raise ValueError(f"Invalid axis {axis} for shape {x.shape}")
        normalized.append(axis % x.data.ndim)
    if len(set(normalized)) != len(normalized):
        raise ValueError(f"Repeated axis in {tuple(axes)}")
    return tuple(sorted(normalized))


def reduce(kind: str, x: Tensor, axes=None) -> Tensor:
    """
    Sum or mean over ``axes`` (all axes when None).

    Backward broadcasts the upstream gradient, scaled by 1/count for mean.
    """
    axes_t = _normalize_axes(x, axes)
    count = int(np.prod([x.shape[a] for a in axes_t])) if axes_t else 1
    if kind == "sum":
        out = x.data.sum(axis=axes_t)
        factor = 1.0
    elif kind == "mean":
        out = x.data.sum(axis=axes_t) / count
        factor = 1.0 / count
    else:
        raise ValueError(f"Unknown reduction '{kind}'")
    in_shape = x.shape
    kept_shape = tuple(1 if i in axes_t else n for i, n in enumerate(in_shape))

    def _backward(g: np.ndarray):
        return (np.broadcast_to(np.reshape(g, kept_shape) * factor, in_shape).copy(),)

    return record(kind, out, (x,), _backward)


def sum_(x: Tensor, axes=None) -> Tensor:
    return reduce("sum", x, axes)


def mean(x: Tensor, axes=None) -> Tensor:
    return reduce("mean", x, axes)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    in_shape = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeMismatchError(f"Cannot reshape {in_shape} to {shape}") from e
    return record("reshape", out, (x,), lambda g: (g.reshape(in_shape),))


def square(x: Tensor) -> Tensor:
    return mul(x, x)


class Gradients(dict):
    """Gradient per recorded parameter leaf; ``unreached`` holds the leaves no path connects to the loss."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.unreached: List[Tensor] = []


def backward(graph: Graph, loss: Tensor) -> Gradients:
    """
    Exact reverse-mode gradients of a scalar loss.

    Args:
        graph: Graph the loss was recorded on
        loss: Scalar tensor produced inside ``graph``

    Returns:
        Gradients: Gradient per parameter leaf recorded in the graph, zeros for
        leaves the loss does not depend on (listed in ``unreached``). Each
        parameter's ``grad`` attribute is set as well.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node_id is None or loss._graph is not graph:
        raise GraphError("Loss is detached from the given graph")
    if graph.freed:
        raise GraphError("Graph was already backpropagated")

    node_grads: Dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape)}
    leaf_grads: Dict[int, np.ndarray] = {}

    for node in reversed(graph.nodes[: loss.node_id + 1]):
        upstream = node_grads.pop(node.node_id, None)
        if upstream is None:
            continue
        parent_grads = node.backward_fn(upstream)
        for parent, grad in zip(node.parents, parent_grads):
            if grad is None or not parent.is_tracked:
                continue
            if grad.shape != parent.shape:
                raise GraphError(
                    f"Backward of '{node.op}' produced gradient {grad.shape} for operand {parent.shape}"
                )
            if parent.node_id is not None:
                bucket, key = node_grads, parent.node_id
            else:
                bucket, key = leaf_grads, id(parent)
            if key in bucket:
                bucket[key] = bucket[key] + grad
            else:
                bucket[key] = np.array(grad, dtype=np.float64)

    gradients = Gradients()
    for key, leaf in graph.leaves.items():
        grad = leaf_grads.get(key)
        if grad is None:
            grad = np.zeros(leaf.shape)
            gradients.unreached.append(leaf)
        leaf.grad = grad
        gradients[leaf] = Tensor(grad, name=leaf.name)
    loss._graph = None
    graph.free()
    return gradients


@dataclass
class GradCheckReport:
    """Outcome of a finite-difference gradient check."""

    max_relative_error: float
    worst_parameter: Optional[str]
    worst_index: Optional[Tuple[int, ...]]
    checked_entries: int
    tolerance: Optional[float] = None
    retried_entries: int = 0

    @property
    def passed(self) -> bool:
        return self.tolerance is None or self.max_relative_error <= self.tolerance


def _central_difference(f: Callable[[], Tensor], param: Tensor, index: Tuple[int, ...], step: float) -> float:
    original = param.data[index]
    param.data[index] = original + step
    f_plus = f().item()
    param.data[index] = original - step
    f_minus = f().item()
    param.data[index] = original
    return (f_plus - f_minus) / (2.0 * step)


def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), GRAD_CHECK_FLOOR)


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    step: float = GRAD_CHECK_STEP,
    tolerance: Optional[float] = None,
    samples_per_param: Optional[int] = None,
    retry_steps: Sequence[float] = (),
) -> GradCheckReport:
    """
    Compare analytic gradients with central differences.

    Relative error per entry is |a - n| / max(|a|, |n|, 1e-8).

    Args:
        f: Deterministic function building a scalar loss from ``params``
        params: Parameter leaves (requires_grad=True) to check
        step: Finite-difference step h
        tolerance: Optional threshold stored on the report
        samples_per_param: When set, only the entries with the largest analytic
            gradient magnitude are checked, this many per parameter
        retry_steps: Smaller steps tried, in order, for an entry whose error
            at ``step`` exceeds ``tolerance``; the entry keeps its smallest
            error. A central difference whose interval straddles a ReLU or
            max-pool kink disagrees with the one-sided analytic gradient, and
            a shorter interval usually clears the kink.

    Returns:
        GradCheckReport: The maximum relative error and where it occurred
    """
    if step <= 0 or any(s <= 0 for s in retry_steps):
        raise ValueError(f"steps must be positive, got {step} and {tuple(retry_steps)}")
    params = list(params)
    with Graph() as graph:
        loss = f()
    analytic = backward(graph, loss)

    worst = 0.0
    worst_param = None
    worst_index = None
    checked = 0
    retried = 0
    for position, param in enumerate(params):
        grad = analytic[param].data if param in analytic else np.zeros(param.shape)
        if samples_per_param is None:
            indices = list(np.ndindex(param.shape))
        else:
            order = np.argsort(-np.abs(grad).reshape(-1), kind="stable")[:samples_per_param]
            indices = [np.unravel_index(i, param.shape) for i in order]
        for index in indices:
            a = float(grad[index])
            error = _relative_error(a, _central_difference(f, param, index, step))
            if tolerance is not None and error > tolerance and retry_steps:
                retried += 1
                for smaller in retry_steps:
                    error = min(error, _relative_error(a, _central_difference(f, param, index, smaller)))
                    if error <= tolerance:
                        break
            checked += 1
            if error > worst:
                worst = error
                worst_param = param.name or f"param[{position}]"
                worst_index = tuple(int(i) for i in index)
    return GradCheckReport(worst, worst_param, worst_index, checked, tolerance, retried)
