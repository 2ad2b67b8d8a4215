"""
Dense tensors and tape-based reverse-mode differentiation.

Operations are recorded only while a Graph is active (``with graph:``) and only
when at least one input requires a gradient. Outside a graph every kernel is a
plain numpy computation, which is what sampling and analysis use.
"""
import threading
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from config.errors import GraphStateError, NonFiniteError, RangeError, ShapeError, ZeroNormError
from config.neti_config import LAYER_NORM_EPS, LEAKY_RELU_SLOPE

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

_local = threading.local()


def _graph_stack() -> List["Graph"]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_graph() -> Optional["Graph"]:
    """Graph currently recording on this thread, if any."""
    stack = _graph_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense row-major array with an optional gradient slot."""

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else np.float64
        array = np.ascontiguousarray(np.array(data, dtype=dtype))
        if any(dim <= 0 for dim in array.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {array.shape}")
        if not np.all(np.isfinite(array)):
            raise NonFiniteError(f"tensor {name or ''} holds non-finite values")
        self.data = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional["Node"] = None
        self._graph: Optional["Graph"] = None

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.ascontiguousarray(array)
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        out._node = None
        out._graph = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


@dataclass
class Node:
    """One recorded operation. ``backward`` maps the output gradient to input gradients."""
    kind: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Graph:
    """Ordered record of operations, replayed in reverse by ``backward``.

    A graph can be used directly as a context manager, or built around a
    function with declared input shapes and run through ``evaluate``.
    """

    def __init__(self, fn: Optional[Callable[..., Dict[str, Tensor]]] = None,
                 input_shapes: Optional[Mapping[str, Sequence[int]]] = None, name: str = "graph"):
        self.fn = fn
        self.input_shapes = {key: tuple(shape) for key, shape in (input_shapes or {}).items()}
        self.name = name
        self.nodes: List[Node] = []
        self.evaluated = False

    def __enter__(self) -> "Graph":
        self.nodes = []
        self.evaluated = False
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _graph_stack().pop()
        self.evaluated = exc_type is None
        return False

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)


def as_tensor(value: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    """Wrap a constant; constants take the dtype of ``like`` when given."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value), dtype=dtype)


def _align(a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = as_tensor(a, b if isinstance(b, Tensor) else None)
    if not isinstance(b, Tensor):
        b = as_tensor(b, a)
    if a.dtype != b.dtype:
        if not b.requires_grad:
            b = Tensor._wrap(b.data.astype(a.dtype), requires_grad=False)
        elif not a.requires_grad:
            a = Tensor._wrap(a.data.astype(b.dtype), requires_grad=False)
        else:
            raise ShapeError(f"dtype mismatch between trainable tensors: {a.dtype} vs {b.dtype}")
    return a, b


def _emit(kind: str, data: np.ndarray, inputs: Sequence[Tensor],
          backward: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{kind} produced non-finite values")
    graph = active_graph()
    track = graph is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires_grad=track)
    if track:
        node = Node(kind, tuple(inputs), out, backward)
        out._node = node
        out._graph = graph
        graph.record(node)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Kernels. Everything else in the project is composed from these eleven.
# ---------------------------------------------------------------------------

def matmul(a: ArrayLike, b: ArrayLike, transpose_b: bool = False) -> Tensor:
    """a @ b, or a @ b.T when ``transpose_b``; both operands 2-D."""
    a, b = _align(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    right = b.data.T if transpose_b else b.data
    if a.shape[1] != right.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {right.shape}")
    a_data, b_data = a.data, b.data

    def backward(g):
        grad_a = g @ (b_data if transpose_b else b_data.T)
        grad_right = a_data.T @ g
        return grad_a, (grad_right.T if transpose_b else grad_right)

    return _emit("matmul", a_data @ right, (a, b), backward)


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    a, b = _align(a, b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}") from exc
    a_shape, b_shape = a.shape, b.shape
    return _emit("add", out, (a, b), lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = _align(a, b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul shape mismatch: {a.shape} * {b.shape}") from exc
    a_data, b_data = a.data, b.data
    return _emit("mul", out, (a, b),
                 lambda g: (_unbroadcast(g * b_data, a_data.shape), _unbroadcast(g * a_data, b_data.shape)))


def leaky_relu(x: Tensor, slope: float = LEAKY_RELU_SLOPE) -> Tensor:
    x = as_tensor(x)
    positive = x.data > 0
    slope_arr = np.asarray(slope, dtype=x.dtype)
    out = np.where(positive, x.data, slope_arr * x.data)
    return _emit("leaky_relu", out, (x,), lambda g: (np.where(positive, g, slope_arr * g),))


def layer_norm(x: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis. No affine; compose with mul/add for that."""
    x = as_tensor(x)
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    y = centered * inv_std

    def backward(g):
        g_mean = g.mean(axis=-1, keepdims=True)
        gy_mean = (g * y).mean(axis=-1, keepdims=True)
        return (inv_std * (g - g_mean - y * gy_mean),)

    return _emit("layer_norm", y, (x,), backward)


def softmax_rows(x: Tensor) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    return _emit("softmax_rows", s, (x,), lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),))


def l2_normalize(x: Tensor) -> Tensor:
    """Row-wise x / ||x|| over the last axis. Zero rows raise."""
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    if np.any(norm == 0):
        raise ZeroNormError("cannot normalize a zero-norm row")
    y = x.data / norm
    return _emit("l2_normalize", y, (x,), lambda g: ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,))


def scale(x: Tensor, factor: float) -> Tensor:
    x = as_tensor(x)
    c = np.asarray(factor, dtype=x.dtype)
    return _emit("scale", x.data * c, (x,), lambda g: (g * c,))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of an empty list")
    first = next((t for t in tensors if isinstance(t, Tensor)), None)
    parts = [as_tensor(t, first) for t in tensors]
    dtype = first.dtype if first is not None else parts[0].dtype
    for i, part in enumerate(parts):
        if part.dtype != dtype:
            if part.requires_grad:
                raise ShapeError(f"concat dtype mismatch: {part.dtype} vs {dtype}")
            parts[i] = Tensor._wrap(part.data.astype(dtype), requires_grad=False)
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat shape mismatch: {[p.shape for p in parts]}") from exc
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit("concat", out, parts, backward)


def suffix_mask(x: Tensor, keep: Optional[int]) -> Tensor:
    """Zero every column with index >= keep. ``keep=None`` keeps all columns."""
    x = as_tensor(x)
    width = x.shape[-1]
    if keep is None:
        keep = width
    if not 1 <= keep <= width:
        raise RangeError(f"truncation {keep} outside [1, {width}]")
    kept = np.arange(width) < keep
    zero = np.zeros((), dtype=x.dtype)
    return _emit("suffix_mask", np.where(kept, x.data, zero), (x,), lambda g: (np.where(kept, g, zero),))


def mse(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Mean squared error, returned as a 0-d tensor."""
    a, b = _align(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def backward(g):
        grad = (2.0 / n) * g * diff
        return grad, -grad

    return _emit("mse", np.asarray((diff * diff).mean(), dtype=a.dtype), (a, b), backward)


KERNELS = (matmul, add, mul, leaky_relu, layer_norm, softmax_rows, l2_normalize, scale, concat, suffix_mask, mse)


# ---------------------------------------------------------------------------
# Graph driving
# ---------------------------------------------------------------------------

def evaluate(graph: Graph, inputs: Mapping[str, Tensor]) -> Dict[str, Tensor]:
    """Run the graph's function on named inputs, recording every operation."""
    if graph.fn is None:
        raise GraphStateError(f"{graph.name} has no function to evaluate")
    for key, shape in graph.input_shapes.items():
        if key not in inputs:
            raise ShapeError(f"{graph.name}: missing input {key!r}")
        if tuple(inputs[key].shape) != shape:
            raise ShapeError(f"{graph.name}: input {key!r} has shape {inputs[key].shape}, expected {shape}")
    with graph:
        outputs = graph.fn(**inputs)
    return outputs


def backward(graph: Graph, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every leaf that requires it.

    Accumulation is additive across calls until the gradients are zeroed.
    """
    if not graph.evaluated:
        raise GraphStateError("backward called before the forward pass finished")
    if loss.size != 1:
        raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
    if loss._graph is not graph:
        raise GraphStateError("loss was not produced by this graph")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, grad in zip(node.inputs, node.backward(g)):
            if grad is None or not inp.requires_grad:
                continue
            grad = grad.astype(inp.dtype, copy=False)
            if inp.is_leaf:
                inp.grad = grad.copy() if inp.grad is None else inp.grad + grad
            else:
                key = id(inp)
                grads[key] = grads[key] + grad if key in grads else grad


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
