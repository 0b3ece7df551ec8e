"""
Reverse-mode automatic differentiation over dense float64 arrays
"""
import contextlib
import logging
import threading
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .const import LEAKY_SLOPE, Padding
from .errors import ConfigurationError, NumericError, StateError

_LOGGER = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]

_STATE = threading.local()

_RETRY_ABOVE = 1e-7


def is_grad_enabled() -> bool:
    """Whether new operations record graph links on this thread"""
    return getattr(_STATE, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph construction for the enclosed block (this thread only)"""
    previous = is_grad_enabled()
    _STATE.grad_enabled = False
    try:
        yield
    finally:
        _STATE.grad_enabled = previous


class Function:
    """Base class for differentiable operations

    Subclasses implement ``forward`` on raw arrays and ``backward`` returning one
    gradient (or None) per parent tensor.
    """

    kind = "function"
    check_nan = True

    def __init__(self, *parents: "Tensor"):
        self.parents = parents

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{self.kind} has no forward pass")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{self.kind} has no backward pass")

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs: Any) -> "Tensor":
        """Run the forward pass and link the result into the graph

        Args:
            *tensors: Input tensors
            **kwargs: Non-differentiable operation arguments

        Returns:
            Tensor: Output tensor, linked to this node when any input requires grad
        """
        fn = cls(*tensors)
        out = np.asarray(fn.forward(*(t.data for t in tensors), **kwargs), dtype=np.float64)
        if cls.check_nan:
            _check_nan(fn.kind, out)
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=requires_grad, _node=fn if requires_grad else None)


def _check_nan(kind: str, out: np.ndarray) -> None:
    nan_mask = np.isnan(out)
    if nan_mask.any():
        index = tuple(int(i) for i in np.unravel_index(int(np.argmax(nan_mask)), out.shape))
        raise NumericError(f"{kind} produced NaN at index {index}", op_kind=kind, index=index)


class Tensor:
    """Dense float64 array with optional gradient and graph linkage"""

    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, _node: Optional[Function] = None):
        """Initialize a tensor

        Args:
            data: Values; converted to a float64 array (not copied when already float64)
            requires_grad: Whether gradients should be accumulated for this tensor
        """
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node = _node
        self._consumed = False
        self._released = False

    # Introspection

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ConfigurationError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic

    def __add__(self, other: Any) -> "Tensor":
        return elementwise("add", self, as_tensor(other))

    def __radd__(self, other: Any) -> "Tensor":
        return elementwise("add", as_tensor(other), self)

    def __sub__(self, other: Any) -> "Tensor":
        return elementwise("sub", self, as_tensor(other))

    def __rsub__(self, other: Any) -> "Tensor":
        return elementwise("sub", as_tensor(other), self)

    def __mul__(self, other: Any) -> "Tensor":
        return elementwise("mul", self, as_tensor(other))

    def __rmul__(self, other: Any) -> "Tensor":
        return elementwise("mul", as_tensor(other), self)

    def __truediv__(self, other: Any) -> "Tensor":
        return elementwise("div", self, as_tensor(other))

    def __rtruediv__(self, other: Any) -> "Tensor":
        return elementwise("div", as_tensor(other), self)

    def __neg__(self) -> "Tensor":
        return elementwise("neg", self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index: Any) -> "Tensor":
        return Index.apply(self, index=index)

    # Shape and reductions

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=tuple(shape))

    def transpose(self, *axes: int) -> "Tensor":
        return Transpose.apply(self, axes=tuple(axes) if axes else None)

    def broadcast_to(self, shape: Tuple[int, ...]) -> "Tensor":
        return BroadcastTo.apply(self, shape=tuple(shape))

    def square(self) -> "Tensor":
        return elementwise("square", self)

    def abs(self) -> "Tensor":
        return elementwise("abs", self)

    def exp(self) -> "Tensor":
        return elementwise("exp", self)

    def log(self) -> "Tensor":
        return elementwise("log", self)

    def sqrt(self) -> "Tensor":
        return elementwise("sqrt", self)

    # Graph traversal

    def backward(self, retain_graph: bool = False) -> None:
        """Populate ``grad`` on every reachable leaf that requires grad

        Args:
            retain_graph: Keep the graph alive so backward may run again

        Raises:
            ConfigurationError: If this tensor is not a single element
            StateError: If the graph was already consumed
        """
        if self.data.size != 1:
            raise ConfigurationError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise StateError("backward() called twice on the same graph without retain_graph")
        if not self.requires_grad:
            _LOGGER.debug("backward() on a constant; no gradients to propagate")
            self._consumed = not retain_graph
            return

        order = _topological_order(self)
        grads: Dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in order:
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._node is None:
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            parent_grads = node._node.backward(grad)
            for parent, parent_grad in zip(node._node.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad

        if not retain_graph:
            self._consumed = True
            for node in order:
                if node._node is not None:
                    node._node = None
                    node._released = True


def _topological_order(root: Tensor) -> List[Tensor]:
    """Nodes reachable from root, root first, each after all its consumers"""
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        if node._released:
            raise StateError("graph was freed by an earlier backward(); rebuild the forward pass")
        visited.add(id(node))
        stack.append((node, True))
        if node._node is not None:
            for parent in node._node.parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    order.reverse()
    return order


def as_tensor(value: Any) -> Tensor:
    """Wrap a constant in a Tensor, passing Tensors through"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


def parameter(value: ArrayLike) -> Tensor:
    """Create a fresh leaf tensor that accumulates gradients"""
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True)


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum()).reshape(shape)


# Elementwise operations


class _Unary(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        self.a = a
        self.out = self.compute(a)
        return self.out

    def compute(self, a: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def local(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (self.local(grad),)


class _Binary(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
            raise ConfigurationError(f"{self.kind}: shape mismatch {a.shape} vs {b.shape}")
        self.a, self.b = a, b
        self.out = self.compute(a, b)
        return self.out

    def compute(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def local(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        ga, gb = self.local(grad)
        return _reduce_to(ga, self.a.shape), _reduce_to(gb, self.b.shape)


class Add(_Binary):
    kind = "add"

    def compute(self, a, b):
        return a + b

    def local(self, grad):
        return grad, grad


class Sub(_Binary):
    kind = "sub"

    def compute(self, a, b):
        return a - b

    def local(self, grad):
        return grad, -grad


class Mul(_Binary):
    kind = "mul"

    def compute(self, a, b):
        return a * b

    def local(self, grad):
        return grad * self.b, grad * self.a


class Div(_Binary):
    kind = "div"

    def compute(self, a, b):
        with np.errstate(divide="ignore", invalid="ignore"):
            return a / b

    def local(self, grad):
        return grad / self.b, -grad * self.a / (self.b * self.b)


class Minimum(_Binary):
    kind = "min"

    def compute(self, a, b):
        return np.minimum(a, b)

    def local(self, grad):
        pick_a = np.broadcast_to(self.a <= self.b, grad.shape)
        return grad * pick_a, grad * ~pick_a


class Maximum(_Binary):
    kind = "max"

    def compute(self, a, b):
        return np.maximum(a, b)

    def local(self, grad):
        pick_a = np.broadcast_to(self.a >= self.b, grad.shape)
        return grad * pick_a, grad * ~pick_a


class Atan2(_Binary):
    """atan2(a, b) with a the ordinate; gradient at the origin is 0"""

    kind = "atan2"

    def compute(self, a, b):
        return np.arctan2(a, b)

    def local(self, grad):
        a, b = np.broadcast_arrays(self.a, self.b)
        r2 = a * a + b * b
        safe = np.where(r2 > 0.0, r2, 1.0)
        return np.where(r2 > 0.0, grad * b / safe, 0.0), np.where(r2 > 0.0, -grad * a / safe, 0.0)


class Exp(_Unary):
    kind = "exp"

    def compute(self, a):
        return np.exp(a)

    def local(self, grad):
        return grad * self.out


class Log(_Unary):
    kind = "log"

    def compute(self, a):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(a)

    def local(self, grad):
        return grad / self.a


class Neg(_Unary):
    kind = "neg"

    def compute(self, a):
        return -a

    def local(self, grad):
        return -grad


class Sqrt(_Unary):
    kind = "sqrt"

    def compute(self, a):
        with np.errstate(invalid="ignore"):
            return np.sqrt(a)

    def local(self, grad):
        with np.errstate(divide="ignore"):
            return grad * 0.5 / self.out


class Square(_Unary):
    kind = "square"

    def compute(self, a):
        return a * a

    def local(self, grad):
        return grad * 2.0 * self.a


class Abs(_Unary):
    kind = "abs"

    def compute(self, a):
        return np.abs(a)

    def local(self, grad):
        return grad * np.sign(self.a)


class Sigmoid(_Unary):
    kind = "sigmoid"

    def compute(self, a):
        return 0.5 * (1.0 + np.tanh(0.5 * a))

    def local(self, grad):
        return grad * self.out * (1.0 - self.out)


class Sin(_Unary):
    kind = "sin"

    def compute(self, a):
        return np.sin(a)

    def local(self, grad):
        return grad * np.cos(self.a)


class Cos(_Unary):
    kind = "cos"

    def compute(self, a):
        return np.cos(a)

    def local(self, grad):
        return -grad * np.sin(self.a)


class LeakyRelu(_Unary):
    """max(x, 0) + 0.01 * min(x, 0)"""

    kind = "leaky_relu"

    def compute(self, a):
        return np.maximum(a, 0.0) + LEAKY_SLOPE * np.minimum(a, 0.0)

    def local(self, grad):
        return grad * np.where(self.a > 0.0, 1.0, LEAKY_SLOPE)


_ELEMENTWISE: Dict[str, type] = {
    fn.kind: fn
    for fn in (Add, Sub, Mul, Div, Minimum, Maximum, Atan2, Exp, Log, Neg, Sqrt, Square, Abs, Sigmoid, Sin, Cos, LeakyRelu)
}


def elementwise(op_kind: str, a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Apply an elementwise operation

    Args:
        op_kind: One of add, sub, mul, div, exp, log, neg, sqrt, square, abs,
            sigmoid, sin, cos, atan2, leaky_relu, min, max
        a: First operand
        b: Second operand for binary kinds (same shape, or a 0-d scalar)

    Returns:
        Tensor: Result with the shape of the non-scalar operand

    Raises:
        ConfigurationError: On unknown kinds, missing operands or shape mismatch
        NumericError: If the result contains NaN
    """
    fn = _ELEMENTWISE.get(op_kind)
    if fn is None:
        raise ConfigurationError(f"Unknown elementwise kind: {op_kind}")
    if issubclass(fn, _Binary):
        if b is None:
            raise ConfigurationError(f"{op_kind} needs two operands")
        return fn.apply(as_tensor(a), as_tensor(b))
    if b is not None:
        raise ConfigurationError(f"{op_kind} takes a single operand")
    return fn.apply(as_tensor(a))


def leaky_relu(x: Tensor) -> Tensor:
    return elementwise("leaky_relu", x)


def sigmoid(x: Tensor) -> Tensor:
    return elementwise("sigmoid", x)


def atan2(y: Tensor, x: Tensor) -> Tensor:
    return elementwise("atan2", y, x)


# Shape operations


class Sum(Function):
    kind = "sum"

    def forward(self, a, axis=None, keepdims=False):
        self.in_shape = a.shape
        self.axis = axis
        self.keepdims = keepdims
        return np.sum(a, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.in_shape).copy(),)


class Reshape(Function):
    kind = "reshape"
    check_nan = False

    def forward(self, a, shape=()):
        self.in_shape = a.shape
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Transpose(Function):
    kind = "transpose"
    check_nan = False

    def forward(self, a, axes=None):
        self.axes = axes if axes is not None else tuple(reversed(range(a.ndim)))
        return np.transpose(a, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class BroadcastTo(Function):
    """Explicit broadcast; the only place non-scalar broadcasting happens"""

    kind = "broadcast_to"
    check_nan = False

    def forward(self, a, shape=()):
        self.in_shape = a.shape
        try:
            return np.broadcast_to(a, shape).copy()
        except ValueError as e:
            raise ConfigurationError(f"Cannot broadcast {a.shape} to {shape}: {e}")

    def backward(self, grad):
        while grad.ndim > len(self.in_shape):
            grad = grad.sum(axis=0)
        for dim, extent in enumerate(self.in_shape):
            if extent == 1 and grad.shape[dim] != 1:
                grad = grad.sum(axis=dim, keepdims=True)
        return (grad,)


class Index(Function):
    kind = "index"
    check_nan = False

    def forward(self, a, index=None):
        self.in_shape = a.shape
        self.index = index
        return np.array(a[index], dtype=np.float64)

    def backward(self, grad):
        out = np.zeros(self.in_shape)
        np.add.at(out, self.index, grad)
        return (out,)


class Concat(Function):
    kind = "concat"
    check_nan = False

    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        bounds = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, bounds, axis=self.axis))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along an existing axis"""
    return Concat.apply(*tensors, axis=axis)


# Linear algebra and convolutions


class MatMul(Function):
    kind = "matmul"

    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ConfigurationError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of [M,K] and [K,N]"""
    return MatMul.apply(as_tensor(a), as_tensor(b))


class Einsum(Function):
    """Two-operand einsum where every operand index appears in the output or the other operand"""

    kind = "einsum"

    def forward(self, a, b, spec=""):
        inputs, self.out_sub = spec.replace(" ", "").split("->")
        self.a_sub, self.b_sub = inputs.split(",")
        for own, other in ((self.a_sub, self.b_sub), (self.b_sub, self.a_sub)):
            if not set(own) <= set(other) | set(self.out_sub):
                raise ConfigurationError(f"einsum {spec}: index summed within a single operand")
        self.a, self.b = a, b
        return np.einsum(spec, a, b)

    def backward(self, grad):
        ga = np.einsum(f"{self.out_sub},{self.b_sub}->{self.a_sub}", grad, self.b)
        gb = np.einsum(f"{self.out_sub},{self.a_sub}->{self.b_sub}", grad, self.a)
        return ga, gb


def einsum(spec: str, a: Tensor, b: Tensor) -> Tensor:
    return Einsum.apply(as_tensor(a), as_tensor(b), spec=spec)


def _pad_widths(kernel_size: int, padding: Padding) -> Tuple[int, int]:
    padding = Padding(padding)
    if padding == Padding.CAUSAL_LEFT:
        return kernel_size - 1, 0
    left = (kernel_size - 1) // 2
    return left, kernel_size - 1 - left


class Conv1dDepthwise(Function):
    """out[b,c,t] = sum_j xpad[b,c,t+j] * k[c,j]"""

    kind = "conv1d_depthwise"

    def forward(self, x, k, padding=Padding.SAME_ZERO):
        if x.ndim != 3 or k.ndim != 2 or x.shape[1] != k.shape[0]:
            raise ConfigurationError(f"conv1d_depthwise: need x [B,Ch,S] and kernels [Ch,K], got {x.shape}, {k.shape}")
        length, width = x.shape[2], k.shape[1]
        if width > 2 * length:
            raise ConfigurationError(f"conv1d_depthwise: kernel {width} longer than twice the signal {length}")
        self.left, right = _pad_widths(width, padding)
        self.padded_shape = (x.shape[0], x.shape[1], length + self.left + right)
        self.windows = sliding_window_view(np.pad(x, ((0, 0), (0, 0), (self.left, right))), width, axis=2)
        self.k = k
        self.length = length
        return np.einsum("bcsk,ck->bcs", self.windows, k)

    def backward(self, grad):
        dk = np.einsum("bcs,bcsk->ck", grad, self.windows)
        dxp = np.zeros(self.padded_shape)
        for j in range(self.k.shape[1]):
            dxp[:, :, j:j + self.length] += grad * self.k[None, :, j, None]
        return dxp[:, :, self.left:self.left + self.length], dk


def conv1d_depthwise(x: Tensor, kernels: Tensor, padding: Padding = Padding.SAME_ZERO) -> Tensor:
    """One kernel per channel, output length equal to input length

    Args:
        x: Signal [B, Ch, S]
        kernels: Kernels [Ch, K]
        padding: same_zero (split evenly, extra on the right) or causal_left

    Returns:
        Tensor: [B, Ch, S]
    """
    return Conv1dDepthwise.apply(as_tensor(x), as_tensor(kernels), padding=padding)


class Conv1d(Function):
    """Channel-mixing convolution: out[b,o,t] = sum_{i,j} xpad[b,i,t+j] * w[o,i,j]"""

    kind = "conv1d"

    def forward(self, x, w, padding=Padding.CAUSAL_LEFT):
        if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
            raise ConfigurationError(f"conv1d: need x [B,Ci,S] and weights [Co,Ci,K], got {x.shape}, {w.shape}")
        length, width = x.shape[2], w.shape[2]
        if width > 2 * length:
            raise ConfigurationError(f"conv1d: kernel {width} longer than twice the signal {length}")
        self.left, right = _pad_widths(width, padding)
        self.padded_shape = (x.shape[0], x.shape[1], length + self.left + right)
        self.windows = sliding_window_view(np.pad(x, ((0, 0), (0, 0), (self.left, right))), width, axis=2)
        self.w = w
        self.length = length
        return np.einsum("bisk,oik->bos", self.windows, w)

    def backward(self, grad):
        dw = np.einsum("bos,bisk->oik", grad, self.windows)
        dxp = np.zeros(self.padded_shape)
        for j in range(self.w.shape[2]):
            dxp[:, :, j:j + self.length] += np.einsum("bos,oi->bis", grad, self.w[:, :, j])
        return dxp[:, :, self.left:self.left + self.length], dw


def conv1d(x: Tensor, weights: Tensor, padding: Padding = Padding.CAUSAL_LEFT) -> Tensor:
    return Conv1d.apply(as_tensor(x), as_tensor(weights), padding=padding)


class Interp1d(Function):
    """Linear interpolation of values [B,C,N] at per-channel coordinates [C,M]

    Coordinates outside [0, N-1] read zero.
    """

    kind = "interp1d"

    def forward(self, values, coords):
        if values.ndim != 3 or coords.ndim != 2 or coords.shape[0] != values.shape[1]:
            raise ConfigurationError(f"interp1d: need values [B,C,N] and coords [C,M], got {values.shape}, {coords.shape}")
        n = values.shape[2]
        floor = np.floor(coords)
        self.weight = coords - floor
        lo = floor.astype(np.int64)
        hi = lo + 1
        self.valid_lo = (lo >= 0) & (lo < n)
        self.valid_hi = (hi >= 0) & (hi < n)
        self.lo = np.clip(lo, 0, n - 1)
        self.hi = np.clip(hi, 0, n - 1)
        self.channel = np.arange(values.shape[1])[:, None]
        self.v_lo = values[:, self.channel, self.lo] * self.valid_lo
        self.v_hi = values[:, self.channel, self.hi] * self.valid_hi
        self.values_shape = values.shape
        return (1.0 - self.weight) * self.v_lo + self.weight * self.v_hi

    def backward(self, grad):
        dv = np.zeros(self.values_shape)
        np.add.at(dv, (slice(None), self.channel, self.lo), grad * (1.0 - self.weight) * self.valid_lo)
        np.add.at(dv, (slice(None), self.channel, self.hi), grad * self.weight * self.valid_hi)
        dcoords = np.sum(grad * (self.v_hi - self.v_lo), axis=0)
        return dv, dcoords


def interp1d(values: Tensor, coords: Tensor) -> Tensor:
    return Interp1d.apply(as_tensor(values), as_tensor(coords))


# Verification


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    atol: float = 1e-9,
) -> float:
    """Compare autodiff gradients with central finite differences

    Elements disagreeing by more than 1e-7 at step h are checked again at h/10
    (never below 1e-7) and keep the smaller error, so a difference straddling a
    kink such as leaky_relu at zero does not count against the gradient.

    Args:
        f: Deterministic closure evaluating a scalar loss from the current params
        params: Leaf tensors to check
        h: Finite-difference step, in [1e-7, 1e-3]
        atol: Absolute differences at or below this count as agreement

    Returns:
        float: Maximum relative error |g - fd| / max(|g|, 1e-8)

    Raises:
        ConfigurationError: If h is out of range
        NumericError: If f produces a non-finite value
    """
    if not 1e-7 <= h <= 1e-3:
        raise ConfigurationError(f"grad_check step {h} outside [1e-7, 1e-3]")
    for p in params:
        p.zero_grad()
    loss = f()
    _finite_scalar(loss)
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    retry_step = max(h / 10.0, 1e-7)

    worst = 0.0
    retried = 0
    with no_grad():
        for p, grad in zip(params, analytic):
            for i in range(p.data.size):
                g = grad.flat[i]
                error = _element_error(f, p, i, h, g, atol)
                if error > _RETRY_ABOVE and retry_step < h:
                    retried += 1
                    error = min(error, _element_error(f, p, i, retry_step, g, atol))
                worst = max(worst, error)
    _LOGGER.debug(
        f"grad_check over {sum(p.size for p in params)} elements: max relative error {worst:.3e} ({retried} re-checked)"
    )
    return worst


def _element_error(f: Callable[[], Tensor], p: Tensor, i: int, h: float, g: float, atol: float) -> float:
    original = p.data.flat[i]
    p.data.flat[i] = original + h
    try:
        plus = _finite_scalar(f())
        p.data.flat[i] = original - h
        minus = _finite_scalar(f())
    finally:
        p.data.flat[i] = original
    diff = abs(g - (plus - minus) / (2.0 * h))
    if diff <= atol:
        return 0.0
    return diff / max(abs(g), 1e-8)


def _finite_scalar(value: Tensor) -> float:
    scalar = as_tensor(value).item()
    if not np.isfinite(scalar):
        raise NumericError(f"grad_check objective returned {scalar}")
    return scalar
