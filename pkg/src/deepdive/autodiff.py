"""Dense float64 tensors with taped reverse-mode differentiation.

Small by design: just enough primitives to express an MLP encoder/decoder,
RBF classifier heads, scaled dot-product attention and the loss terms, all
in 64-bit precision so numerical certifications can run at quadrature-level
accuracy. Ops record onto the innermost active :class:`Tape`; creation
order is a topological order, so backward is a single reverse sweep that
visits each node exactly once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

_ACTIVE_TAPES: list["Tape"] = []


def _ensure_finite(op: str, data: np.ndarray) -> None:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op}: non-finite output")


class Tensor:
    """A dense float64 array, optionally recorded on the active tape."""

    __slots__ = ("data", "grad", "node_id", "_op", "_vjp")

    def __init__(self, data) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.node_id: int | None = None
        self._op: str = "leaf"
        self._vjp: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(op={self._op}, shape={self.shape})"

    # Arithmetic sugar; scalars and arrays are wrapped as constants.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


constant = _wrap


class Tape:
    """Ordered record of primitive ops for one forward pass.

    Used as a context manager; ops executed inside record themselves.
    Ops executed with no active tape still compute values (cheap pure
    evaluation, used by finite differencing) but cannot be backpropagated.
    """

    def __init__(self) -> None:
        self.nodes: list[Tensor] = []
        self._touched: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _ACTIVE_TAPES.pop()
        return False

    def backward(self, loss: Tensor) -> None:
        """Populate .grad for every tensor reachable from `loss`."""
        if loss.data.size != 1:
            raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
        if loss.node_id is None or not self.nodes or self.nodes[loss.node_id] is not loss:
            raise RuntimeError("backward: loss was not recorded on this tape (no forward pass)")
        loss.grad = np.ones_like(loss.data)
        self._touched.append(loss)
        _GRAD_SINKS.append(self)
        try:
            for node in reversed(self.nodes[: loss.node_id + 1]):
                if node.grad is not None and node._vjp is not None:
                    node._vjp(node.grad)
        finally:
            _GRAD_SINKS.pop()

    def clear(self) -> None:
        """Drop recorded nodes and zero every gradient this tape produced."""
        for t in self.nodes:
            t.grad = None
        for t in self._touched:
            t.grad = None
        self.nodes.clear()
        self._touched.clear()


_GRAD_SINKS: list[Tape] = []


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
        if _GRAD_SINKS:
            _GRAD_SINKS[-1]._touched.append(t)
    else:
        t.grad += g


def _record(op: str, data: np.ndarray, vjp: Callable[[np.ndarray], None]) -> Tensor:
    _ensure_finite(op, data)
    out = Tensor(data)
    if _ACTIVE_TAPES:
        out._op = op
        out._vjp = vjp
        tape = _ACTIVE_TAPES[-1]
        out.node_id = len(tape.nodes)
        tape.nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary_data(op: str, a: Tensor, b: Tensor, fn) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError as exc:
        raise ValueError(f"{op}: incompatible shapes {a.shape} vs {b.shape}") from exc


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = _binary_data("add", a, b, np.add)

    def vjp(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _record("add", data, vjp)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = _binary_data("sub", a, b, np.subtract)

    def vjp(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _record("sub", data, vjp)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = _binary_data("mul", a, b, np.multiply)

    def vjp(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _record("mul", data, vjp)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = _binary_data("div", a, b, np.divide)

    def vjp(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _record("div", data, vjp)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul: operands must be at least 2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    data = _binary_data("matmul", a, b, np.matmul)

    def vjp(g):
        _accum(a, _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape))
        _accum(b, _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape))

    return _record("matmul", data, vjp)


def negate(x: Tensor) -> Tensor:
    def vjp(g):
        _accum(x, -g)

    return _record("negate", -x.data, vjp)


def exp(x: Tensor) -> Tensor:
    data = np.exp(x.data)

    def vjp(g):
        _accum(x, g * data)

    return _record("exp", data, vjp)


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(x.data)

    def vjp(g):
        _accum(x, g / x.data)

    return _record("log", data, vjp)


def sqrt(x: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        data = np.sqrt(x.data)

    def vjp(g):
        _accum(x, g / (2.0 * data))

    return _record("sqrt", data, vjp)


def square(x: Tensor) -> Tensor:
    def vjp(g):
        _accum(x, 2.0 * g * x.data)

    return _record("square", x.data * x.data, vjp)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)

    def vjp(g):
        # subgradient convention: relu'(0) = 0
        _accum(x, g * (x.data > 0.0))

    return _record("relu", data, vjp)


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)

    def vjp(g):
        _accum(x, g * (1.0 - data * data))

    return _record("tanh", data, vjp)


def sigmoid(x: Tensor) -> Tensor:
    data = np.empty_like(x.data)
    pos = x.data >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    data[~pos] = ex / (1.0 + ex)

    def vjp(g):
        _accum(x, g * data * (1.0 - data))

    return _record("sigmoid", data, vjp)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        _accum(x, data * (g - dot))

    return _record("softmax", data, vjp)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        _accum(x, np.broadcast_to(_keepdims(g, x.data.shape, axis, keepdims), x.data.shape))

    return _record("sum", data, vjp)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else np.prod(
        [x.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def vjp(g):
        spread = np.broadcast_to(_keepdims(g, x.data.shape, axis, keepdims), x.data.shape)
        _accum(x, spread / count)

    return _record("mean", data, vjp)


def _keepdims(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if keepdims or axis is None:
        return g.reshape([1] * len(shape)) if axis is None and not keepdims else g
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(a % len(shape) for a in axes)
    new_shape = tuple(1 if i in axes else s for i, s in enumerate(shape))
    return g.reshape(new_shape)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = list(parts)
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            _accum(p, g[tuple(index)])

    return _record("concat", data, vjp)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    data = x.data[index]

    def vjp(g):
        full = np.zeros_like(x.data)
        full[index] = g
        _accum(x, full)

    return _record("slice", data, vjp)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; default swaps the last two."""
    if axes is None:
        axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        _accum(x, g.transpose(inverse))

    return _record("transpose", x.data.transpose(axes), vjp)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def vjp(g):
        _accum(x, g.reshape(x.data.shape))

    return _record("reshape", x.data.reshape(shape), vjp)


def clip(x: Tensor, lo: float | None, hi: float | None) -> Tensor:
    data = np.clip(x.data, lo, hi)
    # zero gradient outside the active range, identity inside
    mask = np.ones_like(x.data)
    if lo is not None:
        mask *= x.data > lo
    if hi is not None:
        mask *= x.data < hi

    def vjp(g):
        _accum(x, g * mask)

    return _record("clip", data, vjp)


def logsumexp(x: Tensor, axis: int) -> Tensor:
    """log sum exp over one axis, shifted by the (constant) max.

    The shift constant drops out of the gradient, which remains the exact
    softmax weighting."""
    shift = x.data.max(axis=axis, keepdims=True)
    summed = tensor_sum(exp(sub(x, Tensor(shift))), axis=axis)
    return add(log(summed), Tensor(np.squeeze(shift, axis=axis)))


_PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "matmul": matmul,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "square": square,
    "negate": negate,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "sum": tensor_sum,
    "mean": mean,
    "concat": concat,
    "slice": slice_axis,
    "transpose": transpose,
    "reshape": reshape,
    "clip": clip,
}


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch a primitive by name (kept for uniform access in tests)."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive op {kind!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# parameters and optimization
# ---------------------------------------------------------------------------

@dataclass
class Parameter:
    """A leaf tensor with trainability flags.

    A frozen parameter keeps accumulating gradients like any other leaf;
    the freeze contract is enforced as a mask at optimizer time, so its
    values are bit-identical across any step in which it is frozen.
    """

    tensor: Tensor
    trainable: bool = True
    frozen: bool = False

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.tensor.grad = None


class Adam:
    """Standard Adam with per-parameter moment state keyed by name.

    `step` skips non-trainable and frozen parameters entirely (no value or
    moment change), and validates every gradient it is about to apply
    before mutating anything.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8) -> None:
        if lr <= 0:
            raise ValueError("adam: lr must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: Mapping[str, Parameter], frozen: frozenset[str] | set[str] = frozenset()) -> None:
        updates = []
        for name, p in params.items():
            if not p.trainable or p.frozen or name in frozen:
                continue
            g = p.tensor.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"adam: non-finite gradient for {name}")
            updates.append((name, p, g))
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p, g in updates:
            m = self.m.setdefault(name, np.zeros_like(p.data))
            v = self.v.setdefault(name, np.zeros_like(p.data))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.tensor.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(params: Mapping[str, Parameter], state: Adam,
              frozen: frozenset[str] | set[str] = frozenset()) -> Adam:
    """Apply one Adam update in place; returns the mutated state."""
    state.step(params, frozen)
    return state


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f: Callable[..., Tensor], point: Sequence[Tensor], step: float = 1e-5) -> float:
    """Compare taped gradients of scalar `f(*point)` against central differences.

    Returns max over coordinates of |analytic - fd| / max(1, |fd|). The
    function must be deterministic and differentiable at `point`;
    nondifferentiable points (e.g. the relu kink at exactly 0) are outside
    the contract and excluded from checks.
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    point = list(point)
    for t in point:
        t.grad = None
    with Tape() as tape:
        loss = f(*point)
        tape.backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in point]
    for t in point:
        t.grad = None

    worst = 0.0
    for t, grad in zip(point, analytic):
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            origin = flat[i]
            flat[i] = origin + step
            hi = float(f(*point).data)
            flat[i] = origin - step
            lo = float(f(*point).data)
            flat[i] = origin
            if not (math.isfinite(hi) and math.isfinite(lo)):
                raise FloatingPointError("grad_check: non-finite intermediate value")
            fd = (hi - lo) / (2.0 * step)
            rel = abs(gflat[i] - fd) / max(1.0, abs(fd))
            if rel > worst:
                worst = rel
    return worst
