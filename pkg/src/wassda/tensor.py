"""Dense float64 tensors with reverse-mode automatic differentiation.

The computation graph lives on the tensors themselves: every operation
records its input tensors and a vector-Jacobian closure, and :func:`grad`
walks those links once, in reverse topological order.  There is no global
tape object to reset; a fresh forward pass builds a fresh graph and the
old one is garbage collected when the last reference drops.

Second-order gradients work by re-entrancy: with ``create_graph=True`` the
backward closures execute with recording left on, so the returned gradient
tensors carry their own history and can be differentiated again.  Each
closure is written in terms of the ops in this module, which is what makes
that possible.  Ops whose backward is raw numpy (``conv1d``, ``maxpool1d``)
cannot participate; :func:`grad` refuses them with :class:`CapabilityError`
instead of silently returning wrong second derivatives.

Conventions baked in here:

* everything is float64,
* ``log`` clamps its argument to ``LOG_FLOOR`` (the only value-altering
  clamp in the package),
* ``relu`` has derivative 0 at exactly 0,
* ``maxpool1d`` routes gradient to the first maximal element of a window.
"""

from __future__ import annotations

import threading
from contextlib import nullcontext

import numpy as np

LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class CapabilityError(RuntimeError):
    """A gradient of the requested order is not supported for some op."""


_state = threading.local()


def _recording() -> bool:
    return getattr(_state, "recording", True)


class no_grad:
    """Context manager that suspends graph recording on this thread."""

    def __enter__(self):
        self._prev = _recording()
        _state.recording = False
        return self

    def __exit__(self, *exc):
        _state.recording = self._prev
        return False


class Tensor:
    """A float64 array plus (optionally) its place in the op graph."""

    __slots__ = ("data", "requires_grad", "op", "parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self._vjp = None

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

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"

    # arithmetic sugar; every overload defers to the module-level op
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _node(data: np.ndarray, op: str, parents: tuple, vjp) -> Tensor:
    """Wrap a forward result; record history only if someone needs it."""
    t = Tensor.__new__(Tensor)
    t.data = data
    if _recording() and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t.op = op
        t.parents = parents
        t._vjp = vjp
    else:
        t.requires_grad = False
        t.op = op
        t.parents = ()
        t._vjp = None
    return t


def _binary_data(fn, a: Tensor, b: Tensor, opname: str) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise ShapeError(
            f"{opname}: shapes {a.shape} and {b.shape} do not broadcast"
        ) from None


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum a cotangent back down to ``shape`` (inverse of broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = tsum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = tsum(g, axis=axes, keepdims=True)
    if g.shape != shape:
        g = reshape(g, shape)
    return g


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = _binary_data(np.add, a, b, "add")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, "add", (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = _binary_data(np.subtract, a, b, "sub")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)

    return _node(out, "sub", (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = _binary_data(np.multiply, a, b, "mul")

    def vjp(g):
        return _unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape)

    return _node(out, "mul", (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = _binary_data(np.divide, a, b, "div")

    def vjp(g):
        ga = div(g, b)
        gb = neg(div(mul(g, a), mul(b, b)))
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, "div", (a, b), vjp)


def neg(a) -> Tensor:
    a = _lift(a)

    def vjp(g):
        return (neg(g),)

    return _node(np.negative(a.data), "neg", (a,), vjp)


def power(a, exponent) -> Tensor:
    """Elementwise ``a ** c`` for a python-scalar exponent."""
    a = _lift(a)
    c = float(exponent)
    out = a.data ** c

    def vjp(g):
        if c == 0.0:
            return (mul(g, 0.0),)
        return (mul(g, mul(power(a, c - 1.0), c)),)

    return _node(out, "pow", (a,), vjp)


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        return matmul(g, transpose(b)), matmul(transpose(a), g)

    return _node(out, "matmul", (a, b), vjp)


def transpose(a) -> Tensor:
    a = _lift(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got {a.shape}")

    def vjp(g):
        return (transpose(g),)

    return _node(a.data.T, "transpose", (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    shape = tuple(int(s) for s in (shape if isinstance(shape, (tuple, list)) else (shape,)))
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    old = a.shape

    def vjp(g):
        return (reshape(g, old),)

    return _node(out, "reshape", (a,), vjp)


def broadcast_to(a, shape) -> Tensor:
    a = _lift(a)
    shape = tuple(int(s) for s in shape)
    try:
        out = np.ascontiguousarray(np.broadcast_to(a.data, shape))
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from None
    old = a.shape

    def vjp(g):
        return (_unbroadcast(g, old),)

    return _node(out, "broadcast_to", (a,), vjp)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    in_shape = a.shape

    def vjp(g):
        if axis is None:
            gk = reshape(g, (1,) * len(in_shape)) if not keepdims and in_shape else g
        elif keepdims:
            gk = g
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % len(in_shape) for ax in axes)
            kshape = tuple(1 if i in axes else s for i, s in enumerate(in_shape))
            gk = reshape(g, kshape)
        return (broadcast_to(gk, in_shape),)

    return _node(out, "sum", (a,), vjp)


def tmean(a, axis=None) -> Tensor:
    a = _lift(a)
    if a.size == 0:
        raise ValueError("mean of an empty tensor")
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis), 1.0 / n)


def relu(a) -> Tensor:
    a = _lift(a)
    out = np.maximum(a.data, 0.0)
    mask = Tensor((a.data > 0.0).astype(np.float64))

    def vjp(g):
        return (mul(g, mask),)

    return _node(out, "relu", (a,), vjp)


def clip_min(a, floor: float) -> Tensor:
    a = _lift(a)
    floor = float(floor)
    out = np.maximum(a.data, floor)
    mask = Tensor((a.data >= floor).astype(np.float64))

    def vjp(g):
        return (mul(g, mask),)

    return _node(out, "clip_min", (a,), vjp)


def log(a, floor: float = LOG_FLOOR) -> Tensor:
    """Natural log with the package-wide positivity clamp.

    ``log(max(x, floor))``; gradient is zero below the floor, so the result
    and its derivatives are always finite on finite inputs.
    """
    clamped = clip_min(a, floor)

    def vjp(g):
        return (div(g, clamped),)

    return _node(np.log(clamped.data), "log", (clamped,), vjp)


def sigmoid(a) -> Tensor:
    a = _lift(a)
    d = a.data
    out = np.empty_like(d, dtype=np.float64)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out[~pos] = ez / (1.0 + ez)
    result = _node(out, "sigmoid", (a,), None)
    if result.requires_grad:
        def vjp(g):
            return (mul(g, mul(result, sub(1.0, result))),)

        result._vjp = vjp
    return result


def sqrt(a) -> Tensor:
    a = _lift(a)
    out = np.sqrt(a.data)
    result = _node(out, "sqrt", (a,), None)
    if result.requires_grad:
        def vjp(g):
            return (div(g, mul(result, 2.0)),)

        result._vjp = vjp
    return result


def l2norm(a, axis=None) -> Tensor:
    """Euclidean norm, optionally along one axis."""
    a = _lift(a)
    return sqrt(tsum(mul(a, a), axis=axis))


# ---------------------------------------------------------------------------
# structured ops: valid 1-D convolution and max pooling
# ---------------------------------------------------------------------------

def _out_len(length: int, window: int, stride: int) -> int:
    return (length - window) // stride + 1


def conv1d(x, filters, bias, stride: int = 1) -> Tensor:
    """Valid cross-correlation over the last axis.

    ``x`` is (batch, in_ch, length), ``filters`` is (out_ch, in_ch, kernel),
    ``bias`` is (out_ch,).  No padding: output length is
    ``(length - kernel) // stride + 1``.
    """
    x, filters, bias = _lift(x), _lift(filters), _lift(bias)
    if x.ndim != 3 or filters.ndim != 3:
        raise ShapeError(f"conv1d: expected 3-D input/filters, got {x.shape}, {filters.shape}")
    n, ci, length = x.shape
    co, fci, kernel = filters.shape
    stride = int(stride)
    if stride < 1:
        raise ValueError(f"conv1d: stride must be positive, got {stride}")
    if fci != ci:
        raise ShapeError(f"conv1d: channel mismatch, input {ci} vs filters {fci}")
    if length < kernel:
        raise ShapeError(f"conv1d: length {length} shorter than kernel {kernel}")
    if bias.shape != (co,):
        raise ShapeError(f"conv1d: bias shape {bias.shape} != ({co},)")

    windows = np.lib.stride_tricks.sliding_window_view(x.data, kernel, axis=2)[:, :, ::stride, :]
    # optimize=False: these shapes are tiny and path planning costs more than
    # the contraction itself
    out = np.einsum("nilk,oik->nol", windows, filters.data, optimize=False)
    out += bias.data[None, :, None]

    def vjp(g):
        gd = g.data
        gw = np.einsum("nol,nilk->oik", gd, windows, optimize=False)
        gb = gd.sum(axis=(0, 2))
        gx = np.zeros((n, ci, length))
        for pos in range(gd.shape[2]):
            start = pos * stride
            gx[:, :, start:start + kernel] += np.einsum(
                "no,oik->nik", gd[:, :, pos], filters.data, optimize=False
            )
        return Tensor(gx), Tensor(gw), Tensor(gb)

    return _node(out, "conv1d", (x, filters, bias), vjp)


def maxpool1d(x, window: int, stride: int) -> Tensor:
    """Max over sliding windows along the last axis; first index wins ties."""
    x = _lift(x)
    if x.ndim != 3:
        raise ShapeError(f"maxpool1d: expected 3-D input, got {x.shape}")
    n, ch, length = x.shape
    window, stride = int(window), int(stride)
    if window < 1 or stride < 1:
        raise ValueError("maxpool1d: window and stride must be positive")
    if length < window:
        raise ShapeError(f"maxpool1d: length {length} shorter than window {window}")

    views = np.lib.stride_tricks.sliding_window_view(x.data, window, axis=2)[:, :, ::stride, :]
    out = views.max(axis=3)
    argmax = views.argmax(axis=3)  # first occurrence on ties
    out_len = out.shape[2]

    def vjp(g):
        gx = np.zeros((n, ch, length))
        ni, chi, pi = np.indices((n, ch, out_len))
        np.add.at(gx, (ni, chi, pi * stride + argmax), g.data)
        return (Tensor(gx),)

    return _node(out, "maxpool1d", (x,), vjp)


# ---------------------------------------------------------------------------
# reverse-mode differentiation
# ---------------------------------------------------------------------------

_SECOND_ORDER_OK = frozenset({
    "add", "sub", "mul", "div", "neg", "pow", "matmul", "transpose",
    "reshape", "broadcast_to", "sum", "relu", "clip_min", "log",
    "sigmoid", "sqrt",
})


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    return order


def grad(output: Tensor, wrt, create_graph: bool = False) -> list[Tensor]:
    """Gradients of a scalar ``output`` with respect to each tensor in ``wrt``.

    Returns one tensor per entry of ``wrt``, shaped like it.  Tensors that do
    not influence ``output`` get zeros.  With ``create_graph=True`` the
    backward pass is itself recorded, so the results can be differentiated
    again; ops outside the second-order set raise :class:`CapabilityError`.
    """
    if not isinstance(output, Tensor):
        raise TypeError("grad: output must be a Tensor")
    if output.size != 1:
        raise ValueError(f"grad: output must be scalar, got shape {output.shape}")
    wrt = list(wrt)
    for w in wrt:
        if not isinstance(w, Tensor) or not w.requires_grad:
            raise ValueError("grad: every wrt entry must be a Tensor with requires_grad")

    if not output.requires_grad:
        return [Tensor(np.zeros_like(w.data)) for w in wrt]

    order = _topo_order(output)
    if create_graph:
        for node in order:
            if node.parents and node.op not in _SECOND_ORDER_OK:
                raise CapabilityError(
                    f"grad: op {node.op!r} does not support differentiation of its "
                    "backward pass (second-order gradient requested)"
                )

    cotangent: dict[int, Tensor] = {id(output): Tensor(np.ones_like(output.data))}
    ctx = nullcontext() if create_graph else no_grad()
    with ctx:
        for node in reversed(order):
            g = cotangent.get(id(node))
            if g is None or node._vjp is None:
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                held = cotangent.get(id(parent))
                cotangent[id(parent)] = pg if held is None else add(held, pg)

    return [
        cotangent.get(id(w)) if id(w) in cotangent else Tensor(np.zeros_like(w.data))
        for w in wrt
    ]


class ParamStore:
    """Named parameter tensors plus per-parameter optimizer state.

    Names are unique; optimizer state arrays always mirror their parameter's
    shape.  One store belongs to one training loop at a time.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.state: dict[str, dict] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        self.params[name] = tensor
        self.state[name] = {}
        return tensor

    def names(self) -> list[str]:
        return list(self.params)

    def tensors(self, names=None) -> list[Tensor]:
        if names is None:
            names = self.params
        return [self.params[n] for n in names]

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __len__(self) -> int:
        return len(self.params)
