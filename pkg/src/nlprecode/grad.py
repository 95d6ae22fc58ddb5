"""A small reverse-mode differentiation engine over real numpy arrays.

Operations are recorded on the active :class:`Tape` in execution order, which
is already a topological order; ``Tape.backward`` walks it once in reverse.
Complex quantities are carried as real pairs by :class:`CTensor`, so every
derivative is taken with respect to real and imaginary parts separately.

    with Tape() as tape:
        x = tape.leaf(np.ones(3))
        y = (x * x).sum()
    tape.backward(y)
    x.grad  # -> 2 * x

Only the operations needed by the sum-rate objective and the GNN are here.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch

_TAPES: list = []
LOG2 = np.log(2.0)


class Tape:
    def __init__(self):
        self.nodes: list = []
        self.n_accumulations = 0

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def leaf(self, value) -> "Tensor":
        t = Tensor(value, requires_grad=True)
        t.tape = self
        return t

    def backward(self, out: "Tensor", seed=None) -> None:
        if out.tape is not self:
            raise ValueError("output was not recorded on this tape")
        out.grad = np.ones_like(out.value) if seed is None else np.asarray(seed, dtype=float)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)


def _active_tape():
    return _TAPES[-1] if _TAPES else None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (a, b) in enumerate(zip(g.shape, shape)) if b == 1 and a != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "tape", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, value, requires_grad=False):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad
        self.tape = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"

    def _accum(self, g):
        if not self.requires_grad:
            return
        g = _unbroadcast(g, self.value.shape)
        # never update in place: backward closures may hand the same array to several parents
        if self.grad is None:
            self.grad = np.asarray(g, dtype=float)
        else:
            self.grad = self.grad + g
        if self.tape is not None:
            self.tape.n_accumulations += 1

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, o): return matmul(self, o)
    def __getitem__(self, idx): return index(self, idx)

    def sum(self, axis=None, keepdims=False): return reduce_sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return reduce_mean(self, axis, keepdims)
    def __pow__(self, k): return power(self, k)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(value, parents, backward, op) -> Tensor:
    out = Tensor(value)
    out.op = op
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        for p in parents:
            if p.requires_grad and p.tape is None:
                p.tape = tape
        out.requires_grad = True
        out.tape = tape
        out._parents = parents
        out._backward = backward
        tape.nodes.append(out)
    return out


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        a._accum(g)
        b._accum(g)

    return _record(a.value + b.value, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        a._accum(g)
        b._accum(-g)

    return _record(a.value - b.value, (a, b), bw, "sub")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.value, (a,), lambda g: a._accum(-g), "neg")


def mul(a, b) -> Tensor:
    """Element-wise (Hadamard) product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        a._accum(g * b.value)
        b._accum(g * a.value)

    return _record(a.value * b.value, (a, b), bw, "mul")


hadamard = mul


def reciprocal(a) -> Tensor:
    a = as_tensor(a)
    v = 1.0 / a.value
    return _record(v, (a,), lambda g: a._accum(-g * v * v), "reciprocal")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    inv = 1.0 / b.value
    out = a.value * inv

    def bw(g):
        a._accum(g * inv)
        b._accum(-g * out * inv)

    return _record(out, (a, b), bw, "div")


def power(a, k: int) -> Tensor:
    if int(k) != k or k < 0:
        raise ValueError("power() takes a non-negative integer exponent")
    k = int(k)
    a = as_tensor(a)
    if k == 0:
        return _record(np.ones_like(a.value), (a,), lambda g: None, "power")
    prev = a.value ** (k - 1)
    return _record(prev * a.value, (a,), lambda g: a._accum(g * k * prev), "power")


def square(a) -> Tensor:
    return power(a, 2)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    v = np.sqrt(a.value)
    return _record(v, (a,), lambda g: a._accum(g * 0.5 / v), "sqrt")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _record(np.log(a.value), (a,), lambda g: a._accum(g / a.value), "log")


def log2(a) -> Tensor:
    a = as_tensor(a)
    return _record(np.log2(a.value), (a,), lambda g: a._accum(g / (a.value * LOG2)), "log2")


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    v = a.value
    out = np.maximum(v, slope * v) if 0 <= slope <= 1 else np.where(v > 0, v, slope * v)

    def bw(g):
        d = g.copy()
        d[v <= 0] *= slope
        a._accum(d)

    return _record(out, (a,), bw, "leaky_relu")


def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.value.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, shape))

    return _record(a.value.sum(axis=axis, keepdims=keepdims), (a,), bw, "sum")


def reduce_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.value.shape
    count = a.value.size // max(a.value.sum(axis=axis, keepdims=keepdims).size, 1)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g / count, shape))

    return _record(a.value.mean(axis=axis, keepdims=keepdims), (a,), bw, "mean")


def _check_matmul(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul shapes {a.shape} and {b.shape} do not chain")


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (numpy ``@`` semantics)."""
    a, b = as_tensor(a), as_tensor(b)
    _check_matmul(a.value, b.value)

    def bw(g):
        if a.requires_grad:
            a._accum(g @ np.swapaxes(b.value, -1, -2))
        if b.requires_grad:
            b._accum(np.swapaxes(a.value, -1, -2) @ g)

    return _record(a.value @ b.value, (a, b), bw, "matmul")


def linear(x, weight) -> Tensor:
    """x @ weight.T for x of shape (..., d_in) and weight (d_out, d_in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[-1]:
        raise ShapeMismatch(f"linear: input features {x.shape[-1]} != weight columns {weight.shape[-1]}")
    # flatten leading dims so each product is a single BLAS call
    x2 = x.value.reshape(-1, x.shape[-1])
    lead = x.shape[:-1]

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        if weight.requires_grad:
            weight._accum(g2.T @ x2)
        if x.requires_grad:
            x._accum((g2 @ weight.value).reshape(lead + (weight.shape[-1],)))

    return _record((x2 @ weight.value.T).reshape(lead + (weight.shape[0],)), (x, weight), bw, "linear")


def swapaxes(a, ax1=-1, ax2=-2) -> Tensor:
    a = as_tensor(a)
    return _record(np.swapaxes(a.value, ax1, ax2), (a,), lambda g: a._accum(np.swapaxes(g, ax1, ax2)), "swapaxes")


def diag_extract(a) -> Tensor:
    """Diagonal of the last two (square) axes."""
    a = as_tensor(a)
    n = a.shape[-1]
    if a.shape[-2] != n:
        raise ShapeMismatch(f"diag_extract needs square trailing axes, got {a.shape}")

    def bw(g):
        full = np.zeros(a.shape)
        idx = np.arange(n)
        full[..., idx, idx] = g
        a._accum(full)

    return _record(np.diagonal(a.value, axis1=-2, axis2=-1).copy(), (a,), bw, "diag")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.shape
    return _record(a.value.reshape(shape), (a,), lambda g: a._accum(g.reshape(orig)), "reshape")


def expand_dims(a, axis) -> Tensor:
    a = as_tensor(a)
    return reshape(a, np.expand_dims(a.value, axis).shape)


def index(a, idx) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        full = np.zeros(a.shape)
        np.add.at(full, idx, g)
        a._accum(full)

    return _record(a.value[idx], (a,), bw, "index")


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            t._accum(part)

    return _record(np.concatenate([t.value for t in tensors], axis=axis), tuple(tensors), bw, "concat")


def broadcast_scalar(a, shape) -> Tensor:
    """Broadcast a tensor (typically a scalar or per-batch value) to ``shape``."""
    a = as_tensor(a)
    return _record(np.broadcast_to(a.value, shape).copy(), (a,), lambda g: a._accum(g), "broadcast")


class CTensor:
    """A complex tensor as a pair of real tensors (re, im)."""

    __slots__ = ("re", "im")

    def __init__(self, re, im=None):
        if im is None and np.iscomplexobj(re):
            re, im = np.real(re), np.imag(re)
        self.re = as_tensor(re)
        self.im = as_tensor(np.zeros(self.re.shape) if im is None else im)

    @classmethod
    def const(cls, z) -> "CTensor":
        z = np.asarray(z)
        return cls(Tensor(z.real.copy()), Tensor(z.imag.copy()))

    @property
    def shape(self):
        return self.re.shape

    @property
    def value(self) -> np.ndarray:
        return self.re.value + 1j * self.im.value

    def grad(self) -> np.ndarray:
        """d/dRe + j d/dIm of the differentiated scalar."""
        gr = np.zeros(self.shape) if self.re.grad is None else self.re.grad
        gi = np.zeros(self.shape) if self.im.grad is None else self.im.grad
        return gr + 1j * gi

    def conj(self) -> "CTensor":
        return CTensor(self.re, neg(self.im))

    def __add__(self, o):
        o = _as_ctensor(o)
        return CTensor(add(self.re, o.re), add(self.im, o.im))

    def __sub__(self, o):
        o = _as_ctensor(o)
        return CTensor(sub(self.re, o.re), sub(self.im, o.im))

    def __mul__(self, o):
        if isinstance(o, (Tensor, float, int)) or (isinstance(o, np.ndarray) and not np.iscomplexobj(o)):
            return self.scale(o)
        return cmul(self, _as_ctensor(o))

    __rmul__ = __mul__

    def scale(self, r) -> "CTensor":
        """Multiply by a real tensor or array."""
        return CTensor(mul(self.re, r), mul(self.im, r))

    def __matmul__(self, o):
        return cmatmul(self, _as_ctensor(o))

    def abs2(self) -> Tensor:
        return add(mul(self.re, self.re), mul(self.im, self.im))

    def swapaxes(self, ax1=-1, ax2=-2) -> "CTensor":
        return CTensor(swapaxes(self.re, ax1, ax2), swapaxes(self.im, ax1, ax2))

    def H(self) -> "CTensor":
        return self.swapaxes().conj()

    def sum(self, axis=None, keepdims=False) -> "CTensor":
        return CTensor(reduce_sum(self.re, axis, keepdims), reduce_sum(self.im, axis, keepdims))

    def diag(self) -> "CTensor":
        return CTensor(diag_extract(self.re), diag_extract(self.im))

    def expand_dims(self, axis) -> "CTensor":
        return CTensor(expand_dims(self.re, axis), expand_dims(self.im, axis))


def _as_ctensor(o) -> CTensor:
    if isinstance(o, CTensor):
        return o
    if isinstance(o, Tensor):
        return CTensor(o, Tensor(np.zeros(o.shape)))
    return CTensor.const(np.asarray(o, dtype=complex))


def cmul(a: CTensor, b: CTensor) -> CTensor:
    """Complex element-wise product as four real products."""
    re = sub(mul(a.re, b.re), mul(a.im, b.im))
    im = add(mul(a.re, b.im), mul(a.im, b.re))
    return CTensor(re, im)


def cmatmul(a: CTensor, b: CTensor) -> CTensor:
    re = sub(matmul(a.re, b.re), matmul(a.im, b.im))
    im = add(matmul(a.re, b.im), matmul(a.im, b.re))
    return CTensor(re, im)


def value_and_grad(f, x: np.ndarray):
    """Evaluate scalar ``f`` (built from these ops) at ``x`` and return (value, df/dx)."""
    with Tape() as tape:
        leaf = tape.leaf(np.array(x, dtype=float))
        out = f(leaf)
        if out.value.size != 1:
            raise ShapeMismatch("value_and_grad needs a scalar-valued function")
        tape.backward(out)
    g = np.zeros_like(leaf.value) if leaf.grad is None else leaf.grad
    return float(out.value), g


def gradcheck(f, point, delta: float = 1e-4) -> float:
    """Max-norm relative error between the reverse-mode and central-difference gradients.

    Returns ``max|g_ad - g_fd| / max(max|g_ad|, max|g_fd|)``, or 0 when both
    gradients vanish.
    """
    point = np.array(point, dtype=float)
    _, g_ad = value_and_grad(f, point)
    g_fd = np.zeros_like(point)
    flat = point.reshape(-1)
    gflat = g_fd.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + delta
        fp = float(f(Tensor(point)).value)
        flat[i] = orig - delta
        fm = float(f(Tensor(point)).value)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * delta)
    scale = max(np.max(np.abs(g_ad)), np.max(np.abs(g_fd)))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(g_ad - g_fd)) / scale)
