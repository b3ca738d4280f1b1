"""Dense tensors with tape-based reverse-mode differentiation.

Tensors wrap a C-contiguous numpy array.  Model math runs in float32; tests
switch to float64 with :func:`precision` for finite-difference checks.
Every differentiable op appends a :class:`Node` to the thread's active
:class:`Tape`, so the tape is topologically ordered by construction and
:func:`backward` is a single reverse sweep.
"""

import contextlib
import threading

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError

_state = threading.local()


def _local():
    if not hasattr(_state, "dtype"):
        _state.dtype = np.float32
        _state.grad_enabled = True
        _state.tapes = [Tape()]
    return _state


def default_dtype():
    return _local().dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype new tensors are created with."""
    st = _local()
    old = st.dtype
    st.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        st.dtype = old


@contextlib.contextmanager
def no_grad():
    st = _local()
    old = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = old


def grad_enabled():
    return _local().grad_enabled


class Node:
    __slots__ = ("inputs", "output", "backward_fn", "live")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn
        self.live = True


class Tape:
    """Ordered record of differentiable ops for one thread."""

    def __init__(self):
        self.nodes = []

    def record(self, node):
        self.nodes.append(node)

    def reset(self):
        for node in self.nodes:
            node.live = False
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _local().tapes.append(self)
        return self

    def __exit__(self, *exc):
        _local().tapes.pop()
        self.reset()
        return False


def active_tape():
    return _local().tapes[-1]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "tape_node", "__weakref__")

    # keep numpy from hijacking ``ndarray @ Tensor``
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None):
        dt = dtype or default_dtype()
        self.data = np.asarray(data, dtype=dt, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.tape_node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def make_op(out_data, inputs, backward_fn):
    """Wrap ``out_data`` and record it on the active tape when needed.

    ``backward_fn`` maps the output gradient to a tuple with one entry
    (array or None) per input.
    """
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(out_data, order="C")
    out.grad = None
    out.tape_node = None
    out.requires_grad = False
    if _local().grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(tuple(inputs), out, backward_fn)
        active_tape().record(node)
        out.tape_node = node
    return out


def backward(loss):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor.

    Leaf gradients add to whatever is already stored; call ``zero_grad``
    between optimizer steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    node = loss.tape_node
    if node is None:
        if loss.requires_grad:
            _accumulate(loss, np.ones_like(loss.data))
        return
    if not node.live:
        raise ContractError("backward already ran for this loss; record a new forward pass")
    tape = None
    for t in reversed(_local().tapes):
        if node in t.nodes:
            tape = t
            break
    if tape is None:
        raise ContractError("loss was recorded on a tape that is not active in this thread")

    grads = {id(loss): np.ones_like(loss.data)}
    nodes = tape.nodes
    start = len(nodes) - 1
    while nodes[start] is not node:
        start -= 1
    for i in range(start, -1, -1):
        nd = nodes[i]
        g = grads.pop(id(nd.output), None)
        if g is None:
            continue
        nd.output.grad = g
        in_grads = nd.backward_fn(g)
        for inp, gi in zip(nd.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp.tape_node is None:
                _accumulate(inp, gi)
            else:
                key = id(inp)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
    tape.reset()


def _accumulate(t, g):
    g = np.asarray(g, dtype=t.data.dtype).reshape(t.data.shape)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b, opname):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return make_op(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return make_op(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_op(ad * bd, (a, b), bw)


def scale(a, c):
    c = float(c)
    return make_op(a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,))


def sigmoid(a):
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return make_op(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a):
    x = a.data
    pos = x > 0
    return make_op(np.where(pos, x, 0).astype(x.dtype), (a,), lambda g: (g * pos,))


def exp(a):
    y = np.exp(a.data)
    return make_op(y, (a,), lambda g: (g * y,))


def log(a):
    x = a.data
    return make_op(np.log(x), (a,), lambda g: (g / x,))


def matmul(a, b):
    """Matrix product over the last two axes.

    ``b`` may be 2-D while ``a`` carries leading batch axes (a shared weight);
    otherwise the batch axes must agree exactly.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch axes differ in {a.shape} and {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        ad, bd = a.data, b.data

        def bw(g):
            ga = g @ bd.T if a.requires_grad else None
            gb = None
            if b.requires_grad:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb

        return make_op(ad @ bd, (a, b), bw)
    if a.ndim != b.ndim:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return make_op(ad @ bd, (a, b), bw)


def transpose(a, axes=None):
    """Permute axes; the default swaps the last two."""
    if axes is None:
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a, shape):
    old = a.shape
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} disagree off axis {ax}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def bw(g):
        out = []
        for i in range(len(tensors)):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(idx)])
        return tuple(out)

    return make_op(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % (tensors[0].ndim + 1)
    expanded = [reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in tensors]
    return concat(expanded, axis=ax)


def slice_(a, idx):
    """Basic (non-fancy) indexing; the result is a copy."""
    if not isinstance(idx, tuple):
        idx = (idx,)
    for part in idx:
        if not (isinstance(part, (slice, int, np.integer)) or part is Ellipsis):
            raise ContractError("slice supports ints, slices and Ellipsis only")
    shape, dt = a.shape, a.data.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dt)
        full[idx] = g
        return (full,)

    return make_op(a.data[idx].copy(), (a,), bw)


def sum_(a, axis=None, keepdims=False):
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_op(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw)


def mean(a, axis=None, keepdims=False):
    n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return scale(sum_(a, axis, keepdims), 1.0 / float(n))


def where_mask(a, keep, fill):
    """Replace entries where ``keep`` is False by the constant ``fill``."""
    keep = np.broadcast_to(np.asarray(keep, dtype=bool), a.shape)
    out = np.where(keep, a.data, a.data.dtype.type(fill))
    return make_op(out, (a,), lambda g: (np.where(keep, g, 0),))


def softmax(a):
    """Softmax over the last axis."""
    k = kernels.backend()
    n = a.shape[-1]
    y = k.softmax_fwd(np.ascontiguousarray(a.data.reshape(-1, n))).reshape(a.shape)

    def bw(g):
        return (k.softmax_bwd(y.reshape(-1, n), np.ascontiguousarray(g).reshape(-1, n)).reshape(y.shape),)

    return make_op(y, (a,), bw)


def softmax_rows(a):
    if a.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got shape {a.shape}")
    return softmax(a)


def gather_rows(table, ids):
    """``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"row id out of range for table with {table.shape[0]} rows")
    n_rows, d = table.shape

    def bw(g):
        return (kernels.backend().scatter_rows(ids.reshape(-1), g.reshape(-1, d), n_rows),)

    return make_op(table.data[ids], (table,), bw)
